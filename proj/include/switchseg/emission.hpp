#pragma once

#include <optional>
#include <variant>
#include <vector>

#include "switchseg/model.hpp"

namespace switchseg {

inline bool is_positive_definite(const Eigen::MatrixXd& m, double tol = 1e-10) {
  if (m.rows() != m.cols()) return false;
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-9) return false;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  return es.eigenvalues().minCoeff() > tol;
}

/// Per-regime Gaussian mixture over D-dimensional observations, optionally
/// with a chained mixture indicator p(m_t | m_{t-1}, s_t).
struct GmmEmission {
  int S = 0, M = 0, D = 0;
  Eigen::MatrixXd weights;                        // S x M, rows sum to 1
  std::vector<std::vector<Eigen::VectorXd>> means;  // [s][m], length D
  std::vector<std::vector<Eigen::MatrixXd>> covs;   // [s][m], D x D
  // Optional chain: chain[s](m_t, m_prev) column-stochastic per m_prev.
  std::optional<std::vector<Eigen::MatrixXd>> mixture_chain;

  double log_pdf_comp(int s, int m, const Eigen::VectorXd& v) const {
    return gaussian_log_density(v, means[s][m], covs[s][m]);
  }
  double log_pdf(int s, const Eigen::VectorXd& v) const {
    double acc = kNegInf;
    for (int m = 0; m < M; ++m)
      acc = log_add(acc, safe_log(weights(s, m)) + log_pdf_comp(s, m, v));
    return acc;
  }
};

/// Per-regime scalar autoregression of order k: v_t = sum a_i v_{t-i} + eta,
/// eta ~ N(0, noise_var). The law for the first k observations is improper
/// by default (no likelihood term); initial_law supplies an iid normal
/// alternative.
struct ArEmission {
  int S = 0, k = 0;
  Eigen::MatrixXd coeffs;    // S x k
  Eigen::VectorXd noise_var; // length S
  struct InitialLaw {
    double mean = 0.0;
    double var = 1.0;
  };
  std::optional<InitialLaw> initial_law;

  /// log p(v_t | s, v_{t-L:t-1}) conditioning on exactly L = context_len
  /// previous values. Positions whose context extends before the series
  /// contribute the initial law, or nothing when it is unset.
  double log_pdf(const TimeSeries& series, int t, int s,
                 int context_len) const {
    if (context_len > t) {
      if (initial_law)
        return gaussian_log_density1(series.scalar_at(t), initial_law->mean,
                                     initial_law->var);
      return 0.0;
    }
    double mean = 0.0;
    for (int i = 1; i <= context_len; ++i)
      mean += coeffs(s, i - 1) * series.scalar_at(t - i);
    return gaussian_log_density1(series.scalar_at(t), mean, noise_var(s));
  }
};

/// Per-regime linear Gaussian state-space parameters.
struct LinearGaussianEmission {
  struct Regime {
    Eigen::MatrixXd A;        // H x H
    Eigen::MatrixXd B;        // D x H
    Eigen::MatrixXd sigma_h;  // H x H
    Eigen::MatrixXd sigma_v;  // D x D
    Eigen::VectorXd reset_mean;  // H
    Eigen::MatrixXd reset_cov;   // H x H
  };
  int S = 0, H = 0, D = 0;
  std::vector<Regime> regimes;
};

using EmissionModel =
    std::variant<GmmEmission, ArEmission, LinearGaussianEmission>;

enum class ModelType { HmmGmm, Sarm, DurationDc, DurationIc, Segmental, Slgssm };

inline const char* model_type_name(ModelType t) {
  switch (t) {
    case ModelType::HmmGmm: return "hmm_gmm";
    case ModelType::Sarm: return "sarm";
    case ModelType::DurationDc: return "duration_dc";
    case ModelType::DurationIc: return "duration_ic";
    case ModelType::Segmental: return "segmental";
    case ModelType::Slgssm: return "slgssm";
  }
  return "?";
}

/// Full model bundle. `durations` is empty for models with implicit
/// (geometric) durations, one entry for a shared duration law, or S entries
/// for per-regime laws.
struct Model {
  ModelType type = ModelType::HmmGmm;
  TransitionModel transition;
  std::vector<DurationSpec> durations;
  EmissionModel emission;
  bool cut_across_regimes = false;  // duration_ic only

  const DurationSpec& duration_for(int s) const {
    return durations.size() == 1 ? durations[0] : durations[static_cast<size_t>(s)];
  }
  bool has_duration() const { return !durations.empty(); }
  int max_dmax() const {
    int m = 1;
    for (const auto& d : durations) m = std::max(m, d.d_max);
    return m;
  }

  int order_k() const {
    if (const auto* ar = std::get_if<ArEmission>(&emission)) return ar->k;
    return 0;
  }
  const ArEmission* ar() const { return std::get_if<ArEmission>(&emission); }
  const GmmEmission* gmm() const { return std::get_if<GmmEmission>(&emission); }
  const LinearGaussianEmission* lgss() const {
    return std::get_if<LinearGaussianEmission>(&emission);
  }
};

inline void validate_emission(const EmissionModel& em, int S,
                              ValidationReport& r) {
  if (const auto* g = std::get_if<GmmEmission>(&em)) {
    if (g->S != S) r.fail("GMM regime count mismatch");
    if (g->M < 1) r.fail("GMM needs at least one component");
    if (g->weights.rows() != g->S || g->weights.cols() != g->M) {
      r.fail("GMM weight shape mismatch");
      return;
    }
    for (int s = 0; s < g->S; ++s) {
      if ((g->weights.row(s).array() < 0.0).any())
        r.fail("mixture weights negative for regime " + std::to_string(s));
      if (std::abs(g->weights.row(s).sum() - 1.0) > kProbTol)
        r.fail("mixture weights for regime " + std::to_string(s) +
               " do not sum to 1");
      for (int m = 0; m < g->M; ++m)
        if (!is_positive_definite(g->covs[s][m]))
          r.fail("covariance not PD (regime " + std::to_string(s) +
                 ", component " + std::to_string(m) + ")");
    }
    if (g->mixture_chain) {
      if (static_cast<int>(g->mixture_chain->size()) != g->S)
        r.fail("mixture chain regime count mismatch");
      else
        for (int s = 0; s < g->S; ++s) {
          const auto& q = (*g->mixture_chain)[s];
          if (q.rows() != g->M || q.cols() != g->M) {
            r.fail("mixture chain shape mismatch");
            continue;
          }
          for (int mp = 0; mp < g->M; ++mp)
            if (std::abs(q.col(mp).sum() - 1.0) > kProbTol ||
                (q.col(mp).array() < 0.0).any())
              r.fail("mixture chain column not stochastic");
        }
    }
  } else if (const auto* a = std::get_if<ArEmission>(&em)) {
    if (a->S != S) r.fail("AR regime count mismatch");
    if (a->k < 0) r.fail("AR order must be >= 0");
    if (a->coeffs.rows() != a->S || a->coeffs.cols() != a->k)
      r.fail("AR coefficient shape mismatch");
    if (a->noise_var.size() != a->S) r.fail("AR noise shape mismatch");
    if ((a->noise_var.array() <= 0.0).any()) r.fail("AR noise variance <= 0");
    if (a->initial_law && !(a->initial_law->var > 0.0))
      r.fail("AR initial law variance <= 0");
  } else if (const auto* l = std::get_if<LinearGaussianEmission>(&em)) {
    if (l->S != S) r.fail("state-space regime count mismatch");
    if (static_cast<int>(l->regimes.size()) != l->S) {
      r.fail("state-space regime list mismatch");
      return;
    }
    for (int s = 0; s < l->S; ++s) {
      const auto& rg = l->regimes[s];
      if (rg.A.rows() != l->H || rg.A.cols() != l->H ||
          rg.B.rows() != l->D || rg.B.cols() != l->H ||
          rg.reset_mean.size() != l->H)
        r.fail("state-space shape mismatch in regime " + std::to_string(s));
      if (!is_positive_definite(rg.sigma_h))
        r.fail("covariance not PD (sigma_h, regime " + std::to_string(s) + ")");
      if (!is_positive_definite(rg.sigma_v))
        r.fail("covariance not PD (sigma_v, regime " + std::to_string(s) + ")");
      if (!is_positive_definite(rg.reset_cov))
        r.fail("covariance not PD (reset cov, regime " + std::to_string(s) +
               ")");
    }
  }
}

inline ValidationReport validate_model(const Model& m) {
  ValidationReport r;
  validate_transition(m.transition, r);
  if (m.durations.size() > 1 &&
      static_cast<int>(m.durations.size()) != m.transition.S)
    r.fail("per-regime duration list must have S entries");
  for (const auto& d : m.durations) validate_duration(d, r);
  validate_emission(m.emission, m.transition.S, r);
  switch (m.type) {
    case ModelType::HmmGmm:
      if (!m.gmm()) r.fail("hmm_gmm requires a GMM emission");
      break;
    case ModelType::Sarm:
      if (!m.ar()) r.fail("sarm requires an AR emission");
      break;
    case ModelType::DurationDc:
    case ModelType::DurationIc:
    case ModelType::Segmental:
      if (!m.has_duration()) r.fail("duration model requires a duration spec");
      if (m.lgss()) r.fail("duration model requires an AR or GMM emission");
      break;
    case ModelType::Slgssm:
      if (!m.lgss()) r.fail("slgssm requires linear Gaussian parameters");
      break;
  }
  return r;
}

inline void require_valid(const Model& m) {
  const ValidationReport r = validate_model(m);
  if (!r.ok)
    throw std::invalid_argument("invalid model: " + r.summary());
}

/// T x S table of log p(v_t | s, v_{t-k:t-1}) with the model's full
/// observation context (GMM emissions collapse the mixture).
inline Eigen::MatrixXd emission_log_table(const Model& model,
                                          const TimeSeries& series) {
  const int T = series.length();
  const int S = model.transition.S;
  Eigen::MatrixXd e(T, S);
  if (const auto* g = model.gmm()) {
    for (int t = 0; t < T; ++t) {
      const Eigen::VectorXd v = series.row(t);
      for (int s = 0; s < S; ++s) e(t, s) = g->log_pdf(s, v);
    }
  } else if (const auto* a = model.ar()) {
    for (int t = 0; t < T; ++t)
      for (int s = 0; s < S; ++s) e(t, s) = a->log_pdf(series, t, s, a->k);
  } else {
    throw std::invalid_argument("emission_log_table: discrete emission needed");
  }
  return e;
}

/// Per-component tables for GMM inference: result[t](s, m) =
/// log p(v_t | s, m) + log p(m | s).
inline std::vector<Eigen::MatrixXd> gmm_component_log_table(
    const GmmEmission& g, const TimeSeries& series) {
  std::vector<Eigen::MatrixXd> out(series.length());
  for (int t = 0; t < series.length(); ++t) {
    const Eigen::VectorXd v = series.row(t);
    out[t].resize(g.S, g.M);
    for (int s = 0; s < g.S; ++s)
      for (int m = 0; m < g.M; ++m)
        out[t](s, m) = safe_log(g.weights(s, m)) + g.log_pdf_comp(s, m, v);
  }
  return out;
}

/// Context-truncated tables for change-point emissions: result[L](t, s) =
/// log p(v_t | s, exactly L previous observations), L = 0..k.
inline std::vector<Eigen::MatrixXd> emission_log_table_by_context(
    const Model& model, const TimeSeries& series) {
  const int T = series.length();
  const int S = model.transition.S;
  const int k = model.order_k();
  std::vector<Eigen::MatrixXd> out(static_cast<size_t>(k) + 1);
  for (int L = 0; L <= k; ++L) {
    out[L].resize(T, S);
    if (const auto* a = model.ar()) {
      for (int t = 0; t < T; ++t)
        for (int s = 0; s < S; ++s) out[L](t, s) = a->log_pdf(series, t, s, L);
    } else {
      out[L] = emission_log_table(model, series);
    }
  }
  return out;
}

}  // namespace switchseg

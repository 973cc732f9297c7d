#pragma once

#include "switchseg/duration.hpp"

namespace switchseg {

struct EmConfig {
  int max_iter = 50;
  double tol = 1e-6;
  bool update_transitions = true;
  bool update_initial = true;
};

struct EmResult {
  Model model;
  std::vector<double> log_likelihood_trace;  // one entry per E-step
  int iterations = 0;
};

namespace detail {

inline void check_starvation(const Eigen::MatrixXd& gamma_regime) {
  for (int s = 0; s < gamma_regime.cols(); ++s)
    if (gamma_regime.col(s).sum() < 1e-12)
      throw numerical_error("regime starvation: regime " + std::to_string(s) +
                            " received no responsibility");
}

/// Pairwise posteriors xi(i, j) summed over t, from parallel tables with a
/// regime-collapsed emission table.
inline Eigen::MatrixXd transition_counts(const Model& model,
                                         const Eigen::MatrixXd& log_alpha_regime,
                                         const Eigen::MatrixXd& log_beta_regime,
                                         const Eigen::MatrixXd& emis,
                                         double log_likelihood) {
  const int T = static_cast<int>(emis.rows());
  const int S = static_cast<int>(emis.cols());
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(S, S);  // (to, from)
  for (int t = 1; t < T; ++t)
    for (int i = 0; i < S; ++i)
      for (int j = 0; j < S; ++j) {
        const double lw = log_alpha_regime(t - 1, i) +
                          model.transition.log_switch(j, i) + emis(t, j) +
                          log_beta_regime(t, j) - log_likelihood;
        if (lw != kNegInf) counts(j, i) += std::exp(lw);
      }
  return counts;
}

inline void update_transition_from_counts(Model& model,
                                          const Eigen::MatrixXd& counts) {
  const int S = model.transition.S;
  for (int i = 0; i < S; ++i) {
    const double col = counts.col(i).sum();
    if (col <= 0.0) continue;  // regime never left; keep its old column
    for (int j = 0; j < S; ++j) model.transition.switch_(j, i) = counts(j, i) / col;
  }
}

/// Weighted least squares for the AR coefficients and noise of one regime,
/// over the steps with a full observation context.
inline void ar_m_step(ArEmission& ar, const TimeSeries& series,
                      const Eigen::MatrixXd& gamma_regime, int s) {
  const int T = series.length();
  const int k = ar.k;
  double wsum = 0.0;
  Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(k, k);
  Eigen::VectorXd xty = Eigen::VectorXd::Zero(k);
  for (int t = k; t < T; ++t) {
    const double w = gamma_regime(t, s);
    if (w <= 0.0) continue;
    wsum += w;
    Eigen::VectorXd x(k);
    for (int i = 1; i <= k; ++i) x(i - 1) = series.scalar_at(t - i);
    xtx.noalias() += w * x * x.transpose();
    xty.noalias() += w * x * series.scalar_at(t);
  }
  if (wsum < 1e-12)
    throw numerical_error("regime starvation: regime " + std::to_string(s) +
                          " received no responsibility");
  Eigen::VectorXd a(k);
  if (k > 0) {
    xtx.diagonal().array() += 1e-12 * std::max(1.0, xtx.trace());
    a = xtx.ldlt().solve(xty);
    ar.coeffs.row(s) = a.transpose();
  }
  double rss = 0.0;
  for (int t = k; t < T; ++t) {
    const double w = gamma_regime(t, s);
    if (w <= 0.0) continue;
    double pred = 0.0;
    for (int i = 1; i <= k; ++i) pred += ar.coeffs(s, i - 1) * series.scalar_at(t - i);
    const double r = series.scalar_at(t) - pred;
    rss += w * r * r;
  }
  ar.noise_var(s) = std::max(rss / wsum, 1e-9);
}

inline void gmm_m_step(GmmEmission& g, const TimeSeries& series,
                       const Eigen::MatrixXd& gamma_sm) {
  const int T = series.length();
  const int D = g.D;
  for (int s = 0; s < g.S; ++s) {
    double regime_total = 0.0;
    std::vector<double> comp_total(g.M, 0.0);
    for (int m = 0; m < g.M; ++m)
      for (int t = 0; t < T; ++t) comp_total[m] += gamma_sm(t, s * g.M + m);
    for (int m = 0; m < g.M; ++m) regime_total += comp_total[m];
    for (int m = 0; m < g.M; ++m) {
      if (comp_total[m] < 1e-12) continue;  // starved component keeps its params
      Eigen::VectorXd mu = Eigen::VectorXd::Zero(D);
      for (int t = 0; t < T; ++t)
        mu += gamma_sm(t, s * g.M + m) * series.row(t);
      mu /= comp_total[m];
      Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(D, D);
      for (int t = 0; t < T; ++t) {
        const Eigen::VectorXd d = series.row(t) - mu;
        cov += gamma_sm(t, s * g.M + m) * d * d.transpose();
      }
      cov /= comp_total[m];
      cov.diagonal().array() += 1e-9;  // covariance floor
      g.means[s][m] = mu;
      g.covs[s][m] = cov;
      if (regime_total > 0.0) g.weights(s, m) = comp_total[m] / regime_total;
    }
    if (regime_total > 0.0) g.weights.row(s) /= g.weights.row(s).sum();
  }
}

}  // namespace detail

/// EM for the HMM/SARM family. Duration models (dc/ic with AR emissions)
/// are fitted with the count-variable smoother as the E-step, updating the
/// emission parameters only.
inline EmResult em_fit(const Model& init, const TimeSeries& series,
                       const EmConfig& cfg = {}) {
  require_valid(init);
  EmResult res;
  res.model = init;

  const bool duration_model =
      init.type == ModelType::DurationDc || init.type == ModelType::DurationIc;
  if (duration_model && !res.model.ar())
    throw std::invalid_argument("duration-model EM supports AR emissions");
  if (init.type == ModelType::Segmental || init.type == ModelType::Slgssm)
    throw std::invalid_argument("em_fit covers the discrete-emission families");
  if (series.length() <= res.model.order_k())
    throw std::invalid_argument("em_fit needs T > order_k");

  double prev_ll = kNegInf;
  for (int iter = 0;; ++iter) {
    double ll;
    Eigen::MatrixXd gamma_regime;
    Eigen::MatrixXd gamma_sm;            // GMM runs only
    Eigen::MatrixXd log_alpha, log_beta; // transition updates
    if (duration_model) {
      const CountIndexedTables tab =
          init.type == ModelType::DurationDc
              ? dc_smooth(res.model, series)
              : ic_smooth(res.model, series);
      ll = tab.log_likelihood;
      gamma_regime = tab.gamma_s;
    } else if (res.model.gmm()) {
      const PosteriorTables tab = smooth_gmm(res.model, series);
      ll = tab.log_likelihood;
      gamma_regime = tab.gamma_regime;
      gamma_sm = tab.gamma;
      const int M = tab.n_mix;
      log_alpha.setConstant(series.length(), tab.n_regimes, kNegInf);
      for (int t = 0; t < series.length(); ++t)
        for (int s = 0; s < tab.n_regimes; ++s)
          for (int m = 0; m < M; ++m)
            log_alpha(t, s) =
                log_add(log_alpha(t, s), tab.log_alpha(t, s * M + m));
      log_beta = tab.log_beta;
    } else {
      const PosteriorTables tab = smooth_parallel(res.model, series);
      ll = tab.log_likelihood;
      gamma_regime = tab.gamma_regime;
      log_alpha = tab.log_alpha;
      log_beta = tab.log_beta;
    }
    res.log_likelihood_trace.push_back(ll);
    res.iterations = iter;
    if (iter >= cfg.max_iter) break;
    if (iter > 0 && std::abs(ll - prev_ll) < cfg.tol) break;
    prev_ll = ll;

    detail::check_starvation(gamma_regime);

    if (!duration_model && cfg.update_transitions) {
      const Eigen::MatrixXd emis = emission_log_table(res.model, series);
      const Eigen::MatrixXd counts = detail::transition_counts(
          res.model, log_alpha, log_beta, emis, ll);
      detail::update_transition_from_counts(res.model, counts);
    }
    if (!duration_model && cfg.update_initial)
      res.model.transition.initial = gamma_regime.row(0).transpose();

    if (auto* ar = std::get_if<ArEmission>(&res.model.emission)) {
      for (int s = 0; s < ar->S; ++s)
        detail::ar_m_step(*ar, series, gamma_regime, s);
    } else if (auto* g = std::get_if<GmmEmission>(&res.model.emission)) {
      detail::gmm_m_step(*g, series, gamma_sm);
    }
  }
  return res;
}

}  // namespace switchseg

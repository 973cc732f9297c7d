#pragma once

#include "switchseg/emission.hpp"

namespace switchseg {

/// Log-domain forward/backward tables. For mixture-indicator runs the alpha
/// and gamma tables have S*M columns (column = s*M + m); gamma_regime always
/// marginalizes to T x S.
struct PosteriorTables {
  Eigen::MatrixXd log_alpha;     // T x S (or T x S*M)
  Eigen::MatrixXd log_beta;      // T x S
  Eigen::MatrixXd gamma;         // rows sum to 1
  Eigen::MatrixXd gamma_regime;  // T x S
  int n_regimes = 0;
  int n_mix = 1;
  double log_likelihood = kNegInf;
};

struct ViterbiResult {
  std::vector<int> path;  // length T
  double log_joint = kNegInf;
  Eigen::MatrixXi backpointers;  // T x S, entry t is the argmax over s_{t-1}
};

namespace detail {

inline void check_finite_normalizer(double ll, int t) {
  if (ll == kNegInf)
    throw numerical_error("impossible data: zero likelihood at step " +
                          std::to_string(t));
}

inline Eigen::MatrixXd normalized_gamma(const Eigen::MatrixXd& log_alpha,
                                        const Eigen::MatrixXd& log_beta_cols) {
  const int T = static_cast<int>(log_alpha.rows());
  Eigen::MatrixXd g(T, log_alpha.cols());
  for (int t = 0; t < T; ++t) {
    double m = kNegInf;
    for (int j = 0; j < log_alpha.cols(); ++j)
      m = std::max(m, log_alpha(t, j) + log_beta_cols(t, j));
    check_finite_normalizer(m, t);
    double z = 0.0;
    for (int j = 0; j < log_alpha.cols(); ++j)
      z += std::exp(log_alpha(t, j) + log_beta_cols(t, j) - m);
    for (int j = 0; j < log_alpha.cols(); ++j)
      g(t, j) = std::exp(log_alpha(t, j) + log_beta_cols(t, j) - m) / z;
  }
  return g;
}

}  // namespace detail

/// Parallel alpha/beta smoothing in the log domain. order k comes from the
/// AR emission; a GMM emission is the k = 0 case with the mixture collapsed.
inline PosteriorTables smooth_parallel(const Model& model,
                                       const TimeSeries& series) {
  require_valid(model);
  const int T = series.length();
  const int S = model.transition.S;
  const Eigen::MatrixXd e = emission_log_table(model, series);

  PosteriorTables out;
  out.n_regimes = S;
  out.log_alpha.setConstant(T, S, kNegInf);
  out.log_beta.setZero(T, S);

  for (int s = 0; s < S; ++s)
    out.log_alpha(0, s) = e(0, s) + model.transition.log_initial(s);
  std::vector<double> terms(S);
  for (int t = 1; t < T; ++t)
    for (int s = 0; s < S; ++s) {
      for (int sp = 0; sp < S; ++sp)
        terms[sp] = model.transition.log_switch(s, sp) + out.log_alpha(t - 1, sp);
      out.log_alpha(t, s) = e(t, s) + log_sum_exp(terms);
    }
  for (int t = T - 2; t >= 0; --t)
    for (int s = 0; s < S; ++s) {
      for (int sn = 0; sn < S; ++sn)
        terms[sn] = out.log_beta(t + 1, sn) + e(t + 1, sn) +
                    model.transition.log_switch(sn, s);
      out.log_beta(t, s) = log_sum_exp(terms);
    }

  out.log_likelihood = log_sum_exp_row(out.log_alpha, T - 1);
  detail::check_finite_normalizer(out.log_likelihood, T - 1);
  out.gamma = detail::normalized_gamma(out.log_alpha, out.log_beta);
  out.gamma_regime = out.gamma;
  return out;
}

/// Sequential smoothing: filtered forward pass and gamma correction, both in
/// the linear domain with per-step normalization. Emissions are rescaled per
/// step so that only ratios matter.
inline PosteriorTables smooth_sequential(const Model& model,
                                         const TimeSeries& series) {
  require_valid(model);
  const int T = series.length();
  const int S = model.transition.S;
  const Eigen::MatrixXd e = emission_log_table(model, series);

  Eigen::MatrixXd filtered(T, S);
  double cum_log_evidence = 0.0;
  Eigen::MatrixXd log_alpha(T, S);
  for (int t = 0; t < T; ++t) {
    const double shift = e.row(t).maxCoeff();
    double norm = 0.0;
    for (int s = 0; s < S; ++s) {
      double prior = 0.0;
      if (t == 0) {
        prior = model.transition.initial(s);
      } else {
        for (int sp = 0; sp < S; ++sp)
          prior += model.transition.switch_(s, sp) * filtered(t - 1, sp);
      }
      filtered(t, s) = std::exp(e(t, s) - shift) * prior;
      norm += filtered(t, s);
    }
    if (!(norm > 0.0))
      throw numerical_error("impossible data: zero filtering normalizer at step " +
                            std::to_string(t));
    filtered.row(t) /= norm;
    cum_log_evidence += std::log(norm) + shift;
    for (int s = 0; s < S; ++s)
      log_alpha(t, s) = safe_log(filtered(t, s)) + cum_log_evidence;
  }

  Eigen::MatrixXd gamma(T, S);
  gamma.row(T - 1) = filtered.row(T - 1);
  for (int t = T - 2; t >= 0; --t)
    for (int s = 0; s < S; ++s) {
      double acc = 0.0;
      for (int sn = 0; sn < S; ++sn) {
        if (gamma(t + 1, sn) == 0.0) continue;
        double denom = 0.0;
        for (int sp = 0; sp < S; ++sp)
          denom += model.transition.switch_(sn, sp) * filtered(t, sp);
        if (denom <= 0.0) continue;
        acc += model.transition.switch_(sn, s) * filtered(t, s) / denom *
               gamma(t + 1, sn);
      }
      gamma(t, s) = acc;
    }

  PosteriorTables out;
  out.n_regimes = S;
  out.log_alpha = log_alpha;
  out.log_likelihood = cum_log_evidence;
  out.gamma = gamma;
  out.gamma_regime = gamma;
  // beta consistent with the tables by construction; structurally
  // unreachable states take beta = 1 so alpha + beta stays well defined
  out.log_beta.resize(T, S);
  for (int t = 0; t < T; ++t)
    for (int s = 0; s < S; ++s)
      out.log_beta(t, s) =
          log_alpha(t, s) == kNegInf
              ? 0.0
              : safe_log(gamma(t, s)) + out.log_likelihood - log_alpha(t, s);
  return out;
}

/// Max-product decoding; the alpha recursion with sums replaced by max.
/// Ties resolve to the lowest regime index.
inline ViterbiResult viterbi(const Model& model, const TimeSeries& series) {
  require_valid(model);
  const int T = series.length();
  const int S = model.transition.S;
  const Eigen::MatrixXd e = emission_log_table(model, series);

  Eigen::MatrixXd delta(T, S);
  Eigen::MatrixXi psi = Eigen::MatrixXi::Zero(T, S);
  for (int s = 0; s < S; ++s)
    delta(0, s) = e(0, s) + model.transition.log_initial(s);
  for (int t = 1; t < T; ++t)
    for (int s = 0; s < S; ++s) {
      double best = kNegInf;
      int arg = 0;
      for (int sp = 0; sp < S; ++sp) {
        const double cand =
            model.transition.log_switch(s, sp) + delta(t - 1, sp);
        if (cand > best) {
          best = cand;
          arg = sp;
        }
      }
      delta(t, s) = e(t, s) + best;
      psi(t, s) = arg;
    }

  ViterbiResult res;
  res.backpointers = psi;
  res.path.assign(T, 0);
  double best = kNegInf;
  for (int s = 0; s < S; ++s)
    if (delta(T - 1, s) > best) {
      best = delta(T - 1, s);
      res.path[T - 1] = s;
    }
  res.log_joint = best;
  detail::check_finite_normalizer(best, T - 1);
  for (int t = T - 2; t >= 0; --t) res.path[t] = psi(t + 1, res.path[t + 1]);
  return res;
}

/// Joint log density of a fixed regime path, for checking decoded paths.
inline double path_log_joint(const Model& model, const TimeSeries& series,
                             const std::vector<int>& path) {
  const Eigen::MatrixXd e = emission_log_table(model, series);
  double acc = model.transition.log_initial(path[0]) + e(0, path[0]);
  for (int t = 1; t < series.length(); ++t)
    acc += model.transition.log_switch(path[t], path[t - 1]) + e(t, path[t]);
  return acc;
}

/// Forward/backward over the joint (regime, mixture component) space.
inline PosteriorTables smooth_gmm(const Model& model, const TimeSeries& series) {
  require_valid(model);
  const auto* g = model.gmm();
  if (!g) throw std::invalid_argument("smooth_gmm requires a GMM emission");
  const int T = series.length();
  const int S = g->S, M = g->M;
  const auto comp = gmm_component_log_table(*g, series);

  Eigen::MatrixXd la = Eigen::MatrixXd::Constant(T, S * M, kNegInf);
  for (int s = 0; s < S; ++s)
    for (int m = 0; m < M; ++m)
      la(0, s * M + m) = comp[0](s, m) + model.transition.log_initial(s);

  std::vector<double> ahat(S);  // log sum_m alpha^{s,m}
  std::vector<double> terms(S);
  for (int t = 1; t < T; ++t) {
    for (int sp = 0; sp < S; ++sp) {
      double acc = kNegInf;
      for (int m = 0; m < M; ++m) acc = log_add(acc, la(t - 1, sp * M + m));
      ahat[sp] = acc;
    }
    for (int s = 0; s < S; ++s) {
      for (int sp = 0; sp < S; ++sp)
        terms[sp] = model.transition.log_switch(s, sp) + ahat[sp];
      const double prev = log_sum_exp(terms);
      for (int m = 0; m < M; ++m) la(t, s * M + m) = comp[t](s, m) + prev;
    }
  }

  // beta over regimes only: the future is independent of m_t given s_t.
  Eigen::MatrixXd lb = Eigen::MatrixXd::Zero(T, S);
  for (int t = T - 2; t >= 0; --t)
    for (int s = 0; s < S; ++s) {
      double acc = kNegInf;
      for (int sn = 0; sn < S; ++sn) {
        double emis = kNegInf;
        for (int m = 0; m < M; ++m) emis = log_add(emis, comp[t + 1](sn, m));
        acc = log_add(acc, lb(t + 1, sn) + emis +
                               model.transition.log_switch(sn, s));
      }
      lb(t, s) = acc;
    }

  PosteriorTables out;
  out.n_regimes = S;
  out.n_mix = M;
  out.log_alpha = la;
  out.log_beta = lb;
  out.log_likelihood = log_sum_exp_row(la, T - 1);
  detail::check_finite_normalizer(out.log_likelihood, T - 1);

  Eigen::MatrixXd beta_cols(T, S * M);
  for (int t = 0; t < T; ++t)
    for (int s = 0; s < S; ++s)
      for (int m = 0; m < M; ++m) beta_cols(t, s * M + m) = lb(t, s);
  out.gamma = detail::normalized_gamma(la, beta_cols);
  out.gamma_regime.setZero(T, S);
  for (int t = 0; t < T; ++t)
    for (int s = 0; s < S; ++s)
      for (int m = 0; m < M; ++m) out.gamma_regime(t, s) += out.gamma(t, s * M + m);
  return out;
}

/// GMM smoothing with a chained mixture indicator p(m_t | m_{t-1}, s_t).
inline PosteriorTables smooth_gmm_chained(const Model& model,
                                          const TimeSeries& series) {
  require_valid(model);
  const auto* g = model.gmm();
  if (!g || !g->mixture_chain)
    throw std::invalid_argument(
        "smooth_gmm_chained requires a GMM emission with a mixture chain");
  const int T = series.length();
  const int S = g->S, M = g->M;
  const auto& chain = *g->mixture_chain;
  // comp without the p(m|s) factor: that weight only enters at t = 1.
  std::vector<Eigen::MatrixXd> dens(T);
  for (int t = 0; t < T; ++t) {
    dens[t].resize(S, M);
    const Eigen::VectorXd v = series.row(t);
    for (int s = 0; s < S; ++s)
      for (int m = 0; m < M; ++m) dens[t](s, m) = g->log_pdf_comp(s, m, v);
  }

  Eigen::MatrixXd la = Eigen::MatrixXd::Constant(T, S * M, kNegInf);
  for (int s = 0; s < S; ++s)
    for (int m = 0; m < M; ++m)
      la(0, s * M + m) = dens[0](s, m) + safe_log(g->weights(s, m)) +
                         model.transition.log_initial(s);

  Eigen::MatrixXd bridge(S, M);  // log sum_{s'} pi(s, s') alpha^{s', m'}
  for (int t = 1; t < T; ++t) {
    for (int s = 0; s < S; ++s)
      for (int mp = 0; mp < M; ++mp) {
        double acc = kNegInf;
        for (int sp = 0; sp < S; ++sp)
          acc = log_add(acc, model.transition.log_switch(s, sp) +
                                 la(t - 1, sp * M + mp));
        bridge(s, mp) = acc;
      }
    for (int s = 0; s < S; ++s)
      for (int m = 0; m < M; ++m) {
        double acc = kNegInf;
        for (int mp = 0; mp < M; ++mp)
          acc = log_add(acc, safe_log(chain[s](m, mp)) + bridge(s, mp));
        la(t, s * M + m) = dens[t](s, m) + acc;
      }
  }

  // beta over (s, m): the chain makes the future depend on m_t.
  Eigen::MatrixXd lb = Eigen::MatrixXd::Zero(T, S * M);
  Eigen::MatrixXd h(S, M);  // per s': logsumexp_{m'} dens+beta+chain
  for (int t = T - 2; t >= 0; --t) {
    for (int sn = 0; sn < S; ++sn)
      for (int m = 0; m < M; ++m) {
        double acc = kNegInf;
        for (int mn = 0; mn < M; ++mn)
          acc = log_add(acc, lb(t + 1, sn * M + mn) + dens[t + 1](sn, mn) +
                                 safe_log(chain[sn](mn, m)));
        h(sn, m) = acc;
      }
    for (int s = 0; s < S; ++s)
      for (int m = 0; m < M; ++m) {
        double acc = kNegInf;
        for (int sn = 0; sn < S; ++sn)
          acc = log_add(acc, h(sn, m) + model.transition.log_switch(sn, s));
        lb(t, s * M + m) = acc;
      }
  }

  PosteriorTables out;
  out.n_regimes = S;
  out.n_mix = M;
  out.log_alpha = la;
  out.log_beta = lb;  // note: S*M columns for the chained variant
  out.log_likelihood = log_sum_exp_row(la, T - 1);
  detail::check_finite_normalizer(out.log_likelihood, T - 1);
  out.gamma = detail::normalized_gamma(la, lb);
  out.gamma_regime.setZero(T, S);
  for (int t = 0; t < T; ++t)
    for (int s = 0; s < S; ++s)
      for (int m = 0; m < M; ++m) out.gamma_regime(t, s) += out.gamma(t, s * M + m);
  return out;
}

}  // namespace switchseg

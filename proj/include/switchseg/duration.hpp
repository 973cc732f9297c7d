#pragma once

#include "switchseg/discrete.hpp"

namespace switchseg {

enum class BoundaryMode {
  Relaxed,  // first regime may have started before t=1, last may be truncated
  Strict    // first regime starts at t=1 and the last completes at t=T
};

/// Tables over the joint (regime, duration-count) space. Count index is
/// c - 1 for c in 1..d_max; structurally impossible cells stay at -inf.
struct CountIndexedTables {
  std::vector<Eigen::MatrixXd> log_alpha;  // per t: S x d_max
  std::vector<Eigen::MatrixXd> log_beta;   // per t: S x d_max
  std::vector<Eigen::MatrixXd> gamma_sc;   // per t: S x d_max
  Eigen::MatrixXd gamma_s;                 // T x S
  double log_likelihood = kNegInf;
  int d_max = 1;
};

struct CountViterbiResult {
  std::vector<int> regimes;  // length T
  std::vector<int> counts;   // length T
  double log_joint = kNegInf;
};

namespace detail {

/// Strict boundaries need T to decompose into supported durations.
inline void check_strict_feasible(const Model& model, int T) {
  std::vector<char> ok(static_cast<size_t>(T) + 1, 0);
  ok[0] = 1;
  for (int t = 1; t <= T; ++t)
    for (const auto& spec : model.durations)
      for (int d = spec.d_min; d <= std::min(spec.d_max, t); ++d)
        if (spec.rho(d) > 0.0 && ok[t - d]) {
          ok[t] = 1;
          break;
        }
  if (!ok[T])
    throw numerical_error(
        "strict boundary mode: no complete-regime segmentation of length " +
        std::to_string(T));
}

inline void finalize_count_tables(CountIndexedTables& tab, int T, int S) {
  std::vector<double> terms;
  terms.reserve(static_cast<size_t>(S) * tab.d_max);
  tab.gamma_sc.resize(T);
  tab.gamma_s.setZero(T, S);
  // invariant check and normalization share the (alpha + beta) rows
  for (int t = 0; t < T; ++t) {
    terms.clear();
    for (int s = 0; s < S; ++s)
      for (int c = 0; c < tab.d_max; ++c)
        terms.push_back(tab.log_alpha[t](s, c) + tab.log_beta[t](s, c));
    const double z = log_sum_exp(terms);
    check_finite_normalizer(z, t);
    tab.gamma_sc[t].setZero(S, tab.d_max);
    for (int s = 0; s < S; ++s)
      for (int c = 0; c < tab.d_max; ++c) {
        const double v = tab.log_alpha[t](s, c) + tab.log_beta[t](s, c);
        if (v != kNegInf) {
          tab.gamma_sc[t](s, c) = std::exp(v - z);
          tab.gamma_s(t, s) += tab.gamma_sc[t](s, c);
        }
      }
    if (t == T - 1) tab.log_likelihood = z;
  }
}

}  // namespace detail

namespace detail {

/// Pruned alpha pass for the decreasing-count model: a cell (s, c) is
/// reached either by count decrement within the regime or by a fresh
/// duration draw at a boundary; the boundary sum is shared across counts.
inline void dc_alpha_pass(const Model& model, const Eigen::MatrixXd& e,
                          BoundaryMode boundary, CountIndexedTables& tab) {
  const int T = static_cast<int>(e.rows());
  const int S = static_cast<int>(e.cols());
  const int dmax = tab.d_max;
  for (int s = 0; s < S; ++s) {
    const DurationSpec& spec = model.duration_for(s);
    for (int c = 1; c <= dmax; ++c) {
      const double start_w = (boundary == BoundaryMode::Relaxed)
                                 ? spec.log_survival(c)
                                 : spec.log_rho(c);
      if (start_w == kNegInf) continue;
      tab.log_alpha[0](s, c - 1) =
          e(0, s) + model.transition.log_initial(s) + start_w;
    }
  }
  std::vector<double> boundary_mix(S);  // logsumexp_{s'} pi(s, s') alpha^{s',1}
  std::vector<double> terms(S);
  for (int t = 1; t < T; ++t) {
    for (int s = 0; s < S; ++s) {
      for (int sp = 0; sp < S; ++sp)
        terms[sp] =
            model.transition.log_switch(s, sp) + tab.log_alpha[t - 1](sp, 0);
      boundary_mix[s] = log_sum_exp(terms);
    }
    for (int s = 0; s < S; ++s) {
      const DurationSpec& spec = model.duration_for(s);
      for (int c = 1; c <= dmax; ++c) {
        double acc = spec.log_rho(c) == kNegInf
                         ? kNegInf
                         : spec.log_rho(c) + boundary_mix[s];
        if (c < dmax)
          acc = log_add(acc, tab.log_alpha[t - 1](s, c));  // from (s, c + 1)
        if (acc != kNegInf) tab.log_alpha[t](s, c - 1) = e(t, s) + acc;
      }
    }
  }
}

/// Unpruned alpha pass through the full (s,c) x (s,c) transition tensor.
inline void dc_alpha_pass_naive(const Model& model, const Eigen::MatrixXd& e,
                                const Eigen::MatrixXd& trans,
                                BoundaryMode boundary, CountIndexedTables& tab) {
  const int T = static_cast<int>(e.rows());
  const int S = static_cast<int>(e.cols());
  const int dmax = tab.d_max;
  for (int s = 0; s < S; ++s) {
    const DurationSpec& spec = model.duration_for(s);
    for (int c = 1; c <= dmax; ++c) {
      const double w = (boundary == BoundaryMode::Relaxed)
                           ? spec.log_survival(c)
                           : spec.log_rho(c);
      if (w != kNegInf)
        tab.log_alpha[0](s, c - 1) =
            e(0, s) + model.transition.log_initial(s) + w;
    }
  }
  std::vector<double> terms(static_cast<size_t>(S) * dmax);
  for (int t = 1; t < T; ++t)
    for (int s = 0; s < S; ++s)
      for (int c = 1; c <= dmax; ++c) {
        for (int sp = 0; sp < S; ++sp)
          for (int cp = 1; cp <= dmax; ++cp)
            terms[static_cast<size_t>(sp) * dmax + cp - 1] =
                trans(s * dmax + c - 1, sp * dmax + cp - 1) +
                tab.log_alpha[t - 1](sp, cp - 1);
        const double acc = log_sum_exp(terms);
        if (acc != kNegInf) tab.log_alpha[t](s, c - 1) = e(t, s) + acc;
      }
}

inline Eigen::MatrixXd dc_transition_tensor(const Model& model, int dmax) {
  const int S = model.transition.S;
  const int N = S * dmax;
  Eigen::MatrixXd trans = Eigen::MatrixXd::Constant(N, N, kNegInf);
  for (int sp = 0; sp < S; ++sp)
    for (int cp = 1; cp <= dmax; ++cp)
      for (int s = 0; s < S; ++s) {
        const DurationSpec& spec = model.duration_for(s);
        for (int c = 1; c <= dmax; ++c) {
          double lp;
          if (cp == 1)
            lp = model.transition.log_switch(s, sp) + spec.log_rho(c);
          else
            lp = (s == sp && c == cp - 1) ? 0.0 : kNegInf;
          trans(s * dmax + (c - 1), sp * dmax + (cp - 1)) = lp;
        }
      }
  return trans;
}

}  // namespace detail

/// Alpha pass only, for benchmarking the pruned vs naive recursions; returns
/// the final-row logsumexp so the work cannot be elided.
inline double dc_alpha_checksum(const Model& model, const TimeSeries& series,
                                bool naive,
                                BoundaryMode boundary = BoundaryMode::Relaxed) {
  require_valid(model);
  const int T = series.length();
  const int S = model.transition.S;
  const Eigen::MatrixXd e = emission_log_table(model, series);
  CountIndexedTables tab;
  tab.d_max = model.max_dmax();
  tab.log_alpha.assign(T, Eigen::MatrixXd::Constant(S, tab.d_max, kNegInf));
  if (naive) {
    const Eigen::MatrixXd trans = detail::dc_transition_tensor(model, tab.d_max);
    detail::dc_alpha_pass_naive(model, e, trans, boundary, tab);
  } else {
    detail::dc_alpha_pass(model, e, boundary, tab);
  }
  std::vector<double> fin(tab.log_alpha[T - 1].data(),
                          tab.log_alpha[T - 1].data() + S * tab.d_max);
  return log_sum_exp(fin);
}

/// Smoothing for the decreasing-count model: c_t counts down to 1 at the
/// regime's last step.
inline CountIndexedTables dc_smooth(const Model& model, const TimeSeries& series,
                                    BoundaryMode boundary = BoundaryMode::Relaxed) {
  require_valid(model);
  if (!model.has_duration())
    throw std::invalid_argument("dc_smooth requires a duration spec");
  const int T = series.length();
  const int S = model.transition.S;
  const int dmax = model.max_dmax();
  if (boundary == BoundaryMode::Strict) detail::check_strict_feasible(model, T);
  const Eigen::MatrixXd e = emission_log_table(model, series);

  CountIndexedTables tab;
  tab.d_max = dmax;
  tab.log_alpha.assign(T, Eigen::MatrixXd::Constant(S, dmax, kNegInf));
  tab.log_beta.assign(T, Eigen::MatrixXd::Constant(S, dmax, kNegInf));
  detail::dc_alpha_pass(model, e, boundary, tab);

  if (boundary == BoundaryMode::Relaxed) {
    tab.log_beta[T - 1].setZero();
  } else {
    for (int s = 0; s < S; ++s) tab.log_beta[T - 1](s, 0) = 0.0;
  }
  std::vector<double> restart(S);  // logsumexp_{c'} beta^{s',c'} rho^{s'}_{c'}
  for (int t = T - 2; t >= 0; --t) {
    for (int sn = 0; sn < S; ++sn) {
      const DurationSpec& spec = model.duration_for(sn);
      double acc = kNegInf;
      for (int c = spec.d_min; c <= spec.d_max; ++c)
        acc = log_add(acc, tab.log_beta[t + 1](sn, c - 1) + spec.log_rho(c));
      restart[sn] = acc;
    }
    for (int s = 0; s < S; ++s) {
      // c = 1: regime change at t + 1
      double acc = kNegInf;
      for (int sn = 0; sn < S; ++sn)
        acc = log_add(acc, e(t + 1, sn) + model.transition.log_switch(sn, s) +
                               restart[sn]);
      tab.log_beta[t](s, 0) = acc;
      // c > 1: same regime continues with c - 1
      for (int c = 2; c <= dmax; ++c)
        tab.log_beta[t](s, c - 1) = e(t + 1, s) + tab.log_beta[t + 1](s, c - 2);
    }
  }

  detail::finalize_count_tables(tab, T, S);
  return tab;
}

/// Reference implementation of dc_smooth with the full (s,c) x (s,c)
/// transition tensor and no pruning; used to validate the pruned recursions
/// and as the benchmark's naive baseline.
inline CountIndexedTables dc_smooth_naive(const Model& model,
                                          const TimeSeries& series,
                                          BoundaryMode boundary = BoundaryMode::Relaxed) {
  require_valid(model);
  const int T = series.length();
  const int S = model.transition.S;
  const int dmax = model.max_dmax();
  if (boundary == BoundaryMode::Strict) detail::check_strict_feasible(model, T);
  const Eigen::MatrixXd e = emission_log_table(model, series);
  const int N = S * dmax;
  const Eigen::MatrixXd trans = detail::dc_transition_tensor(model, dmax);

  CountIndexedTables tab;
  tab.d_max = dmax;
  tab.log_alpha.assign(T, Eigen::MatrixXd::Constant(S, dmax, kNegInf));
  tab.log_beta.assign(T, Eigen::MatrixXd::Constant(S, dmax, kNegInf));
  detail::dc_alpha_pass_naive(model, e, trans, boundary, tab);

  std::vector<double> terms(N);
  if (boundary == BoundaryMode::Relaxed)
    tab.log_beta[T - 1].setZero();
  else
    for (int s = 0; s < S; ++s) tab.log_beta[T - 1](s, 0) = 0.0;
  for (int t = T - 2; t >= 0; --t)
    for (int sp = 0; sp < S; ++sp)
      for (int cp = 1; cp <= dmax; ++cp) {
        for (int s = 0; s < S; ++s)
          for (int c = 1; c <= dmax; ++c)
            terms[s * dmax + c - 1] = trans(s * dmax + c - 1, sp * dmax + cp - 1) +
                                      e(t + 1, s) + tab.log_beta[t + 1](s, c - 1);
        tab.log_beta[t](sp, cp - 1) = log_sum_exp(terms);
      }

  detail::finalize_count_tables(tab, T, S);
  return tab;
}

/// Most likely (regime, count) path for the decreasing-count model. On a
/// tie the within-regime continuation wins, matching the strict inequality
/// in the boundary test; regime argmax ties go to the lowest index.
inline CountViterbiResult dc_viterbi(const Model& model, const TimeSeries& series,
                                     BoundaryMode boundary = BoundaryMode::Relaxed) {
  require_valid(model);
  const int T = series.length();
  const int S = model.transition.S;
  const int dmax = model.max_dmax();
  if (boundary == BoundaryMode::Strict) detail::check_strict_feasible(model, T);
  const Eigen::MatrixXd e = emission_log_table(model, series);

  std::vector<Eigen::MatrixXd> delta(T, Eigen::MatrixXd::Constant(S, dmax, kNegInf));
  // backpointer encodes the previous (s, c) flattened; -1 at t = 0
  std::vector<Eigen::MatrixXi> psi(T, Eigen::MatrixXi::Constant(S, dmax, -1));

  for (int s = 0; s < S; ++s) {
    const DurationSpec& spec = model.duration_for(s);
    for (int c = 1; c <= dmax; ++c) {
      const double w = (boundary == BoundaryMode::Relaxed)
                           ? spec.log_survival(c)
                           : spec.log_rho(c);
      if (w != kNegInf)
        delta[0](s, c - 1) = e(0, s) + model.transition.log_initial(s) + w;
    }
  }

  for (int t = 1; t < T; ++t) {
    std::vector<double> best_boundary(S, kNegInf);
    std::vector<int> best_prev(S, 0);
    for (int s = 0; s < S; ++s)
      for (int sp = 0; sp < S; ++sp) {
        const double cand =
            model.transition.log_switch(s, sp) + delta[t - 1](sp, 0);
        if (cand > best_boundary[s]) {
          best_boundary[s] = cand;
          best_prev[s] = sp;
        }
      }
    for (int s = 0; s < S; ++s) {
      const DurationSpec& spec = model.duration_for(s);
      for (int c = 1; c <= dmax; ++c) {
        const double switch_val = spec.log_rho(c) + best_boundary[s];
        const double cont_val =
            (c < dmax) ? delta[t - 1](s, c) : kNegInf;
        if (switch_val > cont_val) {
          if (switch_val == kNegInf) continue;
          delta[t](s, c - 1) = e(t, s) + switch_val;
          psi[t](s, c - 1) = best_prev[s] * dmax + 0;
        } else {
          if (cont_val == kNegInf) continue;
          delta[t](s, c - 1) = e(t, s) + cont_val;
          psi[t](s, c - 1) = s * dmax + c;  // previous cell (s, c + 1)
        }
      }
    }
  }

  CountViterbiResult res;
  res.regimes.assign(T, 0);
  res.counts.assign(T, 1);
  double best = kNegInf;
  int bs = 0, bc = 1;
  for (int s = 0; s < S; ++s)
    for (int c = 1; c <= dmax; ++c) {
      if (boundary == BoundaryMode::Strict && c != 1) continue;
      if (delta[T - 1](s, c - 1) > best) {
        best = delta[T - 1](s, c - 1);
        bs = s;
        bc = c;
      }
    }
  detail::check_finite_normalizer(best, T - 1);
  res.log_joint = best;
  res.regimes[T - 1] = bs;
  res.counts[T - 1] = bc;
  for (int t = T - 1; t > 0; --t) {
    const int prev = psi[t](res.regimes[t], res.counts[t] - 1);
    res.regimes[t - 1] = prev / dmax;
    res.counts[t - 1] = prev % dmax + 1;
  }
  return res;
}

/// Smoothing for the increasing-count (change-point) model parameterized by
/// the hazard. With cut_across_regimes the observation context is truncated
/// at the current segment start.
inline CountIndexedTables ic_smooth(const Model& model, const TimeSeries& series,
                                    BoundaryMode boundary = BoundaryMode::Relaxed) {
  require_valid(model);
  if (!model.has_duration())
    throw std::invalid_argument("ic_smooth requires a duration spec");
  const int T = series.length();
  const int S = model.transition.S;
  const int dmax = model.max_dmax();
  const int k = model.order_k();
  if (boundary == BoundaryMode::Strict) detail::check_strict_feasible(model, T);

  const bool cut = model.cut_across_regimes && k > 0;
  std::vector<Eigen::MatrixXd> ectx;
  Eigen::MatrixXd efull;
  if (cut)
    ectx = emission_log_table_by_context(model, series);
  else
    efull = emission_log_table(model, series);
  auto emis = [&](int t, int s, int c) {
    if (!cut) return efull(t, s);
    return ectx[static_cast<size_t>(std::min(k, c - 1))](t, s);
  };

  CountIndexedTables tab;
  tab.d_max = dmax;
  tab.log_alpha.assign(T, Eigen::MatrixXd::Constant(S, dmax, kNegInf));
  tab.log_beta.assign(T, Eigen::MatrixXd::Constant(S, dmax, kNegInf));

  for (int s = 0; s < S; ++s) {
    const DurationSpec& spec = model.duration_for(s);
    if (boundary == BoundaryMode::Relaxed) {
      for (int c = 1; c <= dmax; ++c) {
        const double w = spec.log_survival(c);
        if (w != kNegInf)
          tab.log_alpha[0](s, c - 1) =
              emis(0, s, c) + model.transition.log_initial(s) + w;
      }
    } else {
      tab.log_alpha[0](s, 0) = emis(0, s, 1) + model.transition.log_initial(s);
    }
  }

  std::vector<double> ended(S);  // logsumexp_{c'} (1 - lambda_{c'}) alpha^{s,c'}
  std::vector<double> terms(S);
  for (int t = 1; t < T; ++t) {
    for (int sp = 0; sp < S; ++sp) {
      const DurationSpec& spec = model.duration_for(sp);
      double acc = kNegInf;
      for (int c = 1; c <= dmax; ++c)
        acc = log_add(acc, spec.log_end_prob(c) + tab.log_alpha[t - 1](sp, c - 1));
      ended[sp] = acc;
    }
    for (int s = 0; s < S; ++s) {
      const DurationSpec& spec = model.duration_for(s);
      for (int sp = 0; sp < S; ++sp)
        terms[sp] = model.transition.log_switch(s, sp) + ended[sp];
      const double fresh = log_sum_exp(terms);
      if (fresh != kNegInf) tab.log_alpha[t](s, 0) = emis(t, s, 1) + fresh;
      for (int c = 2; c <= dmax; ++c) {
        const double grow =
            spec.log_lambda(c - 1) + tab.log_alpha[t - 1](s, c - 2);
        if (grow != kNegInf) tab.log_alpha[t](s, c - 1) = emis(t, s, c) + grow;
      }
    }
  }

  for (int s = 0; s < S; ++s) {
    const DurationSpec& spec = model.duration_for(s);
    for (int c = 1; c <= dmax; ++c)
      tab.log_beta[T - 1](s, c - 1) =
          (boundary == BoundaryMode::Relaxed) ? 0.0 : spec.log_end_prob(c);
  }
  std::vector<double> fresh_future(S);
  for (int t = T - 2; t >= 0; --t) {
    for (int s = 0; s < S; ++s) {
      for (int sn = 0; sn < S; ++sn)
        terms[sn] = emis(t + 1, sn, 1) + model.transition.log_switch(sn, s) +
                    tab.log_beta[t + 1](sn, 0);
      fresh_future[s] = log_sum_exp(terms);
    }
    for (int s = 0; s < S; ++s) {
      const DurationSpec& spec = model.duration_for(s);
      for (int c = 1; c <= dmax; ++c) {
        double acc = spec.log_end_prob(c) == kNegInf
                         ? kNegInf
                         : spec.log_end_prob(c) + fresh_future[s];
        if (c < dmax && spec.log_lambda(c) != kNegInf)
          acc = log_add(acc, spec.log_lambda(c) + emis(t + 1, s, c + 1) +
                                 tab.log_beta[t + 1](s, c));
        tab.log_beta[t](s, c - 1) = acc;
      }
    }
  }

  detail::finalize_count_tables(tab, T, S);
  return tab;
}

}  // namespace switchseg

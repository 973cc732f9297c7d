#pragma once

#include <array>
#include <functional>

#include "switchseg/duration.hpp"

namespace switchseg {

/// Segment likelihood oracle: log p(observed part of v | one segment of
/// regime s covering [start, end]). `start` may be negative (segment began
/// before the series under relaxed boundaries) and `end` may exceed T-1
/// (segment truncated by the observation window); only in-window steps
/// contribute. Results are cached densely keyed by (end, duration, regime).
class SegmentLikelihoodProvider {
 public:
  using Fn = std::function<double(int start, int end, int s)>;

  SegmentLikelihoodProvider(Fn fn, int T, int S, int d_min, int d_max,
                            bool cache_enabled = true)
      : fn_(std::move(fn)), T_(T), S_(S), d_min_(d_min), d_max_(d_max) {
    if (cache_enabled) {
      const int ends = T_ + d_max_ - 1;
      const int span = d_max_ - d_min_ + 1;
      cache_.assign(static_cast<size_t>(ends) * span * S_, 0.0);
      for (int end = 0; end < ends; ++end)
        for (int d = d_min_; d <= d_max_; ++d)
          for (int s = 0; s < S_; ++s)
            cache_[slot(end, d, s)] = raw(end - d + 1, end, s);
      cached_ = true;
    }
  }

  /// Provider built from a model's AR or GMM emission, with observation
  /// context truncated at the segment start.
  static SegmentLikelihoodProvider from_model(const Model& model,
                                              const TimeSeries& series,
                                              bool cache_enabled = true) {
    const DurationSpec& spec = model.duration_for(0);
    Fn fn;
    if (const auto* ar = model.ar()) {
      const ArEmission a = *ar;
      fn = [a, series](int start, int end, int s) {
        double acc = 0.0;
        const int lo = std::max(0, start);
        const int hi = std::min(series.length() - 1, end);
        for (int t = lo; t <= hi; ++t)
          acc += a.log_pdf(series, t, s, std::min(a.k, t - start));
        return acc;
      };
    } else if (const auto* gmm = model.gmm()) {
      const GmmEmission g = *gmm;
      fn = [g, series](int start, int end, int s) {
        double acc = 0.0;
        const int lo = std::max(0, start);
        const int hi = std::min(series.length() - 1, end);
        for (int t = lo; t <= hi; ++t) acc += g.log_pdf(s, series.row(t));
        return acc;
      };
    } else {
      throw std::invalid_argument("segment provider needs an AR or GMM emission");
    }
    return SegmentLikelihoodProvider(std::move(fn), series.length(),
                                     model.transition.S, spec.d_min, spec.d_max,
                                     cache_enabled);
  }

  double operator()(int start, int end, int s) const {
    const int d = end - start + 1;
    if (cached_ && d >= d_min_ && d <= d_max_ && end >= 0 &&
        end < T_ + d_max_ - 1)
      return cache_[slot(end, d, s)];
    return raw(start, end, s);
  }

  int T() const { return T_; }
  int S() const { return S_; }

 private:
  size_t slot(int end, int d, int s) const {
    const int span = d_max_ - d_min_ + 1;
    return (static_cast<size_t>(end) * span + (d - d_min_)) * S_ + s;
  }
  double raw(int start, int end, int s) const {
    const double v = fn_(start, end, s);
    if (std::isnan(v))
      throw numerical_error("segment likelihood returned NaN at (" +
                            std::to_string(start) + ", " + std::to_string(end) +
                            ", regime " + std::to_string(s) + ")");
    return v;
  }

  Fn fn_;
  int T_, S_, d_min_, d_max_;
  bool cached_ = false;
  std::vector<double> cache_;
};

/// Forward/backward tables over segment-end events. log_alpha_sd1[t](s, d)
/// is the joint weight of a segment of regime s and duration d ending at t;
/// t runs past the window up to T + d_max - 2 for segments truncated by the
/// end of the series.
struct SegmentTables {
  std::vector<Eigen::MatrixXd> log_alpha_sd1;  // t in 0..T+d_max-2, S x span
  Eigen::MatrixXd log_beta_s1;                 // T x S
  Eigen::MatrixXd log_alpha_hat;               // T x S
  Eigen::MatrixXd log_alpha_tilde;             // T x S
  double log_normalizer = kNegInf;
  BoundaryMode boundary = BoundaryMode::Relaxed;
  int T = 0, S = 0, d_min = 1, d_max = 1;

  int span() const { return d_max - d_min + 1; }
  double alpha(int t, int s, int d) const {
    return log_alpha_sd1[t](s, d - d_min);
  }
  /// beta extended past the window: no further observations, so 1.
  double beta(int t, int s) const {
    if (t >= T) return boundary == BoundaryMode::Relaxed ? 0.0 : kNegInf;
    return log_beta_s1(t, s);
  }
};

namespace detail {

inline const DurationSpec& seg_spec(const Model& model) {
  if (!model.has_duration())
    throw std::invalid_argument("segmental routine requires a duration spec");
  if (model.durations.size() != 1)
    throw std::invalid_argument("segmental model uses a shared duration law");
  return model.durations[0];
}

}  // namespace detail

inline SegmentTables seg_forward(const Model& model,
                                 const SegmentLikelihoodProvider& provider,
                                 BoundaryMode boundary = BoundaryMode::Relaxed) {
  require_valid(model);
  const DurationSpec& spec = detail::seg_spec(model);
  const int T = provider.T();
  const int S = model.transition.S;
  if (boundary == BoundaryMode::Strict) detail::check_strict_feasible(model, T);

  SegmentTables tab;
  tab.boundary = boundary;
  tab.T = T;
  tab.S = S;
  tab.d_min = spec.d_min;
  tab.d_max = spec.d_max;
  tab.log_alpha_sd1.assign(T + spec.d_max - 1,
                           Eigen::MatrixXd::Constant(S, tab.span(), kNegInf));
  tab.log_alpha_hat.setConstant(T, S, kNegInf);
  tab.log_alpha_tilde.setConstant(T, S, kNegInf);

  std::vector<double> terms(S);
  for (int t = 0; t < T + spec.d_max - 1; ++t) {
    for (int d = spec.d_min; d <= spec.d_max; ++d) {
      const int start = t - d + 1;
      if (start > T - 1) continue;  // segment must begin inside the window
      for (int s = 0; s < S; ++s) {
        const double lr = spec.log_rho(d);
        if (lr == kNegInf) continue;
        double val;
        if (start > 0) {
          val = provider(start, t, s) + lr + tab.log_alpha_tilde(start - 1, s);
        } else if (start == 0) {
          val = provider(0, t, s) + lr + model.transition.log_initial(s);
        } else {  // segment began before the window
          if (boundary == BoundaryMode::Strict) continue;
          val = provider(start, t, s) + lr + model.transition.log_initial(s);
        }
        if (val != kNegInf) tab.log_alpha_sd1[t](s, d - spec.d_min) = val;
      }
    }
    if (t < T) {
      for (int s = 0; s < S; ++s)
        tab.log_alpha_hat(t, s) = log_sum_exp_row(tab.log_alpha_sd1[t], s);
      for (int s = 0; s < S; ++s) {
        for (int sp = 0; sp < S; ++sp)
          terms[sp] =
              model.transition.log_switch(s, sp) + tab.log_alpha_hat(t, sp);
        tab.log_alpha_tilde(t, s) = log_sum_exp(terms);
      }
    }
  }

  std::vector<double> finals;
  if (boundary == BoundaryMode::Strict) {
    for (int s = 0; s < S; ++s)
      for (int d = spec.d_min; d <= spec.d_max; ++d)
        finals.push_back(tab.alpha(T - 1, s, d));
  } else {
    for (int t = T - 1; t < T + spec.d_max - 1; ++t)
      for (int s = 0; s < S; ++s)
        for (int d = spec.d_min; d <= spec.d_max; ++d)
          finals.push_back(tab.alpha(t, s, d));
  }
  tab.log_normalizer = log_sum_exp(finals);
  detail::check_finite_normalizer(tab.log_normalizer, T - 1);
  return tab;
}

/// Backward pass: log_beta_s1(t, s) = log p(v_{t+1:T} | segment of regime s
/// ends at t). Fills the beta side of `tab` in place and returns it.
inline SegmentTables& seg_backward(const Model& model,
                                   const SegmentLikelihoodProvider& provider,
                                   SegmentTables& tab) {
  require_valid(model);
  const DurationSpec& spec = detail::seg_spec(model);
  const int T = tab.T;
  const int S = tab.S;
  tab.log_beta_s1.setConstant(T, S, kNegInf);
  for (int s = 0; s < S; ++s) tab.log_beta_s1(T - 1, s) = 0.0;

  std::vector<double> per_regime(S);
  std::vector<double> terms(S);
  for (int t = T - 2; t >= 0; --t) {
    for (int sn = 0; sn < S; ++sn) {
      double acc = kNegInf;
      for (int d = spec.d_min; d <= spec.d_max; ++d) {
        const int end = t + d;
        const double lr = spec.log_rho(d);
        if (lr == kNegInf) continue;
        if (end <= T - 1) {
          acc = log_add(acc, provider(t + 1, end, sn) + lr +
                                 tab.log_beta_s1(end, sn));
        } else if (tab.boundary == BoundaryMode::Relaxed) {
          acc = log_add(acc, provider(t + 1, end, sn) + lr);
        }
      }
      per_regime[sn] = acc;
    }
    for (int s = 0; s < S; ++s) {
      for (int sn = 0; sn < S; ++sn)
        terms[sn] = model.transition.log_switch(sn, s) + per_regime[sn];
      tab.log_beta_s1(t, s) = log_sum_exp(terms);
    }
  }
  return tab;
}

struct SegmentPosteriors {
  std::vector<Eigen::MatrixXd> state_count;  // per t: S x d_max (count c - 1)
  Eigen::MatrixXd state;                     // T x S
  Eigen::VectorXd per_t_log_normalizer;      // eq-posterior normalizer at each t
};

/// Posteriors from matched forward/backward tables: the segment covering
/// time t ends at tau = t + c - 1 with some duration d >= c.
inline SegmentPosteriors seg_posteriors(const SegmentTables& tab) {
  if (tab.log_beta_s1.rows() != tab.T)
    throw std::invalid_argument("seg_posteriors: backward pass missing");
  SegmentPosteriors post;
  post.state_count.assign(tab.T,
                          Eigen::MatrixXd::Constant(tab.S, tab.d_max, kNegInf));
  post.state.setZero(tab.T, tab.S);
  post.per_t_log_normalizer.resize(tab.T);

  for (int t = 0; t < tab.T; ++t) {
    auto& sc = post.state_count[t];
    for (int s = 0; s < tab.S; ++s)
      for (int c = 1; c <= tab.d_max; ++c) {
        const int tau = t + c - 1;
        if (tau >= tab.T + tab.d_max - 1) continue;
        const double lb = tab.beta(tau, s);
        if (lb == kNegInf) continue;
        double acc = kNegInf;
        for (int d = std::max(tab.d_min, c); d <= tab.d_max; ++d)
          acc = log_add(acc, tab.alpha(tau, s, d));
        if (acc != kNegInf) sc(s, c - 1) = acc + lb;
      }
    std::vector<double> all(sc.data(), sc.data() + sc.size());
    const double z = log_sum_exp(all);
    detail::check_finite_normalizer(z, t);
    post.per_t_log_normalizer(t) = z;
    for (int s = 0; s < tab.S; ++s)
      for (int c = 0; c < tab.d_max; ++c) {
        sc(s, c) = sc(s, c) == kNegInf ? 0.0 : std::exp(sc(s, c) - z);
        post.state(t, s) += sc(s, c);
      }
  }
  return post;
}

struct SegmentViterbiResult {
  std::vector<int> regimes;    // length T
  std::vector<int> durations;  // length T
  std::vector<int> counts;     // length T
  double log_joint = kNegInf;
};

/// Most likely (regime, duration, count) path. Ties prefer the earliest
/// segment boundary (largest previous duration), then the lowest regime
/// index; the unconstrained finish prefers the earliest end time.
inline SegmentViterbiResult seg_viterbi(const Model& model,
                                        const SegmentLikelihoodProvider& provider,
                                        BoundaryMode boundary = BoundaryMode::Relaxed) {
  require_valid(model);
  const DurationSpec& spec = detail::seg_spec(model);
  const int T = provider.T();
  const int S = model.transition.S;
  if (boundary == BoundaryMode::Strict) detail::check_strict_feasible(model, T);
  const int span = spec.d_max - spec.d_min + 1;

  std::vector<Eigen::MatrixXd> delta(
      T + spec.d_max - 1, Eigen::MatrixXd::Constant(S, span, kNegInf));
  // previous (regime, duration) flattened; -1 for a path-opening segment
  std::vector<Eigen::MatrixXi> psi(T + spec.d_max - 1,
                                   Eigen::MatrixXi::Constant(S, span, -1));
  // per real end time: best duration per regime, for the jump maximization
  Eigen::MatrixXd best_by_regime = Eigen::MatrixXd::Constant(T, S, kNegInf);
  Eigen::MatrixXi best_d = Eigen::MatrixXi::Zero(T, S);

  for (int t = 0; t < T + spec.d_max - 1; ++t) {
    for (int d = spec.d_min; d <= spec.d_max; ++d) {
      const int start = t - d + 1;
      if (start > T - 1) continue;
      const double lr = spec.log_rho(d);
      if (lr == kNegInf) continue;
      for (int s = 0; s < S; ++s) {
        if (start > 0) {
          double best = kNegInf;
          int arg = -1;
          for (int sp = 0; sp < S; ++sp) {
            const double cand = model.transition.log_switch(s, sp) +
                                best_by_regime(start - 1, sp);
            if (cand > best) {
              best = cand;
              arg = sp;
            }
          }
          if (best == kNegInf) continue;
          delta[t](s, d - spec.d_min) = provider(start, t, s) + lr + best;
          psi[t](s, d - spec.d_min) = arg * (spec.d_max + 1) + best_d(start - 1, arg);
        } else if (start == 0) {
          delta[t](s, d - spec.d_min) =
              provider(0, t, s) + lr + model.transition.log_initial(s);
        } else if (boundary == BoundaryMode::Relaxed) {
          delta[t](s, d - spec.d_min) =
              provider(start, t, s) + lr + model.transition.log_initial(s);
        }
      }
    }
    if (t < T)
      for (int s = 0; s < S; ++s)
        for (int d = spec.d_max; d >= spec.d_min; --d)  // larger d wins ties
          if (delta[t](s, d - spec.d_min) > best_by_regime(t, s)) {
            best_by_regime(t, s) = delta[t](s, d - spec.d_min);
            best_d(t, s) = d;
          }
  }

  SegmentViterbiResult res;
  res.regimes.assign(T, 0);
  res.durations.assign(T, 0);
  res.counts.assign(T, 0);

  const int last_t = (boundary == BoundaryMode::Strict) ? T - 1
                                                        : T + spec.d_max - 2;
  double best = kNegInf;
  int bt = T - 1, bs = 0, bd = spec.d_min;
  for (int t = T - 1; t <= last_t; ++t)  // earliest end wins ties
    for (int d = spec.d_max; d >= spec.d_min; --d)
      for (int s = 0; s < S; ++s)
        if (delta[t](s, d - spec.d_min) > best) {
          best = delta[t](s, d - spec.d_min);
          bt = t;
          bs = s;
          bd = d;
        }
  detail::check_finite_normalizer(best, T - 1);
  res.log_joint = best;

  int t = bt, s = bs, d = bd;
  while (true) {
    const int start = t - d + 1;
    for (int u = std::max(0, start); u <= std::min(t, T - 1); ++u) {
      res.regimes[u] = s;
      res.durations[u] = d;
      res.counts[u] = t - u + 1;
    }
    if (start <= 0) break;
    const int code = psi[t](s, d - spec.d_min);
    t = start - 1;
    s = code / (spec.d_max + 1);
    d = code % (spec.d_max + 1);
  }
  return res;
}

/// Backward path sampling from the forward tables; identical seeds give
/// identical paths.
inline SegmentViterbiResult seg_sample_path(const Model& model,
                                            const SegmentTables& tab,
                                            uint64_t seed) {
  Rng rng(seed);
  const int T = tab.T;
  const int S = tab.S;
  SegmentViterbiResult res;
  res.regimes.assign(T, 0);
  res.durations.assign(T, 0);
  res.counts.assign(T, 0);

  // final segment: end time, regime, duration jointly from the alpha weights
  std::vector<double> w;
  std::vector<std::array<int, 3>> cand;
  const int last_t = (tab.boundary == BoundaryMode::Strict) ? T - 1
                                                            : T + tab.d_max - 2;
  for (int t = T - 1; t <= last_t; ++t)
    for (int s = 0; s < S; ++s)
      for (int d = tab.d_min; d <= tab.d_max; ++d)
        if (tab.alpha(t, s, d) != kNegInf) {
          w.push_back(tab.alpha(t, s, d));
          cand.push_back({t, s, d});
        }
  if (cand.empty()) throw numerical_error("seg_sample_path: empty support");
  auto pick = cand[static_cast<size_t>(rng.categorical_log(w))];
  int t = pick[0], s = pick[1], d = pick[2];

  while (true) {
    const int start = t - d + 1;
    for (int u = std::max(0, start); u <= std::min(t, T - 1); ++u) {
      res.regimes[u] = s;
      res.durations[u] = d;
      res.counts[u] = t - u + 1;
    }
    if (start <= 0) break;
    w.clear();
    cand.clear();
    for (int sp = 0; sp < S; ++sp)
      for (int dp = tab.d_min; dp <= tab.d_max; ++dp) {
        const double a = tab.alpha(start - 1, sp, dp);
        if (a == kNegInf) continue;
        w.push_back(model.transition.log_switch(s, sp) + a);
        cand.push_back({start - 1, sp, dp});
      }
    if (cand.empty()) throw numerical_error("seg_sample_path: dead end");
    pick = cand[static_cast<size_t>(rng.categorical_log(w))];
    t = pick[0];
    s = pick[1];
    d = pick[2];
  }
  return res;
}

/// Joint log density of a complete segmentation, read off a decoded or
/// sampled path.
inline double seg_path_log_joint(const Model& model,
                                 const SegmentLikelihoodProvider& provider,
                                 const SegmentViterbiResult& path) {
  const int T = static_cast<int>(path.regimes.size());
  double acc = 0.0;
  int t = 0;
  bool first = true;
  while (t < T) {
    const int s = path.regimes[t];
    const int d = path.durations[t];
    const int end = t + path.counts[t] - 1;     // may exceed T - 1
    const int start = end - d + 1;              // may be negative
    acc += provider(start, end, s) + model.durations[0].log_rho(d);
    if (first)
      acc += model.transition.log_initial(s);
    else
      acc += model.transition.log_switch(s, path.regimes[t - 1]);
    first = false;
    t = std::min(end, T - 1) + 1;
  }
  return acc;
}

/// p(s_t | v_{1:T}) for the pi_ii = 0 case. Runs the duration-aggregated
/// forward recursion as a cross-check of the normalizer, then reads the
/// state posterior off the general tables.
inline Eigen::MatrixXd seg_posterior_state_piizero(
    const Model& model, const SegmentLikelihoodProvider& provider,
    const SegmentTables& tab) {
  for (int i = 0; i < model.transition.S; ++i)
    if (model.transition.switch_(i, i) != 0.0)
      throw std::invalid_argument(
          "seg_posterior_state_piizero requires pi_ii = 0 for all regimes");

  const DurationSpec& spec = model.durations[0];
  const int T = tab.T;
  const int S = tab.S;
  // aggregated recursion over hat-alpha only
  Eigen::MatrixXd hat = Eigen::MatrixXd::Constant(T, S, kNegInf);
  Eigen::MatrixXd tilde = Eigen::MatrixXd::Constant(T, S, kNegInf);
  std::vector<double> finals;
  std::vector<double> terms(S);
  for (int t = 0; t < T + spec.d_max - 1; ++t) {
    for (int s = 0; s < S; ++s) {
      double acc = kNegInf;
      for (int d = spec.d_min; d <= spec.d_max; ++d) {
        const int start = t - d + 1;
        if (start > T - 1) continue;
        const double lr = spec.log_rho(d);
        if (lr == kNegInf) continue;
        double v;
        if (start > 0)
          v = provider(start, t, s) + lr + tilde(start - 1, s);
        else if (start == 0 || tab.boundary == BoundaryMode::Relaxed)
          v = provider(start, t, s) + lr + model.transition.log_initial(s);
        else
          continue;
        acc = log_add(acc, v);
        if (t >= T - 1 && (tab.boundary == BoundaryMode::Relaxed || t == T - 1))
          finals.push_back(v);
      }
      if (t < T) hat(t, s) = acc;
    }
    if (t < T)
      for (int s = 0; s < S; ++s) {
        for (int sp = 0; sp < S; ++sp)
          terms[sp] = model.transition.log_switch(s, sp) + hat(t, sp);
        tilde(t, s) = log_sum_exp(terms);
      }
  }
  const double agg_norm = log_sum_exp(finals);
  if (std::abs(agg_norm - tab.log_normalizer) >
      1e-9 * std::max(1.0, std::abs(tab.log_normalizer)))
    throw numerical_error("aggregated forward normalizer mismatch");

  return seg_posteriors(tab).state;
}

}  // namespace switchseg

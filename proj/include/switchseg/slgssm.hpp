#pragma once

#include "switchseg/duration.hpp"

namespace switchseg {

struct GaussianBelief {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  double log_weight = 0.0;
};

/// Mixture with joint component weights: exp(log_weight) of a component is
/// p(discrete cell, component | data), so cell mass is the logsumexp.
struct MixtureBelief {
  std::vector<GaussianBelief> comps;

  double log_weight() const {
    double acc = kNegInf;
    for (const auto& c : comps) acc = log_add(acc, c.log_weight);
    return acc;
  }

  /// Moment-matched single Gaussian carrying the total weight.
  GaussianBelief collapsed() const {
    const double total = log_weight();
    if (comps.empty() || total == kNegInf)
      return GaussianBelief{Eigen::VectorXd(), Eigen::MatrixXd(), kNegInf};
    const int H = static_cast<int>(comps.front().mean.size());
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(H);
    for (const auto& c : comps)
      mean += std::exp(c.log_weight - total) * c.mean;
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(H, H);
    for (const auto& c : comps) {
      const Eigen::VectorXd d = c.mean - mean;
      cov += std::exp(c.log_weight - total) * (c.cov + d * d.transpose());
    }
    symmetrize(cov);
    return GaussianBelief{mean, cov, total};
  }
};

/// Discrete-conditional beliefs at one time step; cells are indexed by
/// (regime, count) with count 1..d_max (d_max = 1 for plain filtering).
struct SwitchBeliefState {
  int S = 0, d_max = 1;
  std::vector<MixtureBelief> cells;

  SwitchBeliefState() = default;
  SwitchBeliefState(int s, int dmax) : S(s), d_max(dmax), cells(s * dmax) {}

  MixtureBelief& cell(int s, int c) { return cells[s * d_max + c - 1]; }
  const MixtureBelief& cell(int s, int c) const {
    return cells[s * d_max + c - 1];
  }
  double cell_log_weight(int s, int c) const { return cell(s, c).log_weight(); }

  Eigen::VectorXd log_weights() const {
    Eigen::VectorXd w(cells.size());
    for (size_t i = 0; i < cells.size(); ++i) w(i) = cells[i].log_weight();
    return w;
  }

  void normalize(double log_total) {
    for (auto& cell : cells)
      for (auto& comp : cell.comps) comp.log_weight -= log_total;
  }

  size_t component_count() const {
    size_t n = 0;
    for (const auto& c : cells) n += c.comps.size();
    return n;
  }
};

enum class SlgssmVariant { Plain, DurationDc, DurationDcReset, DurationIcReset, Changepoint };

struct SlgssmOptions {
  bool exact = false;          // reset variants: keep the full mixtures
  int max_components = 4096;   // exact-mode cap per cell
  double prune_threshold = 0;  // drop branches below this weight (default off)
  bool factored = true;        // dc filter: share the boundary sum across counts
};

struct FilterResult {
  SlgssmVariant variant = SlgssmVariant::Plain;
  std::vector<SwitchBeliefState> steps;
  double log_likelihood = 0.0;
  int jitter_count = 0;  // diagonal jitter injections during the run
};

struct KalmanStepResult {
  GaussianBelief posterior;
  double log_evidence = kNegInf;
};

/// Measurement update of N(mean, cov) with v ~ N(B h, sigma_v); Joseph-form
/// covariance and Cholesky solves throughout.
inline KalmanStepResult kalman_correct(const Eigen::VectorXd& mean,
                                       const Eigen::MatrixXd& cov,
                                       const Eigen::MatrixXd& B,
                                       const Eigen::MatrixXd& sigma_v,
                                       const Eigen::VectorXd& v,
                                       int* jitter_count = nullptr) {
  Eigen::MatrixXd innov_cov = B * cov * B.transpose() + sigma_v;
  symmetrize(innov_cov);
  double jit = 0.0;
  const auto llt = cholesky_with_jitter(innov_cov, 1e-9, &jit);
  if (jit > 0.0 && jitter_count) ++*jitter_count;

  const Eigen::VectorXd pred_v = B * mean;
  const Eigen::MatrixXd K = llt.solve(B * cov).transpose();
  const Eigen::VectorXd new_mean = mean + K * (v - pred_v);
  const Eigen::MatrixXd I =
      Eigen::MatrixXd::Identity(cov.rows(), cov.cols());
  Eigen::MatrixXd new_cov = (I - K * B) * cov * (I - K * B).transpose() +
                            K * sigma_v * K.transpose();
  symmetrize(new_cov);

  const Eigen::VectorXd z = llt.matrixL().solve(v - pred_v);
  double log_det = 0.0;
  for (int i = 0; i < innov_cov.rows(); ++i)
    log_det += std::log(llt.matrixL()(i, i));
  const double log_ev = -0.5 * z.squaredNorm() - log_det -
                        0.5 * static_cast<double>(v.size()) * kLogTwoPi;
  return {GaussianBelief{new_mean, new_cov, 0.0}, log_ev};
}

/// One predict-correct step through the given regime's dynamics; returns the
/// updated belief and log p(v_t | branch).
inline KalmanStepResult kalman_predict_correct(
    const GaussianBelief& belief, const LinearGaussianEmission::Regime& rg,
    const Eigen::VectorXd& v, int* jitter_count = nullptr) {
  const Eigen::VectorXd mean_p = rg.A * belief.mean;
  Eigen::MatrixXd cov_p = rg.A * belief.cov * rg.A.transpose() + rg.sigma_h;
  symmetrize(cov_p);
  return kalman_correct(mean_p, cov_p, rg.B, rg.sigma_v, v, jitter_count);
}

namespace detail {

inline const LinearGaussianEmission& lgss_of(const Model& model) {
  require_valid(model);
  const auto* l = model.lgss();
  if (!l) throw std::invalid_argument("routine requires an slgssm model");
  return *l;
}

inline KalmanStepResult reset_correct(const LinearGaussianEmission::Regime& rg,
                                      const Eigen::VectorXd& v,
                                      int* jitter_count) {
  return kalman_correct(rg.reset_mean, rg.reset_cov, rg.B, rg.sigma_v, v,
                        jitter_count);
}

inline void cap_check(const MixtureBelief& cell, const SlgssmOptions& opts) {
  if (static_cast<int>(cell.comps.size()) > opts.max_components)
    throw numerical_error(
        "exact-mode mixture exceeded the component cap; run collapsed mode");
}

inline double finalize_step(SwitchBeliefState& state) {
  double total = kNegInf;
  for (const auto& c : state.cells) total = log_add(total, c.log_weight());
  if (total == kNegInf)
    throw numerical_error("filter step with zero total weight");
  state.normalize(total);
  return total;
}

}  // namespace detail

/// Assumed-density filter for the plain switching model: S^2 branches per
/// step collapsed back to one Gaussian per regime.
inline FilterResult slgssm_filter(const Model& model, const TimeSeries& series) {
  const auto& lg = detail::lgss_of(model);
  const int T = series.length();
  const int S = lg.S;
  FilterResult out;
  out.variant = SlgssmVariant::Plain;
  out.steps.reserve(T);

  for (int t = 0; t < T; ++t) {
    SwitchBeliefState state(S, 1);
    const Eigen::VectorXd v = series.row(t);
    for (int s = 0; s < S; ++s) {
      MixtureBelief branches;
      if (t == 0) {
        auto kr = detail::reset_correct(lg.regimes[s], v, &out.jitter_count);
        kr.posterior.log_weight =
            model.transition.log_initial(s) + kr.log_evidence;
        branches.comps.push_back(kr.posterior);
      } else {
        const auto& prev = out.steps[t - 1];
        for (int sp = 0; sp < S; ++sp) {
          const auto& src = prev.cell(sp, 1);
          if (src.comps.empty()) continue;
          const double w_prev = src.comps.front().log_weight;
          if (w_prev == kNegInf) continue;
          auto kr = kalman_predict_correct(src.comps.front(), lg.regimes[s], v,
                                           &out.jitter_count);
          kr.posterior.log_weight =
              kr.log_evidence + model.transition.log_switch(s, sp) + w_prev;
          if (kr.posterior.log_weight != kNegInf)
            branches.comps.push_back(kr.posterior);
        }
      }
      auto col = branches.collapsed();
      state.cell(s, 1).comps.clear();
      if (col.log_weight != kNegInf) state.cell(s, 1).comps.push_back(col);
    }
    out.log_likelihood += detail::finalize_step(state);
    out.steps.push_back(std::move(state));
  }
  return out;
}

/// Duration filter for the decreasing-count chain without reset: the hidden
/// dynamics run through regime switches. Collapsed to one Gaussian per
/// (s, c). The factored path shares the boundary mixture across counts.
inline FilterResult dur_filter_dc(const Model& model, const TimeSeries& series,
                                  const SlgssmOptions& opts = {}) {
  const auto& lg = detail::lgss_of(model);
  if (!model.has_duration())
    throw std::invalid_argument("dur_filter_dc requires a duration spec");
  const int T = series.length();
  const int S = lg.S;
  const int dmax = model.max_dmax();
  FilterResult out;
  out.variant = SlgssmVariant::DurationDc;
  out.steps.reserve(T);

  for (int t = 0; t < T; ++t) {
    SwitchBeliefState state(S, dmax);
    const Eigen::VectorXd v = series.row(t);
    if (t == 0) {
      for (int s = 0; s < S; ++s) {
        auto kr = detail::reset_correct(lg.regimes[s], v, &out.jitter_count);
        const DurationSpec& spec = model.duration_for(s);
        for (int c = 1; c <= dmax; ++c) {
          const double w = model.transition.log_initial(s) + spec.log_rho(c) +
                           kr.log_evidence;
          if (w == kNegInf) continue;
          GaussianBelief b = kr.posterior;
          b.log_weight = w;
          state.cell(s, c).comps.push_back(std::move(b));
        }
      }
    } else {
      const auto& prev = out.steps[t - 1];
      for (int s = 0; s < S; ++s) {
        const DurationSpec& spec = model.duration_for(s);
        // boundary branches from (s', 1) share the update for every c_t
        std::vector<GaussianBelief> boundary;
        for (int sp = 0; sp < S; ++sp) {
          const auto& src = prev.cell(sp, 1);
          if (src.comps.empty()) continue;
          const double w_prev = src.comps.front().log_weight;
          if (w_prev == kNegInf) continue;
          auto kr = kalman_predict_correct(src.comps.front(), lg.regimes[s], v,
                                           &out.jitter_count);
          kr.posterior.log_weight =
              kr.log_evidence + model.transition.log_switch(s, sp) + w_prev;
          if (opts.prune_threshold > 0.0 &&
              kr.posterior.log_weight < std::log(opts.prune_threshold))
            continue;
          if (kr.posterior.log_weight != kNegInf)
            boundary.push_back(kr.posterior);
        }
        GaussianBelief boundary_col;
        boundary_col.log_weight = kNegInf;
        if (opts.factored && !boundary.empty()) {
          MixtureBelief m;
          m.comps = boundary;
          boundary_col = m.collapsed();
        }
        for (int c = 1; c <= dmax; ++c) {
          MixtureBelief mixture;
          const double lr = spec.log_rho(c);
          if (lr != kNegInf) {
            if (opts.factored) {
              if (boundary_col.log_weight != kNegInf) {
                GaussianBelief b = boundary_col;
                b.log_weight += lr;
                mixture.comps.push_back(std::move(b));
              }
            } else {
              for (const auto& bc : boundary) {
                GaussianBelief b = bc;
                b.log_weight += lr;
                mixture.comps.push_back(std::move(b));
              }
            }
          }
          if (c < dmax) {
            const auto& src = prev.cell(s, c + 1);
            if (!src.comps.empty() &&
                src.comps.front().log_weight != kNegInf) {
              auto kr = kalman_predict_correct(src.comps.front(),
                                               lg.regimes[s], v,
                                               &out.jitter_count);
              kr.posterior.log_weight =
                  kr.log_evidence + src.comps.front().log_weight;
              mixture.comps.push_back(kr.posterior);
            }
          }
          auto col = mixture.collapsed();
          if (col.log_weight != kNegInf)
            state.cell(s, c).comps.push_back(std::move(col));
        }
      }
    }
    out.log_likelihood += detail::finalize_step(state);
    out.steps.push_back(std::move(state));
  }
  return out;
}

/// Decreasing-count filter with the hidden state reset at regime changes.
/// Exact mode keeps the growing mixtures (one new component per step);
/// collapsed mode moment-matches each (s, c) cell.
inline FilterResult dur_filter_dc_reset(const Model& model,
                                        const TimeSeries& series,
                                        const SlgssmOptions& opts = {}) {
  const auto& lg = detail::lgss_of(model);
  if (!model.has_duration())
    throw std::invalid_argument("dur_filter_dc_reset requires a duration spec");
  const int T = series.length();
  const int S = lg.S;
  const int dmax = model.max_dmax();
  FilterResult out;
  out.variant = SlgssmVariant::DurationDcReset;
  out.steps.reserve(T);

  for (int t = 0; t < T; ++t) {
    SwitchBeliefState state(S, dmax);
    const Eigen::VectorXd v = series.row(t);
    for (int s = 0; s < S; ++s) {
      const DurationSpec& spec = model.duration_for(s);
      const auto reset = detail::reset_correct(lg.regimes[s], v,
                                               &out.jitter_count);
      double boundary_in;  // log sum_{s'} pi(s, s') W(s', 1)
      if (t == 0) {
        boundary_in = model.transition.log_initial(s);
      } else {
        boundary_in = kNegInf;
        for (int sp = 0; sp < S; ++sp)
          boundary_in = log_add(boundary_in,
                                model.transition.log_switch(s, sp) +
                                    out.steps[t - 1].cell_log_weight(sp, 1));
      }
      for (int c = 1; c <= dmax; ++c) {
        MixtureBelief mixture;
        const double w_reset = spec.log_rho(c) + reset.log_evidence + boundary_in;
        if (w_reset != kNegInf) {
          GaussianBelief b = reset.posterior;
          b.log_weight = w_reset;
          mixture.comps.push_back(std::move(b));
        }
        if (t > 0 && c < dmax) {
          for (const auto& comp : out.steps[t - 1].cell(s, c + 1).comps) {
            if (comp.log_weight == kNegInf) continue;
            auto kr = kalman_predict_correct(comp, lg.regimes[s], v,
                                             &out.jitter_count);
            kr.posterior.log_weight = kr.log_evidence + comp.log_weight;
            mixture.comps.push_back(kr.posterior);
          }
        }
        if (opts.exact) {
          detail::cap_check(mixture, opts);
          state.cell(s, c) = std::move(mixture);
        } else {
          auto col = mixture.collapsed();
          if (col.log_weight != kNegInf)
            state.cell(s, c).comps.push_back(std::move(col));
        }
      }
    }
    out.log_likelihood += detail::finalize_step(state);
    out.steps.push_back(std::move(state));
  }
  return out;
}

/// Increasing-count filter with reset at segment starts. Exact: every (s, c)
/// conditional is one Gaussian, no collapsing anywhere.
inline FilterResult dur_filter_ic_reset(const Model& model,
                                        const TimeSeries& series) {
  const auto& lg = detail::lgss_of(model);
  if (!model.has_duration())
    throw std::invalid_argument("dur_filter_ic_reset requires a duration spec");
  const int T = series.length();
  const int S = lg.S;
  const int dmax = model.max_dmax();
  FilterResult out;
  out.variant = SlgssmVariant::DurationIcReset;
  out.steps.reserve(T);

  for (int t = 0; t < T; ++t) {
    SwitchBeliefState state(S, dmax);
    const Eigen::VectorXd v = series.row(t);
    for (int s = 0; s < S; ++s) {
      const auto reset = detail::reset_correct(lg.regimes[s], v,
                                               &out.jitter_count);
      double fresh_in;
      if (t == 0) {
        fresh_in = model.transition.log_initial(s);
      } else {
        fresh_in = kNegInf;
        for (int sp = 0; sp < S; ++sp) {
          const DurationSpec& pspec = model.duration_for(sp);
          double ended = kNegInf;
          for (int cp = 1; cp <= dmax; ++cp)
            ended = log_add(ended, pspec.log_end_prob(cp) +
                                       out.steps[t - 1].cell_log_weight(sp, cp));
          fresh_in = log_add(fresh_in,
                             model.transition.log_switch(s, sp) + ended);
        }
      }
      if (fresh_in != kNegInf) {
        GaussianBelief b = reset.posterior;
        b.log_weight = reset.log_evidence + fresh_in;
        state.cell(s, 1).comps.push_back(std::move(b));
      }
      if (t > 0) {
        const DurationSpec& spec = model.duration_for(s);
        for (int c = 2; c <= dmax; ++c) {
          const auto& src = out.steps[t - 1].cell(s, c - 1);
          if (src.comps.empty()) continue;
          const double grow =
              spec.log_lambda(c - 1) + src.comps.front().log_weight;
          if (grow == kNegInf) continue;
          auto kr = kalman_predict_correct(src.comps.front(), lg.regimes[s], v,
                                           &out.jitter_count);
          kr.posterior.log_weight = kr.log_evidence + grow;
          state.cell(s, c).comps.push_back(kr.posterior);
        }
      }
    }
    out.log_likelihood += detail::finalize_step(state);
    out.steps.push_back(std::move(state));
  }
  return out;
}

/// Two-state change-point model: c_t = 1 at a regime switch (hidden state
/// reset), c_t = 2 otherwise. No explicit duration law; the mixture under
/// c = 2 grows by one component per step in exact mode.
inline FilterResult changepoint_two_state(const Model& model,
                                          const TimeSeries& series,
                                          const SlgssmOptions& opts = {}) {
  const auto& lg = detail::lgss_of(model);
  const int T = series.length();
  const int S = lg.S;
  FilterResult out;
  out.variant = SlgssmVariant::Changepoint;
  out.steps.reserve(T);

  for (int t = 0; t < T; ++t) {
    SwitchBeliefState state(S, 2);
    const Eigen::VectorXd v = series.row(t);
    for (int s = 0; s < S; ++s) {
      const auto reset = detail::reset_correct(lg.regimes[s], v,
                                               &out.jitter_count);
      double switch_in;
      if (t == 0) {
        switch_in = model.transition.log_initial(s);
      } else {
        switch_in = kNegInf;
        for (int sp = 0; sp < S; ++sp) {
          if (sp == s) continue;
          const double mass = log_add(out.steps[t - 1].cell_log_weight(sp, 1),
                                      out.steps[t - 1].cell_log_weight(sp, 2));
          switch_in = log_add(switch_in,
                              model.transition.log_switch(s, sp) + mass);
        }
      }
      if (switch_in != kNegInf) {
        GaussianBelief b = reset.posterior;
        b.log_weight = reset.log_evidence + switch_in;
        state.cell(s, 1).comps.push_back(std::move(b));
      }
      if (t > 0) {
        MixtureBelief mixture;
        const double stay = model.transition.log_switch(s, s);
        if (stay != kNegInf)
          for (int cp = 1; cp <= 2; ++cp)
            for (const auto& comp : out.steps[t - 1].cell(s, cp).comps) {
              if (comp.log_weight == kNegInf) continue;
              auto kr = kalman_predict_correct(comp, lg.regimes[s], v,
                                               &out.jitter_count);
              kr.posterior.log_weight = kr.log_evidence + stay + comp.log_weight;
              mixture.comps.push_back(kr.posterior);
            }
        if (opts.exact) {
          detail::cap_check(mixture, opts);
          state.cell(s, 2) = std::move(mixture);
        } else {
          auto col = mixture.collapsed();
          if (col.log_weight != kNegInf)
            state.cell(s, 2).comps.push_back(std::move(col));
        }
      }
    }
    out.log_likelihood += detail::finalize_step(state);
    out.steps.push_back(std::move(state));
  }
  return out;
}

namespace detail {

/// Reverse-dynamics pieces for smoothing: h_t = Ahat h_{t+1} + mhat + noise.
struct ReverseDynamics {
  Eigen::MatrixXd Ahat;
  Eigen::VectorXd mhat;
  Eigen::MatrixXd noise_cov;
};

inline ReverseDynamics reverse_dynamics(const GaussianBelief& filtered,
                                        const LinearGaussianEmission::Regime& rg) {
  Eigen::MatrixXd pred = rg.A * filtered.cov * rg.A.transpose() + rg.sigma_h;
  symmetrize(pred);
  const auto llt = cholesky_with_jitter(pred);
  ReverseDynamics rd;
  rd.Ahat = llt.solve(rg.A * filtered.cov).transpose();
  rd.mhat = filtered.mean - rd.Ahat * rg.A * filtered.mean;
  rd.noise_cov = filtered.cov - rd.Ahat * rg.A * filtered.cov;
  symmetrize(rd.noise_cov);
  return rd;
}

inline GaussianBelief reverse_smooth_comp(const ReverseDynamics& rd,
                                          const GaussianBelief& next_smoothed) {
  GaussianBelief b;
  b.mean = rd.Ahat * next_smoothed.mean + rd.mhat;
  b.cov = rd.Ahat * next_smoothed.cov * rd.Ahat.transpose() + rd.noise_cov;
  symmetrize(b.cov);
  b.log_weight = next_smoothed.log_weight;
  return b;
}

/// log N(next_mean; A m_f, A P_f A^T + Sigma_H): the backward-weight factor
/// evaluated at the smoothed mean.
inline double backward_weight_density(const GaussianBelief& filtered,
                                      const LinearGaussianEmission::Regime& rg,
                                      const Eigen::VectorXd& next_mean) {
  Eigen::MatrixXd pred = rg.A * filtered.cov * rg.A.transpose() + rg.sigma_h;
  symmetrize(pred);
  return gaussian_log_density(next_mean, rg.A * filtered.mean, pred);
}

}  // namespace detail

struct SmoothResult {
  SlgssmVariant variant = SlgssmVariant::Plain;
  std::vector<SwitchBeliefState> steps;
};

/// Backward smoothing pass matching the given filter output.
///  - Plain / DurationDc: reverse-dynamics smoothing with the conditional
///    h_{t+1} approximation and evaluation-at-the-mean backward weights;
///    collapse only where the predecessor cell has several successors.
///  - DurationIcReset: the reset structure makes both approximations exact;
///    the backward pass here is exact (mixtures grow toward t = 1).
inline SmoothResult slgssm_smooth(const Model& model, const FilterResult& filt,
                                  SlgssmVariant variant,
                                  const SlgssmOptions& opts = {}) {
  if (variant != filt.variant)
    throw std::invalid_argument("slgssm_smooth: filter/variant mismatch");
  if (variant != SlgssmVariant::Plain && variant != SlgssmVariant::DurationDc &&
      variant != SlgssmVariant::DurationIcReset)
    throw std::invalid_argument(
        "slgssm_smooth supports the plain, dc and ic_reset variants");
  const auto& lg = detail::lgss_of(model);
  const int T = static_cast<int>(filt.steps.size());
  const int S = lg.S;
  const int dmax = filt.steps.front().d_max;

  SmoothResult out;
  out.variant = variant;
  out.steps.resize(T);
  out.steps[T - 1] = filt.steps[T - 1];

  for (int t = T - 2; t >= 0; --t) {
    const auto& fstep = filt.steps[t];
    const auto& next = out.steps[t + 1];
    SwitchBeliefState state(S, dmax);

    if (variant == SlgssmVariant::DurationIcReset) {
      // exact: p(sigma_t | s_{t+1}, c_{t+1}=1, v_{1:T}) has no h dependence.
      Eigen::MatrixXd end_route(S, S * dmax);  // [s'] x flattened sigma_t
      for (int sn = 0; sn < S; ++sn) {
        double z = kNegInf;
        for (int s = 0; s < S; ++s) {
          const DurationSpec& spec = model.duration_for(s);
          for (int c = 1; c <= dmax; ++c) {
            const double val = spec.log_end_prob(c) +
                               model.transition.log_switch(sn, s) +
                               fstep.cell_log_weight(s, c);
            end_route(sn, s * dmax + c - 1) = val;
            z = log_add(z, val);
          }
        }
        for (int i = 0; i < S * dmax; ++i)
          end_route(sn, i) = end_route(sn, i) == kNegInf ? kNegInf
                                                         : end_route(sn, i) - z;
      }
      for (int s = 0; s < S; ++s)
        for (int c = 1; c <= dmax; ++c) {
          const auto& fcell = fstep.cell(s, c);
          if (fcell.comps.empty()) continue;
          double w_end = kNegInf;
          for (int sn = 0; sn < S; ++sn)
            w_end = log_add(w_end, end_route(sn, s * dmax + c - 1) +
                                       next.cell_log_weight(sn, 1));
          MixtureBelief cell;
          if (w_end != kNegInf) {
            GaussianBelief b = fcell.comps.front();
            b.log_weight = w_end;
            cell.comps.push_back(std::move(b));
          }
          if (c < dmax && !next.cell(s, c + 1).comps.empty()) {
            const auto rd = detail::reverse_dynamics(fcell.comps.front(),
                                                     lg.regimes[s]);
            for (const auto& comp : next.cell(s, c + 1).comps) {
              if (comp.log_weight == kNegInf) continue;
              cell.comps.push_back(detail::reverse_smooth_comp(rd, comp));
            }
          }
          if (opts.exact) {
            detail::cap_check(cell, opts);
            state.cell(s, c) = std::move(cell);
          } else {
            auto col = cell.collapsed();
            if (col.log_weight != kNegInf)
              state.cell(s, c).comps.push_back(std::move(col));
          }
        }
      out.steps[t] = std::move(state);
      continue;
    }

    // Plain / DurationDc: approximate backward weights, filtered cells are
    // single Gaussians.
    const int cells_n = S * dmax;
    // q(sigma_t | sigma_{t+1}): rows = successor cell, cols = predecessor
    Eigen::MatrixXd q = Eigen::MatrixXd::Constant(cells_n, cells_n, kNegInf);
    for (int sn = 0; sn < S; ++sn)
      for (int cn = 1; cn <= dmax; ++cn) {
        if (next.cell(sn, cn).comps.empty()) continue;
        const Eigen::VectorXd next_mean = next.cell(sn, cn).collapsed().mean;
        double z = kNegInf;
        for (int s = 0; s < S; ++s)
          for (int c = 1; c <= dmax; ++c) {
            // predecessor (s, c) -> successor (sn, cn)?
            double trans;
            if (variant == SlgssmVariant::Plain) {
              trans = model.transition.log_switch(sn, s);
            } else {
              const DurationSpec& nspec = model.duration_for(sn);
              if (c == 1)
                trans = model.transition.log_switch(sn, s) + nspec.log_rho(cn);
              else
                trans = (s == sn && cn == c - 1) ? 0.0 : kNegInf;
            }
            if (trans == kNegInf) continue;
            const auto& fcell = fstep.cell(s, c);
            if (fcell.comps.empty() ||
                fcell.comps.front().log_weight == kNegInf)
              continue;
            const double val =
                trans + fcell.comps.front().log_weight +
                detail::backward_weight_density(fcell.comps.front(),
                                                lg.regimes[sn], next_mean);
            q(sn * dmax + cn - 1, s * dmax + c - 1) = val;
            z = log_add(z, val);
          }
        for (int i = 0; i < cells_n; ++i)
          if (q(sn * dmax + cn - 1, i) != kNegInf)
            q(sn * dmax + cn - 1, i) -= z;
      }

    for (int s = 0; s < S; ++s)
      for (int c = 1; c <= dmax; ++c) {
        const auto& fcell = fstep.cell(s, c);
        if (fcell.comps.empty()) continue;
        double w_sm = kNegInf;
        for (int j = 0; j < cells_n; ++j) {
          const double qq = q(j, s * dmax + c - 1);
          if (qq == kNegInf) continue;
          const double wn = next.cells[j].log_weight();
          if (wn == kNegInf) continue;
          w_sm = log_add(w_sm, qq + wn);
        }
        if (w_sm == kNegInf) continue;
        MixtureBelief cell;
        for (int sn = 0; sn < S; ++sn)
          for (int cn = 1; cn <= dmax; ++cn) {
            const double qq = q(sn * dmax + cn - 1, s * dmax + c - 1);
            if (qq == kNegInf) continue;
            const double wn = next.cell_log_weight(sn, cn);
            if (wn == kNegInf) continue;
            const auto rd = detail::reverse_dynamics(fcell.comps.front(),
                                                     lg.regimes[sn]);
            auto comp = detail::reverse_smooth_comp(
                rd, next.cell(sn, cn).collapsed());
            comp.log_weight = qq + wn;
            cell.comps.push_back(std::move(comp));
          }
        auto col = cell.collapsed();
        if (col.log_weight != kNegInf)
          state.cell(s, c).comps.push_back(std::move(col));
      }
    out.steps[t] = std::move(state);
  }
  return out;
}

}  // namespace switchseg

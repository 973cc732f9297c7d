#pragma once

#include <algorithm>
#include <functional>

#include "switchseg/segmental.hpp"
#include "switchseg/slgssm.hpp"

// Brute-force reference implementations used as ground truth in tests.
// Deliberately simple and slow: full path enumeration, no pruning, no shared
// subexpressions with the recursions under test.

namespace switchseg::oracle {

struct EnumerationReport {
  int n_configs = 0;
  std::vector<Eigen::VectorXd> marginals;  // per t, over flattened configs
  double log_normalizer = kNegInf;
  std::vector<int> argmax_path;
  double argmax_log_joint = kNegInf;
  std::vector<double> path_log_joints;  // filled when store_joints is set

  double max_marginal_delta(const std::vector<Eigen::VectorXd>& other) const {
    double d = 0.0;
    for (size_t t = 0; t < marginals.size(); ++t)
      d = std::max(d, (marginals[t] - other[t]).cwiseAbs().maxCoeff());
    return d;
  }
};

/// A discrete chain defined pointwise; the enumerator only sees these four
/// callables.
struct DiscreteChain {
  int n_configs = 0;
  std::function<double(int cfg)> log_init;
  std::function<double(int prev, int cfg)> log_trans;
  std::function<double(int t, int cfg)> log_emit;
  std::function<double(int cfg)> log_final;  // end-of-series weight
};

inline EnumerationReport enumerate_chain(const DiscreteChain& chain, int T,
                                         bool store_joints = false,
                                         long long guard = 10'000'000) {
  double total = 1;
  for (int t = 0; t < T; ++t) {
    total *= chain.n_configs;
    if (total > static_cast<double>(guard))
      throw std::invalid_argument("enumeration guard exceeded");
  }

  EnumerationReport rep;
  rep.n_configs = chain.n_configs;
  rep.marginals.assign(T, Eigen::VectorXd::Constant(chain.n_configs, kNegInf));
  rep.argmax_path.assign(T, 0);

  std::vector<int> path(T, 0);
  std::vector<double> prefix(T, kNegInf);

  const std::function<void(int)> visit = [&](int t) {
    for (int cfg = 0; cfg < chain.n_configs; ++cfg) {
      path[t] = cfg;
      double w = (t == 0) ? chain.log_init(cfg)
                          : prefix[t - 1] + chain.log_trans(path[t - 1], cfg);
      if (w != kNegInf) w += chain.log_emit(t, cfg);
      prefix[t] = w;
      if (w == kNegInf) continue;
      if (t + 1 < T) {
        visit(t + 1);
      } else {
        const double joint = w + chain.log_final(cfg);
        if (joint == kNegInf) continue;
        if (store_joints) rep.path_log_joints.push_back(joint);
        rep.log_normalizer = log_add(rep.log_normalizer, joint);
        for (int u = 0; u < T; ++u)
          rep.marginals[u](path[u]) = log_add(rep.marginals[u](path[u]), joint);
        if (joint > rep.argmax_log_joint) {
          rep.argmax_log_joint = joint;
          rep.argmax_path = path;
        }
      }
    }
  };
  visit(0);

  if (rep.log_normalizer == kNegInf)
    throw numerical_error("enumeration: all paths have zero weight");
  for (int t = 0; t < T; ++t)
    for (int c = 0; c < chain.n_configs; ++c)
      rep.marginals[t](c) = rep.marginals[t](c) == kNegInf
                                ? 0.0
                                : std::exp(rep.marginals[t](c) - rep.log_normalizer);
  return rep;
}

/// Normalizer of the stored joints by ascending-order summation; a second
/// route to the same number for self-consistency checks.
inline double sorted_sum_normalizer(const EnumerationReport& rep) {
  std::vector<double> v = rep.path_log_joints;
  if (v.empty()) throw std::invalid_argument("joints were not stored");
  const double m = *std::max_element(v.begin(), v.end());
  std::sort(v.begin(), v.end());
  long double acc = 0.0L;
  for (double x : v) acc += std::exp(static_cast<long double>(x - m));
  return m + static_cast<double>(std::log(acc));
}

// ---- chain builders -------------------------------------------------------

/// Plain HMM / SARM over regimes; GMM emissions are collapsed.
inline DiscreteChain chain_hmm(const Model& model, const TimeSeries& series) {
  DiscreteChain c;
  c.n_configs = model.transition.S;
  c.log_init = [&model](int s) { return model.transition.log_initial(s); };
  c.log_trans = [&model](int sp, int s) {
    return model.transition.log_switch(s, sp);
  };
  c.log_emit = [&model, &series](int t, int s) {
    if (const auto* a = model.ar()) return a->log_pdf(series, t, s, a->k);
    return model.gmm()->log_pdf(s, series.row(t));
  };
  c.log_final = [](int) { return 0.0; };
  return c;
}

/// HMM with explicit mixture indicators, config = s * M + m.
inline DiscreteChain chain_gmm(const Model& model, const TimeSeries& series,
                               bool chained) {
  const auto* g = model.gmm();
  if (!g) throw std::invalid_argument("chain_gmm requires a GMM emission");
  const int M = g->M;
  DiscreteChain c;
  c.n_configs = g->S * M;
  c.log_init = [&model, g, M](int cfg) {
    const int s = cfg / M, m = cfg % M;
    return model.transition.log_initial(s) + safe_log(g->weights(s, m));
  };
  if (chained) {
    c.log_trans = [&model, g, M](int prev, int cfg) {
      const int sp = prev / M, mp = prev % M;
      const int s = cfg / M, m = cfg % M;
      return model.transition.log_switch(s, sp) +
             safe_log((*g->mixture_chain)[s](m, mp));
    };
  } else {
    c.log_trans = [&model, g, M](int prev, int cfg) {
      const int sp = prev / M;
      const int s = cfg / M, m = cfg % M;
      return model.transition.log_switch(s, sp) + safe_log(g->weights(s, m));
    };
  }
  c.log_emit = [g, &series, M](int t, int cfg) {
    return g->log_pdf_comp(cfg / M, cfg % M, series.row(t));
  };
  c.log_final = [](int) { return 0.0; };
  return c;
}

/// Decreasing-count duration chain, config = s * d_max + (c - 1).
inline DiscreteChain chain_dc(const Model& model, const TimeSeries& series,
                              BoundaryMode boundary) {
  const int dmax = model.max_dmax();
  DiscreteChain c;
  c.n_configs = model.transition.S * dmax;
  c.log_init = [&model, dmax, boundary](int cfg) {
    const int s = cfg / dmax, cnt = cfg % dmax + 1;
    const DurationSpec& spec = model.duration_for(s);
    const double w = boundary == BoundaryMode::Relaxed ? spec.log_survival(cnt)
                                                       : spec.log_rho(cnt);
    return model.transition.log_initial(s) + w;
  };
  c.log_trans = [&model, dmax](int prev, int cfg) {
    const int sp = prev / dmax, cp = prev % dmax + 1;
    const int s = cfg / dmax, cnt = cfg % dmax + 1;
    if (cp == 1)
      return model.transition.log_switch(s, sp) +
             model.duration_for(s).log_rho(cnt);
    return (s == sp && cnt == cp - 1) ? 0.0 : kNegInf;
  };
  c.log_emit = [&model, &series, dmax](int t, int cfg) {
    const int s = cfg / dmax;
    if (const auto* a = model.ar()) return a->log_pdf(series, t, s, a->k);
    return model.gmm()->log_pdf(s, series.row(t));
  };
  c.log_final = [boundary, dmax](int cfg) {
    if (boundary == BoundaryMode::Relaxed) return 0.0;
    return cfg % dmax + 1 == 1 ? 0.0 : kNegInf;
  };
  return c;
}

/// Increasing-count chain; honors the model's cut_across_regimes flag.
inline DiscreteChain chain_ic(const Model& model, const TimeSeries& series,
                              BoundaryMode boundary) {
  const int dmax = model.max_dmax();
  const int k = model.order_k();
  const bool cut = model.cut_across_regimes && k > 0;
  DiscreteChain c;
  c.n_configs = model.transition.S * dmax;
  c.log_init = [&model, dmax, boundary](int cfg) {
    const int s = cfg / dmax, cnt = cfg % dmax + 1;
    const DurationSpec& spec = model.duration_for(s);
    if (boundary == BoundaryMode::Strict)
      return cnt == 1 ? model.transition.log_initial(s) : kNegInf;
    return model.transition.log_initial(s) + spec.log_survival(cnt);
  };
  c.log_trans = [&model, dmax](int prev, int cfg) {
    const int sp = prev / dmax, cp = prev % dmax + 1;
    const int s = cfg / dmax, cnt = cfg % dmax + 1;
    const DurationSpec& pspec = model.duration_for(sp);
    if (cnt == 1)
      return pspec.log_end_prob(cp) + model.transition.log_switch(s, sp);
    if (s == sp && cnt == cp + 1) return pspec.log_lambda(cp);
    return kNegInf;
  };
  c.log_emit = [&model, &series, dmax, cut, k](int t, int cfg) {
    const int s = cfg / dmax, cnt = cfg % dmax + 1;
    if (const auto* a = model.ar())
      return a->log_pdf(series, t, s, cut ? std::min(k, cnt - 1) : k);
    return model.gmm()->log_pdf(s, series.row(t));
  };
  c.log_final = [&model, dmax, boundary](int cfg) {
    if (boundary == BoundaryMode::Relaxed) return 0.0;
    const int s = cfg / dmax, cnt = cfg % dmax + 1;
    return model.duration_for(s).log_end_prob(cnt);
  };
  return c;
}

// ---- segmentation enumeration ---------------------------------------------

struct SegmentationReport {
  std::vector<Eigen::MatrixXd> state_count;  // per t: S x d_max probabilities
  Eigen::MatrixXd state;                     // T x S
  double log_normalizer = kNegInf;
  SegmentViterbiResult argmax;
  long long n_segmentations = 0;
};

/// Full enumeration over segmentations (compositions of the window plus the
/// boundary-truncated cases) for the two-set duration model.
inline SegmentationReport enumerate_segmentations(
    const Model& model, const SegmentLikelihoodProvider& provider,
    BoundaryMode boundary, long long guard = 2'000'000) {
  const DurationSpec& spec = model.durations[0];
  const int T = provider.T();
  const int S = model.transition.S;

  SegmentationReport rep;
  rep.state_count.assign(T, Eigen::MatrixXd::Constant(S, spec.d_max, kNegInf));
  rep.state.setConstant(T, S, kNegInf);
  rep.argmax.regimes.assign(T, 0);
  rep.argmax.durations.assign(T, 0);
  rep.argmax.counts.assign(T, 0);

  struct Seg {
    int start, end, s, d;
  };
  std::vector<Seg> segs;

  std::vector<int> reg(T), dur(T), cnt(T);
  const auto complete = [&](double w) {
    ++rep.n_segmentations;
    if (rep.n_segmentations > guard)
      throw std::invalid_argument("segmentation enumeration guard exceeded");
    for (const auto& sg : segs)
      for (int u = std::max(0, sg.start); u <= std::min(T - 1, sg.end); ++u) {
        reg[u] = sg.s;
        dur[u] = sg.d;
        cnt[u] = sg.end - u + 1;
      }
    rep.log_normalizer = log_add(rep.log_normalizer, w);
    for (int u = 0; u < T; ++u) {
      auto& m = rep.state_count[u];
      m(reg[u], cnt[u] - 1) = log_add(m(reg[u], cnt[u] - 1), w);
      rep.state(u, reg[u]) = log_add(rep.state(u, reg[u]), w);
    }
    if (w > rep.argmax.log_joint) {
      rep.argmax.log_joint = w;
      rep.argmax.regimes = reg;
      rep.argmax.durations = dur;
      rep.argmax.counts = cnt;
    }
  };

  // extend(p, prev_s, w): segments before position p are fixed with weight w
  const std::function<void(int, int, double)> extend = [&](int p, int prev_s,
                                                           double w) {
    for (int d = spec.d_min; d <= spec.d_max; ++d) {
      const double lr = spec.log_rho(d);
      if (lr == kNegInf) continue;
      const int end = p + d - 1;
      if (end > T - 1 && boundary == BoundaryMode::Strict) continue;
      for (int s = 0; s < S; ++s) {
        const double lt = (p == 0 && prev_s < 0)
                              ? model.transition.log_initial(s)
                              : model.transition.log_switch(s, prev_s);
        if (lt == kNegInf) continue;
        const double wd = w + lt + lr + provider(p, end, s);
        if (wd == kNegInf) continue;
        segs.push_back({p, end, s, d});
        if (end >= T - 1)
          complete(wd);
        else
          extend(end + 1, s, wd);
        segs.pop_back();
      }
    }
  };

  // first segment: start = end - d + 1 <= 0; start < 0 only in relaxed mode
  for (int d = spec.d_min; d <= spec.d_max; ++d) {
    const double lr = spec.log_rho(d);
    if (lr == kNegInf) continue;
    for (int start = (boundary == BoundaryMode::Relaxed) ? 1 - d : 0;
         start <= 0; ++start) {
      const int end = start + d - 1;
      if (end < 0) continue;
      if (end > T - 1 && boundary == BoundaryMode::Strict) continue;
      for (int s = 0; s < S; ++s) {
        const double wd =
            model.transition.log_initial(s) + lr + provider(start, end, s);
        if (wd == kNegInf) continue;
        segs.push_back({start, end, s, d});
        if (end >= T - 1)
          complete(wd);
        else
          extend(end + 1, s, wd);
        segs.pop_back();
      }
    }
  }

  if (rep.log_normalizer == kNegInf)
    throw numerical_error("segmentation enumeration: empty support");
  for (int u = 0; u < T; ++u) {
    for (int s = 0; s < S; ++s) {
      for (int c = 0; c < spec.d_max; ++c) {
        double& x = rep.state_count[u](s, c);
        x = (x == kNegInf) ? 0.0 : std::exp(x - rep.log_normalizer);
      }
      double& y = rep.state(u, s);
      y = (y == kNegInf) ? 0.0 : std::exp(y - rep.log_normalizer);
    }
  }
  return rep;
}

// ---- exact Gaussian mixture propagation ------------------------------------

struct OracleBranch {
  std::vector<int> labels;               // flattened (s, c) per step
  std::vector<Eigen::VectorXd> means;    // filtered mean per step
  std::vector<Eigen::MatrixXd> covs;     // filtered covariance per step
  std::vector<char> reset_at;            // fresh hidden state at step t
  double log_weight = 0.0;               // prior + evidence so far
};

struct ExactMixtureOracle {
  int S = 0, d_max = 1, T = 0;
  double log_likelihood = kNegInf;
  // snapshots[t]: the branch set alive after processing step t
  std::vector<std::vector<OracleBranch>> snapshots;

  const std::vector<OracleBranch>& branches_at(int t) const {
    return snapshots[t];
  }

  /// Raw filtered mixture for one (s, c) cell at time t, weights normalized
  /// over the whole step.
  MixtureBelief filtered_cell(int t, int s, int c) const {
    MixtureBelief mix;
    double step_total = kNegInf;
    for (const auto& b : snapshots[t]) step_total = log_add(step_total, b.log_weight);
    for (const auto& b : snapshots[t]) {
      if (b.labels[t] != s * d_max + (c - 1)) continue;
      mix.comps.push_back(
          GaussianBelief{b.means[t], b.covs[t], b.log_weight - step_total});
    }
    return mix;
  }

  /// Distinct Gaussians (by moments) among a cell's filtered components.
  int distinct_components(int t, int s, int c, double tol = 1e-9) const {
    const MixtureBelief mix = filtered_cell(t, s, c);
    std::vector<const GaussianBelief*> reps;
    for (const auto& comp : mix.comps) {
      bool found = false;
      for (const auto* r : reps)
        if ((r->mean - comp.mean).cwiseAbs().maxCoeff() < tol &&
            (r->cov - comp.cov).cwiseAbs().maxCoeff() < tol) {
          found = true;
          break;
        }
      if (!found) reps.push_back(&comp);
    }
    return static_cast<int>(reps.size());
  }

  int total_distinct_components(int t, double tol = 1e-9) const {
    int n = 0;
    for (int s = 0; s < S; ++s)
      for (int c = 1; c <= d_max; ++c) n += distinct_components(t, s, c, tol);
    return n;
  }
};

struct BranchTransition {
  int label = 0;
  double log_prob = kNegInf;
  bool reset = false;
};

struct BranchModel {
  int S = 0, d_max = 1;
  std::vector<BranchTransition> inits;
  std::function<std::vector<BranchTransition>(int label)> successors;
};

inline BranchModel branch_model(const Model& model, SlgssmVariant variant) {
  BranchModel bm;
  const int S = model.transition.S;
  bm.S = S;
  switch (variant) {
    case SlgssmVariant::Plain: {
      bm.d_max = 1;
      for (int s = 0; s < S; ++s)
        bm.inits.push_back({s, model.transition.log_initial(s), true});
      bm.successors = [&model, S](int label) {
        std::vector<BranchTransition> out;
        for (int s = 0; s < S; ++s)
          out.push_back({s, model.transition.log_switch(s, label), false});
        return out;
      };
      break;
    }
    case SlgssmVariant::DurationDc:
    case SlgssmVariant::DurationDcReset: {
      const int dmax = model.max_dmax();
      const bool reset = variant == SlgssmVariant::DurationDcReset;
      bm.d_max = dmax;
      for (int s = 0; s < S; ++s)
        for (int c = 1; c <= dmax; ++c)
          bm.inits.push_back({s * dmax + c - 1,
                              model.transition.log_initial(s) +
                                  model.duration_for(s).log_rho(c),
                              true});
      bm.successors = [&model, S, dmax, reset](int label) {
        const int sp = label / dmax, cp = label % dmax + 1;
        std::vector<BranchTransition> out;
        if (cp > 1) {
          out.push_back({sp * dmax + (cp - 2), 0.0, false});
        } else {
          for (int s = 0; s < S; ++s)
            for (int c = 1; c <= dmax; ++c)
              out.push_back({s * dmax + c - 1,
                             model.transition.log_switch(s, sp) +
                                 model.duration_for(s).log_rho(c),
                             reset});
        }
        return out;
      };
      break;
    }
    case SlgssmVariant::DurationIcReset: {
      const int dmax = model.max_dmax();
      bm.d_max = dmax;
      for (int s = 0; s < S; ++s)
        bm.inits.push_back({s * dmax, model.transition.log_initial(s), true});
      bm.successors = [&model, S, dmax](int label) {
        const int sp = label / dmax, cp = label % dmax + 1;
        const DurationSpec& pspec = model.duration_for(sp);
        std::vector<BranchTransition> out;
        if (cp < dmax && pspec.lambda(cp) > 0.0)
          out.push_back({sp * dmax + cp, pspec.log_lambda(cp), false});
        if (pspec.lambda(cp) < 1.0)
          for (int s = 0; s < S; ++s)
            out.push_back({s * dmax,
                           pspec.log_end_prob(cp) +
                               model.transition.log_switch(s, sp),
                           true});
        return out;
      };
      break;
    }
    case SlgssmVariant::Changepoint: {
      bm.d_max = 2;
      for (int s = 0; s < S; ++s)
        bm.inits.push_back({s * 2, model.transition.log_initial(s), true});
      bm.successors = [&model, S](int label) {
        const int sp = label / 2;
        std::vector<BranchTransition> out;
        out.push_back({sp * 2 + 1, model.transition.log_switch(sp, sp), false});
        for (int s = 0; s < S; ++s)
          if (s != sp)
            out.push_back({s * 2, model.transition.log_switch(s, sp), true});
        return out;
      };
      break;
    }
  }
  return bm;
}

/// Exact filtered mixtures by propagating every discrete branch. Branch
/// count is capped by `guard`.
inline ExactMixtureOracle exact_mixture_filter(const Model& model,
                                               const TimeSeries& series,
                                               SlgssmVariant variant,
                                               long long guard = 100'000) {
  const auto* lg = model.lgss();
  if (!lg) throw std::invalid_argument("exact_mixture_filter needs slgssm");
  const BranchModel bm = branch_model(model, variant);
  const int T = series.length();

  ExactMixtureOracle out;
  out.S = bm.S;
  out.d_max = bm.d_max;
  out.T = T;
  out.snapshots.resize(T);

  std::vector<OracleBranch> alive;
  for (int t = 0; t < T; ++t) {
    const Eigen::VectorXd v = series.row(t);
    std::vector<OracleBranch> next;
    const auto step_branch = [&](const OracleBranch* parent,
                                 const BranchTransition& tr) {
      if (tr.log_prob == kNegInf) return;
      OracleBranch nb;
      if (parent) nb = *parent;
      const int s = tr.label / bm.d_max;
      KalmanStepResult kr;
      if (tr.reset || !parent) {
        kr = detail::reset_correct(lg->regimes[s], v, nullptr);
      } else {
        GaussianBelief b{parent->means.back(), parent->covs.back(), 0.0};
        kr = kalman_predict_correct(b, lg->regimes[s], v, nullptr);
      }
      nb.labels.push_back(tr.label);
      nb.means.push_back(kr.posterior.mean);
      nb.covs.push_back(kr.posterior.cov);
      nb.reset_at.push_back(tr.reset ? 1 : 0);
      nb.log_weight = (parent ? parent->log_weight : 0.0) + tr.log_prob +
                      kr.log_evidence;
      next.push_back(std::move(nb));
    };
    if (t == 0) {
      for (const auto& tr : bm.inits) step_branch(nullptr, tr);
    } else {
      for (const auto& b : alive)
        for (const auto& tr : bm.successors(b.labels.back()))
          step_branch(&b, tr);
    }
    if (static_cast<long long>(next.size()) > guard)
      throw std::invalid_argument("mixture oracle branch guard exceeded");
    alive = std::move(next);
    out.snapshots[t] = alive;
  }

  double total = kNegInf;
  for (const auto& b : alive) total = log_add(total, b.log_weight);
  out.log_likelihood = total;
  return out;
}

/// Exact smoothed mixtures: per-branch fixed-interval smoothing (classical
/// gain form), segments delimited by resets, bucketed by the branch label.
struct ExactSmootherOracle {
  int S = 0, d_max = 1, T = 0;
  std::vector<std::vector<GaussianBelief>> comps;  // [t][branch], joint weights
  std::vector<std::vector<int>> labels;            // [t][branch]

  MixtureBelief smoothed_cell(int t, int s, int c) const {
    MixtureBelief mix;
    for (size_t j = 0; j < comps[t].size(); ++j)
      if (labels[t][j] == s * d_max + (c - 1)) mix.comps.push_back(comps[t][j]);
    return mix;
  }
};

inline ExactSmootherOracle exact_mixture_smoother(const Model& model,
                                                  const TimeSeries& series,
                                                  SlgssmVariant variant,
                                                  long long guard = 100'000) {
  const auto oracle = exact_mixture_filter(model, series, variant, guard);
  const auto* lg = model.lgss();
  const int T = oracle.T;

  ExactSmootherOracle out;
  out.S = oracle.S;
  out.d_max = oracle.d_max;
  out.T = T;
  out.comps.assign(T, {});
  out.labels.assign(T, {});

  const auto& final_branches = oracle.snapshots[T - 1];
  double total = kNegInf;
  for (const auto& b : final_branches) total = log_add(total, b.log_weight);

  for (const auto& b : final_branches) {
    const double w = b.log_weight - total;
    std::vector<Eigen::VectorXd> sm_mean(b.means.begin(), b.means.end());
    std::vector<Eigen::MatrixXd> sm_cov(b.covs.begin(), b.covs.end());
    for (int t = T - 2; t >= 0; --t) {
      if (b.reset_at[t + 1]) continue;  // reset cuts the backward pass
      const int s_next = b.labels[t + 1] / oracle.d_max;
      const auto& rg = lg->regimes[s_next];
      Eigen::MatrixXd pred = rg.A * b.covs[t] * rg.A.transpose() + rg.sigma_h;
      symmetrize(pred);
      const auto llt = cholesky_with_jitter(pred);
      const Eigen::MatrixXd G = llt.solve(rg.A * b.covs[t]).transpose();
      sm_mean[t] = b.means[t] + G * (sm_mean[t + 1] - rg.A * b.means[t]);
      Eigen::MatrixXd cov = b.covs[t] +
                            G * (sm_cov[t + 1] - pred) * G.transpose();
      symmetrize(cov);
      sm_cov[t] = cov;
    }
    for (int t = 0; t < T; ++t) {
      out.comps[t].push_back(GaussianBelief{sm_mean[t], sm_cov[t], w});
      out.labels[t].push_back(b.labels[t]);
    }
  }
  return out;
}

}  // namespace switchseg::oracle

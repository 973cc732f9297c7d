#pragma once

#include "switchseg/emission.hpp"

namespace switchseg {

struct LabeledSeries {
  TimeSeries series;
  std::vector<int> true_regimes;     // per step
  std::vector<int> true_boundaries;  // segment start indices
  uint64_t seed = 0;
};

/// Switching-AR generator: `n_segments` segments with regime types uniform
/// (consecutive types distinct, so the switch structure matches a pi_ii = 0
/// chain) and durations drawn from `duration_law`. The first k samples are
/// iid N(0,1) warmup carrying the first segment's label.
inline LabeledSeries gen_sarm_switching(const ArEmission& params,
                                        const DurationSpec& duration_law,
                                        int n_segments, uint64_t seed) {
  if (n_segments < 1) throw std::invalid_argument("need at least one segment");
  Rng rng(seed);
  const int S = params.S;
  const int k = params.k;

  std::vector<int> types(n_segments);
  std::vector<int> lens(n_segments);
  std::vector<double> rho(duration_law.pmf.data(),
                          duration_law.pmf.data() + duration_law.pmf.size());
  for (int i = 0; i < n_segments; ++i) {
    if (i == 0) {
      types[i] = rng.uniform_int(0, S - 1);
    } else if (S == 1) {
      types[i] = 0;
    } else {
      int draw = rng.uniform_int(0, S - 2);
      if (draw >= types[i - 1]) ++draw;  // uniform over the other regimes
      types[i] = draw;
    }
    lens[i] = duration_law.d_min + rng.categorical(rho);
  }

  int total = k;
  for (int len : lens) total += len;
  std::vector<double> v(static_cast<size_t>(total));
  LabeledSeries out;
  out.seed = seed;
  out.true_regimes.assign(static_cast<size_t>(total), types[0]);
  out.true_boundaries.push_back(0);

  for (int t = 0; t < k; ++t) v[static_cast<size_t>(t)] = rng.gaussian();
  int t = k;
  for (int i = 0; i < n_segments; ++i) {
    if (i > 0) out.true_boundaries.push_back(t);
    const int s = types[i];
    const double sd = std::sqrt(params.noise_var(s));
    for (int j = 0; j < lens[i]; ++j, ++t) {
      double mean = 0.0;
      for (int lag = 1; lag <= std::min(k, t); ++lag)
        mean += params.coeffs(s, lag - 1) * v[static_cast<size_t>(t - lag)];
      v[static_cast<size_t>(t)] = mean + sd * rng.gaussian();
      if (!std::isfinite(v[static_cast<size_t>(t)]) ||
          std::abs(v[static_cast<size_t>(t)]) > 1e9)
        throw numerical_error("generation diverged at step " +
                              std::to_string(t));
      out.true_regimes[static_cast<size_t>(t)] = s;
    }
  }
  out.series = TimeSeries::scalar(v);
  return out;
}

/// The 3-regime, 3-order switching AR used in the duration experiments.
inline ArEmission sarm_paper_params() {
  ArEmission ar;
  ar.S = 3;
  ar.k = 3;
  ar.coeffs.resize(3, 3);
  ar.coeffs << 1.8, -0.99, 0.0,
               1.65, -0.9, 0.1,
               1.8, -0.85, 0.0;
  ar.noise_var = Eigen::VectorXd::Ones(3);
  return ar;
}

struct SinusoidConfig {
  int segment_len = 100;
  double freq1 = 0.05;  // cycles per step, period 20
  double freq2 = 0.15;  // period ~6.7
  double amplitude = 1.0;
  double noise_sd = 0.15;
};

/// Two-regime noisy sinusoid with a frequency switch halfway. Frequencies,
/// amplitude and noise level are free choices; these defaults keep the two
/// regimes identical in amplitude so value-based segmentation must fail.
inline LabeledSeries gen_switching_sinusoid(uint64_t seed,
                                            const SinusoidConfig& cfg = {}) {
  Rng rng(seed);
  const int T = 2 * cfg.segment_len;
  std::vector<double> v(static_cast<size_t>(T));
  LabeledSeries out;
  out.seed = seed;
  out.true_regimes.assign(static_cast<size_t>(T), 0);
  out.true_boundaries = {0, cfg.segment_len};
  const double phase2 = 2.0 * M_PI * cfg.freq1 * cfg.segment_len;
  for (int t = 0; t < T; ++t) {
    const double angle = t < cfg.segment_len
                             ? 2.0 * M_PI * cfg.freq1 * t
                             : phase2 + 2.0 * M_PI * cfg.freq2 * (t - cfg.segment_len);
    v[static_cast<size_t>(t)] =
        cfg.amplitude * std::sin(angle) + cfg.noise_sd * rng.gaussian();
    if (t >= cfg.segment_len) out.true_regimes[static_cast<size_t>(t)] = 1;
  }
  out.series = TimeSeries::scalar(v);
  return out;
}

/// Hamming fraction of mismatched labels. With allow_permutation the best
/// relabeling is used (for EM fits, whose labels are arbitrary).
inline double segmentation_error(const std::vector<int>& estimated,
                                 const std::vector<int>& truth,
                                 bool allow_permutation = false) {
  if (estimated.size() != truth.size())
    throw std::invalid_argument("segmentation_error: length mismatch");
  int S = 1;
  for (int s : estimated) S = std::max(S, s + 1);
  for (int s : truth) S = std::max(S, s + 1);
  if (!allow_permutation) {
    size_t miss = 0;
    for (size_t i = 0; i < truth.size(); ++i)
      if (estimated[i] != truth[i]) ++miss;
    return static_cast<double>(miss) / static_cast<double>(truth.size());
  }
  if (S > 8) throw std::invalid_argument("permutation matching capped at 8 labels");
  std::vector<int> perm(static_cast<size_t>(S));
  for (int i = 0; i < S; ++i) perm[static_cast<size_t>(i)] = i;
  double best = 1.0;
  do {
    size_t miss = 0;
    for (size_t i = 0; i < truth.size(); ++i)
      if (perm[static_cast<size_t>(estimated[i])] != truth[i]) ++miss;
    best = std::min(best,
                    static_cast<double>(miss) / static_cast<double>(truth.size()));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

/// Maximum-likelihood switch matrix from a known regime sequence (uniform
/// initial distribution; the evidence from one step is negligible).
inline TransitionModel fit_transition_ml(const std::vector<int>& labels, int S) {
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(S, S);
  for (size_t t = 1; t < labels.size(); ++t)
    counts(labels[t], labels[t - 1]) += 1.0;
  TransitionModel m = TransitionModel::uniform(S);
  for (int i = 0; i < S; ++i) {
    const double c = counts.col(i).sum();
    if (c > 0.0)
      for (int j = 0; j < S; ++j) m.switch_(j, i) = counts(j, i) / c;
  }
  return m;
}

}  // namespace switchseg

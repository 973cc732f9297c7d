#pragma once

// Random instance builders shared by the test suites and the acceptance
// harness. All draws flow through the library Rng so instances are
// reproducible from the seed alone.

#include "switchseg/emission.hpp"

namespace switchseg::testutil {

inline TransitionModel rand_transition(Rng& rng, int S) {
  Eigen::VectorXd init(S);
  Eigen::MatrixXd sw(S, S);
  for (int s = 0; s < S; ++s) init(s) = 0.2 + rng.uniform01();
  init /= init.sum();
  for (int i = 0; i < S; ++i) {
    for (int j = 0; j < S; ++j) sw(j, i) = 0.1 + rng.uniform01();
    sw.col(i) /= sw.col(i).sum();
  }
  return TransitionModel(init, sw);
}

inline DurationSpec rand_duration(Rng& rng, int d_min, int d_max) {
  Eigen::VectorXd p(d_max - d_min + 1);
  for (int i = 0; i < p.size(); ++i) p(i) = 0.2 + rng.uniform01();
  p /= p.sum();
  return DurationSpec(d_min, d_max, p);
}

inline ArEmission rand_ar(Rng& rng, int S, int k) {
  ArEmission ar;
  ar.S = S;
  ar.k = k;
  ar.coeffs = Eigen::MatrixXd::Zero(S, k);
  for (int s = 0; s < S; ++s)
    for (int i = 0; i < k; ++i) ar.coeffs(s, i) = rng.uniform(-0.8, 0.8);
  ar.noise_var.resize(S);
  for (int s = 0; s < S; ++s) ar.noise_var(s) = 0.5 + rng.uniform01();
  return ar;
}

inline GmmEmission rand_gmm(Rng& rng, int S, int M, int D, bool chained) {
  GmmEmission g;
  g.S = S;
  g.M = M;
  g.D = D;
  g.weights.resize(S, M);
  for (int s = 0; s < S; ++s) {
    for (int m = 0; m < M; ++m) g.weights(s, m) = 0.3 + rng.uniform01();
    g.weights.row(s) /= g.weights.row(s).sum();
  }
  g.means.assign(S, std::vector<Eigen::VectorXd>(M));
  g.covs.assign(S, std::vector<Eigen::MatrixXd>(M));
  for (int s = 0; s < S; ++s)
    for (int m = 0; m < M; ++m) {
      g.means[s][m].resize(D);
      for (int d = 0; d < D; ++d) g.means[s][m](d) = rng.uniform(-2.0, 2.0);
      Eigen::MatrixXd c = Eigen::MatrixXd::Zero(D, D);
      for (int d = 0; d < D; ++d) c(d, d) = 0.5 + rng.uniform01();
      if (D > 1) c(0, 1) = c(1, 0) = 0.2 * rng.uniform(-1.0, 1.0);
      g.covs[s][m] = c;
    }
  if (chained) {
    std::vector<Eigen::MatrixXd> chain(S);
    for (int s = 0; s < S; ++s) {
      chain[s].resize(M, M);
      for (int mp = 0; mp < M; ++mp) {
        for (int m = 0; m < M; ++m) chain[s](m, mp) = 0.2 + rng.uniform01();
        chain[s].col(mp) /= chain[s].col(mp).sum();
      }
    }
    g.mixture_chain = std::move(chain);
  }
  return g;
}

/// Linear Gaussian regimes with parameter spread `eps` around a shared,
/// well-conditioned base system.
inline LinearGaussianEmission rand_lgss(Rng& rng, int S, int H, int D,
                                        double eps) {
  LinearGaussianEmission lg;
  lg.S = S;
  lg.H = H;
  lg.D = D;
  Eigen::MatrixXd A0 = 0.7 * Eigen::MatrixXd::Identity(H, H);
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < H; ++j)
      if (i != j) A0(i, j) = 0.1;
  for (int s = 0; s < S; ++s) {
    LinearGaussianEmission::Regime rg;
    rg.A = A0;
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < H; ++j) rg.A(i, j) += eps * rng.uniform(-1.0, 1.0);
    rg.B = Eigen::MatrixXd::Zero(D, H);
    for (int i = 0; i < D; ++i)
      for (int j = 0; j < H; ++j)
        rg.B(i, j) = (i == j % D ? 1.0 : 0.3) + eps * rng.uniform(-1.0, 1.0);
    rg.sigma_h = 0.4 * Eigen::MatrixXd::Identity(H, H);
    rg.sigma_v = 0.3 * Eigen::MatrixXd::Identity(D, D);
    rg.reset_mean = Eigen::VectorXd::Zero(H);
    for (int i = 0; i < H; ++i) rg.reset_mean(i) = eps * rng.uniform(-1.0, 1.0);
    rg.reset_cov = Eigen::MatrixXd::Identity(H, H);
    lg.regimes.push_back(std::move(rg));
  }
  return lg;
}

inline TimeSeries rand_series(Rng& rng, int T, int D = 1, double scale = 1.5) {
  Eigen::MatrixXd data(T, D);
  for (int t = 0; t < T; ++t)
    for (int d = 0; d < D; ++d) data(t, d) = scale * rng.gaussian();
  return TimeSeries(data);
}

inline Model make_model(ModelType type, TransitionModel tr,
                        std::vector<DurationSpec> dur, EmissionModel em,
                        bool cut = false) {
  Model m;
  m.type = type;
  m.transition = std::move(tr);
  m.durations = std::move(dur);
  m.emission = std::move(em);
  m.cut_across_regimes = cut;
  return m;
}

inline std::vector<int> argmax_rows(const Eigen::MatrixXd& gamma) {
  std::vector<int> out(static_cast<size_t>(gamma.rows()));
  for (int t = 0; t < gamma.rows(); ++t) {
    int a = 0;
    for (int s = 1; s < gamma.cols(); ++s)
      if (gamma(t, s) > gamma(t, a)) a = s;
    out[static_cast<size_t>(t)] = a;
  }
  return out;
}

}  // namespace switchseg::testutil

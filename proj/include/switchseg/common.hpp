#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace switchseg {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kLogTwoPi = 1.8378770664093454836;

/// Thrown when a numerical operation fails (non-PD covariance, zero
/// normalizer on impossible data, exact-mode mixture overflow).
struct numerical_error : std::runtime_error {
  explicit numerical_error(const std::string& msg) : std::runtime_error(msg) {}
};

inline double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  if (a < b) std::swap(a, b);
  return a + std::log1p(std::exp(b - a));
}

template <typename Iter>
double log_sum_exp(Iter begin, Iter end) {
  double m = kNegInf;
  for (Iter it = begin; it != end; ++it)
    if (*it > m) m = *it;
  if (m == kNegInf) return kNegInf;
  double acc = 0.0;
  for (Iter it = begin; it != end; ++it) acc += std::exp(*it - m);
  return m + std::log(acc);
}

inline double log_sum_exp(const std::vector<double>& v) {
  return log_sum_exp(v.begin(), v.end());
}

inline double log_sum_exp(const Eigen::VectorXd& v) {
  return log_sum_exp(v.data(), v.data() + v.size());
}

inline double log_sum_exp_row(const Eigen::MatrixXd& m, int row) {
  double mx = kNegInf;
  for (int j = 0; j < m.cols(); ++j)
    if (m(row, j) > mx) mx = m(row, j);
  if (mx == kNegInf) return kNegInf;
  double acc = 0.0;
  for (int j = 0; j < m.cols(); ++j) acc += std::exp(m(row, j) - mx);
  return mx + std::log(acc);
}

inline double safe_log(double x) { return x > 0.0 ? std::log(x) : kNegInf; }

inline void symmetrize(Eigen::MatrixXd& m) {
  m = 0.5 * (m + m.transpose()).eval();
}

/// Cholesky factorization with escalating diagonal jitter up to `max_jitter`.
/// Returns the factor; adds the injected jitter amount to `*jitter_used`.
inline Eigen::LLT<Eigen::MatrixXd> cholesky_with_jitter(
    const Eigen::MatrixXd& m, double max_jitter = 1e-9,
    double* jitter_used = nullptr) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() == Eigen::Success) return llt;
  double jitter = 1e-15;
  const int n = static_cast<int>(m.rows());
  while (jitter <= max_jitter) {
    llt.compute(m + jitter * Eigen::MatrixXd::Identity(n, n));
    if (llt.info() == Eigen::Success) {
      if (jitter_used) *jitter_used += jitter;
      return llt;
    }
    jitter *= 10.0;
  }
  throw numerical_error("matrix not positive definite after jitter");
}

/// log N(x; mean, cov) for a full-covariance multivariate Gaussian.
inline double gaussian_log_density(const Eigen::VectorXd& x,
                                   const Eigen::VectorXd& mean,
                                   const Eigen::MatrixXd& cov,
                                   double* jitter_used = nullptr) {
  const auto llt = cholesky_with_jitter(cov, 1e-9, jitter_used);
  const Eigen::VectorXd d = x - mean;
  const Eigen::VectorXd z = llt.matrixL().solve(d);
  double log_det = 0.0;
  for (int i = 0; i < cov.rows(); ++i)
    log_det += std::log(llt.matrixL()(i, i));
  return -0.5 * z.squaredNorm() - log_det -
         0.5 * static_cast<double>(cov.rows()) * kLogTwoPi;
}

inline double gaussian_log_density1(double x, double mean, double var) {
  if (!(var > 0.0)) throw numerical_error("nonpositive variance");
  const double d = x - mean;
  return -0.5 * (d * d / var + std::log(var) + kLogTwoPi);
}

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

/// Deterministic random stream. All sampling in the library flows through
/// this type so results depend only on the seed, not on the standard
/// library's distribution implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {
    // decorrelate trivially related seeds
    for (int i = 0; i < 4; ++i) splitmix64(state_);
  }

  /// Child stream for a named sub-task; independent of draws taken so far.
  Rng child(uint64_t salt) const {
    uint64_t s = state_ ^ (0x9e3779b97f4a7c15ull * (salt + 1));
    return Rng(s);
  }

  uint64_t next_u64() { return splitmix64(state_); }

  /// Uniform on [0,1) with 53 random bits.
  double uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  int uniform_int(int lo, int hi) {  // inclusive range
    const uint64_t span = static_cast<uint64_t>(hi - lo + 1);
    return lo + static_cast<int>(next_u64() % span);
  }

  double gaussian() {
    // Box-Muller; one value per call keeps the stream position obvious.
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  /// Index draw from unnormalized non-negative weights.
  int categorical(const std::vector<double>& weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    if (!(total > 0.0)) throw numerical_error("categorical: zero total weight");
    double u = uniform01() * total;
    for (size_t i = 0; i < weights.size(); ++i) {
      u -= weights[i];
      if (u <= 0.0) return static_cast<int>(i);
    }
    return static_cast<int>(weights.size()) - 1;
  }

  /// Index draw from log-weights (unnormalized).
  int categorical_log(const std::vector<double>& log_weights) {
    const double m = log_sum_exp(log_weights);
    if (m == kNegInf) throw numerical_error("categorical: all -inf weights");
    std::vector<double> w(log_weights.size());
    for (size_t i = 0; i < w.size(); ++i) w[i] = std::exp(log_weights[i] - m);
    return categorical(w);
  }

 private:
  uint64_t state_;
};

}  // namespace switchseg

#pragma once

#include <algorithm>
#include <sstream>
#include <string>
#include <vector>

#include "switchseg/common.hpp"

namespace switchseg {

struct ValidationReport {
  bool ok = true;
  std::vector<std::string> issues;

  void fail(const std::string& msg) {
    ok = false;
    issues.push_back(msg);
  }
  std::string summary() const {
    std::ostringstream os;
    for (size_t i = 0; i < issues.size(); ++i) {
      if (i) os << "; ";
      os << issues[i];
    }
    return os.str();
  }
};

inline constexpr double kProbTol = 1e-12;

/// Initial distribution and regime-switch matrix. The switch matrix is
/// column-stochastic: switch_(j, i) = p(s_t = j | s_{t-1} = i).
struct TransitionModel {
  Eigen::VectorXd initial;   // length S
  Eigen::MatrixXd switch_;   // S x S, columns sum to 1
  int S = 0;

  TransitionModel() = default;
  TransitionModel(Eigen::VectorXd init, Eigen::MatrixXd sw)
      : initial(std::move(init)), switch_(std::move(sw)),
        S(static_cast<int>(initial.size())) {}

  double log_initial(int s) const { return safe_log(initial(s)); }
  double log_switch(int to, int from) const { return safe_log(switch_(to, from)); }

  static TransitionModel uniform(int S) {
    TransitionModel m;
    m.S = S;
    m.initial = Eigen::VectorXd::Constant(S, 1.0 / S);
    m.switch_ = Eigen::MatrixXd::Constant(S, S, 1.0 / S);
    return m;
  }

  /// pi_ii = stay, off-diagonals share the remaining mass equally.
  static TransitionModel sticky(int S, double stay) {
    TransitionModel m = uniform(S);
    if (S == 1) {
      m.switch_(0, 0) = 1.0;
      return m;
    }
    for (int i = 0; i < S; ++i)
      for (int j = 0; j < S; ++j)
        m.switch_(j, i) = (i == j) ? stay : (1.0 - stay) / (S - 1);
    return m;
  }
};

inline void validate_transition(const TransitionModel& m, ValidationReport& r) {
  if (m.S < 1) {
    r.fail("regime count must be >= 1");
    return;
  }
  if (m.initial.size() != m.S || m.switch_.rows() != m.S ||
      m.switch_.cols() != m.S) {
    r.fail("transition model shape mismatch");
    return;
  }
  if ((m.initial.array() < 0.0).any()) r.fail("initial has negative entries");
  if (std::abs(m.initial.sum() - 1.0) > kProbTol)
    r.fail("initial distribution not stochastic");
  for (int i = 0; i < m.S; ++i) {
    if ((m.switch_.col(i).array() < 0.0).any()) {
      r.fail("column " + std::to_string(i) + " has negative entries");
      continue;
    }
    if (std::abs(m.switch_.col(i).sum() - 1.0) > kProbTol)
      r.fail("column " + std::to_string(i) + " not stochastic");
  }
}

/// Explicit regime-duration distribution on {d_min..d_max}, with the
/// equivalent hazard parameterization. lambda(c) is the probability that a
/// regime at elapsed count c survives to count c+1; 1 - lambda(c) =
/// rho(c) / sum_{i>=c} rho(i). lambda(d_max) = 0.
struct DurationSpec {
  int d_min = 1;
  int d_max = 1;
  Eigen::VectorXd pmf;  // length d_max - d_min + 1, indexed d - d_min

  DurationSpec() = default;
  DurationSpec(int dmin, int dmax, Eigen::VectorXd p)
      : d_min(dmin), d_max(dmax), pmf(std::move(p)) {}

  static DurationSpec uniform(int dmin, int dmax) {
    const int n = dmax - dmin + 1;
    return DurationSpec(dmin, dmax, Eigen::VectorXd::Constant(n, 1.0 / n));
  }

  static DurationSpec point(int d) {
    return DurationSpec(d, d, Eigen::VectorXd::Ones(1));
  }

  /// Geometric with stay probability pi_ii, truncated at d_max and
  /// renormalized.
  static DurationSpec truncated_geometric(double pi_ii, int dmax) {
    Eigen::VectorXd p(dmax);
    for (int d = 1; d <= dmax; ++d)
      p(d - 1) = std::pow(pi_ii, d - 1) * (1.0 - pi_ii);
    p /= p.sum();
    return DurationSpec(1, dmax, p);
  }

  int span() const { return d_max - d_min + 1; }

  double rho(int d) const {
    if (d < d_min || d > d_max) return 0.0;
    return pmf(d - d_min);
  }
  double log_rho(int d) const { return safe_log(rho(d)); }

  /// P(duration >= c), defined for c in 1..d_max+1.
  double survival(int c) const {
    if (c <= d_min) return 1.0;
    if (c > d_max) return 0.0;
    double s = 0.0;
    for (int d = std::max(c, d_min); d <= d_max; ++d) s += rho(d);
    return s;
  }
  double log_survival(int c) const { return safe_log(survival(c)); }

  /// lambda(c) for c in 1..d_max. Zero-survival tails get lambda = 0.
  double lambda(int c) const {
    const double surv = survival(c);
    if (surv <= 0.0) return 0.0;
    if (c >= d_max) return 0.0;
    double l = 1.0 - rho(c) / surv;
    return std::clamp(l, 0.0, 1.0);
  }
  double log_lambda(int c) const { return safe_log(lambda(c)); }
  double log_end_prob(int c) const { return safe_log(1.0 - lambda(c)); }
};

inline void validate_duration(const DurationSpec& d, ValidationReport& r) {
  if (!(1 <= d.d_min && d.d_min <= d.d_max)) {
    r.fail("duration bounds must satisfy 1 <= d_min <= d_max");
    return;
  }
  if (d.pmf.size() != d.span()) {
    r.fail("duration pmf length mismatch");
    return;
  }
  if ((d.pmf.array() < 0.0).any()) r.fail("duration pmf has negative entries");
  if (std::abs(d.pmf.sum() - 1.0) > kProbTol)
    r.fail("duration pmf does not sum to 1");
}

/// Implicit HMM duration pmf pi_ii^{d-1} (1 - pi_ii).
inline double geometric_duration_pmf(double pi_ii, int d) {
  if (!(pi_ii >= 0.0 && pi_ii < 1.0))
    throw std::invalid_argument(
        "geometric_duration_pmf: pi_ii must be in [0, 1)");
  if (d < 1) throw std::invalid_argument("geometric_duration_pmf: d >= 1");
  return std::pow(pi_ii, d - 1) * (1.0 - pi_ii);
}

/// Hazard vector lambda indexed d_min..d_max from the pmf, via
/// 1 - lambda_c = rho_c / sum_{i>=c} rho_i.
inline Eigen::VectorXd pmf_to_hazard(const DurationSpec& spec) {
  Eigen::VectorXd lam(spec.span());
  for (int c = spec.d_min; c <= spec.d_max; ++c) {
    const double surv = spec.survival(c);
    if (surv <= 0.0) {
      // Unreachable tail: every later rho must be zero too.
      for (int d = c; d <= spec.d_max; ++d)
        if (spec.rho(d) > 0.0)
          throw numerical_error(
              "pmf_to_hazard: zero survival before nonzero pmf mass");
      lam(c - spec.d_min) = 0.0;
      continue;
    }
    lam(c - spec.d_min) = (c == spec.d_max)
                              ? 0.0
                              : std::clamp(1.0 - spec.rho(c) / surv, 0.0, 1.0);
  }
  return lam;
}

/// Inverse of pmf_to_hazard: rho_d = (1 - lambda_d) prod_{i<d} lambda_i
/// (the product over i < d_min is empty).
inline DurationSpec hazard_to_pmf(const Eigen::VectorXd& lambda, int d_min,
                                  int d_max) {
  Eigen::VectorXd p(d_max - d_min + 1);
  double surv = 1.0;
  for (int d = d_min; d <= d_max; ++d) {
    const double lam = lambda(d - d_min);
    p(d - d_min) = (1.0 - lam) * surv;
    surv *= lam;
  }
  return DurationSpec(d_min, d_max, p);
}

/// Observed series: T x D, row per time step.
struct TimeSeries {
  Eigen::MatrixXd data;

  TimeSeries() = default;
  explicit TimeSeries(Eigen::MatrixXd d) : data(std::move(d)) {}
  static TimeSeries scalar(const std::vector<double>& v) {
    Eigen::MatrixXd m(static_cast<int>(v.size()), 1);
    for (size_t i = 0; i < v.size(); ++i) m(static_cast<int>(i), 0) = v[i];
    return TimeSeries(m);
  }

  int length() const { return static_cast<int>(data.rows()); }
  int dim() const { return static_cast<int>(data.cols()); }
  double scalar_at(int t) const { return data(t, 0); }
  Eigen::VectorXd row(int t) const { return data.row(t).transpose(); }
};

inline void validate_series(const TimeSeries& s, ValidationReport& r) {
  if (s.length() < 1) {
    r.fail("series must have at least one step");
    return;
  }
  if (!s.data.allFinite()) r.fail("series contains non-finite values");
}

}  // namespace switchseg

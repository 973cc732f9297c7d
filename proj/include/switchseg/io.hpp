#pragma once

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "switchseg/emission.hpp"
#include "switchseg/synthgen.hpp"

namespace switchseg {

using nlohmann::json;

namespace detail {

inline void check_keys(const json& obj, const std::set<std::string>& allowed,
                       const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!allowed.count(it.key()))
      throw std::invalid_argument("unknown key \"" + it.key() + "\" in " + where);
}

inline Eigen::VectorXd parse_vector(const json& a) {
  Eigen::VectorXd v(a.size());
  for (size_t i = 0; i < a.size(); ++i) v(static_cast<int>(i)) = a[i].get<double>();
  return v;
}

inline Eigen::MatrixXd parse_matrix(const json& a) {
  const int rows = static_cast<int>(a.size());
  const int cols = rows ? static_cast<int>(a[0].size()) : 0;
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    if (static_cast<int>(a[i].size()) != cols)
      throw std::invalid_argument("ragged matrix in model file");
    for (int j = 0; j < cols; ++j) m(i, j) = a[i][j].get<double>();
  }
  return m;
}

inline json dump_vector(const Eigen::VectorXd& v) {
  json a = json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline json dump_matrix(const Eigen::MatrixXd& m) {
  json a = json::array();
  for (int i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    a.push_back(row);
  }
  return a;
}

/// Probability vectors are accepted within 1e-12 of stochastic and then
/// renormalized once, so text round-trips cannot drift.
inline void renormalize(Eigen::VectorXd& v) { v /= v.sum(); }

inline DurationSpec parse_duration(const json& dj) {
  check_keys(dj, {"d_min", "d_max", "pmf"}, "duration");
  DurationSpec d(dj.at("d_min").get<int>(), dj.at("d_max").get<int>(),
                 parse_vector(dj.at("pmf")));
  ValidationReport r;
  validate_duration(d, r);
  if (!r.ok) throw std::invalid_argument("model file: " + r.summary());
  renormalize(d.pmf);
  return d;
}

inline json dump_duration(const DurationSpec& d) {
  return json{{"d_min", d.d_min}, {"d_max", d.d_max}, {"pmf", dump_vector(d.pmf)}};
}

}  // namespace detail

inline ModelType model_type_from_name(const std::string& name) {
  for (ModelType t : {ModelType::HmmGmm, ModelType::Sarm, ModelType::DurationDc,
                      ModelType::DurationIc, ModelType::Segmental,
                      ModelType::Slgssm})
    if (name == model_type_name(t)) return t;
  throw std::invalid_argument("unknown model_type \"" + name + "\"");
}

inline Model model_from_json(const json& j) {
  detail::check_keys(j,
                     {"model_type", "initial", "switch", "duration",
                      "duration_per_regime", "emission", "cut_across_regimes"},
                     "model");
  Model m;
  m.type = model_type_from_name(j.at("model_type").get<std::string>());
  m.transition.initial = detail::parse_vector(j.at("initial"));
  m.transition.switch_ = detail::parse_matrix(j.at("switch"));
  m.transition.S = static_cast<int>(m.transition.initial.size());
  if (j.contains("duration") && j.contains("duration_per_regime"))
    throw std::invalid_argument("give either duration or duration_per_regime");
  if (j.contains("duration"))
    m.durations.push_back(detail::parse_duration(j.at("duration")));
  if (j.contains("duration_per_regime"))
    for (const auto& dj : j.at("duration_per_regime"))
      m.durations.push_back(detail::parse_duration(dj));
  if (j.contains("cut_across_regimes")) {
    if (m.type != ModelType::DurationIc)
      throw std::invalid_argument("cut_across_regimes applies to duration_ic");
    m.cut_across_regimes = j.at("cut_across_regimes").get<bool>();
  }

  const json& ej = j.at("emission");
  const std::string etype = ej.at("type").get<std::string>();
  if (etype == "gmm") {
    detail::check_keys(
        ej, {"type", "weights", "means", "covariances", "mixture_transition"},
        "gmm emission");
    GmmEmission g;
    g.weights = detail::parse_matrix(ej.at("weights"));
    g.S = static_cast<int>(g.weights.rows());
    g.M = static_cast<int>(g.weights.cols());
    const json& means = ej.at("means");
    const json& covs = ej.at("covariances");
    g.means.resize(g.S);
    g.covs.resize(g.S);
    for (int s = 0; s < g.S; ++s) {
      g.means[s].resize(g.M);
      g.covs[s].resize(g.M);
      for (int mm = 0; mm < g.M; ++mm) {
        g.means[s][mm] = detail::parse_vector(means.at(s).at(mm));
        g.covs[s][mm] = detail::parse_matrix(covs.at(s).at(mm));
      }
    }
    g.D = static_cast<int>(g.means[0][0].size());
    if (ej.contains("mixture_transition")) {
      std::vector<Eigen::MatrixXd> chain;
      for (const auto& cj : ej.at("mixture_transition"))
        chain.push_back(detail::parse_matrix(cj));
      g.mixture_chain = std::move(chain);
    }
    m.emission = std::move(g);
  } else if (etype == "ar") {
    detail::check_keys(ej, {"type", "order", "coeffs", "noise_var", "initial_law"},
                       "ar emission");
    ArEmission a;
    a.k = ej.at("order").get<int>();
    a.coeffs = detail::parse_matrix(ej.at("coeffs"));
    a.noise_var = detail::parse_vector(ej.at("noise_var"));
    a.S = static_cast<int>(a.noise_var.size());
    if (a.k == 0 && a.coeffs.size() == 0)
      a.coeffs.resize(a.S, 0);
    if (ej.contains("initial_law")) {
      detail::check_keys(ej.at("initial_law"), {"mean", "var"}, "initial_law");
      a.initial_law = ArEmission::InitialLaw{
          ej.at("initial_law").at("mean").get<double>(),
          ej.at("initial_law").at("var").get<double>()};
    }
    m.emission = std::move(a);
  } else if (etype == "linear_gaussian") {
    detail::check_keys(ej,
                       {"type", "A", "B", "sigma_h", "sigma_v", "reset_mean",
                        "reset_cov"},
                       "linear_gaussian emission");
    LinearGaussianEmission l;
    l.S = static_cast<int>(ej.at("A").size());
    l.regimes.resize(l.S);
    for (int s = 0; s < l.S; ++s) {
      auto& rg = l.regimes[s];
      rg.A = detail::parse_matrix(ej.at("A").at(s));
      rg.B = detail::parse_matrix(ej.at("B").at(s));
      rg.sigma_h = detail::parse_matrix(ej.at("sigma_h").at(s));
      rg.sigma_v = detail::parse_matrix(ej.at("sigma_v").at(s));
      rg.reset_mean = detail::parse_vector(ej.at("reset_mean").at(s));
      rg.reset_cov = detail::parse_matrix(ej.at("reset_cov").at(s));
    }
    l.H = static_cast<int>(l.regimes[0].A.rows());
    l.D = static_cast<int>(l.regimes[0].B.rows());
    m.emission = std::move(l);
  } else {
    throw std::invalid_argument("unknown emission type \"" + etype + "\"");
  }

  const ValidationReport r = validate_model(m);
  if (!r.ok) throw std::invalid_argument("model file: " + r.summary());
  detail::renormalize(m.transition.initial);
  for (int i = 0; i < m.transition.S; ++i) {
    Eigen::VectorXd col = m.transition.switch_.col(i);
    detail::renormalize(col);
    m.transition.switch_.col(i) = col;
  }
  if (auto* g = std::get_if<GmmEmission>(&m.emission))
    for (int s = 0; s < g->S; ++s) g->weights.row(s) /= g->weights.row(s).sum();
  return m;
}

inline json model_to_json(const Model& m) {
  json j;
  j["model_type"] = model_type_name(m.type);
  j["initial"] = detail::dump_vector(m.transition.initial);
  j["switch"] = detail::dump_matrix(m.transition.switch_);
  if (m.durations.size() == 1) {
    j["duration"] = detail::dump_duration(m.durations[0]);
  } else if (m.durations.size() > 1) {
    json arr = json::array();
    for (const auto& d : m.durations) arr.push_back(detail::dump_duration(d));
    j["duration_per_regime"] = arr;
  }
  if (m.type == ModelType::DurationIc)
    j["cut_across_regimes"] = m.cut_across_regimes;
  json ej;
  if (const auto* g = m.gmm()) {
    ej["type"] = "gmm";
    ej["weights"] = detail::dump_matrix(g->weights);
    json means = json::array(), covs = json::array();
    for (int s = 0; s < g->S; ++s) {
      json ms = json::array(), cs = json::array();
      for (int mm = 0; mm < g->M; ++mm) {
        ms.push_back(detail::dump_vector(g->means[s][mm]));
        cs.push_back(detail::dump_matrix(g->covs[s][mm]));
      }
      means.push_back(ms);
      covs.push_back(cs);
    }
    ej["means"] = means;
    ej["covariances"] = covs;
    if (g->mixture_chain) {
      json chain = json::array();
      for (const auto& q : *g->mixture_chain) chain.push_back(detail::dump_matrix(q));
      ej["mixture_transition"] = chain;
    }
  } else if (const auto* a = m.ar()) {
    ej["type"] = "ar";
    ej["order"] = a->k;
    ej["coeffs"] = detail::dump_matrix(a->coeffs);
    ej["noise_var"] = detail::dump_vector(a->noise_var);
    if (a->initial_law)
      ej["initial_law"] = {{"mean", a->initial_law->mean},
                           {"var", a->initial_law->var}};
  } else if (const auto* l = m.lgss()) {
    ej["type"] = "linear_gaussian";
    json A = json::array(), B = json::array(), sh = json::array(),
         sv = json::array(), rm = json::array(), rc = json::array();
    for (const auto& rg : l->regimes) {
      A.push_back(detail::dump_matrix(rg.A));
      B.push_back(detail::dump_matrix(rg.B));
      sh.push_back(detail::dump_matrix(rg.sigma_h));
      sv.push_back(detail::dump_matrix(rg.sigma_v));
      rm.push_back(detail::dump_vector(rg.reset_mean));
      rc.push_back(detail::dump_matrix(rg.reset_cov));
    }
    ej["A"] = A;
    ej["B"] = B;
    ej["sigma_h"] = sh;
    ej["sigma_v"] = sv;
    ej["reset_mean"] = rm;
    ej["reset_cov"] = rc;
  }
  j["emission"] = ej;
  return j;
}

inline Model load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open model file " + path);
  json j;
  in >> j;
  return model_from_json(j);
}

inline void save_model(const Model& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("cannot write model file " + path);
  out << model_to_json(m).dump(2) << "\n";
}

// ---- CSV -------------------------------------------------------------------

inline std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline void write_series_csv(const LabeledSeries& ls, std::ostream& out) {
  const int D = ls.series.dim();
  out << "t";
  if (D == 1)
    out << ",v";
  else
    for (int d = 1; d <= D; ++d) out << ",v_" << d;
  out << ",regime\n";
  for (int t = 0; t < ls.series.length(); ++t) {
    out << t + 1;
    for (int d = 0; d < D; ++d) out << "," << format_double(ls.series.data(t, d));
    out << "," << ls.true_regimes[static_cast<size_t>(t)] + 1 << "\n";
  }
}

struct LoadedSeries {
  TimeSeries series;
  std::vector<int> regimes;  // empty when the file has no regime column
};

inline LoadedSeries read_series_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line))
    throw std::invalid_argument("empty series file");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  if (header.empty() || header[0] != "t")
    throw std::invalid_argument("series file must start with a t column");
  const bool has_regime = header.back() == "regime";
  const int D = static_cast<int>(header.size()) - 1 - (has_regime ? 1 : 0);
  if (D < 1) throw std::invalid_argument("series file has no value columns");

  std::vector<std::vector<double>> rows;
  std::vector<int> regimes;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> vals;
    while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
    if (static_cast<int>(vals.size()) != static_cast<int>(header.size()))
      throw std::invalid_argument("series row width mismatch");
    rows.push_back(std::vector<double>(vals.begin() + 1,
                                       vals.begin() + 1 + D));
    if (has_regime) regimes.push_back(static_cast<int>(vals.back()) - 1);
  }
  Eigen::MatrixXd data(static_cast<int>(rows.size()), D);
  for (size_t i = 0; i < rows.size(); ++i)
    for (int d = 0; d < D; ++d) data(static_cast<int>(i), d) = rows[i][static_cast<size_t>(d)];
  return LoadedSeries{TimeSeries(std::move(data)), std::move(regimes)};
}

inline void write_posterior_csv(const Eigen::MatrixXd& gamma, std::ostream& out) {
  out << "t";
  for (int s = 1; s <= gamma.cols(); ++s) out << ",gamma_" << s;
  out << "\n";
  for (int t = 0; t < gamma.rows(); ++t) {
    out << t + 1;
    for (int s = 0; s < gamma.cols(); ++s) out << "," << format_double(gamma(t, s));
    out << "\n";
  }
}

inline void write_labels_csv(const std::vector<int>& labels, std::ostream& out) {
  out << "t,regime\n";
  for (size_t t = 0; t < labels.size(); ++t)
    out << t + 1 << "," << labels[t] + 1 << "\n";
}

inline std::vector<int> read_labels_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("empty labels file");
  std::vector<int> labels;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    labels.push_back(std::stoi(line.substr(comma + 1)) - 1);
  }
  return labels;
}

// ---- SVG timeline -----------------------------------------------------------

/// Regime bands over time, estimated regime colored with intensity equal to
/// the posterior mass of the chosen regime; optional truth strip on top.
inline void write_timeline_svg(const std::vector<int>& estimated,
                               const Eigen::VectorXd& intensity,
                               const std::vector<int>& truth,
                               std::ostream& out) {
  static const char* palette[] = {"#d62728", "#1f77b4", "#2ca02c",
                                  "#ff7f0e", "#9467bd", "#8c564b"};
  const int T = static_cast<int>(estimated.size());
  const double w = 900.0 / std::max(1, T);
  const int rows = truth.empty() ? 1 : 2;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"940\" height=\""
      << 40 + rows * 60 << "\">\n";
  int y = 20;
  const auto band = [&](const std::vector<int>& labels,
                        const Eigen::VectorXd* alpha) {
    int start = 0;
    for (int t = 1; t <= static_cast<int>(labels.size()); ++t) {
      const bool flush = t == static_cast<int>(labels.size()) ||
                         labels[t] != labels[start] ||
                         (alpha && std::abs((*alpha)(t) - (*alpha)(start)) > 0.1);
      if (!flush) continue;
      const int s = labels[start] % 6;
      out << "  <rect x=\"" << 20 + start * w << "\" y=\"" << y << "\" width=\""
          << (t - start) * w << "\" height=\"50\" fill=\"" << palette[s]
          << "\" fill-opacity=\""
          << (alpha ? 0.25 + 0.75 * (*alpha)(start) : 1.0) << "\"/>\n";
      start = t;
    }
    y += 60;
  };
  if (!truth.empty()) band(truth, nullptr);
  band(estimated, &intensity);
  out << "</svg>\n";
}

}  // namespace switchseg

// Command-line surface: generation, fitting, smoothing, Viterbi decoding,
// path sampling, evaluation and benchmarking for the switching-model family.
// Exit codes: 0 success, 1 usage error, 2 numerical failure.

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <thread>

#include <CLI11.hpp>

#include "switchseg/discrete.hpp"
#include "switchseg/duration.hpp"
#include "switchseg/em.hpp"
#include "switchseg/io.hpp"
#include "switchseg/segmental.hpp"
#include "switchseg/slgssm.hpp"
#include "switchseg/synthgen.hpp"

namespace fs = std::filesystem;
using namespace switchseg;

namespace {

int thread_budget() {
  const char* env = std::getenv("SWITCHSEG_THREADS");
  if (!env) return 1;
  const int n = std::atoi(env);
  return n > 0 ? n : 1;
}

BoundaryMode parse_boundary(const std::string& s) {
  if (s == "relaxed") return BoundaryMode::Relaxed;
  if (s == "strict") return BoundaryMode::Strict;
  throw CLI::ValidationError("--boundary must be relaxed or strict");
}

Model preset_usarm_model() {
  Model m;
  m.type = ModelType::DurationDc;
  m.transition = TransitionModel::sticky(3, 0.0);
  m.durations = {DurationSpec::uniform(30, 50)};
  m.emission = sarm_paper_params();
  return m;
}

Model preset_gsarm_model(const std::vector<int>& truth) {
  Model m;
  m.type = ModelType::Sarm;
  m.transition = fit_transition_ml(truth, 3);
  m.emission = sarm_paper_params();
  return m;
}

LoadedSeries load_series(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open data file " + path);
  return read_series_csv(in);
}

void write_file(const fs::path& path, const std::function<void(std::ostream&)>& fn) {
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("cannot write " + path.string());
  fn(out);
}

struct InferenceOutput {
  Eigen::MatrixXd gamma;       // T x S regime posteriors (or one-hot path)
  std::vector<int> labels;     // argmax or decoded path
};

InferenceOutput run_smooth(const Model& model, const TimeSeries& series,
                           BoundaryMode boundary, const std::string& variant) {
  InferenceOutput out;
  switch (model.type) {
    case ModelType::HmmGmm:
      out.gamma = smooth_gmm(model, series).gamma_regime;
      break;
    case ModelType::Sarm:
      out.gamma = smooth_parallel(model, series).gamma_regime;
      break;
    case ModelType::DurationDc:
      out.gamma = dc_smooth(model, series, boundary).gamma_s;
      break;
    case ModelType::DurationIc:
      out.gamma = ic_smooth(model, series, boundary).gamma_s;
      break;
    case ModelType::Segmental: {
      const auto provider = SegmentLikelihoodProvider::from_model(model, series);
      auto tab = seg_forward(model, provider, boundary);
      seg_backward(model, provider, tab);
      out.gamma = seg_posteriors(tab).state;
      break;
    }
    case ModelType::Slgssm: {
      SlgssmVariant var = SlgssmVariant::Plain;
      FilterResult filt;
      if (variant == "plain" || variant.empty()) {
        filt = slgssm_filter(model, series);
      } else if (variant == "dc") {
        var = SlgssmVariant::DurationDc;
        filt = dur_filter_dc(model, series);
      } else if (variant == "dc_reset") {
        var = SlgssmVariant::DurationDcReset;
        filt = dur_filter_dc_reset(model, series);
      } else if (variant == "ic_reset") {
        var = SlgssmVariant::DurationIcReset;
        filt = dur_filter_ic_reset(model, series);
      } else if (variant == "changepoint") {
        var = SlgssmVariant::Changepoint;
        filt = changepoint_two_state(model, series);
      } else {
        throw std::invalid_argument("unknown slgssm variant " + variant);
      }
      std::vector<SwitchBeliefState>* steps = &filt.steps;
      SmoothResult sm;
      if (var == SlgssmVariant::Plain || var == SlgssmVariant::DurationDc ||
          var == SlgssmVariant::DurationIcReset) {
        sm = slgssm_smooth(model, filt, var);
        steps = &sm.steps;
      }
      const int T = static_cast<int>(steps->size());
      const int S = model.transition.S;
      out.gamma.setZero(T, S);
      for (int t = 0; t < T; ++t)
        for (int s = 0; s < S; ++s)
          for (int c = 1; c <= (*steps)[t].d_max; ++c) {
            const double w = (*steps)[t].cell_log_weight(s, c);
            if (w != kNegInf) out.gamma(t, s) += std::exp(w);
          }
      break;
    }
  }
  out.labels.resize(out.gamma.rows());
  for (int t = 0; t < out.gamma.rows(); ++t) {
    int arg = 0;
    for (int s = 1; s < out.gamma.cols(); ++s)
      if (out.gamma(t, s) > out.gamma(t, arg)) arg = s;
    out.labels[static_cast<size_t>(t)] = arg;
  }
  return out;
}

InferenceOutput run_viterbi(const Model& model, const TimeSeries& series,
                            BoundaryMode boundary) {
  InferenceOutput out;
  switch (model.type) {
    case ModelType::HmmGmm:
    case ModelType::Sarm:
      out.labels = viterbi(model, series).path;
      break;
    case ModelType::DurationDc:
      out.labels = dc_viterbi(model, series, boundary).regimes;
      break;
    case ModelType::Segmental: {
      const auto provider = SegmentLikelihoodProvider::from_model(model, series);
      out.labels = seg_viterbi(model, provider, boundary).regimes;
      break;
    }
    default:
      throw std::invalid_argument(
          "viterbi supports hmm_gmm, sarm, duration_dc and segmental models");
  }
  const int S = model.transition.S;
  out.gamma.setZero(static_cast<int>(out.labels.size()), S);
  for (size_t t = 0; t < out.labels.size(); ++t)
    out.gamma(static_cast<int>(t), out.labels[t]) = 1.0;
  return out;
}

void emit_inference(const InferenceOutput& res, const std::vector<int>& truth,
                    const fs::path& dir, const std::string& stem) {
  write_file(dir / (stem + "_gamma.csv"),
             [&](std::ostream& o) { write_posterior_csv(res.gamma, o); });
  write_file(dir / (stem + "_segmentation.csv"),
             [&](std::ostream& o) { write_labels_csv(res.labels, o); });
  Eigen::VectorXd intensity(res.gamma.rows());
  for (int t = 0; t < res.gamma.rows(); ++t)
    intensity(t) = res.gamma.row(t).maxCoeff();
  write_file(dir / (stem + "_plot.svg"), [&](std::ostream& o) {
    write_timeline_svg(res.labels, intensity, truth, o);
  });
}

int cmd_generate(const std::string& model_arg, uint64_t seed, int segments,
                 const std::string& out_dir) {
  fs::create_directories(out_dir);
  LabeledSeries ls;
  if (model_arg == "sarm-paper") {
    ls = gen_sarm_switching(sarm_paper_params(), DurationSpec::uniform(30, 50),
                            segments > 0 ? segments : 100, seed);
    save_model(preset_usarm_model(), (fs::path(out_dir) / "usarm.json").string());
    save_model(preset_gsarm_model(ls.true_regimes),
               (fs::path(out_dir) / "gsarm.json").string());
  } else if (model_arg == "sinusoid") {
    ls = gen_switching_sinusoid(seed);
  } else {
    const Model m = load_model(model_arg);
    const auto* ar = m.ar();
    if (!ar || !m.has_duration())
      throw std::invalid_argument(
          "generate needs sarm-paper, sinusoid, or a duration model with an "
          "AR emission");
    ls = gen_sarm_switching(*ar, m.duration_for(0),
                            segments > 0 ? segments : 100, seed);
  }
  write_file(fs::path(out_dir) / "series.csv",
             [&](std::ostream& o) { write_series_csv(ls, o); });
  std::cout << "wrote " << out_dir << "/series.csv (T=" << ls.series.length()
            << ")\n";
  return 0;
}

int cmd_fit(const std::string& model_path, const std::string& data_path,
            int max_iter, double tol, bool freeze_transitions,
            const std::string& out_dir) {
  fs::create_directories(out_dir);
  const Model init = load_model(model_path);
  const auto data = load_series(data_path);
  EmConfig cfg;
  cfg.max_iter = max_iter;
  cfg.tol = tol;
  cfg.update_transitions = !freeze_transitions;
  cfg.update_initial = !freeze_transitions;
  const EmResult res = em_fit(init, data.series, cfg);
  save_model(res.model, (fs::path(out_dir) / "fitted.json").string());
  write_file(fs::path(out_dir) / "ll_trace.csv", [&](std::ostream& o) {
    o << "iter,log_likelihood\n";
    for (size_t i = 0; i < res.log_likelihood_trace.size(); ++i)
      o << i << "," << format_double(res.log_likelihood_trace[i]) << "\n";
  });
  std::cout << "fit: " << res.log_likelihood_trace.size() << " evaluations, ll="
            << res.log_likelihood_trace.back() << "\n";
  return 0;
}

int cmd_infer(bool smooth_mode, const std::string& model_path,
              const std::vector<std::string>& data_paths,
              const std::string& boundary_str, const std::string& variant,
              const std::string& out_dir) {
  fs::create_directories(out_dir);
  const Model model = load_model(model_path);
  const BoundaryMode boundary = parse_boundary(boundary_str);

  const auto process = [&](const std::string& path) {
    const auto data = load_series(path);
    const InferenceOutput res =
        smooth_mode ? run_smooth(model, data.series, boundary, variant)
                    : run_viterbi(model, data.series, boundary);
    const std::string stem = fs::path(path).stem().string();
    emit_inference(res, data.regimes, out_dir, stem);
  };

  const int budget = thread_budget();
  if (budget <= 1 || data_paths.size() <= 1) {
    for (const auto& p : data_paths) process(p);
  } else {
    std::vector<std::thread> pool;
    std::atomic<size_t> next{0};
    std::atomic<bool> failed{false};
    std::string error;
    std::mutex err_mu;
    for (int i = 0; i < std::min<int>(budget, static_cast<int>(data_paths.size())); ++i)
      pool.emplace_back([&] {
        for (size_t j = next++; j < data_paths.size(); j = next++) {
          try {
            process(data_paths[j]);
          } catch (const std::exception& e) {
            std::lock_guard<std::mutex> lock(err_mu);
            failed = true;
            error = e.what();
          }
        }
      });
    for (auto& th : pool) th.join();
    if (failed) throw numerical_error(error);
  }
  return 0;
}

int cmd_sample(const std::string& model_path, const std::string& data_path,
               uint64_t seed, int n_samples, const std::string& boundary_str,
               const std::string& out_dir) {
  fs::create_directories(out_dir);
  const Model model = load_model(model_path);
  if (model.type != ModelType::Segmental)
    throw std::invalid_argument("sample applies to segmental models");
  const auto data = load_series(data_path);
  const auto provider = SegmentLikelihoodProvider::from_model(model, data.series);
  const auto tab = seg_forward(model, provider, parse_boundary(boundary_str));
  Rng root(seed);
  for (int i = 0; i < n_samples; ++i) {
    const auto path = seg_sample_path(model, tab, root.child(i).next_u64());
    write_file(fs::path(out_dir) / ("sample_" + std::to_string(i) + ".csv"),
               [&](std::ostream& o) { write_labels_csv(path.regimes, o); });
  }
  std::cout << "wrote " << n_samples << " samples to " << out_dir << "\n";
  return 0;
}

int cmd_eval(const std::string& est_path, const std::string& truth_path,
             bool permute, const std::string& report_path) {
  std::ifstream est_in(est_path);
  if (!est_in) throw std::invalid_argument("cannot open " + est_path);
  const std::vector<int> est = read_labels_csv(est_in);
  std::ifstream truth_in(truth_path);
  if (!truth_in) throw std::invalid_argument("cannot open " + truth_path);
  std::vector<int> truth;
  if (truth_path.size() > 4 &&
      truth_path.find("series") != std::string::npos) {
    truth = read_series_csv(truth_in).regimes;
  } else {
    truth = read_labels_csv(truth_in);
  }
  const double err = segmentation_error(est, truth, permute);
  json rep{{"length", est.size()},
           {"mismatches", static_cast<long long>(std::lround(err * est.size()))},
           {"error", err},
           {"permutation_matched", permute}};
  if (report_path.empty() || report_path == "-") {
    std::cout << rep.dump(2) << "\n";
  } else {
    write_file(report_path, [&](std::ostream& o) { o << rep.dump(2) << "\n"; });
  }
  return 0;
}

double median_time(const std::function<void()>& fn, int reps) {
  std::vector<double> times;
  fn();  // warmup
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  std::sort(times.begin(), times.end());
  return times[times.size() / 2];
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const int n = static_cast<int>(x.size());
  double mx = 0, my = 0;
  for (int i = 0; i < n; ++i) {
    mx += std::log(x[static_cast<size_t>(i)]);
    my += std::log(y[static_cast<size_t>(i)]);
  }
  mx /= n;
  my /= n;
  double num = 0, den = 0;
  for (int i = 0; i < n; ++i) {
    const double dx = std::log(x[static_cast<size_t>(i)]) - mx;
    num += dx * (std::log(y[static_cast<size_t>(i)]) - my);
    den += dx * dx;
  }
  return num / den;
}

Model bench_model(int S, int dmax) {
  Model m;
  m.type = ModelType::DurationDc;
  m.transition = TransitionModel::sticky(S, 0.0);
  m.durations = {DurationSpec::uniform(std::max(1, dmax / 4), dmax)};
  ArEmission ar;
  ar.S = S;
  ar.k = 1;
  ar.coeffs = Eigen::MatrixXd::Zero(S, 1);
  for (int s = 0; s < S; ++s) ar.coeffs(s, 0) = 0.3 + 0.4 * s / std::max(1, S - 1);
  ar.noise_var = Eigen::VectorXd::Ones(S);
  m.emission = ar;
  return m;
}

int cmd_bench(int T, int S, std::vector<int> dmax_sweep, std::vector<int> s_sweep,
              int reps, const std::string& report_path) {
  if (dmax_sweep.empty()) dmax_sweep = {8, 16, 32, 64};
  if (s_sweep.empty()) s_sweep = {2, 4, 8};
  Rng rng(123);
  std::vector<double> vals(static_cast<size_t>(T));
  for (auto& v : vals) v = rng.gaussian();
  const TimeSeries series = TimeSeries::scalar(vals);

  json rep;
  rep["T"] = T;
  rep["S"] = S;
  volatile double sink = 0.0;

  json dmax_rows = json::array();
  std::vector<double> xs, reduced_times, naive_times;
  for (int dmax : dmax_sweep) {
    const Model m = bench_model(S, dmax);
    const double t_red = median_time(
        [&] { sink = dc_alpha_checksum(m, series, false); }, reps);
    const double t_naive = median_time(
        [&] { sink = dc_alpha_checksum(m, series, true); }, reps);
    xs.push_back(dmax);
    reduced_times.push_back(t_red);
    naive_times.push_back(t_naive);
    dmax_rows.push_back(json{{"d_max", dmax},
                             {"reduced_seconds", t_red},
                             {"naive_seconds", t_naive},
                             {"speedup", t_naive / t_red}});
  }
  rep["dmax_sweep"] = dmax_rows;
  rep["reduced_slope_vs_dmax"] = loglog_slope(xs, reduced_times);
  rep["naive_slope_vs_dmax"] = loglog_slope(xs, naive_times);

  json s_rows = json::array();
  std::vector<double> sxs, s_red, s_naive;
  const int fixed_dmax = 16;
  for (int s_count : s_sweep) {
    const Model m = bench_model(s_count, fixed_dmax);
    const double t_red = median_time(
        [&] { sink = dc_alpha_checksum(m, series, false); }, reps);
    const double t_naive = median_time(
        [&] { sink = dc_alpha_checksum(m, series, true); }, reps);
    sxs.push_back(s_count);
    s_red.push_back(t_red);
    s_naive.push_back(t_naive);
    s_rows.push_back(json{{"S", s_count},
                          {"reduced_seconds", t_red},
                          {"naive_seconds", t_naive}});
  }
  rep["s_sweep"] = s_rows;
  rep["reduced_slope_vs_s"] = loglog_slope(sxs, s_red);
  rep["naive_slope_vs_s"] = loglog_slope(sxs, s_naive);
  (void)sink;

  if (report_path.empty() || report_path == "-") {
    std::cout << rep.dump(2) << "\n";
  } else {
    write_file(report_path, [&](std::ostream& o) { o << rep.dump(2) << "\n"; });
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"switching time-series segmentation toolkit"};
  app.require_subcommand(1);

  std::string model_arg, out_dir = ".", boundary = "relaxed", variant;
  std::vector<std::string> data_paths;
  std::string data_path, est_path, truth_path, report_path;
  uint64_t seed = 1;
  int segments = 0, max_iter = 50, n_samples = 1, bench_T = 2000, bench_S = 4;
  int reps = 3;
  double tol = 1e-6;
  bool freeze = false, permute = false;
  std::vector<int> dmax_sweep, s_sweep;

  auto* gen = app.add_subcommand("generate", "synthesize a labeled series");
  gen->add_option("--model", model_arg,
                  "sarm-paper | sinusoid | model.json")->required();
  gen->add_option("--seed", seed);
  gen->add_option("--segments", segments);
  gen->add_option("--out", out_dir)->required();

  auto* fit = app.add_subcommand("fit", "EM parameter estimation");
  fit->add_option("--model", model_arg)->required();
  fit->add_option("--data", data_path)->required();
  fit->add_option("--max-iter", max_iter);
  fit->add_option("--tol", tol);
  fit->add_flag("--freeze-transitions", freeze);
  fit->add_option("--out", out_dir)->required();

  auto* smooth = app.add_subcommand("smooth", "posterior regime marginals");
  smooth->add_option("--model", model_arg)->required();
  smooth->add_option("--data", data_paths)->required();
  smooth->add_option("--boundary", boundary);
  smooth->add_option("--variant", variant, "slgssm: plain|dc|dc_reset|ic_reset|changepoint");
  smooth->add_option("--out", out_dir)->required();

  auto* vit = app.add_subcommand("viterbi", "most likely regime path");
  vit->add_option("--model", model_arg)->required();
  vit->add_option("--data", data_paths)->required();
  vit->add_option("--boundary", boundary);
  vit->add_option("--out", out_dir)->required();

  auto* sample = app.add_subcommand("sample", "posterior path samples (segmental)");
  sample->add_option("--model", model_arg)->required();
  sample->add_option("--data", data_path)->required();
  sample->add_option("--seed", seed);
  sample->add_option("--n", n_samples);
  sample->add_option("--boundary", boundary);
  sample->add_option("--out", out_dir)->required();

  auto* eval = app.add_subcommand("eval", "segmentation error report");
  eval->add_option("--estimated", est_path)->required();
  eval->add_option("--truth", truth_path)->required();
  eval->add_flag("--permute", permute);
  eval->add_option("--out", report_path);

  auto* bench = app.add_subcommand("bench", "complexity-scaling measurements");
  bench->add_option("--T", bench_T);
  bench->add_option("--S", bench_S);
  bench->add_option("--dmax-sweep", dmax_sweep);
  bench->add_option("--s-sweep", s_sweep);
  bench->add_option("--reps", reps);
  bench->add_option("--out", report_path);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (gen->parsed()) return cmd_generate(model_arg, seed, segments, out_dir);
    if (fit->parsed())
      return cmd_fit(model_arg, data_path, max_iter, tol, freeze, out_dir);
    if (smooth->parsed())
      return cmd_infer(true, model_arg, data_paths, boundary, variant, out_dir);
    if (vit->parsed())
      return cmd_infer(false, model_arg, data_paths, boundary, variant, out_dir);
    if (sample->parsed())
      return cmd_sample(model_arg, data_path, seed, n_samples, boundary, out_dir);
    if (eval->parsed()) return cmd_eval(est_path, truth_path, permute, report_path);
    if (bench->parsed())
      return cmd_bench(bench_T, bench_S, dmax_sweep, s_sweep, reps, report_path);
  } catch (const numerical_error& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "switchseg/io.hpp"
#include "test_util.hpp"

using namespace switchseg;
using namespace switchseg::testutil;

namespace {

void check_transition_equal(const Model& a, const Model& b) {
  CHECK((a.transition.initial - b.transition.initial).cwiseAbs().maxCoeff() <
        1e-15);
  CHECK((a.transition.switch_ - b.transition.switch_).cwiseAbs().maxCoeff() <
        1e-15);
}

}  // namespace

TEST_CASE("model JSON round-trips every family") {
  Rng rng(111);
  std::vector<Model> models;
  models.push_back(make_model(ModelType::HmmGmm, rand_transition(rng, 2), {},
                              rand_gmm(rng, 2, 2, 2, true)));
  models.push_back(make_model(ModelType::Sarm, rand_transition(rng, 3), {},
                              rand_ar(rng, 3, 2)));
  auto ar = rand_ar(rng, 2, 1);
  ar.initial_law = ArEmission::InitialLaw{0.5, 2.0};
  models.push_back(make_model(ModelType::DurationDc, rand_transition(rng, 2),
                              {rand_duration(rng, 2, 5)}, ar));
  models.push_back(make_model(ModelType::DurationIc, rand_transition(rng, 2),
                              {rand_duration(rng, 1, 4)}, rand_ar(rng, 2, 2),
                              true));
  models.push_back(make_model(
      ModelType::DurationDc, rand_transition(rng, 2),
      {rand_duration(rng, 1, 3), rand_duration(rng, 2, 4)}, rand_ar(rng, 2, 0)));
  models.push_back(make_model(ModelType::Segmental, rand_transition(rng, 2),
                              {rand_duration(rng, 2, 4)}, rand_ar(rng, 2, 1)));
  models.push_back(make_model(ModelType::Slgssm, rand_transition(rng, 2), {},
                              rand_lgss(rng, 2, 2, 1, 0.3)));

  for (const auto& m : models) {
    const json j = model_to_json(m);
    const Model back = model_from_json(j);
    CHECK(back.type == m.type);
    check_transition_equal(back, m);
    CHECK(back.durations.size() == m.durations.size());
    for (size_t i = 0; i < m.durations.size(); ++i)
      CHECK((back.durations[i].pmf - m.durations[i].pmf).cwiseAbs().maxCoeff() <
            1e-15);
    CHECK(back.cut_across_regimes == m.cut_across_regimes);
    if (const auto* a = m.ar()) {
      if (a->k > 0)
        CHECK((back.ar()->coeffs - a->coeffs).cwiseAbs().maxCoeff() == 0.0);
      CHECK((back.ar()->noise_var - a->noise_var).cwiseAbs().maxCoeff() == 0.0);
      CHECK(back.ar()->initial_law.has_value() == a->initial_law.has_value());
    }
    if (const auto* g = m.gmm()) {
      CHECK((back.gmm()->weights - g->weights).cwiseAbs().maxCoeff() < 1e-15);
      CHECK(back.gmm()->mixture_chain.has_value() == g->mixture_chain.has_value());
    }
    if (const auto* l = m.lgss()) {
      CHECK((back.lgss()->regimes[0].A - l->regimes[0].A).cwiseAbs().maxCoeff() ==
            0.0);
      CHECK((back.lgss()->regimes[1].reset_cov - l->regimes[1].reset_cov)
                .cwiseAbs()
                .maxCoeff() == 0.0);
    }
    // a second round trip drifts at most one normalization ulp
    const Model twice = model_from_json(model_to_json(back));
    CHECK((twice.transition.initial - back.transition.initial)
              .cwiseAbs()
              .maxCoeff() < 1e-15);
  }
}

TEST_CASE("unknown keys are rejected at every level") {
  Rng rng(112);
  const Model m = make_model(ModelType::Sarm, rand_transition(rng, 2), {},
                             rand_ar(rng, 2, 1));
  json j = model_to_json(m);
  j["surprise"] = 1;
  CHECK_THROWS_WITH(model_from_json(j),
                    Catch::Matchers::ContainsSubstring("surprise"));
  json j2 = model_to_json(m);
  j2["emission"]["extra"] = true;
  CHECK_THROWS_WITH(model_from_json(j2),
                    Catch::Matchers::ContainsSubstring("extra"));
}

TEST_CASE("loader enforces stochasticity and renormalizes once") {
  Rng rng(113);
  const Model m = make_model(ModelType::Sarm, rand_transition(rng, 2), {},
                             rand_ar(rng, 2, 1));
  json j = model_to_json(m);
  j["initial"][0] = 0.7;
  j["initial"][1] = 0.2;  // sums to 0.9
  CHECK_THROWS_WITH(model_from_json(j),
                    Catch::Matchers::ContainsSubstring("not stochastic"));
  // a perturbation inside the 1e-12 window is accepted and normalized away
  json j2 = model_to_json(m);
  const double eps = 5e-13;
  j2["initial"][0] = m.transition.initial(0) + eps;
  const Model back = model_from_json(j2);
  CHECK(back.transition.initial.sum() == Catch::Approx(1.0).margin(1e-15));
}

TEST_CASE("bad model types and emissions are named in errors") {
  CHECK_THROWS_WITH(model_type_from_name("mystery"),
                    Catch::Matchers::ContainsSubstring("mystery"));
  Rng rng(114);
  const Model m = make_model(ModelType::Slgssm, rand_transition(rng, 1), {},
                             rand_lgss(rng, 1, 1, 1, 0.1));
  json j = model_to_json(m);
  j["model_type"] = "sarm";  // sarm with linear-Gaussian emission
  CHECK_THROWS_AS(model_from_json(j), std::invalid_argument);
}

TEST_CASE("series CSV round-trips to the bit") {
  Rng rng(115);
  LabeledSeries ls;
  ls.series = rand_series(rng, 37, 2, 3.0);
  ls.true_regimes.assign(37, 0);
  for (int t = 0; t < 37; ++t) ls.true_regimes[static_cast<size_t>(t)] = t % 3;
  std::stringstream ss;
  write_series_csv(ls, ss);
  const auto back = read_series_csv(ss);
  REQUIRE(back.series.length() == 37);
  REQUIRE(back.series.dim() == 2);
  CHECK(back.series.data == ls.series.data);  // bitwise via %.17g
  CHECK(back.regimes == ls.true_regimes);
}

TEST_CASE("posterior and label CSV writers round-trip") {
  Rng rng(116);
  Eigen::MatrixXd gamma(4, 2);
  gamma << 0.25, 0.75, 1.0 / 3, 2.0 / 3, 0.5, 0.5, 1e-17, 1.0 - 1e-17;
  std::stringstream ss;
  write_posterior_csv(gamma, ss);
  std::string line;
  std::getline(ss, line);
  CHECK(line == "t,gamma_1,gamma_2");

  std::stringstream ls;
  write_labels_csv({2, 0, 1}, ls);
  CHECK(read_labels_csv(ls) == std::vector<int>{2, 0, 1});
}

TEST_CASE("timeline SVG emits regime bands") {
  std::vector<int> est = {0, 0, 1, 1, 1, 2};
  Eigen::VectorXd intensity(6);
  intensity << 0.9, 0.9, 0.8, 0.8, 0.8, 1.0;
  std::vector<int> truth = {0, 0, 0, 1, 1, 2};
  std::stringstream ss;
  write_timeline_svg(est, intensity, truth, ss);
  const std::string svg = ss.str();
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("<rect") != std::string::npos);
  CHECK(svg.find("</svg>") != std::string::npos);
}

TEST_CASE("malformed series files are rejected") {
  std::stringstream empty("");
  CHECK_THROWS_AS(read_series_csv(empty), std::invalid_argument);
  std::stringstream noheader("x,y\n1,2\n");
  CHECK_THROWS_AS(read_series_csv(noheader), std::invalid_argument);
  std::stringstream ragged("t,v\n1,2\n2,3,4\n");
  CHECK_THROWS_AS(read_series_csv(ragged), std::invalid_argument);
}

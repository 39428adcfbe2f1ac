#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <limits>
#include <sstream>

#include "flowlift/error.hpp"
#include "flowlift/evaluation.hpp"
#include "flowlift/metrics.hpp"
#include "flowlift/stats.hpp"
#include "test_support.hpp"

using namespace flowlift;

namespace {

FlowModel small_model() {
  NetConfig nc;
  nc.width = 16;
  nc.blocks = 1;
  nc.heads = 2;
  nc.seed = 4;
  FlowConfig fc;
  fc.epochs = 1;
  fc.batch_size = 8;
  return FlowModel(Skeleton::human17(), nc, fc);
}

std::size_t line_count(const std::string& s) {
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

}  // namespace

TEST_SUITE("evaluation") {

TEST_CASE("binomial tail examples") {
  CHECK(binomial_upper_tail(10, 0) == 1.0);
  CHECK(binomial_upper_tail(10, 11) == 0.0);
  CHECK(binomial_upper_tail(10, 10) == doctest::Approx(1.0 / 1024.0).epsilon(1e-12));
  CHECK(binomial_upper_tail(10, 8) == doctest::Approx(56.0 / 1024.0).epsilon(1e-12));
  CHECK(binomial_upper_tail(1, 1) == doctest::Approx(0.5).epsilon(1e-12));
  // Direct sum with exact binomial coefficients for n = 30.
  for (std::size_t k = 0; k <= 30; ++k) {
    double total = 0.0, choose = 1.0;
    for (std::size_t i = 0; i <= 30; ++i) {
      if (i >= k) total += choose;
      choose = choose * static_cast<double>(30 - i) / static_cast<double>(i + 1);
    }
    CHECK(binomial_upper_tail(30, k) == doctest::Approx(total / std::pow(2.0, 30)).epsilon(1e-10));
  }
  CHECK(binomial_upper_tail(2000, 1100) < 1e-5);
  CHECK(binomial_upper_tail(2000, 1000) > 0.5);
}

TEST_CASE("sign test counts and drops ties") {
  const std::vector<double> a{1, 2, 3, 4, 5, 6}, b{2, 3, 3, 5, 4, 7};
  const SignTest st = sign_test(a, b);
  CHECK(st.wins == 4);
  CHECK(st.losses == 1);
  CHECK(st.ties == 1);
  CHECK(st.p_value == doctest::Approx(6.0 / 32.0).epsilon(1e-12));
  CHECK(sign_test(a, a).p_value == 1.0);
  CHECK_THROWS_AS(sign_test(a, std::vector<double>{1.0}), Error);
}

TEST_CASE("pearson and median") {
  const std::vector<double> x{1, 2, 3, 4, 5};
  std::vector<double> y, z;
  for (double v : x) {
    y.push_back(3.0 * v - 1.0);
    z.push_back(-0.5 * v);
  }
  CHECK(pearson(x, y) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(pearson(x, z) == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(pearson(x, std::vector<double>{1, 0, 1, 0, 1}) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK_THROWS_AS(pearson(x, std::vector<double>(5, 2.0)), Error);

  CHECK(median(std::vector<double>{3, 1, 2}) == 2.0);
  CHECK(median(std::vector<double>{4, 1, 3, 2}) == 2.5);
  CHECK_THROWS_AS(median(std::vector<double>{}), Error);
}

TEST_CASE("strategy names") {
  for (Strategy s : kStrategies) CHECK(parse_strategy(to_string(s)) == s);
  CHECK(to_string(Strategy::kRpeaPose) == "rpea-pose");
  CHECK_THROWS_AS(parse_strategy("median"), Error);
}

TEST_CASE("aggregate dispatches to the matching fusion") {
  std::mt19937_64 rng(1);
  Camera cam;
  cam.fx = cam.fy = 4.0;
  HypothesisSet set;
  for (int i = 0; i < 8; ++i) set.poses.push_back(testing::random_pose(rng, 17));
  const Pose2D obs = project(testing::random_pose(rng, 17), cam);
  const RpeaPair pair;
  CHECK(aggregate(Strategy::kMean, set, obs, cam, pair) == mean_aggregate(set));
  CHECK(aggregate(Strategy::kJpmaJoint, set, obs, cam, pair) == best_select(set, obs, cam, AggregationMode::kJoint));
  CHECK(aggregate(Strategy::kJpmaPose, set, obs, cam, pair) == best_select(set, obs, cam, AggregationMode::kPose));
  CHECK(aggregate(Strategy::kRpeaJoint, set, obs, cam, pair) == rpea_jointwise(set, obs, cam, pair.joint));
  CHECK(aggregate(Strategy::kRpeaPose, set, obs, cam, pair) == rpea_posewise(set, obs, cam, pair.pose));
}

TEST_CASE("hypothesis prefixes equal smaller direct draws") {
  const FlowModel model = small_model();
  std::mt19937_64 rng(2);
  const Pose2D obs = testing::random_matrix(rng, 17, 2, 0.05);
  for (bool fha : {false, true}) {
    const HypothesisSet full = draw_hypotheses(model, obs, 12, 3, 5, fha);
    for (std::size_t n : {1, 2, 6, 12}) {
      const HypothesisSet prefix = hypothesis_prefix(full, n, fha);
      const HypothesisSet direct = draw_hypotheses(model, obs, n, 3, 5, fha);
      REQUIRE(prefix.size() == n);
      for (std::size_t i = 0; i < n; ++i) {
        CHECK((prefix.poses[i] - direct.poses[i]).cwiseAbs().maxCoeff() < 1e-9);
        if (!direct.provenance.empty()) CHECK(prefix.provenance[i] == direct.provenance[i]);
      }
    }
    CHECK_THROWS_AS(hypothesis_prefix(full, 13, fha), Error);
  }
  CHECK_THROWS_AS(draw_hypotheses(model, obs, 5, 3, 5, true), Error);
  CHECK(draw_hypotheses(model, obs, 1, 3, 5, true).size() == 1);
}

TEST_CASE("evaluation covers every strategy at every N and is deterministic") {
  const FlowModel model = small_model();
  const Dataset data = generate(PoseSampler::human17(), GeneratorConfig{}, 6, 0.0, 3);
  EvalConfig cfg;
  cfg.hypotheses = {1, 4};
  cfg.fha = true;
  cfg.seed = 2;

  setenv("FLOWLIFT_THREADS", "1", 1);
  const EvalResult serial = evaluate(model, data, cfg);
  setenv("FLOWLIFT_THREADS", "4", 1);
  const EvalResult parallel = evaluate(model, data, cfg);
  unsetenv("FLOWLIFT_THREADS");

  CHECK(serial.samples == 6);
  REQUIRE(serial.scores.size() == 6 * 2 * 5);
  REQUIRE(parallel.scores.size() == serial.scores.size());
  for (std::size_t i = 0; i < serial.scores.size(); ++i) {
    CHECK(serial.scores[i].mpjpe == parallel.scores[i].mpjpe);
    CHECK(serial.scores[i].p_mpjpe == parallel.scores[i].p_mpjpe);
  }

  const auto summary = serial.summary();
  REQUIRE(summary.size() == 2 * 5);
  for (std::size_t n : {1u, 4u})
    for (Strategy s : kStrategies) {
      const auto col = serial.column(n, s, &SampleScore::mpjpe);
      CHECK(col.size() == 6);
    }
  // With one hypothesis every strategy returns it.
  for (Strategy s : kStrategies)
    CHECK(serial.column(1, s, &SampleScore::mpjpe) == serial.column(1, Strategy::kMean, &SampleScore::mpjpe));
  for (const SummaryRow& r : summary) {
    CHECK(r.p_mpjpe <= r.mpjpe + 1e-9);
    CHECK(r.pck >= 0.0);
    CHECK(r.auc <= 1.0);
  }

  // Scores agree with metrics on an independent draw of the same hypotheses.
  const Sample& s0 = data.samples[0];
  const HypothesisSet h = draw_hypotheses(model, s0.keypoints, 4, 3, sample_seed(2, 0), true);
  CHECK(serial.column(4, Strategy::kMean, &SampleScore::mpjpe)[0] ==
        doctest::Approx(mpjpe(mean_aggregate(h), s0.pose)).epsilon(1e-9));

  std::ostringstream summary_csv, scores_csv, svg;
  write_summary_csv(summary_csv, serial);
  write_scores_csv(scores_csv, serial);
  write_summary_svg(svg, serial);
  CHECK(summary_csv.str().rfind("n,strategy,mpjpe,p_mpjpe,pck,auc\n", 0) == 0);
  CHECK(line_count(summary_csv.str()) == 1 + 10);
  CHECK(scores_csv.str().rfind("sample,n,strategy,mpjpe,p_mpjpe,pck,auc\n", 0) == 0);
  CHECK(line_count(scores_csv.str()) == 1 + 60);
  CHECK(svg.str().find("<svg") != std::string::npos);
  CHECK(svg.str().find("rpea-pose") != std::string::npos);
}

TEST_CASE("evaluation config validation") {
  EvalConfig cfg;
  cfg.validate();
  cfg.fha = true;
  CHECK_THROWS_AS(cfg.validate(), Error);  // N = 5 with flipping
  cfg.hypotheses = {1, 2, 20};
  cfg.validate();
  cfg.hypotheses = {};
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg.hypotheses = {2};
  cfg.steps = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);

  const FlowModel model = small_model();
  const Dataset animal = generate(PoseSampler::animal26(), GeneratorConfig{}, 2, 0.0, 1);
  CHECK_THROWS_AS(evaluate(model, animal, EvalConfig{}), Error);
}

TEST_CASE("sweep and benchmark produce one row per setting") {
  const FlowModel model = small_model();
  const Dataset data = generate(PoseSampler::human17(), GeneratorConfig{}, 3, 0.0, 4);
  EvalConfig cfg;
  cfg.fha = true;
  const auto rows = sweep_rpea(model, data, cfg, 4, {0.0, 100.0}, {1, 0});
  CHECK(rows.size() == 2 * 2 * 2);
  // alpha = 0 over all candidates is the mean in both modes.
  cfg.hypotheses = {4};
  const EvalResult r = evaluate(model, data, cfg);
  double mean_mpjpe = 0.0;
  for (double v : r.column(4, Strategy::kMean, &SampleScore::mpjpe)) mean_mpjpe += v / 3.0;
  for (const SweepRow& row : rows)
    if (row.alpha == 0.0 && row.top_k == 0) CHECK(row.mpjpe == doctest::Approx(mean_mpjpe).epsilon(1e-12));

  std::ostringstream csv;
  write_sweep_csv(csv, rows);
  CHECK(csv.str().rfind("alpha,topk,mode,mpjpe,p_mpjpe\n", 0) == 0);

  const auto bench = bench_sampling(model, data, {1, 3}, {1, 4}, 2, 1, 0);
  REQUIRE(bench.size() == 4);
  for (const BenchRow& b : bench) CHECK(b.seconds_per_pose > 0.0);
  std::ostringstream bcsv;
  write_bench_csv(bcsv, bench);
  CHECK(line_count(bcsv.str()) == 5);
}

TEST_CASE("shortest round-trip number formatting") {
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(2.0) == "2");
  CHECK(format_double(-1.5e-7) == "-1.5e-07");
  for (double v : {1.0 / 3.0, 123.456789, 6.02e23, std::numeric_limits<double>::min()})
    CHECK(std::stod(format_double(v)) == v);
}

}  // TEST_SUITE

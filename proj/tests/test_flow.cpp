#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <sstream>

#include "flowlift/error.hpp"
#include "flowlift/flow.hpp"
#include "flowlift/metrics.hpp"
#include "flowlift/synthdata.hpp"
#include "test_support.hpp"

using namespace flowlift;

namespace {

NetConfig tiny_net(std::size_t width = 16, std::size_t blocks = 1) {
  NetConfig c;
  c.width = width;
  c.blocks = blocks;
  c.heads = 2;
  c.seed = 3;
  return c;
}

FlowConfig quick_flow(std::size_t epochs, std::size_t batch) {
  FlowConfig f;
  f.epochs = epochs;
  f.batch_size = batch;
  f.seed = 11;
  return f;
}

TrainBatch random_batch(std::mt19937_64& rng, std::size_t b, std::size_t joints) {
  TrainBatch batch;
  batch.joints = joints;
  const auto rows = static_cast<Eigen::Index>(b * joints);
  batch.x1 = testing::random_matrix(rng, rows, 3);
  batch.c = testing::random_matrix(rng, rows, 2, 0.1);
  batch.x0 = testing::random_matrix(rng, rows, 3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < b; ++i) batch.t.push_back(u(rng));
  return batch;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("flowlift_test_" + name);
}

}  // namespace

TEST_SUITE("flow") {

TEST_CASE("interpolation path examples") {
  std::mt19937_64 rng(1);
  const RowMatrix x0 = testing::random_matrix(rng, 17, 3), x1 = testing::random_matrix(rng, 17, 3);
  CHECK(interpolate(x0, x1, 0.0) == x0);
  CHECK((interpolate(x0, x1, 1.0 - 1e-12) - x1).cwiseAbs().maxCoeff() < 1e-9);

  const RowMatrix z = RowMatrix::Zero(4, 3), two = RowMatrix::Constant(4, 3, 2.0);
  CHECK(interpolate(z, two, 0.25) == RowMatrix::Constant(4, 3, 0.5));

  CHECK_THROWS_AS(interpolate(x0, x1, 1.0), Error);
  CHECK_THROWS_AS(interpolate(x0, x1, -0.1), Error);
  CHECK_THROWS_AS(interpolate(x0, testing::random_matrix(rng, 16, 3), 0.5), Error);
}

TEST_CASE("target velocity is the path derivative") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const RowMatrix x0 = testing::random_matrix(rng, 17, 3), x1 = testing::random_matrix(rng, 17, 3);
    const RowMatrix x2 = testing::random_matrix(rng, 17, 3);
    const RowMatrix v = target_velocity(x0, x1);
    CHECK(target_velocity(x0, x0).isZero(0.0));
    const double t = std::uniform_real_distribution<>(0.0, 0.9)(rng), eps = 1e-6;
    const RowMatrix fd = (interpolate(x0, x1, t + eps) - interpolate(x0, x1, t)) / eps;
    CHECK((fd - v).cwiseAbs().maxCoeff() < 1e-9 * 1e3);  // eps amplifies rounding of O(1) values
    CHECK((target_velocity(x0, x1) + target_velocity(x1, x2) - target_velocity(x0, x2)).cwiseAbs().maxCoeff() <
          1e-15 * 8);
    CHECK((interpolate(x0, x1, t) - (x0 + t * v)).cwiseAbs().maxCoeff() < 1e-15 * 8);
  }
}

TEST_CASE("learning rate schedule") {
  const LrSchedule s;
  CHECK(s.at_epoch(0) == 1e-3);
  CHECK(s.at_epoch(1) == doctest::Approx(1e-3 * 0.98).epsilon(1e-15));
  CHECK(s.at_epoch(4) == doctest::Approx(1e-3 * std::pow(0.98, 4)).epsilon(1e-14));
  CHECK(s.at_epoch(5) == doctest::Approx(1e-3 * std::pow(0.98, 4) * 0.8).epsilon(1e-14));
  CHECK(s.at_epoch(10) == doctest::Approx(1e-3 * std::pow(0.98, 8) * 0.64).epsilon(1e-14));
  for (std::size_t e = 1; e < 40; ++e) CHECK(s.at_epoch(e) < s.at_epoch(e - 1));
}

TEST_CASE("cfm loss with forced fields") {
  std::mt19937_64 rng(3);
  const TrainBatch batch = random_batch(rng, 3, 5);
  const RowMatrix target = target_velocity(batch.x0, batch.x1);

  ag::Tape tape(false);
  const TapeField exact = [&](ag::Tape& tp, ag::Var, ag::Var, ag::Var) {
    return tp.constant(Tensor::from_matrix(target));
  };
  CHECK(cfm_loss(tape, exact, batch).value().item() == 0.0);

  const TapeField zero = [&](ag::Tape& tp, ag::Var x, ag::Var, ag::Var) {
    return tp.constant(Tensor::from_matrix(RowMatrix::Zero(x.value().rows(), 3)));
  };
  const double expect = target.squaredNorm() / (3.0 * 5.0 * 3.0);
  CHECK(cfm_loss(tape, zero, batch).value().item() == doctest::Approx(expect).epsilon(1e-14));

  // The field receives the interpolated state.
  const TapeField echo = [&](ag::Tape&, ag::Var x, ag::Var, ag::Var) { return x; };
  RowMatrix xt(15, 3);
  for (int b = 0; b < 3; ++b)
    xt.middleRows(b * 5, 5) = interpolate(batch.x0.middleRows(b * 5, 5), batch.x1.middleRows(b * 5, 5),
                                          batch.t[static_cast<std::size_t>(b)]);
  CHECK(cfm_loss(tape, echo, batch).value().item() ==
        doctest::Approx((xt - target).squaredNorm() / 45.0).epsilon(1e-14));

  TrainBatch bad = batch;
  bad.t[0] = 1.0;
  CHECK_THROWS_AS(cfm_loss(tape, zero, bad), Error);
  const TapeField nan = [&](ag::Tape& tp, ag::Var x, ag::Var, ag::Var) {
    return tp.constant(Tensor::from_matrix(RowMatrix::Constant(x.value().rows(), 3, std::nan(""))));
  };
  CHECK_THROWS_AS(cfm_loss(tape, nan, batch), Error);
}

TEST_CASE("cfm loss gradient matches finite differences at the desk configuration") {
  NetConfig cfg = tiny_net(64, 2);
  VelocityNet net(cfg, Skeleton::human17());
  std::mt19937_64 rng(4);
  const TrainBatch batch = random_batch(rng, 2, 17);
  const testing::ScalarFn fn = [&](ag::Tape& tape, const std::vector<ag::Var>& p) {
    return cfm_loss(tape, [&](ag::Tape&, ag::Var x, ag::Var c, ag::Var t) { return net.forward(p, x, c, t); },
                    batch);
  };
  const auto gc = testing::check_gradients(fn, net.params(), 1e-6, 6, 3, 1e-4);
  CHECK(gc.checked > 100);
  CHECK(gc.max_rel_error < 1e-4);

  std::vector<Tensor> grads;
  const double loss = cfm_loss_and_grad(net, batch, grads);
  CHECK(loss == cfm_loss(net, batch));
  CHECK(grads.size() == net.params().size());
}

TEST_CASE("euler integration examples") {
  std::mt19937_64 rng(5);
  const RowMatrix x0 = testing::random_matrix(rng, 17, 3), k = testing::random_matrix(rng, 17, 3);
  for (std::size_t s : {1, 2, 3, 7, 50}) {
    std::size_t calls = 0;
    const RowMatrix out = euler_integrate(
        [&](const RowMatrix&, double) {
          ++calls;
          return k;
        },
        x0, s);
    CHECK(calls == s);
    CHECK((out - (x0 + k)).cwiseAbs().maxCoeff() < 1e-12);
  }

  const StateField identity = [](const RowMatrix& x, double) { return x; };
  const RowMatrix three = euler_integrate(identity, x0, 3);
  CHECK((three - 64.0 / 27.0 * x0).cwiseAbs().maxCoeff() < 1e-14 * x0.cwiseAbs().maxCoeff() * 4);

  // Time grid {0, 1/S, ..., 1 - 1/S}.
  std::vector<double> seen;
  euler_integrate(
      [&](const RowMatrix& x, double t) {
        seen.push_back(t);
        return RowMatrix::Zero(x.rows(), x.cols());
      },
      x0, 4);
  CHECK(seen == std::vector<double>{0.0, 0.25, 0.5, 0.75});

  CHECK_THROWS_AS(euler_integrate(identity, x0, 0), Error);
  const StateField blowup = [](const RowMatrix& x, double) {
    return RowMatrix::Constant(x.rows(), x.cols(), std::numeric_limits<double>::infinity());
  };
  CHECK_THROWS_AS(euler_integrate(blowup, x0, 3), Error);
}

TEST_CASE("euler converges at first order on v(x) = x") {
  const RowMatrix x0 = RowMatrix::Ones(1, 3);
  const StateField identity = [](const RowMatrix& x, double) { return x; };
  const double e8 = std::abs(euler_integrate(identity, x0, 8)(0, 0) - M_E);
  const double e64 = std::abs(euler_integrate(identity, x0, 64)(0, 0) - M_E);
  const double order = std::log(e8 / e64) / std::log(8.0);
  CHECK(order == doctest::Approx(1.0).epsilon(0.05));
  // Closed-form recursion (1 + 1/S)^S.
  for (std::size_t s : {1, 2, 5, 10, 100})
    CHECK(euler_integrate(identity, x0, s)(0, 0) ==
          doctest::Approx(std::pow(1.0 + 1.0 / static_cast<double>(s), static_cast<double>(s))).epsilon(1e-12));
}

TEST_CASE("batched hypothesis sampling equals sequential sampling") {
  FlowModel model(Skeleton::human17(), tiny_net(32, 2), quick_flow(1, 4));
  std::mt19937_64 rng(6);
  const Pose2D cond = testing::random_matrix(rng, 17, 2, 0.1);
  const HypothesisSet set = sample_hypotheses(model, cond, 40, 3, 77);
  REQUIRE(set.size() == 40);
  double worst = 0.0;
  for (std::size_t i = 0; i < 40; ++i) {
    const Pose3D one = euler_sample(model, cond, hypothesis_noise(77, i, 17), 3);
    worst = std::max(worst, (one - set.poses[i]).cwiseAbs().maxCoeff());
  }
  CHECK(worst < 1e-12);

  const HypothesisSet single = sample_hypotheses(model, cond, 1, 3, 77);
  CHECK((single.poses[0] - euler_sample(model, cond, hypothesis_noise(77, 0, 17), 3)).cwiseAbs().maxCoeff() <
        1e-12);

  const HypothesisSet again = sample_hypotheses(model, cond, 40, 3, 77);
  for (std::size_t i = 0; i < 40; ++i) CHECK(again.poses[i] == set.poses[i]);
  CHECK(sample_hypotheses(model, cond, 40, 3, 78).poses[0] != set.poses[0]);
  // Prefix stability: the first hypotheses do not depend on N.
  const HypothesisSet five = sample_hypotheses(model, cond, 5, 3, 77);
  for (std::size_t i = 0; i < 5; ++i) CHECK((five.poses[i] - set.poses[i]).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(sample_hypotheses(model, cond, 0, 3, 77), Error);
}

TEST_CASE("hypothesis noise is standard normal") {
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < 400; ++i) {
    const RowMatrix x = hypothesis_noise(5, i, 17);
    sum += x.sum();
    sq += x.squaredNorm();
    n += static_cast<std::size_t>(x.size());
  }
  const double mean = sum / static_cast<double>(n);
  CHECK(std::abs(mean) < 0.03);
  CHECK(std::abs(sq / static_cast<double>(n) - mean * mean - 1.0) < 0.05);
  CHECK(hypothesis_noise(5, 3, 17) == hypothesis_noise(5, 3, 17));
  CHECK(hypothesis_noise(5, 3, 17) != hypothesis_noise(5, 4, 17));
}

TEST_CASE("standardizer round trip") {
  const Dataset data = generate(PoseSampler::human17(), GeneratorConfig{}, 50, 0.0, 1);
  const Standardizer st = Standardizer::fit(data);
  CHECK(st.scale.minCoeff() > 0.0);
  RowMatrix all(50 * 17, 3);
  for (Eigen::Index i = 0; i < 50; ++i) all.middleRows(i * 17, 17) = st.to_unit(data.samples[static_cast<std::size_t>(i)].pose);
  CHECK(all.colwise().mean().cwiseAbs().maxCoeff() < 1e-12);
  CHECK((st.to_mm(st.to_unit(data.samples[0].pose)) - data.samples[0].pose).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("training lowers the loss and is reproducible") {
  const Dataset data = generate(PoseSampler::human17(), GeneratorConfig{}, 200, 0.0, 2);
  FlowModel a(Skeleton::human17(), tiny_net(16, 1), quick_flow(6, 8));
  std::vector<std::size_t> epochs_seen;
  const TrainResult ra = train(a, data, [&](const EpochStats& s) { epochs_seen.push_back(s.epoch); });
  REQUIRE(ra.history.size() == 6);
  CHECK(epochs_seen == std::vector<std::size_t>{1, 2, 3, 4, 5, 6});
  for (const EpochStats& s : ra.history) CHECK(std::isfinite(s.mean_loss));
  CHECK(ra.history.back().mean_loss < ra.history.front().mean_loss);
  CHECK(ra.history[5].learning_rate == doctest::Approx(LrSchedule{}.at_epoch(5)).epsilon(1e-15));

  FlowModel b(Skeleton::human17(), tiny_net(16, 1), quick_flow(6, 8));
  const TrainResult rb = train(b, data);
  for (std::size_t e = 0; e < 6; ++e) CHECK(ra.history[e].mean_loss == rb.history[e].mean_loss);
  for (std::size_t p = 0; p < a.net().params().size(); ++p)
    CHECK(a.net().params()[p].as_matrix() == b.net().params()[p].as_matrix());

  std::ostringstream csv;
  write_loss_csv(csv, ra);
  CHECK(csv.str().rfind("epoch,mean_loss,lr\n1,", 0) == 0);
}

TEST_CASE("training rejects mismatched or empty data") {
  FlowModel m(Skeleton::human17(), tiny_net(), quick_flow(1, 4));
  const Dataset animal = generate(PoseSampler::animal26(), GeneratorConfig{}, 5, 0.0, 1);
  CHECK_THROWS_AS(train(m, animal), Error);
  Dataset empty = generate(PoseSampler::human17(), GeneratorConfig{}, 1, 0.0, 1);
  empty.samples.clear();
  CHECK_THROWS_AS(train(m, empty), Error);
  CHECK_THROWS_AS(FlowModel(Skeleton::human17(), tiny_net(), quick_flow(1, 0)), Error);
}

TEST_CASE("overfitting a single pair collapses samples onto the target") {
  const Dataset one = generate(PoseSampler::human17(), GeneratorConfig{}, 1, 0.0, 3);
  FlowConfig f = quick_flow(3000, 1);
  f.lr.initial = 3e-3;
  f.lr.decay = 0.999;
  f.lr.period_decay = 0.999;
  FlowModel m(Skeleton::human17(), tiny_net(32, 1), f);
  train(m, one);
  const Sample& s = one.samples[0];
  Pose3D mean = Pose3D::Zero(17, 3);
  for (std::uint64_t seed = 0; seed < 100; ++seed)
    mean += sample_hypotheses(m, s.keypoints, 1, 3, seed).poses[0] / 100.0;
  const double scale = s.pose.rowwise().norm().mean();
  CHECK(mpjpe(mean, s.pose) < 0.1 * scale);
}

TEST_CASE("checkpoint round trip preserves sampling") {
  const Dataset data = generate(PoseSampler::human17(), GeneratorConfig{}, 40, 0.0, 4);
  FlowModel m(Skeleton::human17(), tiny_net(16, 2), quick_flow(1, 8));
  train(m, data);
  const auto path = temp_path("ckpt.bin");
  m.save(path);
  const FlowModel loaded = FlowModel::load(path);
  std::filesystem::remove(path);
  CHECK(loaded.skeleton() == m.skeleton());
  CHECK(loaded.net().config() == m.net().config());
  CHECK(loaded.standardizer().scale == m.standardizer().scale);
  CHECK(loaded.config().steps == m.config().steps);
  const Pose2D& cond = data.samples[0].keypoints;
  const HypothesisSet a = sample_hypotheses(m, cond, 4, 3, 9), b = sample_hypotheses(loaded, cond, 4, 3, 9);
  for (std::size_t i = 0; i < 4; ++i) CHECK(a.poses[i] == b.poses[i]);

  CHECK_THROWS_AS(FlowModel::load(temp_path("missing.bin")), Error);
}

}  // TEST_SUITE

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "flowlift/checkpoint.hpp"
#include "flowlift/error.hpp"
#include "flowlift/skeleton.hpp"
#include "flowlift/velocity_net.hpp"
#include "test_support.hpp"

using namespace flowlift;

namespace {

RowMatrix permutation_matrix(const std::vector<int>& perm) {
  const auto n = static_cast<Eigen::Index>(perm.size());
  RowMatrix p = RowMatrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) p(i, perm[static_cast<std::size_t>(i)]) = 1.0;
  return p;
}

NetConfig small_config(std::size_t joints, std::size_t width = 16, std::size_t blocks = 2) {
  NetConfig c;
  c.joints = joints;
  c.width = width;
  c.blocks = blocks;
  c.heads = 2;
  c.seed = 5;
  return c;
}

// sum(v^2) over a batch, as a function of the network parameters.
testing::ScalarFn squared_output(const VelocityNet& net, const RowMatrix& x, const RowMatrix& c,
                                 const std::vector<double>& t) {
  return [&net, x, c, t](ag::Tape& tape, const std::vector<ag::Var>& p) {
    Tensor times({t.size(), 1});
    std::copy(t.begin(), t.end(), times.data().begin());
    const ag::Var out = net.forward(p, tape.constant(Tensor::from_matrix(x)),
                                    tape.constant(Tensor::from_matrix(c)), tape.constant(times));
    return ag::sum(ag::mul(out, out));
  };
}

}  // namespace

TEST_SUITE("velocity-net") {

TEST_CASE("normalized adjacency examples") {
  const std::vector<Skeleton::Edge> one{{0, 1}};
  const RowMatrix a2 = normalize_adjacency(2, one);
  CHECK((a2.array() - 0.5).abs().maxCoeff() < 1e-15);

  const RowMatrix a1 = normalize_adjacency(1, {});
  CHECK(a1.rows() == 1);
  CHECK(a1(0, 0) == 1.0);

  const std::vector<Skeleton::Edge> split{{0, 1}, {2, 3}};
  CHECK_THROWS_AS(normalize_adjacency(4, split), Error);
}

TEST_CASE("normalized adjacency is symmetric with spectral radius at most one") {
  for (const Skeleton& s : {Skeleton::human17(), Skeleton::animal26()}) {
    const RowMatrix a = normalize_adjacency(s);
    CHECK((a - a.transpose()).cwiseAbs().maxCoeff() == 0.0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
    CHECK(es.eigenvalues().cwiseAbs().maxCoeff() <= 1.0 + 1e-10);
  }
  // Path graph of 3 joints: hand-evaluated entries.
  const std::vector<Skeleton::Edge> path{{0, 1}, {1, 2}};
  const RowMatrix a = normalize_adjacency(3, path);
  CHECK(a(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(a(1, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(a(0, 1) == doctest::Approx(1.0 / std::sqrt(6.0)).epsilon(1e-15));
  CHECK(a(0, 2) == 0.0);
}

TEST_CASE("gcn layer examples") {
  std::mt19937_64 rng(1);
  const RowMatrix x = testing::random_matrix(rng, 5, 4);
  CHECK(gcn_layer(x, RowMatrix::Identity(5, 5), RowMatrix::Identity(4, 4), false) == x);

  RowMatrix two(2, 1);
  two << 1, 3;
  const RowMatrix half = RowMatrix::Constant(2, 2, 0.5);
  const RowMatrix out = gcn_layer(two, half, RowMatrix::Ones(1, 1), false);
  CHECK(out(0, 0) == 2.0);
  CHECK(out(1, 0) == 2.0);

  const RowMatrix neg = -x.cwiseAbs() - RowMatrix::Ones(5, 4);
  CHECK(gcn_layer(neg, RowMatrix::Identity(5, 5), RowMatrix::Identity(4, 4)).isZero(0.0));

  CHECK_THROWS_AS(gcn_layer(x, RowMatrix::Identity(4, 4), RowMatrix::Identity(4, 4)), Error);
  CHECK_THROWS_AS(gcn_layer(x, RowMatrix::Identity(5, 5), RowMatrix::Identity(3, 3)), Error);
}

TEST_CASE("attention examples") {
  std::mt19937_64 rng(2);
  const RowMatrix q = testing::random_matrix(rng, 6, 4);
  const RowMatrix v = testing::random_matrix(rng, 6, 4);
  const RowMatrix k_same = RowMatrix::Ones(6, 1) * testing::random_matrix(rng, 1, 4);
  const RowMatrix uniform = attention(q, k_same, v);
  const Eigen::RowVectorXd mean = v.colwise().mean();
  for (Eigen::Index i = 0; i < 6; ++i) CHECK((uniform.row(i) - mean).cwiseAbs().maxCoeff() < 1e-14);

  const RowMatrix q1 = testing::random_matrix(rng, 1, 4), k1 = testing::random_matrix(rng, 1, 4);
  const RowMatrix v1 = testing::random_matrix(rng, 1, 4);
  CHECK((attention(q1, k1, v1, 2) - v1).cwiseAbs().maxCoeff() < 1e-15);

  RowMatrix q2(2, 1), k2(2, 1), v2(2, 1);
  q2 << 10, 10;
  k2 << 1, 0;
  v2 << 3.0, -2.0;
  const double w0 = std::exp(10.0) / (std::exp(10.0) + 1.0);
  const double expect = w0 * 3.0 + (1.0 - w0) * -2.0;
  const RowMatrix out = attention(q2, k2, v2);
  CHECK(out(0, 0) == doctest::Approx(expect).epsilon(1e-14));
  CHECK(out(1, 0) == doctest::Approx(expect).epsilon(1e-14));

  CHECK_THROWS_AS(attention(q, q, v, 3), Error);
  CHECK_THROWS_AS(attention(q, testing::random_matrix(rng, 5, 4), v), Error);
}

TEST_CASE("multi-head attention concatenates independent heads") {
  std::mt19937_64 rng(3);
  const RowMatrix q = testing::random_matrix(rng, 7, 6), k = testing::random_matrix(rng, 7, 6);
  const RowMatrix v = testing::random_matrix(rng, 7, 6);
  const RowMatrix multi = attention(q, k, v, 3);
  for (int h = 0; h < 3; ++h) {
    const RowMatrix single = attention(q.middleCols(2 * h, 2), k.middleCols(2 * h, 2), v.middleCols(2 * h, 2));
    CHECK((multi.middleCols(2 * h, 2) - single).cwiseAbs().maxCoeff() < 1e-15);
  }
}

TEST_CASE("attention rows are stochastic") {
  const Skeleton h = Skeleton::human17();
  VelocityNet net(small_config(17, 16, 2), h);
  std::mt19937_64 rng(4);
  const RowMatrix x = testing::random_matrix(rng, 34, 3), c = testing::random_matrix(rng, 34, 2);
  ForwardProbe probe;
  net.predict(x, c, std::vector<double>{0.2, 0.9}, &probe);
  CHECK(probe.attention.size() == 2 * 2 * 2);  // blocks x batch x heads
  for (const RowMatrix& w : probe.attention) {
    CHECK(w.rows() == 17);
    CHECK((w.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
    CHECK(w.minCoeff() >= 0.0);
  }
}

TEST_CASE("config validation and text round trip") {
  NetConfig c = small_config(17, 64, 2);
  c.residual = true;
  std::istringstream is(c.to_text());
  CHECK(NetConfig::parse(is) == c);

  std::istringstream partial("D=32\n# comment\n");
  const NetConfig p = NetConfig::parse(partial, c);
  CHECK(p.width == 32);
  CHECK(p.blocks == c.blocks);

  std::istringstream unknown("depth=3\n");
  CHECK_THROWS_AS(NetConfig::parse(unknown), Error);

  NetConfig bad = c;
  bad.width = 30;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = c;
  bad.heads = 3;  // D/2 = 32 not divisible by 3
  CHECK_THROWS_AS(bad.validate(), Error);
  CHECK_THROWS_AS(VelocityNet(small_config(16), Skeleton::human17()), Error);
}

TEST_CASE("embedding: output shape and time-only slice") {
  const NetConfig cfg = small_config(17, 16, 1);
  VelocityNet net(cfg, Skeleton::human17());
  std::mt19937_64 rng(5);
  const RowMatrix x = testing::random_matrix(rng, 17, 3), c = testing::random_matrix(rng, 17, 2);
  ForwardProbe a, b, a2;
  net.predict(x, c, std::vector<double>{0.1}, &a);
  net.predict(x, c, std::vector<double>{0.1}, &a2);
  net.predict(x, c, std::vector<double>{0.7}, &b);
  CHECK(a.embedding.rows() == 17);
  CHECK(a.embedding.cols() == 16);
  CHECK(a.embedding == a2.embedding);

  const auto w3 = static_cast<Eigen::Index>(cfg.embed3d_width());
  const auto w2 = static_cast<Eigen::Index>(cfg.embed2d_width());
  const auto wt = static_cast<Eigen::Index>(cfg.embed_time_width());
  CHECK(a.embedding.leftCols(w3 + w2) == b.embedding.leftCols(w3 + w2));
  CHECK(a.embedding.rightCols(wt) != b.embedding.rightCols(wt));
  // Time embedding is broadcast identically to every joint.
  for (Eigen::Index j = 1; j < 17; ++j) CHECK(a.embedding.row(j).tail(wt) == a.embedding.row(0).tail(wt));

  CHECK_THROWS_AS(net.predict(x, c, std::vector<double>{1.5}), Error);
  CHECK_THROWS_AS(net.predict(x, c, std::vector<double>{0.1, 0.2}), Error);
}

TEST_CASE("forward shape and determinism") {
  VelocityNet net(small_config(17, 64, 2), Skeleton::human17());
  std::mt19937_64 rng(6);
  const RowMatrix x = testing::random_matrix(rng, 51, 3), c = testing::random_matrix(rng, 51, 2);
  const std::vector<double> t{0.0, 0.5, 1.0};
  const RowMatrix v = net.predict(x, c, t);
  CHECK(v.rows() == 51);
  CHECK(v.cols() == 3);
  CHECK(net.predict(x, c, t) == v);

  // Batch elements do not interact.
  const RowMatrix v1 = net.predict(x.middleRows(17, 17), c.middleRows(17, 17), std::vector<double>{0.5});
  CHECK((v.middleRows(17, 17) - v1).cwiseAbs().maxCoeff() < 1e-12);

  VelocityNet same(small_config(17, 64, 2), Skeleton::human17());
  CHECK(same.predict(x, c, t) == v);
}

TEST_CASE("gradient of squared output matches finite differences for every parameter") {
  for (bool residual : {false, true}) {
    NetConfig cfg = small_config(5, 8, 2);
    cfg.residual = residual;
    const std::vector<Skeleton::Edge> edges{{0, 1}, {1, 2}, {1, 3}, {3, 4}};
    VelocityNet net(cfg, normalize_adjacency(5, edges));
    std::mt19937_64 rng(7);
    const RowMatrix x = testing::random_matrix(rng, 10, 3), c = testing::random_matrix(rng, 10, 2);
    const auto gc = testing::check_gradients(squared_output(net, x, c, {0.3, 0.8}), net.params(), 1e-6, 0, 1, 1e-3);
    CHECK(gc.checked == net.parameter_count());
    CHECK(gc.max_rel_error < 1e-4);
  }
}

TEST_CASE("gradient check at the desk configuration") {
  VelocityNet net(small_config(17, 64, 2), Skeleton::human17());
  std::mt19937_64 rng(8);
  const RowMatrix x = testing::random_matrix(rng, 34, 3), c = testing::random_matrix(rng, 34, 2);
  const auto gc = testing::check_gradients(squared_output(net, x, c, {0.25, 0.6}), net.params(), 1e-6, 6, 2, 1e-3);
  CHECK(gc.checked > 100);
  CHECK(gc.max_rel_error < 1e-4);
}

TEST_CASE("permutation equivariance") {
  const Skeleton h = Skeleton::human17();
  const RowMatrix adj = normalize_adjacency(h);
  std::mt19937_64 rng(9);
  for (bool residual : {false, true}) {
    NetConfig cfg = small_config(17, 16, 2);
    cfg.residual = residual;
    VelocityNet net(cfg, adj);
    for (int trial = 0; trial < 5; ++trial) {
      std::vector<int> perm(17);
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      const RowMatrix p = permutation_matrix(perm);
      VelocityNet permuted(cfg, RowMatrix(p * adj * p.transpose()));
      const RowMatrix x = testing::random_matrix(rng, 17, 3), c = testing::random_matrix(rng, 17, 2);
      const std::vector<double> t{0.4};
      const RowMatrix expect = p * net.predict(x, c, t);
      const RowMatrix got = permuted.predict(p * x, p * c, t);
      CHECK((expect - got).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("parameters round trip through named tensors") {
  VelocityNet a(small_config(17, 16, 2), Skeleton::human17());
  NetConfig other = small_config(17, 16, 2);
  other.seed = 99;
  VelocityNet b(other, Skeleton::human17());
  std::mt19937_64 rng(10);
  const RowMatrix x = testing::random_matrix(rng, 17, 3), c = testing::random_matrix(rng, 17, 2);
  CHECK(a.predict(x, c, std::vector<double>{0.5}) != b.predict(x, c, std::vector<double>{0.5}));

  NamedTensors store;
  a.export_params(store);
  b.import_params(store);
  CHECK(a.predict(x, c, std::vector<double>{0.5}) == b.predict(x, c, std::vector<double>{0.5}));

  VelocityNet wide(small_config(17, 32, 2), Skeleton::human17());
  CHECK_THROWS_AS(wide.import_params(store), Error);
  CHECK(a.parameter_count() > 0);
  CHECK(a.param_names().size() == a.params().size());
}

}  // TEST_SUITE

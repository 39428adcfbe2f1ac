#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "flowlift/error.hpp"
#include "flowlift/synthdata.hpp"

using namespace flowlift;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::kInvalidArgument;
}

std::string serialize(const Dataset& d) {
  std::ostringstream os(std::ios::binary);
  write_dataset(os, d);
  return os.str();
}

Dataset deserialize(const std::string& bytes) {
  std::istringstream is(bytes, std::ios::binary);
  return read_dataset(is);
}

}  // namespace

TEST_SUITE("synthdata") {

TEST_CASE("zero-noise samples reproject exactly") {
  for (const PoseSampler& ps : {PoseSampler::human17(), PoseSampler::animal26()}) {
    const Dataset d = generate(ps, GeneratorConfig{}, 200, 0.0, 1);
    REQUIRE(d.size() == 200);
    for (const Sample& s : d.samples) {
      CHECK(reprojection_loss(s.pose, s.keypoints, s.camera).maxCoeff() == 0.0);
      CHECK(s.pose.row(ps.skeleton.root()).isZero(0.0));
      CHECK(s.camera.root_depth >= 4500.0);
      CHECK(s.camera.root_depth <= 5500.0);
      CHECK(s.camera.fx == 4.0);
    }
  }
}

TEST_CASE("bone lengths are preserved by forward kinematics") {
  const PoseSampler ps = PoseSampler::human17();
  const auto lengths = ps.bone_lengths();
  const auto parents = ps.skeleton.parents();
  const Dataset d = generate(ps, GeneratorConfig{}, 300, 0.0, 2);
  double worst = 0.0;
  for (const Sample& s : d.samples)
    for (std::size_t j = 0; j < 17; ++j) {
      if (parents[j] < 0) continue;
      const double len = (s.pose.row(static_cast<Eigen::Index>(j)) - s.pose.row(parents[j])).norm();
      worst = std::max(worst, std::abs(len - lengths[j]));
    }
  CHECK(worst < 1e-9);
  for (std::size_t j = 0; j < 17; ++j) CHECK((parents[j] < 0 ? lengths[j] == 0.0 : lengths[j] > 0.0));
}

TEST_CASE("zero angles give the rest pose") {
  const PoseSampler ps = PoseSampler::human17();
  const Pose3D rest = ps.forward_kinematics(std::vector<Eigen::Vector3d>(17, Eigen::Vector3d::Zero()));
  const auto parents = ps.skeleton.parents();
  for (std::size_t j = 0; j < 17; ++j) {
    if (parents[j] < 0) continue;
    const Eigen::RowVector3d bone = rest.row(static_cast<Eigen::Index>(j)) - rest.row(parents[j]);
    CHECK((bone - ps.offsets[j].transpose()).cwiseAbs().maxCoeff() < 1e-12);
  }
  CHECK_THROWS_AS(ps.forward_kinematics(std::vector<Eigen::Vector3d>(3)), Error);
}

TEST_CASE("generation is deterministic in the seed") {
  const Dataset a = generate(PoseSampler::human17(), GeneratorConfig{}, 100, 0.01, 7);
  const Dataset b = generate(PoseSampler::human17(), GeneratorConfig{}, 100, 0.01, 7);
  const Dataset c = generate(PoseSampler::human17(), GeneratorConfig{}, 100, 0.01, 8);
  CHECK(serialize(a) == serialize(b));
  CHECK(serialize(a) != serialize(c));
  // Sample i does not depend on how many samples follow it.
  const Dataset shorter = generate(PoseSampler::human17(), GeneratorConfig{}, 10, 0.01, 7);
  for (std::size_t i = 0; i < 10; ++i) CHECK(shorter.samples[i].pose == a.samples[i].pose);
}

TEST_CASE("2D noise has the requested standard deviation") {
  const Dataset d = generate(PoseSampler::human17(), GeneratorConfig{}, 1000, 0.01, 3);
  for (int c = 0; c < 2; ++c) {
    double sum = 0.0, sq = 0.0;
    std::size_t n = 0;
    for (const Sample& s : d.samples) {
      const Pose2D r = s.keypoints - project(s.pose, s.camera);
      for (Eigen::Index j = 0; j < r.rows(); ++j) {
        sum += r(j, c);
        sq += r(j, c) * r(j, c);
        ++n;
      }
    }
    const double mean = sum / static_cast<double>(n);
    const double sd = std::sqrt(sq / static_cast<double>(n) - mean * mean);
    CHECK(sd >= 0.009);
    CHECK(sd <= 0.011);
  }
}

TEST_CASE("sampled poses vary across the dataset") {
  const Dataset d = generate(PoseSampler::human17(), GeneratorConfig{}, 500, 0.0, 4);
  double spread = 0.0;
  for (const Sample& s : d.samples) spread += (s.pose - d.samples[0].pose).norm();
  CHECK(spread / 500.0 > 50.0);
}

TEST_CASE("invalid generator arguments") {
  const PoseSampler ps = PoseSampler::human17();
  CHECK(code_of([&] { generate(ps, GeneratorConfig{}, 0, 0.0, 1); }) == ErrorCode::kInvalidArgument);
  CHECK(code_of([&] { generate(ps, GeneratorConfig{}, 5, -0.1, 1); }) == ErrorCode::kInvalidArgument);
  GeneratorConfig bad;
  bad.depth_min = 6000.0;
  bad.depth_max = 5000.0;
  CHECK(code_of([&] { generate(ps, bad, 5, 0.0, 1); }) == ErrorCode::kInvalidArgument);
  GeneratorConfig close;
  close.depth_min = close.depth_max = 50.0;
  close.max_retries = 3;
  CHECK(code_of([&] { generate(ps, close, 5, 0.0, 1); }) == ErrorCode::kMaxRetries);
}

TEST_CASE("dataset serialization round trip is bit-exact") {
  Dataset d = generate(PoseSampler::animal26(), GeneratorConfig{}, 30, 0.02, 5);
  d.samples[0].pose(1, 1) = -0.0;
  const Dataset back = deserialize(serialize(d));
  CHECK(serialize(back) == serialize(d));
  CHECK(back.skeleton == d.skeleton);
  CHECK(back.noise_std == d.noise_std);
  CHECK(back.seed == d.seed);
  CHECK(std::signbit(back.samples[0].pose(1, 1)));
  for (std::size_t i = 0; i < d.size(); ++i) {
    CHECK(back.samples[i].pose == d.samples[i].pose);
    CHECK(back.samples[i].keypoints == d.samples[i].keypoints);
    CHECK(back.samples[i].camera == d.samples[i].camera);
  }
}

TEST_CASE("corrupt dataset files fail with distinct codes") {
  const Dataset d = generate(PoseSampler::human17(), GeneratorConfig{}, 4, 0.0, 6);
  const std::string bytes = serialize(d);
  CHECK(code_of([&] { deserialize(bytes.substr(0, bytes.size() - 9)); }) == ErrorCode::kTruncated);
  CHECK(code_of([&] { deserialize(bytes.substr(0, 40)); }) == ErrorCode::kTruncated);
  CHECK(code_of([&] { deserialize(bytes.substr(0, 3)); }) == ErrorCode::kMalformedHeader);

  std::string magic = bytes;
  magic[0] = 'X';
  CHECK(code_of([&] { deserialize(magic); }) == ErrorCode::kMalformedHeader);
  std::string version = bytes;
  version[8] = 9;
  CHECK(code_of([&] { deserialize(version); }) == ErrorCode::kUnsupportedVersion);

  const auto path = std::filesystem::temp_directory_path() / "flowlift_test_dataset.bin";
  save_dataset(path, d);
  CHECK(load_dataset(path, Skeleton::human17()).size() == 4);
  CHECK(code_of([&] { load_dataset(path, Skeleton::animal26()); }) == ErrorCode::kSkeletonMismatch);
  std::filesystem::remove(path);
  CHECK(code_of([&] { load_dataset(path); }) == ErrorCode::kIo);
}

TEST_CASE("split and csv export") {
  const Dataset d = generate(PoseSampler::human17(), GeneratorConfig{}, 10, 0.0, 7);
  const auto [head, tail] = d.split(3);
  CHECK(head.size() == 3);
  CHECK(tail.size() == 7);
  CHECK(tail.samples[0].pose == d.samples[3].pose);
  CHECK_THROWS_AS(d.split(11), Error);

  std::ostringstream os;
  export_csv(os, head);
  const std::string text = os.str();
  CHECK(static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')) == 1 + 3 * 17);
}

}  // TEST_SUITE

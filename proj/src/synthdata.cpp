#include "flowlift/synthdata.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <ostream>

#include <Eigen/Geometry>

#include "flowlift/binary_io.hpp"
#include "flowlift/error.hpp"
#include "flowlift/parallel.hpp"

namespace flowlift {

namespace {

constexpr std::size_t kMagicLen = sizeof(kDatasetMagic) - 1;
constexpr double kHalfPi = std::numbers::pi / 2.0;

JointLimits make_limits(AngleRange x, AngleRange y, AngleRange z) { return JointLimits{{x, y, z}}; }

// Reflection through the x = 0 plane maps a rotation (a, b, c) to (a, -b, -c).
JointLimits mirrored(const JointLimits& l) {
  const auto neg = [](AngleRange r) { return AngleRange{-r.hi, -r.lo}; };
  return make_limits(l.axes[0], neg(l.axes[1]), neg(l.axes[2]));
}

Eigen::Vector3d mirrored(const Eigen::Vector3d& v) { return {-v.x(), v.y(), v.z()}; }

Eigen::Matrix3d rotation(const Eigen::Vector3d& angles) {
  return (Eigen::AngleAxisd(angles.z(), Eigen::Vector3d::UnitZ()) *
          Eigen::AngleAxisd(angles.y(), Eigen::Vector3d::UnitY()) *
          Eigen::AngleAxisd(angles.x(), Eigen::Vector3d::UnitX()))
      .toRotationMatrix();
}

// Fills left-side entries from their right-side partners.
void mirror_fill(PoseSampler& s, const std::vector<int>& right_side) {
  for (int r : right_side) {
    const auto l = static_cast<std::size_t>(s.skeleton.mirror()[static_cast<std::size_t>(r)]);
    s.offsets[l] = mirrored(s.offsets[static_cast<std::size_t>(r)]);
    s.limits[l] = mirrored(s.limits[static_cast<std::size_t>(r)]);
  }
}

}  // namespace

PoseSampler PoseSampler::human17() {
  PoseSampler s;
  s.skeleton = Skeleton::human17();
  s.offsets.assign(17, Eigen::Vector3d::Zero());
  s.limits.assign(17, JointLimits{});
  const AngleRange none{0.0, 0.0};

  // Root orientation: yaw up to a quarter turn away from the camera.
  s.limits[0] = make_limits({-0.2, 0.2}, {-kHalfPi, kHalfPi}, {-0.1, 0.1});
  // Right leg.
  s.offsets[1] = {-130.0, 0.0, 0.0};
  s.offsets[2] = {0.0, 440.0, 0.0};
  s.offsets[3] = {0.0, 430.0, 0.0};
  s.limits[1] = make_limits({-1.6, 0.4}, {-0.3, 0.3}, {-0.2, 0.6});
  s.limits[2] = make_limits({0.0, 2.0}, none, none);
  // Spine and head.
  s.offsets[7] = {0.0, -230.0, 0.0};
  s.offsets[8] = {0.0, -250.0, 0.0};
  s.offsets[9] = {0.0, -110.0, 0.0};
  s.offsets[10] = {0.0, -120.0, 0.0};
  s.limits[7] = make_limits({-0.2, 0.6}, {-0.5, 0.5}, {-0.3, 0.3});
  s.limits[8] = make_limits({-0.2, 0.2}, {-0.3, 0.3}, {-0.2, 0.2});
  s.limits[9] = make_limits({-0.5, 0.5}, {-0.6, 0.6}, {-0.3, 0.3});
  // Right arm.
  s.offsets[14] = {-150.0, 20.0, 0.0};
  s.offsets[15] = {0.0, 280.0, 0.0};
  s.offsets[16] = {0.0, 250.0, 0.0};
  s.limits[14] = make_limits({-2.5, 0.8}, {-0.8, 0.8}, {-0.2, 2.5});
  s.limits[15] = make_limits({-2.4, 0.0}, none, none);

  mirror_fill(s, {1, 2, 3, 14, 15, 16});
  s.validate();
  return s;
}

PoseSampler PoseSampler::animal26() {
  PoseSampler s;
  s.skeleton = Skeleton::animal26();
  s.offsets.assign(26, Eigen::Vector3d::Zero());
  s.limits.assign(26, JointLimits{});
  const AngleRange none{0.0, 0.0};

  s.limits[0] = make_limits({-0.2, 0.2}, {-kHalfPi, kHalfPi}, {-0.1, 0.1});
  s.offsets[1] = {0.0, 0.0, -300.0};
  s.offsets[2] = {0.0, -150.0, -150.0};
  s.offsets[3] = {0.0, -100.0, -100.0};
  s.offsets[4] = {0.0, 50.0, -150.0};
  s.offsets[6] = {-60.0, -80.0, 0.0};
  s.offsets[7] = {0.0, 0.0, 300.0};
  s.offsets[8] = {0.0, -50.0, 150.0};
  s.offsets[9] = {0.0, 50.0, 200.0};
  s.limits[1] = make_limits({-0.2, 0.2}, {-0.3, 0.3}, {-0.1, 0.1});
  s.limits[2] = make_limits({-0.4, 0.4}, {-0.6, 0.6}, {-0.2, 0.2});
  s.limits[3] = make_limits({-0.4, 0.4}, {-0.4, 0.4}, {-0.2, 0.2});
  s.limits[7] = make_limits({-0.2, 0.2}, {-0.3, 0.3}, {-0.1, 0.1});
  s.limits[8] = make_limits({-0.6, 0.6}, {-0.8, 0.8}, none);
  // Right front leg (14-17) and right hind leg (22-25).
  s.offsets[14] = {-100.0, 50.0, 0.0};
  s.offsets[15] = {0.0, 200.0, 0.0};
  s.offsets[16] = {0.0, 180.0, 0.0};
  s.offsets[17] = {0.0, 60.0, -40.0};
  s.offsets[22] = {-100.0, 50.0, 0.0};
  s.offsets[23] = {0.0, 220.0, 0.0};
  s.offsets[24] = {0.0, 200.0, 0.0};
  s.offsets[25] = {0.0, 80.0, -40.0};
  s.limits[14] = make_limits({-0.8, 0.8}, {-0.2, 0.2}, {-0.1, 0.3});
  s.limits[15] = make_limits({0.0, 1.2}, none, none);
  s.limits[16] = make_limits({-1.0, 0.2}, none, none);
  s.limits[22] = make_limits({-0.8, 0.8}, {-0.2, 0.2}, {-0.1, 0.3});
  s.limits[23] = make_limits({-1.2, 0.0}, none, none);
  s.limits[24] = make_limits({0.0, 1.0}, none, none);

  mirror_fill(s, {6, 14, 15, 16, 17, 22, 23, 24, 25});
  s.validate();
  return s;
}

void PoseSampler::validate() const {
  const std::size_t j = skeleton.joint_count();
  require(offsets.size() == j && limits.size() == j, ErrorCode::kInvalidArgument,
          "pose sampler tables do not match the skeleton");
  for (std::size_t k = 0; k < j; ++k) {
    if (static_cast<int>(k) != skeleton.root())
      require(offsets[k].norm() > 0.0, ErrorCode::kInvalidArgument,
              "bone ending at joint " + std::to_string(k) + " has zero length");
    for (const AngleRange& r : limits[k].axes)
      require(r.lo <= r.hi && std::abs(r.lo) <= std::numbers::pi && std::abs(r.hi) <= std::numbers::pi,
              ErrorCode::kInvalidArgument, "invalid angle range at joint " + std::to_string(k));
  }
}

std::vector<double> PoseSampler::bone_lengths() const {
  std::vector<double> out(offsets.size(), 0.0);
  for (std::size_t k = 0; k < offsets.size(); ++k)
    if (static_cast<int>(k) != skeleton.root()) out[k] = offsets[k].norm();
  return out;
}

Pose3D PoseSampler::forward_kinematics(const std::vector<Eigen::Vector3d>& angles) const {
  const std::size_t j = skeleton.joint_count();
  require(angles.size() == j, ErrorCode::kShapeMismatch, "one rotation per joint expected");
  std::vector<Eigen::Matrix3d> frames(j);
  Pose3D pose = Pose3D::Zero(static_cast<Eigen::Index>(j), 3);
  for (int k : skeleton.order()) {
    const auto ku = static_cast<std::size_t>(k);
    const int p = skeleton.parents()[ku];
    if (p < 0) {
      frames[ku] = rotation(angles[ku]);
      continue;
    }
    const auto pu = static_cast<std::size_t>(p);
    pose.row(k) = pose.row(p) + (frames[pu] * offsets[ku]).transpose();
    frames[ku] = frames[pu] * rotation(angles[ku]);
  }
  return pose;
}

Pose3D PoseSampler::sample(Rng& rng) const {
  std::vector<Eigen::Vector3d> angles(limits.size());
  for (std::size_t k = 0; k < limits.size(); ++k)
    for (int a = 0; a < 3; ++a) angles[k](a) = rng.uniform(limits[k].axes[a].lo, limits[k].axes[a].hi);
  return forward_kinematics(angles);
}

std::pair<Dataset, Dataset> Dataset::split(std::size_t count) const {
  require(count <= samples.size(), ErrorCode::kInvalidArgument, "split beyond dataset size");
  Dataset head{skeleton, config, noise_std, seed, {}};
  Dataset tail = head;
  head.samples.assign(samples.begin(), samples.begin() + static_cast<std::ptrdiff_t>(count));
  tail.samples.assign(samples.begin() + static_cast<std::ptrdiff_t>(count), samples.end());
  return {std::move(head), std::move(tail)};
}

Dataset generate(const PoseSampler& sampler, const GeneratorConfig& config, std::size_t n,
                 double noise_std, std::uint64_t seed) {
  require(n >= 1, ErrorCode::kInvalidArgument, "dataset size must be >= 1");
  require(noise_std >= 0.0 && std::isfinite(noise_std), ErrorCode::kInvalidArgument,
          "noise_std must be finite and >= 0");
  require(config.focal > 0.0 && config.depth_min <= config.depth_max, ErrorCode::kInvalidArgument,
          "invalid camera configuration");
  sampler.validate();

  Dataset data{sampler.skeleton, config, noise_std, seed, std::vector<Sample>(n)};
  parallel_for(n, [&](std::size_t i) {
    Rng rng({seed, static_cast<std::uint64_t>(i)});
    for (std::size_t attempt = 0; attempt <= config.max_retries; ++attempt) {
      Sample s;
      s.pose = sampler.sample(rng);
      s.camera = Camera{config.focal, config.focal, 0.0, 0.0,
                        rng.uniform(config.depth_min, config.depth_max)};
      try {
        s.keypoints = project(s.pose, s.camera);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kBehindCamera) throw;
        continue;
      }
      for (Eigen::Index r = 0; r < s.keypoints.rows(); ++r)
        for (int c = 0; c < 2; ++c) {
          const double eps = rng.normal();
          s.keypoints(r, c) += noise_std * eps;
        }
      data.samples[i] = std::move(s);
      return;
    }
    throw Error(ErrorCode::kMaxRetries,
                "sample " + std::to_string(i) + ": pose behind camera after " +
                    std::to_string(config.max_retries) + " retries");
  });
  return data;
}

void write_dataset(std::ostream& os, const Dataset& data) {
  const Skeleton& sk = data.skeleton;
  binio::write_bytes(os, {kDatasetMagic, kMagicLen});
  binio::write_le<std::uint8_t>(os, kDatasetVersion);
  binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(sk.joint_count()));
  binio::write_le<std::uint64_t>(os, data.samples.size());
  binio::write_f64(os, data.noise_std);
  binio::write_le<std::uint64_t>(os, data.seed);
  binio::write_f64(os, data.config.focal);
  binio::write_f64(os, data.config.depth_min);
  binio::write_f64(os, data.config.depth_max);
  binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(sk.root()));
  binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(sk.edges().size()));
  for (const auto& [a, b] : sk.edges()) {
    binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(a));
    binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(b));
  }
  for (int m : sk.mirror()) binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(m));
  for (const Sample& s : data.samples) {
    for (double v : {s.camera.fx, s.camera.fy, s.camera.cx, s.camera.cy, s.camera.root_depth})
      binio::write_f64(os, v);
    for (Eigen::Index r = 0; r < s.pose.rows(); ++r)
      for (int c = 0; c < 3; ++c) binio::write_f64(os, s.pose(r, c));
    for (Eigen::Index r = 0; r < s.keypoints.rows(); ++r)
      for (int c = 0; c < 2; ++c) binio::write_f64(os, s.keypoints(r, c));
  }
  require(os.good(), ErrorCode::kIo, "failed writing dataset");
}

Dataset read_dataset(std::istream& is) {
  std::string magic;
  try {
    magic = binio::read_bytes(is, kMagicLen, "dataset magic");
  } catch (const Error&) {
    throw Error(ErrorCode::kMalformedHeader, "not a flowlift dataset (file too short)");
  }
  require(magic == std::string_view(kDatasetMagic, kMagicLen), ErrorCode::kMalformedHeader,
          "not a flowlift dataset (bad magic)");
  const auto version = binio::read_le<std::uint8_t>(is, "dataset version");
  require(version == kDatasetVersion, ErrorCode::kUnsupportedVersion,
          "unsupported dataset version " + std::to_string(version));
  const auto joints = binio::read_le<std::uint32_t>(is, "joint count");
  const auto n = binio::read_le<std::uint64_t>(is, "sample count");
  require(joints >= 1 && joints < 4096 && n >= 1 && n < (std::uint64_t{1} << 32),
          ErrorCode::kMalformedHeader, "implausible dataset dimensions");

  Dataset data;
  data.noise_std = binio::read_f64(is, "noise_std");
  data.seed = binio::read_le<std::uint64_t>(is, "seed");
  data.config.focal = binio::read_f64(is, "focal");
  data.config.depth_min = binio::read_f64(is, "depth_min");
  data.config.depth_max = binio::read_f64(is, "depth_max");
  const auto root = binio::read_le<std::uint32_t>(is, "root");
  const auto edge_count = binio::read_le<std::uint32_t>(is, "edge count");
  require(edge_count + 1 == joints, ErrorCode::kMalformedHeader, "edge count does not match J");
  std::vector<Skeleton::Edge> edges(edge_count);
  for (auto& [a, b] : edges) {
    a = static_cast<int>(binio::read_le<std::uint32_t>(is, "edges"));
    b = static_cast<int>(binio::read_le<std::uint32_t>(is, "edges"));
  }
  std::vector<int> mirror(joints);
  for (int& m : mirror) m = static_cast<int>(binio::read_le<std::uint32_t>(is, "mirror map"));
  try {
    data.skeleton = Skeleton::create(joints, std::move(edges), static_cast<int>(root), std::move(mirror));
  } catch (const Error& e) {
    throw Error(ErrorCode::kMalformedHeader, std::string("dataset skeleton invalid: ") + e.what());
  }

  data.samples.resize(static_cast<std::size_t>(n));
  const auto jj = static_cast<Eigen::Index>(joints);
  for (Sample& s : data.samples) {
    s.camera.fx = binio::read_f64(is, "camera");
    s.camera.fy = binio::read_f64(is, "camera");
    s.camera.cx = binio::read_f64(is, "camera");
    s.camera.cy = binio::read_f64(is, "camera");
    s.camera.root_depth = binio::read_f64(is, "camera");
    s.pose.resize(jj, 3);
    for (Eigen::Index r = 0; r < jj; ++r)
      for (int c = 0; c < 3; ++c) s.pose(r, c) = binio::read_f64(is, "3D pose");
    s.keypoints.resize(jj, 2);
    for (Eigen::Index r = 0; r < jj; ++r)
      for (int c = 0; c < 2; ++c) s.keypoints(r, c) = binio::read_f64(is, "2D keypoints");
  }
  return data;
}

void save_dataset(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  require(os.is_open(), ErrorCode::kIo, "cannot open '" + path.string() + "' for writing");
  write_dataset(os, data);
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(is.is_open(), ErrorCode::kIo, "cannot open dataset '" + path.string() + "'");
  return read_dataset(is);
}

Dataset load_dataset(const std::filesystem::path& path, const Skeleton& expected) {
  Dataset data = load_dataset(path);
  require(data.skeleton == expected, ErrorCode::kSkeletonMismatch,
          "dataset skeleton does not match the expected skeleton");
  return data;
}

void export_csv(std::ostream& os, const Dataset& data) {
  os << "sample,joint,x,y,z,u,v,fx,fy,cx,cy,root_depth\n";
  os.precision(17);
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const Sample& s = data.samples[i];
    for (Eigen::Index j = 0; j < s.pose.rows(); ++j) {
      os << i << ',' << j << ',' << s.pose(j, 0) << ',' << s.pose(j, 1) << ',' << s.pose(j, 2)
         << ',' << s.keypoints(j, 0) << ',' << s.keypoints(j, 1) << ',' << s.camera.fx << ','
         << s.camera.fy << ',' << s.camera.cx << ',' << s.camera.cy << ',' << s.camera.root_depth
         << '\n';
    }
  }
}

}  // namespace flowlift

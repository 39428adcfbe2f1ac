#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include <Eigen/Core>

#include "flowlift/geometry.hpp"
#include "flowlift/rng.hpp"
#include "flowlift/skeleton.hpp"

namespace flowlift {

struct AngleRange {
  double lo = 0.0;
  double hi = 0.0;
};

/// Local joint rotation limits about the x, y and z axes (radians).
struct JointLimits {
  std::array<AngleRange, 3> axes{};
};

/// Forward-kinematics pose generator.
///
/// Each joint j owns a rest offset from its parent (mm, in the parent frame)
/// and a local rotation that is applied to its children. The root's rotation
/// acts as the global body orientation. Coordinates follow the camera frame:
/// x right, y down, z away from the camera.
struct PoseSampler {
  Skeleton skeleton;
  std::vector<Eigen::Vector3d> offsets;
  std::vector<JointLimits> limits;

  static PoseSampler human17();
  static PoseSampler animal26();

  void validate() const;
  /// Bone length of the edge ending at each joint (0 for the root).
  std::vector<double> bone_lengths() const;
  /// Root-relative pose for the given per-joint (x, y, z) rotation angles.
  Pose3D forward_kinematics(const std::vector<Eigen::Vector3d>& angles) const;
  Pose3D sample(Rng& rng) const;
};

struct GeneratorConfig {
  double focal = 4.0;
  double depth_min = 4500.0;
  double depth_max = 5500.0;
  std::size_t max_retries = 100;
};

struct Sample {
  Pose2D keypoints;  // observed 2D, projection plus noise
  Pose3D pose;       // root-relative millimeters
  Camera camera;
};

struct Dataset {
  Skeleton skeleton;
  GeneratorConfig config;
  double noise_std = 0.0;
  std::uint64_t seed = 0;
  std::vector<Sample> samples;

  std::size_t size() const noexcept { return samples.size(); }
  /// First `count` samples and the rest, as two datasets sharing metadata.
  std::pair<Dataset, Dataset> split(std::size_t count) const;
};

/// Deterministic in `seed`; sample i draws from its own stream. Poses that
/// would land behind the camera are redrawn up to config.max_retries times.
Dataset generate(const PoseSampler& sampler, const GeneratorConfig& config, std::size_t n,
                 double noise_std, std::uint64_t seed);

// Binary layout (little-endian): "FLWLDSET", u8 version, u32 J, u64 n,
// f64 noise_std, u64 seed, f64 focal, f64 depth_min, f64 depth_max,
// u32 root, u32 edge count, edge pairs (u32, u32), J x u32 mirror, then per
// sample: f64 fx, fy, cx, cy, root_depth, J x 3 f64 pose, J x 2 f64 keypoints.
inline constexpr char kDatasetMagic[] = "FLWLDSET";
inline constexpr unsigned char kDatasetVersion = 1;

void write_dataset(std::ostream& os, const Dataset& data);
Dataset read_dataset(std::istream& is);
void save_dataset(const std::filesystem::path& path, const Dataset& data);
Dataset load_dataset(const std::filesystem::path& path);
/// Throws kSkeletonMismatch unless the stored skeleton equals `expected`.
Dataset load_dataset(const std::filesystem::path& path, const Skeleton& expected);

/// Human-readable dump, one row per (sample, joint).
void export_csv(std::ostream& os, const Dataset& data);

}  // namespace flowlift

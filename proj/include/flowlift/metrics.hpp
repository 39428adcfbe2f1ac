#pragma once

#include <Eigen/Core>

#include "flowlift/geometry.hpp"

namespace flowlift {

/// Similarity transform x -> scale * rotation * x + translation.
struct Similarity {
  double scale = 1.0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Pose3D apply(const Pose3D& pose) const;
};

/// Euclidean distance per joint.
Eigen::VectorXd joint_errors(const Pose3D& pred, const Pose3D& gt);

double mpjpe(const Pose3D& pred, const Pose3D& gt);

/// Least-squares similarity taking `pred` onto `gt` with a proper rotation
/// (det = +1). Throws kDegenerate if `gt` has zero spread. A zero-spread
/// `pred` yields scale 0 (every joint lands on the centroid of `gt`).
Similarity procrustes_fit(const Pose3D& pred, const Pose3D& gt);
Pose3D procrustes_align(const Pose3D& pred, const Pose3D& gt);
double p_mpjpe(const Pose3D& pred, const Pose3D& gt);

inline constexpr double kPckThresholdMm = 150.0;

/// Fraction of joints whose error is strictly below `threshold_mm`.
double pck(const Pose3D& pred, const Pose3D& gt, double threshold_mm = kPckThresholdMm);
/// Mean PCK over thresholds 5, 10, ..., 150 mm.
double auc(const Pose3D& pred, const Pose3D& gt);

}  // namespace flowlift

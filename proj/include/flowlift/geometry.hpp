#pragma once

#include <Eigen/Core>

#include "flowlift/skeleton.hpp"

namespace flowlift {

/// J x 3 joint positions in millimeters, root-relative.
using Pose3D = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
/// J x 2 joint positions in normalized image coordinates.
using Pose2D = Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor>;

/// Pinhole camera looking down +z at a root placed `root_depth` mm away.
struct Camera {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  double root_depth = 5000.0;

  friend bool operator==(const Camera&, const Camera&) = default;
};

/// u = fx * x / (Z_root + z) + cx, v = fy * y / (Z_root + z) + cy.
/// Throws kBehindCamera if any joint has non-positive depth.
Pose2D project(const Pose3D& pose, const Camera& cam);

/// Squared image-plane distance per joint between project(hyp) and `observed`.
Eigen::VectorXd reprojection_loss(const Pose3D& hyp, const Pose2D& observed, const Camera& cam);

/// Negates x and swaps left/right joints.
Pose2D flip_2d(const Pose2D& pose, const Skeleton& skel);
Pose3D flip_3d(const Pose3D& pose, const Skeleton& skel);

}  // namespace flowlift

#include "flowlift/geometry.hpp"

#include <string>

#include "flowlift/error.hpp"

namespace flowlift {

namespace {

template <typename Pose>
Pose flip_rows(const Pose& pose, const Skeleton& skel) {
  require(static_cast<std::size_t>(pose.rows()) == skel.joint_count(), ErrorCode::kShapeMismatch,
          "flip: pose has " + std::to_string(pose.rows()) + " joints, skeleton has " +
              std::to_string(skel.joint_count()));
  Pose out(pose.rows(), pose.cols());
  for (Eigen::Index j = 0; j < pose.rows(); ++j) {
    out.row(skel.mirror()[static_cast<std::size_t>(j)]) = pose.row(j);
  }
  out.col(0) = -out.col(0);
  return out;
}

}  // namespace

Pose2D project(const Pose3D& pose, const Camera& cam) {
  require(cam.fx > 0.0 && cam.fy > 0.0, ErrorCode::kInvalidArgument, "camera focal must be positive");
  Pose2D out(pose.rows(), 2);
  for (Eigen::Index j = 0; j < pose.rows(); ++j) {
    const double depth = cam.root_depth + pose(j, 2);
    require(depth > 0.0, ErrorCode::kBehindCamera,
            "joint " + std::to_string(j) + " has non-positive depth " + std::to_string(depth));
    out(j, 0) = cam.fx * pose(j, 0) / depth + cam.cx;
    out(j, 1) = cam.fy * pose(j, 1) / depth + cam.cy;
  }
  return out;
}

Eigen::VectorXd reprojection_loss(const Pose3D& hyp, const Pose2D& observed, const Camera& cam) {
  require(hyp.rows() == observed.rows(), ErrorCode::kShapeMismatch,
          "reprojection_loss: joint counts differ");
  return (project(hyp, cam) - observed).rowwise().squaredNorm();
}

Pose2D flip_2d(const Pose2D& pose, const Skeleton& skel) { return flip_rows(pose, skel); }

Pose3D flip_3d(const Pose3D& pose, const Skeleton& skel) { return flip_rows(pose, skel); }

}  // namespace flowlift

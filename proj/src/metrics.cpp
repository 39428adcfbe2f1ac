#include "flowlift/metrics.hpp"

#include <Eigen/LU>
#include <Eigen/SVD>

#include "flowlift/error.hpp"

namespace flowlift {

namespace {

void require_same_joints(const Pose3D& a, const Pose3D& b) {
  require(a.rows() == b.rows() && a.rows() > 0, ErrorCode::kShapeMismatch,
          "pose joint counts differ (" + std::to_string(a.rows()) + " vs " +
              std::to_string(b.rows()) + ")");
}

double pck_from_errors(const Eigen::VectorXd& errors, double threshold) {
  return static_cast<double>((errors.array() < threshold).count()) /
         static_cast<double>(errors.size());
}

}  // namespace

Pose3D Similarity::apply(const Pose3D& pose) const {
  Pose3D out = scale * (pose * rotation.transpose());
  out.rowwise() += translation.transpose();
  return out;
}

Eigen::VectorXd joint_errors(const Pose3D& pred, const Pose3D& gt) {
  require_same_joints(pred, gt);
  return (pred - gt).rowwise().norm();
}

double mpjpe(const Pose3D& pred, const Pose3D& gt) { return joint_errors(pred, gt).mean(); }

Similarity procrustes_fit(const Pose3D& pred, const Pose3D& gt) {
  require_same_joints(pred, gt);
  const Eigen::RowVector3d mu_pred = pred.colwise().mean();
  const Eigen::RowVector3d mu_gt = gt.colwise().mean();
  const Pose3D p = pred.rowwise() - mu_pred;
  const Pose3D g = gt.rowwise() - mu_gt;
  require(g.squaredNorm() > 0.0, ErrorCode::kDegenerate,
          "procrustes: ground truth has zero variance");

  Similarity sim;
  const double p_norm2 = p.squaredNorm();
  if (p_norm2 == 0.0) {
    sim.scale = 0.0;
    sim.translation = mu_gt.transpose();
    return sim;
  }
  // Cross-covariance maps pred onto gt; reflection is removed by flipping the
  // smallest singular direction.
  const Eigen::Matrix3d cov = g.transpose() * p;
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Vector3d d = Eigen::Vector3d::Ones();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) d(2) = -1.0;
  sim.rotation = svd.matrixU() * d.asDiagonal() * svd.matrixV().transpose();
  sim.scale = svd.singularValues().dot(d) / p_norm2;
  sim.translation = mu_gt.transpose() - sim.scale * sim.rotation * mu_pred.transpose();
  return sim;
}

Pose3D procrustes_align(const Pose3D& pred, const Pose3D& gt) {
  return procrustes_fit(pred, gt).apply(pred);
}

double p_mpjpe(const Pose3D& pred, const Pose3D& gt) {
  return mpjpe(procrustes_align(pred, gt), gt);
}

double pck(const Pose3D& pred, const Pose3D& gt, double threshold_mm) {
  return pck_from_errors(joint_errors(pred, gt), threshold_mm);
}

double auc(const Pose3D& pred, const Pose3D& gt) {
  const Eigen::VectorXd errors = joint_errors(pred, gt);
  double total = 0.0;
  constexpr int kSteps = 30;
  for (int i = 1; i <= kSteps; ++i) total += pck_from_errors(errors, 5.0 * i);
  return total / kSteps;
}

}  // namespace flowlift

#include "flowlift/aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <string>

#include "flowlift/error.hpp"
#include "flowlift/ops.hpp"
#include "flowlift/rng.hpp"

namespace flowlift {

namespace {

constexpr std::uint64_t kFlipStream = 0x464C4950ULL;

// K smallest entries of `losses` (ties to the lower index), returned in
// ascending index order so that accumulation order never depends on losses.
std::vector<std::size_t> top_k(const Eigen::VectorXd& losses, std::size_t k) {
  std::vector<std::size_t> idx(static_cast<std::size_t>(losses.size()));
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return losses(static_cast<Eigen::Index>(a)) < losses(static_cast<Eigen::Index>(b));
  });
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::vector<double> softmin_weights(const Eigen::VectorXd& losses,
                                    const std::vector<std::size_t>& chosen, double alpha) {
  std::vector<double> logits;
  logits.reserve(chosen.size());
  for (std::size_t i : chosen) logits.push_back(-alpha * losses(static_cast<Eigen::Index>(i)));
  // alpha = 0 with infinite losses would give NaN logits; treat as uniform.
  for (double& v : logits)
    if (std::isnan(v)) v = 0.0;
  return softmax(logits);
}

std::size_t argmin(const Eigen::VectorXd& losses) {
  std::size_t best = 0;
  for (Eigen::Index i = 1; i < losses.size(); ++i)
    if (losses(i) < losses(static_cast<Eigen::Index>(best))) best = static_cast<std::size_t>(i);
  return best;
}

void check_losses(const Eigen::VectorXd& losses, const std::string& where) {
  const bool any_finite = (losses.array().isFinite()).any();
  require(any_finite, ErrorCode::kNonFinite, "all reprojection losses non-finite for " + where);
}

}  // namespace

AggregationMode parse_mode(std::string_view text) {
  if (text == "joint") return AggregationMode::kJoint;
  if (text == "pose") return AggregationMode::kPose;
  throw Error(ErrorCode::kInvalidArgument, "unknown aggregation mode '" + std::string(text) + "'");
}

std::string_view to_string(AggregationMode mode) {
  return mode == AggregationMode::kJoint ? "joint" : "pose";
}

RpeaConfig RpeaConfig::defaults(AggregationMode mode) {
  return {mode == AggregationMode::kJoint ? kDefaultJointAlpha : kDefaultPoseAlpha, 0, mode};
}

std::size_t RpeaConfig::effective_k(std::size_t n) const {
  if (top_k == 0) return n;
  if (top_k > n) {
    std::cerr << "warning: top-K " << top_k << " exceeds " << n << " hypotheses; using " << n << '\n';
    return n;
  }
  return top_k;
}

void HypothesisSet::validate() const {
  require(!poses.empty(), ErrorCode::kInvalidArgument, "empty hypothesis set");
  require(provenance.empty() || provenance.size() == poses.size(), ErrorCode::kShapeMismatch,
          "provenance flags do not match the hypothesis count");
  for (const Pose3D& p : poses) {
    require(p.rows() == poses.front().rows() && p.rows() > 0, ErrorCode::kShapeMismatch,
            "hypotheses differ in joint count");
    require(p.allFinite(), ErrorCode::kNonFinite, "hypothesis contains a non-finite coordinate");
  }
}

Eigen::MatrixXd reprojection_losses(const HypothesisSet& hyps, const Pose2D& observed,
                                    const Camera& cam) {
  hyps.validate();
  Eigen::MatrixXd out(static_cast<Eigen::Index>(hyps.size()), observed.rows());
  for (std::size_t i = 0; i < hyps.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = reprojection_loss(hyps.poses[i], observed, cam).transpose();
  return out;
}

Pose3D rpea_jointwise(const HypothesisSet& hyps, const Pose2D& observed, const Camera& cam,
                      const RpeaConfig& cfg, SelectionWeights* weights) {
  require(std::isfinite(cfg.alpha) && cfg.alpha >= 0.0, ErrorCode::kInvalidArgument,
          "alpha must be finite and >= 0");
  const Eigen::MatrixXd losses = reprojection_losses(hyps, observed, cam);
  const std::size_t k = cfg.effective_k(hyps.size());
  const Eigen::Index joints = observed.rows();
  Pose3D out = Pose3D::Zero(joints, 3);
  if (weights) weights->groups.assign(static_cast<std::size_t>(joints), {});
  for (Eigen::Index j = 0; j < joints; ++j) {
    const Eigen::VectorXd lj = losses.col(j);
    check_losses(lj, "joint " + std::to_string(j));
    const auto chosen = top_k(lj, k);
    const auto w = softmin_weights(lj, chosen, cfg.alpha);
    for (std::size_t c = 0; c < chosen.size(); ++c) out.row(j) += w[c] * hyps.poses[chosen[c]].row(j);
    if (weights) weights->groups[static_cast<std::size_t>(j)] = {chosen, w};
  }
  return out;
}

Pose3D rpea_posewise(const HypothesisSet& hyps, const Pose2D& observed, const Camera& cam,
                     const RpeaConfig& cfg, SelectionWeights* weights) {
  require(std::isfinite(cfg.alpha) && cfg.alpha >= 0.0, ErrorCode::kInvalidArgument,
          "alpha must be finite and >= 0");
  const Eigen::VectorXd totals = reprojection_losses(hyps, observed, cam).rowwise().sum();
  check_losses(totals, "every pose");
  const auto chosen = top_k(totals, cfg.effective_k(hyps.size()));
  const auto w = softmin_weights(totals, chosen, cfg.alpha);
  Pose3D out = Pose3D::Zero(observed.rows(), 3);
  for (std::size_t c = 0; c < chosen.size(); ++c) out += w[c] * hyps.poses[chosen[c]];
  if (weights) weights->groups = {{chosen, w}};
  return out;
}

Pose3D rpea(const HypothesisSet& hyps, const Pose2D& observed, const Camera& cam,
            const RpeaConfig& cfg, SelectionWeights* weights) {
  return cfg.mode == AggregationMode::kJoint ? rpea_jointwise(hyps, observed, cam, cfg, weights)
                                             : rpea_posewise(hyps, observed, cam, cfg, weights);
}

Pose3D mean_aggregate(const HypothesisSet& hyps) {
  hyps.validate();
  // Same arithmetic as a uniform softmax weighting, term by term.
  const double w = 1.0 / static_cast<double>(hyps.size());
  Pose3D out = Pose3D::Zero(hyps.poses.front().rows(), 3);
  for (const Pose3D& p : hyps.poses) out += w * p;
  return out;
}

Pose3D best_select(const HypothesisSet& hyps, const Pose2D& observed, const Camera& cam,
                   AggregationMode mode) {
  const Eigen::MatrixXd losses = reprojection_losses(hyps, observed, cam);
  if (mode == AggregationMode::kPose) {
    const Eigen::VectorXd totals = losses.rowwise().sum();
    check_losses(totals, "every pose");
    return hyps.poses[argmin(totals)];
  }
  Pose3D out(observed.rows(), 3);
  for (Eigen::Index j = 0; j < observed.rows(); ++j) {
    const Eigen::VectorXd lj = losses.col(j);
    check_losses(lj, "joint " + std::to_string(j));
    out.row(j) = hyps.poses[argmin(lj)].row(j);
  }
  return out;
}

std::uint64_t fha_flipped_seed(std::uint64_t seed) { return stream_key({seed, kFlipStream}); }

HypothesisSet fha_expand(const Pose2D& observed, const Skeleton& skel,
                         const HypothesisSampler& sampler, std::size_t n_half, std::uint64_t seed) {
  require(n_half >= 1, ErrorCode::kInvalidArgument, "FHA needs at least one hypothesis per branch");
  HypothesisSet original = sampler(observed, n_half, seed);
  HypothesisSet mirrored = sampler(flip_2d(observed, skel), n_half, fha_flipped_seed(seed));
  require(original.size() == n_half && mirrored.size() == n_half, ErrorCode::kShapeMismatch,
          "sampler returned the wrong number of hypotheses");

  HypothesisSet out;
  out.seed = seed;
  out.poses = std::move(original.poses);
  out.provenance.assign(n_half, Provenance::kOriginal);
  for (const Pose3D& p : mirrored.poses) {
    out.poses.push_back(flip_3d(p, skel));
    out.provenance.push_back(Provenance::kFlipped);
  }
  out.validate();
  return out;
}

Eigen::VectorXd joint_uncertainty(const HypothesisSet& hyps) {
  hyps.validate();
  // Offsets from the first candidate keep identical sets exactly at zero.
  const Pose3D& ref = hyps.poses.front();
  const double n = static_cast<double>(hyps.size());
  Pose3D centroid = Pose3D::Zero(ref.rows(), 3);
  for (const Pose3D& p : hyps.poses) centroid += (p - ref) / n;
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(ref.rows());
  for (const Pose3D& p : hyps.poses) acc += (p - ref - centroid).rowwise().squaredNorm();
  return (acc / n).cwiseSqrt();
}

}  // namespace flowlift

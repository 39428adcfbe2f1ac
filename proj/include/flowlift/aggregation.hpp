#pragma once

#include <cstdint>
#include <functional>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "flowlift/geometry.hpp"
#include "flowlift/hypotheses.hpp"

namespace flowlift {

enum class AggregationMode { kJoint, kPose };

AggregationMode parse_mode(std::string_view text);
std::string_view to_string(AggregationMode mode);

// Defaults picked by a validation sweep (see scripts/sweep_rpea.sh). The
// pose-wise loss sums J per-joint losses, hence the smaller temperature.
inline constexpr double kDefaultJointAlpha = 1000.0;
inline constexpr double kDefaultPoseAlpha = 50.0;

struct RpeaConfig {
  double alpha = kDefaultJointAlpha;
  /// Candidates kept per joint (or per pose). 0 keeps all N; values above N
  /// are clamped to N.
  std::size_t top_k = 0;
  AggregationMode mode = AggregationMode::kJoint;

  static RpeaConfig defaults(AggregationMode mode);
  std::size_t effective_k(std::size_t n) const;
};

/// Which candidates a weighted average used and with what weight. Joint-wise
/// aggregation has one entry per joint; pose-wise has a single entry.
struct SelectionWeights {
  struct Entry {
    std::vector<std::size_t> indices;  // ascending hypothesis index
    std::vector<double> weights;
  };
  std::vector<Entry> groups;
};

/// N x J matrix of per-joint reprojection losses.
Eigen::MatrixXd reprojection_losses(const HypothesisSet& hyps, const Pose2D& observed,
                                    const Camera& cam);

/// Per joint: keep the K lowest-loss candidates (ties to the lower index),
/// weight them by softmax(-alpha * loss) and average.
Pose3D rpea_jointwise(const HypothesisSet& hyps, const Pose2D& observed, const Camera& cam,
                      const RpeaConfig& cfg, SelectionWeights* weights = nullptr);
/// Same on whole poses, scored by the sum of their per-joint losses.
Pose3D rpea_posewise(const HypothesisSet& hyps, const Pose2D& observed, const Camera& cam,
                     const RpeaConfig& cfg, SelectionWeights* weights = nullptr);
/// Dispatches on cfg.mode.
Pose3D rpea(const HypothesisSet& hyps, const Pose2D& observed, const Camera& cam,
            const RpeaConfig& cfg, SelectionWeights* weights = nullptr);

Pose3D mean_aggregate(const HypothesisSet& hyps);

/// Minimum-reprojection-loss selection per joint or per pose; ties go to the
/// lower hypothesis index.
Pose3D best_select(const HypothesisSet& hyps, const Pose2D& observed, const Camera& cam,
                   AggregationMode mode);

/// Draws `n` hypotheses for a 2D condition from the given seed.
using HypothesisSampler =
    std::function<HypothesisSet(const Pose2D& condition, std::size_t n, std::uint64_t seed)>;

/// Seed used for the mirrored branch of fha_expand.
std::uint64_t fha_flipped_seed(std::uint64_t seed);

/// `n_half` hypotheses from `observed` plus `n_half` from its mirror image,
/// the latter flipped back into the original frame.
HypothesisSet fha_expand(const Pose2D& observed, const Skeleton& skel,
                         const HypothesisSampler& sampler, std::size_t n_half, std::uint64_t seed);

/// Per joint, sqrt of the mean squared distance of the candidates from their
/// centroid (population convention).
Eigen::VectorXd joint_uncertainty(const HypothesisSet& hyps);

}  // namespace flowlift

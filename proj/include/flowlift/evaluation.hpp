#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "flowlift/aggregation.hpp"
#include "flowlift/flow.hpp"

namespace flowlift {

enum class Strategy { kMean, kJpmaJoint, kJpmaPose, kRpeaJoint, kRpeaPose };

inline constexpr std::array<Strategy, 5> kStrategies = {
    Strategy::kMean, Strategy::kJpmaJoint, Strategy::kJpmaPose, Strategy::kRpeaJoint,
    Strategy::kRpeaPose};

std::string_view to_string(Strategy s);
Strategy parse_strategy(std::string_view text);

/// RPEA settings for the two RPEA strategies; `mode` fields are ignored.
struct RpeaPair {
  RpeaConfig joint = RpeaConfig::defaults(AggregationMode::kJoint);
  RpeaConfig pose = RpeaConfig::defaults(AggregationMode::kPose);
};

/// Fuses a hypothesis set with one strategy.
Pose3D aggregate(Strategy s, const HypothesisSet& hyps, const Pose2D& observed, const Camera& cam,
                 const RpeaPair& rpea);

/// Seed for the hypotheses of dataset sample `index`.
std::uint64_t sample_seed(std::uint64_t seed, std::size_t index);

/// N hypotheses for one input. With `fha`, N/2 come from the input and N/2
/// from its mirror image (N must then be even, except N = 1 which samples the
/// input alone).
HypothesisSet draw_hypotheses(const FlowModel& model, const Pose2D& observed, std::size_t n,
                              std::size_t steps, std::uint64_t seed, bool fha);

/// First `n` hypotheses of a set drawn by draw_hypotheses with a larger count,
/// equal to drawing `n` directly up to batching round-off.
HypothesisSet hypothesis_prefix(const HypothesisSet& full, std::size_t n, bool fha);

struct EvalConfig {
  std::vector<std::size_t> hypotheses{1, 2, 5, 10, 20, 40};
  std::size_t steps = 3;
  RpeaPair rpea;
  bool fha = false;
  std::uint64_t seed = 0;
  std::size_t max_samples = 0;  // 0 evaluates the whole dataset

  void validate() const;
};

struct SampleScore {
  std::size_t sample = 0;
  std::size_t n = 0;
  Strategy strategy = Strategy::kMean;
  double mpjpe = 0.0;
  double p_mpjpe = 0.0;
  double pck = 0.0;
  double auc = 0.0;
};

struct SummaryRow {
  std::size_t n = 0;
  Strategy strategy = Strategy::kMean;
  double mpjpe = 0.0;
  double p_mpjpe = 0.0;
  double pck = 0.0;
  double auc = 0.0;
};

struct EvalResult {
  std::size_t samples = 0;
  /// Ordered by sample, then N (as configured), then strategy.
  std::vector<SampleScore> scores;

  /// Means over samples, ordered by N then strategy.
  std::vector<SummaryRow> summary() const;
  /// Per-sample values of one metric for a given (N, strategy), in sample order.
  std::vector<double> column(std::size_t n, Strategy s, double SampleScore::*metric) const;
};

/// Scores every strategy at every N on the dataset. Samples are processed in
/// parallel; results do not depend on the schedule.
EvalResult evaluate(const FlowModel& model, const Dataset& data, const EvalConfig& config);

/// Header: n,strategy,mpjpe,p_mpjpe,pck,auc
void write_summary_csv(std::ostream& os, const EvalResult& result);
/// Header: sample,n,strategy,mpjpe,p_mpjpe,pck,auc
void write_scores_csv(std::ostream& os, const EvalResult& result);
/// MPJPE and P-MPJPE against N, one line per strategy.
void write_summary_svg(std::ostream& os, const EvalResult& result);

struct SweepRow {
  double alpha = 0.0;
  std::size_t top_k = 0;  // as configured; 0 means all N
  AggregationMode mode = AggregationMode::kJoint;
  double mpjpe = 0.0;
  double p_mpjpe = 0.0;
};

/// Mean RPEA errors for every (alpha, K, mode) on one shared draw of N
/// hypotheses per sample. Only steps, fha, seed and max_samples of `config`
/// are used.
std::vector<SweepRow> sweep_rpea(const FlowModel& model, const Dataset& data, const EvalConfig& config,
                                 std::size_t n, const std::vector<double>& alphas,
                                 const std::vector<std::size_t>& top_ks);

/// Header: alpha,topk,mode,mpjpe,p_mpjpe
void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows);

struct BenchRow {
  std::size_t steps = 0;
  std::size_t n = 0;
  double seconds_per_pose = 0.0;  // median over repeats
};

/// Wall time to produce N hypotheses for one input, averaged over `inputs`
/// inputs and reported as the median of `repeats` runs. Single-threaded.
std::vector<BenchRow> bench_sampling(const FlowModel& model, const Dataset& data,
                                     const std::vector<std::size_t>& steps,
                                     const std::vector<std::size_t>& hypotheses,
                                     std::size_t inputs, std::size_t repeats, std::uint64_t seed);

/// Header: steps,n,seconds_per_pose
void write_bench_csv(std::ostream& os, const std::vector<BenchRow>& rows);

/// Shortest decimal text that round-trips a double.
std::string format_double(double v);

}  // namespace flowlift

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <vector>

#include "flowlift/autograd.hpp"
#include "flowlift/checkpoint.hpp"
#include "flowlift/geometry.hpp"
#include "flowlift/hypotheses.hpp"
#include "flowlift/synthdata.hpp"
#include "flowlift/velocity_net.hpp"

namespace flowlift {

/// Learning rate multiplied by `decay` after each epoch, except that every
/// `period`-th epoch uses `period_decay` instead.
struct LrSchedule {
  double initial = 1e-3;
  double decay = 0.98;
  double period_decay = 0.8;
  std::size_t period = 5;

  /// Rate used during the 0-based `epoch`.
  double at_epoch(std::size_t epoch) const;
};

struct FlowConfig {
  std::size_t steps = 3;  // S, Euler steps at inference
  std::size_t batch_size = 4;
  std::size_t epochs = 30;
  LrSchedule lr;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Rows are (sample, joint) pairs; `t` holds one time per sample.
struct TrainBatch {
  std::size_t joints = 0;
  RowMatrix x1;  // (B*J) x 3 targets
  RowMatrix c;   // (B*J) x 2 conditions
  RowMatrix x0;  // (B*J) x 3 source noise
  std::vector<double> t;

  std::size_t batch() const noexcept { return t.size(); }
  void validate() const;
};

/// (1 - t) x0 + t x1 for t in [0, 1).
RowMatrix interpolate(const RowMatrix& x0, const RowMatrix& x1, double t);
/// x1 - x0, the constant velocity of the straight path.
RowMatrix target_velocity(const RowMatrix& x0, const RowMatrix& x1);

/// Any velocity model expressed on a tape: (x, c, t) -> velocity.
using TapeField = std::function<ag::Var(ag::Tape&, ag::Var x, ag::Var c, ag::Var t)>;

/// Mean over batch, joints and coordinates of the squared velocity error.
ag::Var cfm_loss(ag::Tape& tape, const TapeField& field, const TrainBatch& batch);
double cfm_loss(const VelocityNet& net, const TrainBatch& batch);
/// Loss value; `grads` receives one gradient per net parameter.
double cfm_loss_and_grad(const VelocityNet& net, const TrainBatch& batch, std::vector<Tensor>& grads);

/// Per-axis affine map between millimeters and the unit-scale space the flow
/// operates in.
struct Standardizer {
  Eigen::RowVector3d mean = Eigen::RowVector3d::Zero();
  Eigen::RowVector3d scale = Eigen::RowVector3d::Ones();

  static Standardizer fit(const Dataset& data);
  RowMatrix to_unit(const RowMatrix& poses_mm) const;
  RowMatrix to_mm(const RowMatrix& poses_unit) const;
};

/// Explicit Euler over the grid {0, 1/S, ..., 1 - 1/S}; exactly S field calls.
using StateField = std::function<RowMatrix(const RowMatrix& x, double t)>;
RowMatrix euler_integrate(const StateField& field, RowMatrix x0, std::size_t steps);

/// Velocity network plus everything needed to sample in millimeters.
class FlowModel {
 public:
  FlowModel(Skeleton skeleton, NetConfig net_config, FlowConfig flow_config);

  const Skeleton& skeleton() const noexcept { return skeleton_; }
  const VelocityNet& net() const noexcept { return net_; }
  VelocityNet& net() noexcept { return net_; }
  const Standardizer& standardizer() const noexcept { return standardizer_; }
  void set_standardizer(const Standardizer& s) { standardizer_ = s; }
  const FlowConfig& config() const noexcept { return config_; }

  /// Net velocity in unit space for a batch of states sharing one condition.
  RowMatrix velocity(const RowMatrix& x_unit, const Pose2D& condition, double t) const;

  NamedTensors to_checkpoint() const;
  static FlowModel from_checkpoint(const NamedTensors& tensors);
  void save(const std::filesystem::path& path) const;
  static FlowModel load(const std::filesystem::path& path);

 private:
  Skeleton skeleton_;
  VelocityNet net_;
  Standardizer standardizer_;
  FlowConfig config_;
};

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double mean_loss = 0.0;
  double learning_rate = 0.0;
};

struct TrainResult {
  std::vector<EpochStats> history;
};

/// Fits the standardizer on `data`, then runs CFM training with Adam for
/// model.config().epochs epochs. `on_epoch` is called after every epoch.
/// Throws kNonFinite with epoch/iteration on a non-finite loss.
TrainResult train(FlowModel& model, const Dataset& data,
                  const std::function<void(const EpochStats&)>& on_epoch = {});

/// Writes epoch,mean_loss,lr rows.
void write_loss_csv(std::ostream& os, const TrainResult& result);

/// Standard-normal J x 3 noise of hypothesis `index` under `seed`.
RowMatrix hypothesis_noise(std::uint64_t seed, std::size_t index, std::size_t joints);

/// Integrates one unit-space noise draw to a pose in millimeters.
Pose3D euler_sample(const FlowModel& model, const Pose2D& condition, const RowMatrix& x0_unit,
                    std::size_t steps);

/// N hypotheses integrated together, one batched network call per step.
/// Hypothesis i starts from hypothesis_noise(seed, i, J).
HypothesisSet sample_hypotheses(const FlowModel& model, const Pose2D& condition, std::size_t n,
                                std::size_t steps, std::uint64_t seed);

}  // namespace flowlift

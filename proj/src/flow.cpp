#include "flowlift/flow.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>

#include "flowlift/adam.hpp"
#include "flowlift/error.hpp"
#include "flowlift/rng.hpp"

namespace flowlift {

namespace {

// Stream tags keep the per-purpose random streams disjoint.
constexpr std::uint64_t kShuffleStream = 0x5348554646ULL;
constexpr std::uint64_t kBatchStream = 0x4241544348ULL;
constexpr std::uint64_t kNoiseStream = 0x4E4F495345ULL;

Tensor seed_tensor(std::uint64_t seed) {
  return Tensor({2}, std::vector<double>{static_cast<double>(seed >> 32),
                                         static_cast<double>(seed & 0xFFFFFFFFULL)});
}

std::uint64_t seed_from(const Tensor& t) {
  require(t.size() == 2, ErrorCode::kMalformedHeader, "bad seed record in checkpoint");
  return (static_cast<std::uint64_t>(t[0]) << 32) | static_cast<std::uint64_t>(t[1]);
}

RowMatrix replicate_rows(const RowMatrix& block, std::size_t times) {
  RowMatrix out(block.rows() * static_cast<Eigen::Index>(times), block.cols());
  for (std::size_t i = 0; i < times; ++i)
    out.middleRows(static_cast<Eigen::Index>(i) * block.rows(), block.rows()) = block;
  return out;
}

}  // namespace

double LrSchedule::at_epoch(std::size_t epoch) const {
  double lr = initial;
  for (std::size_t e = 1; e <= epoch; ++e) lr *= (period > 0 && e % period == 0) ? period_decay : decay;
  return lr;
}

void FlowConfig::validate() const {
  require(steps >= 1, ErrorCode::kInvalidArgument, "flow config: S must be >= 1");
  require(batch_size >= 1, ErrorCode::kInvalidArgument, "flow config: batch size must be >= 1");
  require(lr.initial > 0.0 && lr.decay > 0.0 && lr.period_decay > 0.0, ErrorCode::kInvalidArgument,
          "flow config: learning rates must be positive");
}

void TrainBatch::validate() const {
  const auto rows = static_cast<Eigen::Index>(batch() * joints);
  require(joints >= 1 && !t.empty(), ErrorCode::kInvalidArgument, "empty training batch");
  require(x1.rows() == rows && x0.rows() == rows && c.rows() == rows && x1.cols() == 3 &&
              x0.cols() == 3 && c.cols() == 2,
          ErrorCode::kShapeMismatch, "training batch arrays disagree on B*J");
  for (double tv : t)
    require(tv >= 0.0 && tv < 1.0, ErrorCode::kInvalidArgument, "batch time outside [0, 1)");
}

RowMatrix interpolate(const RowMatrix& x0, const RowMatrix& x1, double t) {
  require(t >= 0.0 && t < 1.0, ErrorCode::kInvalidArgument,
          "interpolate: t = " + std::to_string(t) + " outside [0, 1)");
  require(x0.rows() == x1.rows() && x0.cols() == x1.cols(), ErrorCode::kShapeMismatch,
          "interpolate: shapes differ");
  return (1.0 - t) * x0 + t * x1;
}

RowMatrix target_velocity(const RowMatrix& x0, const RowMatrix& x1) {
  require(x0.rows() == x1.rows() && x0.cols() == x1.cols(), ErrorCode::kShapeMismatch,
          "target_velocity: shapes differ");
  return x1 - x0;
}

ag::Var cfm_loss(ag::Tape& tape, const TapeField& field, const TrainBatch& batch) {
  batch.validate();
  const auto j = static_cast<Eigen::Index>(batch.joints);
  RowMatrix xt(batch.x0.rows(), 3);
  for (std::size_t b = 0; b < batch.batch(); ++b) {
    const Eigen::Index r = static_cast<Eigen::Index>(b) * j;
    xt.middleRows(r, j) = interpolate(batch.x0.middleRows(r, j), batch.x1.middleRows(r, j), batch.t[b]);
  }
  Tensor times({batch.batch(), 1});
  std::copy(batch.t.begin(), batch.t.end(), times.data().begin());
  const ag::Var pred = field(tape, tape.constant(Tensor::from_matrix(xt)),
                             tape.constant(Tensor::from_matrix(batch.c)),
                             tape.constant(std::move(times)));
  const ag::Var target = tape.constant(Tensor::from_matrix(target_velocity(batch.x0, batch.x1)));
  const ag::Var loss = ag::mse(pred, target);
  require(std::isfinite(loss.value().item()), ErrorCode::kNonFinite, "CFM loss is not finite");
  return loss;
}

namespace {

TapeField net_field(const VelocityNet& net, const std::vector<ag::Var>& params) {
  return [&net, &params](ag::Tape&, ag::Var x, ag::Var c, ag::Var t) {
    return net.forward(params, x, c, t);
  };
}

}  // namespace

double cfm_loss(const VelocityNet& net, const TrainBatch& batch) {
  ag::Tape tape(false);
  const auto params = net.bind(tape);
  return cfm_loss(tape, net_field(net, params), batch).value().item();
}

double cfm_loss_and_grad(const VelocityNet& net, const TrainBatch& batch, std::vector<Tensor>& grads) {
  ag::Tape tape;
  const auto params = net.bind(tape);
  const ag::Var loss = cfm_loss(tape, net_field(net, params), batch);
  const ag::Gradients g = tape.backward(loss);
  grads.clear();
  grads.reserve(params.size());
  for (const ag::Var& p : params) grads.push_back(g[p]);
  return loss.value().item();
}

Standardizer Standardizer::fit(const Dataset& data) {
  require(!data.samples.empty(), ErrorCode::kInvalidArgument, "standardizer on empty dataset");
  Eigen::RowVector3d sum = Eigen::RowVector3d::Zero();
  double count = 0.0;
  for (const Sample& s : data.samples) {
    sum += s.pose.colwise().sum();
    count += static_cast<double>(s.pose.rows());
  }
  Standardizer out;
  out.mean = sum / count;
  Eigen::RowVector3d sq = Eigen::RowVector3d::Zero();
  for (const Sample& s : data.samples) sq += (s.pose.rowwise() - out.mean).colwise().squaredNorm();
  out.scale = (sq / count).cwiseSqrt();
  for (int a = 0; a < 3; ++a)
    if (!(out.scale(a) > 0.0)) out.scale(a) = 1.0;
  return out;
}

RowMatrix Standardizer::to_unit(const RowMatrix& poses_mm) const {
  return (poses_mm.rowwise() - mean).array().rowwise() / scale.array();
}

RowMatrix Standardizer::to_mm(const RowMatrix& poses_unit) const {
  RowMatrix out = poses_unit.array().rowwise() * scale.array();
  return out.rowwise() + mean;
}

RowMatrix euler_integrate(const StateField& field, RowMatrix x0, std::size_t steps) {
  require(steps >= 1, ErrorCode::kInvalidArgument, "Euler integration needs S >= 1");
  const double h = 1.0 / static_cast<double>(steps);
  RowMatrix x = std::move(x0);
  for (std::size_t k = 0; k < steps; ++k) {
    const double t = static_cast<double>(k) / static_cast<double>(steps);
    x += h * field(x, t);
    require(x.allFinite(), ErrorCode::kNonFinite,
            "non-finite state after Euler step " + std::to_string(k));
  }
  return x;
}

FlowModel::FlowModel(Skeleton skeleton, NetConfig net_config, FlowConfig flow_config)
    : skeleton_(std::move(skeleton)), net_(net_config, skeleton_), config_(flow_config) {
  config_.validate();
}

RowMatrix FlowModel::velocity(const RowMatrix& x_unit, const Pose2D& condition, double t) const {
  const auto j = static_cast<Eigen::Index>(skeleton_.joint_count());
  require(condition.rows() == j, ErrorCode::kShapeMismatch, "condition joint count mismatch");
  require(x_unit.cols() == 3 && x_unit.rows() % j == 0, ErrorCode::kShapeMismatch,
          "state must be (N*J) x 3");
  const auto n = static_cast<std::size_t>(x_unit.rows() / j);
  const std::vector<double> times(n, t);
  return net_.predict(x_unit, replicate_rows(condition, n), times);
}

NamedTensors FlowModel::to_checkpoint() const {
  NamedTensors out;
  const NetConfig& nc = net_.config();
  out.add("net.config", Tensor({5}, std::vector<double>{
                                        static_cast<double>(nc.joints), static_cast<double>(nc.width),
                                        static_cast<double>(nc.blocks), static_cast<double>(nc.heads),
                                        nc.residual ? 1.0 : 0.0}));
  out.add("net.seed", seed_tensor(nc.seed));
  out.add("flow.config",
          Tensor({7}, std::vector<double>{static_cast<double>(config_.steps),
                                          static_cast<double>(config_.batch_size),
                                          static_cast<double>(config_.epochs), config_.lr.initial,
                                          config_.lr.decay, config_.lr.period_decay,
                                          static_cast<double>(config_.lr.period)}));
  out.add("flow.seed", seed_tensor(config_.seed));
  out.add("flow.mean", Tensor({3}, std::vector<double>(standardizer_.mean.data(), standardizer_.mean.data() + 3)));
  out.add("flow.scale", Tensor({3}, std::vector<double>(standardizer_.scale.data(), standardizer_.scale.data() + 3)));

  Tensor edges({skeleton_.edges().size(), 2});
  for (std::size_t e = 0; e < skeleton_.edges().size(); ++e) {
    edges.at(e, 0) = skeleton_.edges()[e].first;
    edges.at(e, 1) = skeleton_.edges()[e].second;
  }
  out.add("skeleton.edges", std::move(edges));
  Tensor mirror({skeleton_.joint_count()});
  for (std::size_t j = 0; j < skeleton_.joint_count(); ++j) mirror[j] = skeleton_.mirror()[j];
  out.add("skeleton.mirror", std::move(mirror));
  out.add("skeleton.root", Tensor::scalar(skeleton_.root()));
  net_.export_params(out);
  return out;
}

FlowModel FlowModel::from_checkpoint(const NamedTensors& tensors) {
  const Tensor& mirror_t = tensors.get("skeleton.mirror");
  const Tensor& edges_t = tensors.get("skeleton.edges");
  std::vector<Skeleton::Edge> edges;
  for (std::size_t e = 0; e < edges_t.rows() && edges_t.size() > 0; ++e)
    edges.emplace_back(static_cast<int>(edges_t.at(e, 0)), static_cast<int>(edges_t.at(e, 1)));
  std::vector<int> mirror(mirror_t.values().begin(), mirror_t.values().end());
  const std::size_t joints = mirror.size();
  Skeleton skel = Skeleton::create(joints, std::move(edges),
                                   static_cast<int>(tensors.get("skeleton.root").item()),
                                   std::move(mirror));

  const Tensor& nc_t = tensors.get("net.config");
  require(nc_t.size() == 5, ErrorCode::kMalformedHeader, "bad net.config record");
  NetConfig nc;
  nc.joints = static_cast<std::size_t>(nc_t[0]);
  nc.width = static_cast<std::size_t>(nc_t[1]);
  nc.blocks = static_cast<std::size_t>(nc_t[2]);
  nc.heads = static_cast<std::size_t>(nc_t[3]);
  nc.residual = nc_t[4] != 0.0;
  nc.seed = seed_from(tensors.get("net.seed"));

  const Tensor& fc_t = tensors.get("flow.config");
  require(fc_t.size() == 7, ErrorCode::kMalformedHeader, "bad flow.config record");
  FlowConfig fc;
  fc.steps = static_cast<std::size_t>(fc_t[0]);
  fc.batch_size = static_cast<std::size_t>(fc_t[1]);
  fc.epochs = static_cast<std::size_t>(fc_t[2]);
  fc.lr = LrSchedule{fc_t[3], fc_t[4], fc_t[5], static_cast<std::size_t>(fc_t[6])};
  fc.seed = seed_from(tensors.get("flow.seed"));

  FlowModel model(std::move(skel), nc, fc);
  Standardizer st;
  for (int a = 0; a < 3; ++a) {
    st.mean(a) = tensors.get("flow.mean")[static_cast<std::size_t>(a)];
    st.scale(a) = tensors.get("flow.scale")[static_cast<std::size_t>(a)];
  }
  model.set_standardizer(st);
  model.net().import_params(tensors);
  return model;
}

void FlowModel::save(const std::filesystem::path& path) const { save_checkpoint(path, to_checkpoint()); }

FlowModel FlowModel::load(const std::filesystem::path& path) {
  return from_checkpoint(load_checkpoint(path));
}

TrainResult train(FlowModel& model, const Dataset& data,
                  const std::function<void(const EpochStats&)>& on_epoch) {
  require(!data.samples.empty(), ErrorCode::kInvalidArgument, "training on an empty dataset");
  require(data.skeleton == model.skeleton(), ErrorCode::kSkeletonMismatch,
          "dataset skeleton differs from the model skeleton");
  const FlowConfig& cfg = model.config();
  const std::size_t joints = model.skeleton().joint_count();
  const auto jj = static_cast<Eigen::Index>(joints);

  model.set_standardizer(Standardizer::fit(data));
  const Standardizer& st = model.standardizer();
  std::vector<RowMatrix> targets;
  targets.reserve(data.size());
  for (const Sample& s : data.samples) targets.push_back(st.to_unit(s.pose));

  VelocityNet& net = model.net();
  AdamState adam = AdamState::for_params(net.params(), AdamOptions{cfg.lr.initial});
  std::vector<std::size_t> order(data.size());
  std::vector<Tensor> grads;
  TrainResult result;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    adam.options.learning_rate = cfg.lr.at_epoch(epoch);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng({cfg.seed, kShuffleStream, epoch});
    std::shuffle(order.begin(), order.end(), shuffle_rng.engine());

    double loss_sum = 0.0;
    std::size_t iteration = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++iteration) {
      const std::size_t b = std::min(cfg.batch_size, order.size() - start);
      TrainBatch batch;
      batch.joints = joints;
      batch.x1.resize(static_cast<Eigen::Index>(b) * jj, 3);
      batch.c.resize(static_cast<Eigen::Index>(b) * jj, 2);
      batch.x0.resize(static_cast<Eigen::Index>(b) * jj, 3);
      batch.t.resize(b);
      Rng rng({cfg.seed, kBatchStream, epoch, iteration});
      for (std::size_t i = 0; i < b; ++i) {
        const std::size_t idx = order[start + i];
        const Eigen::Index r = static_cast<Eigen::Index>(i) * jj;
        batch.x1.middleRows(r, jj) = targets[idx];
        batch.c.middleRows(r, jj) = data.samples[idx].keypoints;
        for (Eigen::Index k = 0; k < jj * 3; ++k) batch.x0(r + k / 3, k % 3) = rng.normal();
        batch.t[i] = rng.uniform();
      }
      double loss = 0.0;
      try {
        loss = cfm_loss_and_grad(net, batch, grads);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kNonFinite) throw;
        throw Error(ErrorCode::kNonFinite, "training aborted at epoch " + std::to_string(epoch + 1) +
                                               ", iteration " + std::to_string(iteration) + ": " +
                                               e.what());
      }
      try {
        adam_step(net.params(), grads, adam);
      } catch (const Error& e) {
        throw Error(e.code(), "training aborted at epoch " + std::to_string(epoch + 1) +
                                  ", iteration " + std::to_string(iteration) + ": " + e.what());
      }
      loss_sum += loss * static_cast<double>(b);
    }
    EpochStats stats{epoch + 1, loss_sum / static_cast<double>(data.size()), adam.options.learning_rate};
    result.history.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  return result;
}

void write_loss_csv(std::ostream& os, const TrainResult& result) {
  os << "epoch,mean_loss,lr\n";
  os.precision(17);
  for (const EpochStats& s : result.history)
    os << s.epoch << ',' << s.mean_loss << ',' << s.learning_rate << '\n';
}

RowMatrix hypothesis_noise(std::uint64_t seed, std::size_t index, std::size_t joints) {
  Rng rng({seed, kNoiseStream, static_cast<std::uint64_t>(index)});
  RowMatrix x(static_cast<Eigen::Index>(joints), 3);
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    for (int c = 0; c < 3; ++c) x(r, c) = rng.normal();
  return x;
}

Pose3D euler_sample(const FlowModel& model, const Pose2D& condition, const RowMatrix& x0_unit,
                    std::size_t steps) {
  const RowMatrix x = euler_integrate(
      [&](const RowMatrix& state, double t) { return model.velocity(state, condition, t); },
      x0_unit, steps);
  return model.standardizer().to_mm(x);
}

HypothesisSet sample_hypotheses(const FlowModel& model, const Pose2D& condition, std::size_t n,
                                std::size_t steps, std::uint64_t seed) {
  require(n >= 1, ErrorCode::kInvalidArgument, "need at least one hypothesis");
  const std::size_t joints = model.skeleton().joint_count();
  const auto jj = static_cast<Eigen::Index>(joints);
  RowMatrix x0(static_cast<Eigen::Index>(n) * jj, 3);
  for (std::size_t i = 0; i < n; ++i)
    x0.middleRows(static_cast<Eigen::Index>(i) * jj, jj) = hypothesis_noise(seed, i, joints);
  const RowMatrix x = model.standardizer().to_mm(euler_integrate(
      [&](const RowMatrix& state, double t) { return model.velocity(state, condition, t); },
      std::move(x0), steps));

  HypothesisSet out;
  out.seed = seed;
  out.poses.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.poses.emplace_back(x.middleRows(static_cast<Eigen::Index>(i) * jj, jj));
  out.provenance.assign(n, Provenance::kOriginal);
  return out;
}

}  // namespace flowlift

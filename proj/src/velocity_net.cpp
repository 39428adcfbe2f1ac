#include "flowlift/velocity_net.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "flowlift/error.hpp"
#include "flowlift/ops.hpp"
#include "flowlift/rng.hpp"

namespace flowlift {

namespace {

// Per-block parameter slots, relative to the block's first parameter.
enum BlockSlot : std::size_t {
  kGcnW, kWq, kWk, kWv, kWo, kBo, kGamma, kBeta, kMlpW1, kMlpB1, kMlpW2, kMlpB2, kBlockSlots
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void NetConfig::validate() const {
  require(joints >= 1, ErrorCode::kInvalidArgument, "net config: J must be >= 1");
  require(width >= 4 && width % 4 == 0, ErrorCode::kInvalidArgument,
          "net config: D must be a positive multiple of 4");
  require(blocks >= 1, ErrorCode::kInvalidArgument, "net config: L must be >= 1");
  require(heads >= 1 && branch_width() % heads == 0, ErrorCode::kInvalidArgument,
          "net config: D/2 = " + std::to_string(branch_width()) + " not divisible by " +
              std::to_string(heads) + " heads");
}

NetConfig NetConfig::parse(std::istream& is, NetConfig base) {
  std::string line;
  while (std::getline(is, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, ErrorCode::kInvalidArgument,
            "model config: expected key=value, got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    std::size_t consumed = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(value, &consumed);
    } catch (const std::exception&) {
      consumed = 0;
    }
    require(consumed == value.size() && !value.empty(), ErrorCode::kInvalidArgument,
            "model config: '" + key + "' needs a non-negative integer, got '" + value + "'");
    if (key == "J") base.joints = v;
    else if (key == "D") base.width = v;
    else if (key == "L") base.blocks = v;
    else if (key == "heads") base.heads = v;
    else if (key == "seed") base.seed = v;
    else if (key == "residual") base.residual = v != 0;
    else throw Error(ErrorCode::kInvalidArgument, "model config: unknown key '" + key + "'");
  }
  base.validate();
  return base;
}

NetConfig NetConfig::parse(std::istream& is) { return parse(is, NetConfig{}); }

NetConfig NetConfig::load(const std::filesystem::path& path) { return load(path, NetConfig{}); }

NetConfig NetConfig::load(const std::filesystem::path& path, NetConfig base) {
  std::ifstream is(path);
  require(is.is_open(), ErrorCode::kIo, "cannot open model config '" + path.string() + "'");
  return parse(is, base);
}

std::string NetConfig::to_text() const {
  std::ostringstream os;
  os << "J=" << joints << "\nD=" << width << "\nL=" << blocks << "\nheads=" << heads
     << "\nseed=" << seed << "\nresidual=" << (residual ? 1 : 0) << '\n';
  return os.str();
}

RowMatrix normalize_adjacency(std::size_t joints, std::span<const Skeleton::Edge> edges) {
  const auto n = static_cast<Eigen::Index>(joints);
  require(n >= 1, ErrorCode::kInvalidArgument, "adjacency of an empty graph");
  RowMatrix a = RowMatrix::Identity(n, n);
  for (const auto& [i, j] : edges) {
    require(i >= 0 && j >= 0 && i < n && j < n && i != j, ErrorCode::kInvalidArgument,
            "adjacency: invalid edge");
    a(i, j) = 1.0;
    a(j, i) = 1.0;
  }
  // Connectivity by flood fill.
  std::vector<bool> seen(joints, false);
  std::vector<Eigen::Index> stack{0};
  seen[0] = true;
  std::size_t reached = 1;
  while (!stack.empty()) {
    const Eigen::Index i = stack.back();
    stack.pop_back();
    for (Eigen::Index j = 0; j < n; ++j) {
      if (a(i, j) != 0.0 && !seen[static_cast<std::size_t>(j)]) {
        seen[static_cast<std::size_t>(j)] = true;
        ++reached;
        stack.push_back(j);
      }
    }
  }
  require(reached == joints, ErrorCode::kInvalidArgument, "adjacency: graph is disconnected");

  const Eigen::VectorXd inv_sqrt_deg = a.rowwise().sum().array().rsqrt();
  return inv_sqrt_deg.asDiagonal() * a * inv_sqrt_deg.asDiagonal();
}

RowMatrix normalize_adjacency(const Skeleton& skel) {
  return normalize_adjacency(skel.joint_count(), skel.edges());
}

RowMatrix gcn_layer(const RowMatrix& x, const RowMatrix& adjn, const RowMatrix& w, bool activate) {
  require(adjn.rows() == adjn.cols() && adjn.cols() == x.rows() && x.cols() == w.rows(),
          ErrorCode::kShapeMismatch, "gcn_layer: shape mismatch");
  RowMatrix out = adjn * x * w;
  if (activate) out = out.cwiseMax(0.0);
  return out;
}

RowMatrix attention(const RowMatrix& q, const RowMatrix& k, const RowMatrix& v,
                    std::size_t heads) {
  require(q.rows() == k.rows() && q.rows() == v.rows() && q.cols() == k.cols() &&
              q.cols() == v.cols(),
          ErrorCode::kShapeMismatch, "attention: Q, K, V shapes differ");
  ag::Tape tape(false);
  const ag::Var out = ag::multi_head_attention(
      tape.constant(Tensor::from_matrix(q)), tape.constant(Tensor::from_matrix(k)),
      tape.constant(Tensor::from_matrix(v)), static_cast<std::size_t>(q.rows()), heads);
  return out.value().as_matrix();
}

VelocityNet::VelocityNet(NetConfig config, const Skeleton& skel)
    : VelocityNet(config, normalize_adjacency(skel)) {
  require(skel.joint_count() == config.joints, ErrorCode::kSkeletonMismatch,
          "net config J=" + std::to_string(config.joints) + " but skeleton has " +
              std::to_string(skel.joint_count()) + " joints");
}

VelocityNet::VelocityNet(NetConfig config, RowMatrix adjacency)
    : config_(config), adjacency_(std::move(adjacency)) {
  config_.validate();
  require(adjacency_.rows() == static_cast<Eigen::Index>(config_.joints) &&
              adjacency_.cols() == adjacency_.rows(),
          ErrorCode::kShapeMismatch, "adjacency does not match the joint count");
  init_params();
}

std::size_t VelocityNet::add_param(std::string name, std::vector<std::size_t> shape) {
  names_.push_back(std::move(name));
  params_.emplace_back(std::move(shape));
  return params_.size() - 1;
}

void VelocityNet::init_params() {
  const std::size_t d = config_.width;
  const std::size_t half = config_.branch_width();
  auto mlp = [&](const std::string& prefix, std::size_t in, std::size_t hidden, std::size_t out) {
    const std::size_t first = add_param(prefix + ".w1", {in, hidden});
    add_param(prefix + ".b1", {hidden});
    add_param(prefix + ".w2", {hidden, out});
    add_param(prefix + ".b2", {out});
    return first;
  };
  embed3d_ = mlp("embed3d", 3, config_.embed3d_width(), config_.embed3d_width());
  embed2d_ = mlp("embed2d", 2, config_.embed2d_width(), config_.embed2d_width());
  embedt_ = mlp("embedt", 1, config_.embed_time_width(), config_.embed_time_width());
  for (std::size_t l = 0; l < config_.blocks; ++l) {
    const std::string p = "block" + std::to_string(l);
    block_.push_back(add_param(p + ".gcn.w", {d, half}));
    add_param(p + ".attn.wq", {d, half});
    add_param(p + ".attn.wk", {d, half});
    add_param(p + ".attn.wv", {d, half});
    add_param(p + ".attn.wo", {half, half});
    add_param(p + ".attn.bo", {half});
    add_param(p + ".norm.gamma", {d});
    add_param(p + ".norm.beta", {d});
    mlp(p + ".mlp", d, d, d);
  }
  head_ = mlp("head", d, half, 3);

  // Weight matrices: uniform with fan-in scaling; biases zero; LayerNorm gain one.
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& t = params_[i];
    const std::string& name = names_[i];
    if (name.ends_with(".gamma")) {
      for (double& v : t.data()) v = 1.0;
    } else if (t.rank() == 2) {
      const double bound = std::sqrt(6.0 / static_cast<double>(t.dim(0)));
      Rng rng({config_.seed, static_cast<std::uint64_t>(i)});
      for (double& v : t.data()) v = rng.uniform(-bound, bound);
    }
  }
}

std::size_t VelocityNet::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor& t : params_) n += t.size();
  return n;
}

void VelocityNet::export_params(NamedTensors& out) const {
  for (std::size_t i = 0; i < params_.size(); ++i) out.add("net." + names_[i], params_[i]);
}

void VelocityNet::import_params(const NamedTensors& in) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Tensor& t = in.get("net." + names_[i]);
    require(t.same_shape(params_[i]), ErrorCode::kShapeMismatch,
            "parameter '" + names_[i] + "' has shape " + t.shape_string() + ", expected " +
                params_[i].shape_string());
    params_[i] = t;
  }
}

std::vector<ag::Var> VelocityNet::bind(ag::Tape& tape) const {
  std::vector<ag::Var> vars;
  vars.reserve(params_.size());
  for (const Tensor& t : params_) vars.push_back(tape.leaf(t, true));
  return vars;
}

ag::Var VelocityNet::mlp2(std::span<const ag::Var> p, std::size_t first, ag::Var x) const {
  const ag::Var hidden = ag::relu(ag::linear(x, p[first], p[first + 1]));
  return ag::linear(hidden, p[first + 2], p[first + 3]);
}

ag::Var VelocityNet::embed(std::span<const ag::Var> p, ag::Var x, ag::Var c, ag::Var t) const {
  require(p.size() == params_.size(), ErrorCode::kInvalidArgument, "wrong number of bound params");
  const std::size_t j = config_.joints;
  const Tensor& xv = x.value();
  require(xv.cols() == 3 && c.value().cols() == 2 && xv.rows() == c.value().rows() &&
              xv.rows() % j == 0 && t.value().cols() == 1 &&
              t.value().rows() * j == xv.rows(),
          ErrorCode::kShapeMismatch,
          "velocity net inputs: x " + xv.shape_string() + ", c " + c.value().shape_string() +
              ", t " + t.value().shape_string() + " for J=" + std::to_string(j));
  for (double tv : t.value().data())
    require(tv >= 0.0 && tv <= 1.0, ErrorCode::kInvalidArgument, "time outside [0, 1]");
  const ag::Var parts[] = {mlp2(p, embed3d_, x), mlp2(p, embed2d_, c),
                           ag::repeat_rows(mlp2(p, embedt_, t), j)};
  return ag::concat_cols(parts);
}

ag::Var VelocityNet::forward(std::span<const ag::Var> p, ag::Var x, ag::Var c, ag::Var t,
                             ForwardProbe* probe) const {
  ag::Var features = embed(p, x, c, t);
  if (probe) {
    probe->embedding = features.value().as_matrix();
    probe->block_outputs.clear();
    probe->attention.clear();
  }
  const std::size_t j = config_.joints;
  for (std::size_t l = 0; l < config_.blocks; ++l) {
    const std::size_t b = block_[l];
    const ag::Var local = ag::relu(ag::graph_mix(ag::matmul(features, p[b + kGcnW]), adjacency_));
    const ag::Var q = ag::matmul(features, p[b + kWq]);
    const ag::Var k = ag::matmul(features, p[b + kWk]);
    const ag::Var v = ag::matmul(features, p[b + kWv]);
    std::vector<RowMatrix> weights;
    const ag::Var mixed = ag::multi_head_attention(q, k, v, j, config_.heads,
                                                   probe ? &weights : nullptr);
    const ag::Var global = ag::linear(mixed, p[b + kWo], p[b + kBo]);
    const ag::Var both[] = {local, global};
    const ag::Var normed = ag::layer_norm_rows(ag::concat_cols(both), p[b + kGamma], p[b + kBeta]);
    ag::Var out = mlp2(p, b + kMlpW1, normed);
    if (config_.residual) out = ag::add(out, features);
    require(out.value().all_finite(), ErrorCode::kNonFinite,
            "non-finite activation in block " + std::to_string(l));
    if (probe) {
      probe->block_outputs.push_back(out.value().as_matrix());
      for (auto& w : weights) probe->attention.push_back(std::move(w));
    }
    features = out;
  }
  const ag::Var velocity = mlp2(p, head_, features);
  require(velocity.value().all_finite(), ErrorCode::kNonFinite, "non-finite velocity from head");
  return velocity;
}

RowMatrix VelocityNet::predict(const RowMatrix& x, const RowMatrix& c, std::span<const double> t,
                               ForwardProbe* probe) const {
  ag::Tape tape(false);
  const auto p = bind(tape);
  Tensor times({t.size(), 1});
  std::copy(t.begin(), t.end(), times.data().begin());
  const ag::Var out = forward(p, tape.constant(Tensor::from_matrix(x)),
                              tape.constant(Tensor::from_matrix(c)), tape.constant(std::move(times)),
                              probe);
  return out.value().as_matrix();
}

}  // namespace flowlift

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "flowlift/autograd.hpp"
#include "flowlift/checkpoint.hpp"
#include "flowlift/skeleton.hpp"
#include "flowlift/tensor.hpp"

namespace flowlift {

/// Architecture hyperparameters. Plain `key=value` text on disk.
struct NetConfig {
  std::size_t joints = 17;
  std::size_t width = 64;  // fused per-joint feature width D
  std::size_t blocks = 2;  // L
  std::size_t heads = 4;
  std::uint64_t seed = 0;
  bool residual = false;

  /// Throws kInvalidArgument unless width is a positive multiple of 4 and
  /// width / 2 is divisible by heads.
  void validate() const;

  std::size_t embed3d_width() const { return width / 4; }
  std::size_t embed2d_width() const { return width / 2; }
  std::size_t embed_time_width() const { return width - embed3d_width() - embed2d_width(); }
  std::size_t branch_width() const { return width / 2; }

  /// Reads keys J, D, L, heads, seed, residual; unknown keys are errors and
  /// missing keys keep the values already in `base`.
  static NetConfig parse(std::istream& is, NetConfig base);
  static NetConfig parse(std::istream& is);
  static NetConfig load(const std::filesystem::path& path, NetConfig base);
  static NetConfig load(const std::filesystem::path& path);
  std::string to_text() const;

  friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

/// Symmetric normalization D^-1/2 (A + I) D^-1/2 of the skeleton graph.
RowMatrix normalize_adjacency(const Skeleton& skel);
/// Same for a raw edge list; throws kInvalidArgument if the graph is disconnected.
RowMatrix normalize_adjacency(std::size_t joints, std::span<const Skeleton::Edge> edges);

/// relu(adjn * x * w); `activate = false` returns the pre-activation.
RowMatrix gcn_layer(const RowMatrix& x, const RowMatrix& adjn, const RowMatrix& w,
                    bool activate = true);

/// softmax(q k^T / sqrt(d)) v, split into `heads` column groups and concatenated.
RowMatrix attention(const RowMatrix& q, const RowMatrix& k, const RowMatrix& v,
                    std::size_t heads = 1);

/// Intermediate values exposed for tests.
struct ForwardProbe {
  RowMatrix embedding;                   // (B*J) x D concatenation fed to block 0
  std::vector<RowMatrix> block_outputs;  // one per block
  std::vector<RowMatrix> attention;      // per block, per batch element, per head
};

/// Conditional velocity field over per-joint features.
///
/// Inputs are batched row-wise: `x` is (B*J) x 3, `c` is (B*J) x 2 and `t`
/// is B x 1. Every weight is shared across joints; joints interact only
/// through the graph mixing and the attention.
class VelocityNet {
 public:
  VelocityNet(NetConfig config, const Skeleton& skel);
  /// Uses a caller-supplied normalized adjacency instead of a skeleton.
  VelocityNet(NetConfig config, RowMatrix adjacency);

  const NetConfig& config() const noexcept { return config_; }
  const RowMatrix& adjacency() const noexcept { return adjacency_; }

  const std::vector<Tensor>& params() const noexcept { return params_; }
  std::vector<Tensor>& params() noexcept { return params_; }
  const std::vector<std::string>& param_names() const noexcept { return names_; }
  std::size_t parameter_count() const;

  /// Stores tensors under "net.<name>".
  void export_params(NamedTensors& out) const;
  /// Loads tensors written by export_params; shapes must match.
  void import_params(const NamedTensors& in);

  /// Pushes all parameters on `tape` as gradient-carrying leaves.
  std::vector<ag::Var> bind(ag::Tape& tape) const;

  ag::Var embed(std::span<const ag::Var> p, ag::Var x, ag::Var c, ag::Var t) const;
  ag::Var forward(std::span<const ag::Var> p, ag::Var x, ag::Var c, ag::Var t,
                  ForwardProbe* probe = nullptr) const;

  /// Inference without gradient recording. `t` holds one time per batch element.
  RowMatrix predict(const RowMatrix& x, const RowMatrix& c, std::span<const double> t,
                    ForwardProbe* probe = nullptr) const;

 private:
  void init_params();
  std::size_t add_param(std::string name, std::vector<std::size_t> shape);
  ag::Var mlp2(std::span<const ag::Var> p, std::size_t first, ag::Var x) const;

  NetConfig config_;
  RowMatrix adjacency_;
  std::vector<Tensor> params_;
  std::vector<std::string> names_;
  // Offsets into params_.
  std::size_t embed3d_ = 0, embed2d_ = 0, embedt_ = 0, head_ = 0;
  std::vector<std::size_t> block_;
};

}  // namespace flowlift

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "flowlift/ops.hpp"
#include "flowlift/tensor.hpp"

// Reverse-mode automatic differentiation over a tape that is rebuilt for
// every forward pass. Node ids are assigned in creation order, so the tape is
// topologically sorted by construction.
namespace flowlift::ag {

class Tape;
class Gradients;

struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Tensor& value() const;
  bool valid() const noexcept { return tape != nullptr && id >= 0; }
};

class Gradients {
 public:
  Gradients(const Tape& tape, std::size_t count);

  /// Gradient of the output w.r.t. `v`; a zero tensor if nothing flowed into it.
  const Tensor& operator[](Var v) const { return get(v.id); }
  const Tensor& get(int id) const;

  bool wants(int id) const;
  /// Accumulation buffer for node `id`, zero-initialized on first use.
  Tensor& at(int id);

 private:
  const Tape* tape_;
  std::vector<Tensor> grads_;
  std::vector<bool> touched_;
};

class Tape {
 public:
  using Backward = std::function<void(const Tensor& grad_out, Gradients& grads)>;

  /// With `record` false the tape only evaluates values; backward() is unavailable.
  explicit Tape(bool record = true) : record_(record) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Appends an operation node. `inputs` must already be on this tape.
  Var push(Tensor value, std::vector<int> inputs, Backward backward);

  const Tensor& value(int id) const { return nodes_.at(static_cast<std::size_t>(id)).value; }
  bool requires_grad(int id) const { return nodes_.at(static_cast<std::size_t>(id)).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }
  bool recording() const noexcept { return record_; }

  /// Propagates d(output)/d(node) for every node. `output` must be a scalar.
  Gradients backward(Var output) const;

 private:
  struct Node {
    Tensor value;
    std::vector<int> inputs;
    Backward backward;
    bool requires_grad = false;
  };

  bool record_;
  std::vector<Node> nodes_;
};

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
/// Adds a 1 x n (or rank-1 n) bias to every row of `x`.
Var add_bias(Var x, Var bias);
Var linear(Var x, Var weight, Var bias);
Var relu(Var x);
Var concat_cols(std::span<const Var> parts);
/// Repeats every row of `x` `times` times consecutively: (B x n) -> (B*times x n).
Var repeat_rows(Var x, std::size_t times);
/// Applies the fixed J x J matrix `mix` to each consecutive block of J rows.
Var graph_mix(Var x, const RowMatrix& mix);
/// Multi-head scaled dot-product attention applied independently to each
/// consecutive block of `group` rows. If `weights_out` is non-null it receives
/// the attention matrices, one (group x group) per (block, head), block-major.
Var multi_head_attention(Var q, Var k, Var v, std::size_t group, std::size_t heads,
                         std::vector<RowMatrix>* weights_out = nullptr);
Var layer_norm_rows(Var x, Var gamma, Var beta, double eps = kLayerNormEps);
Var softmax_rows(Var x);
Var sum(Var x);
/// Mean over all elements of (a - b)^2.
Var mse(Var a, Var b);

}  // namespace flowlift::ag

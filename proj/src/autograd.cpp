#include "flowlift/autograd.hpp"

#include <cmath>
#include <string>

#include "flowlift/error.hpp"

namespace flowlift::ag {

namespace {

Tape& tape_of(Var a) {
  require(a.valid(), ErrorCode::kInvalidArgument, "operation on an unbound Var");
  return *a.tape;
}

Tape& common_tape(Var a, Var b) {
  require(a.valid() && b.valid() && a.tape == b.tape, ErrorCode::kInvalidArgument,
          "operands live on different tapes");
  return *a.tape;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.same_shape(b), ErrorCode::kShapeMismatch,
          std::string(op) + ": shapes " + a.shape_string() + " and " + b.shape_string());
}

Tensor matrix_like(std::size_t rows, std::size_t cols) { return Tensor::matrix(rows, cols); }

}  // namespace

const Tensor& Var::value() const { return tape_of(*this).value(id); }

Gradients::Gradients(const Tape& tape, std::size_t count)
    : tape_(&tape), grads_(count), touched_(count, false) {}

const Tensor& Gradients::get(int id) const {
  const auto i = static_cast<std::size_t>(id);
  require(i < grads_.size(), ErrorCode::kInvalidArgument, "gradient lookup for unknown node");
  if (!touched_[i]) {
    // Lazily materialize zeros so callers always get a shape-matched tensor.
    auto& self = const_cast<Gradients&>(*this);
    self.grads_[i] = Tensor(tape_->value(id).shape());
    self.touched_[i] = true;
  }
  return grads_[i];
}

bool Gradients::wants(int id) const { return tape_->requires_grad(id); }

Tensor& Gradients::at(int id) {
  const auto i = static_cast<std::size_t>(id);
  if (!touched_[i]) {
    grads_[i] = Tensor(tape_->value(id).shape());
    touched_[i] = true;
  }
  return grads_[i];
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  require(value.all_finite(), ErrorCode::kNonFinite, "tape leaf contains a non-finite value");
  nodes_.push_back(Node{std::move(value), {}, nullptr, requires_grad && record_});
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::push(Tensor value, std::vector<int> inputs, Backward backward) {
  bool needs = false;
  for (int in : inputs) {
    require(in >= 0 && static_cast<std::size_t>(in) < nodes_.size(), ErrorCode::kInvalidArgument,
            "cycle detected: input " + std::to_string(in) + " does not precede the new node");
    needs = needs || nodes_[static_cast<std::size_t>(in)].requires_grad;
  }
  needs = needs && record_;
  nodes_.push_back(Node{std::move(value), needs ? std::move(inputs) : std::vector<int>{},
                        needs ? std::move(backward) : nullptr, needs});
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Gradients Tape::backward(Var output) const {
  require(record_, ErrorCode::kInvalidArgument, "backward() on a non-recording tape");
  require(output.tape == this && output.id >= 0 &&
              static_cast<std::size_t>(output.id) < nodes_.size(),
          ErrorCode::kInvalidArgument, "backward() output is not on this tape");
  const Tensor& out = value(output.id);
  require(out.size() == 1, ErrorCode::kShapeMismatch,
          "backward() requires a scalar output, got shape " + out.shape_string());

  Gradients grads(*this, static_cast<std::size_t>(output.id) + 1);
  grads.at(output.id)[0] = 1.0;
  for (int id = output.id; id >= 0; --id) {
    const Node& node = nodes_[static_cast<std::size_t>(id)];
    if (!node.backward) continue;
    for (int in : node.inputs)
      require(in < id, ErrorCode::kInvalidArgument,
              "cycle detected: node " + std::to_string(id) + " depends on node " +
                  std::to_string(in));
    node.backward(grads.get(id), grads);
  }
  return grads;
}

Var matmul(Var a, Var b) {
  Tape& tape = common_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require(av.cols() == bv.rows(), ErrorCode::kShapeMismatch,
          "matmul: " + av.shape_string() + " x " + bv.shape_string());
  Tensor out = matrix_like(av.rows(), bv.cols());
  out.as_matrix().noalias() = av.as_matrix() * bv.as_matrix();
  return tape.push(std::move(out), {a.id, b.id},
                   [&tape, ia = a.id, ib = b.id](const Tensor& g, Gradients& grads) {
                     const auto gm = g.as_matrix();
                     if (grads.wants(ia))
                       grads.at(ia).as_matrix().noalias() += gm * tape.value(ib).as_matrix().transpose();
                     if (grads.wants(ib))
                       grads.at(ib).as_matrix().noalias() += tape.value(ia).as_matrix().transpose() * gm;
                   });
}

Var add(Var a, Var b) {
  Tape& tape = common_tape(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  out.as_matrix() += b.value().as_matrix();
  return tape.push(std::move(out), {a.id, b.id},
                   [ia = a.id, ib = b.id](const Tensor& g, Gradients& grads) {
                     if (grads.wants(ia)) grads.at(ia).as_matrix() += g.as_matrix();
                     if (grads.wants(ib)) grads.at(ib).as_matrix() += g.as_matrix();
                   });
}

Var sub(Var a, Var b) {
  Tape& tape = common_tape(a, b);
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  out.as_matrix() -= b.value().as_matrix();
  return tape.push(std::move(out), {a.id, b.id},
                   [ia = a.id, ib = b.id](const Tensor& g, Gradients& grads) {
                     if (grads.wants(ia)) grads.at(ia).as_matrix() += g.as_matrix();
                     if (grads.wants(ib)) grads.at(ib).as_matrix() -= g.as_matrix();
                   });
}

Var mul(Var a, Var b) {
  Tape& tape = common_tape(a, b);
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  out.as_matrix().array() *= b.value().as_matrix().array();
  return tape.push(std::move(out), {a.id, b.id},
                   [&tape, ia = a.id, ib = b.id](const Tensor& g, Gradients& grads) {
                     if (grads.wants(ia))
                       grads.at(ia).as_matrix().array() +=
                           g.as_matrix().array() * tape.value(ib).as_matrix().array();
                     if (grads.wants(ib))
                       grads.at(ib).as_matrix().array() +=
                           g.as_matrix().array() * tape.value(ia).as_matrix().array();
                   });
}

Var scale(Var a, double s) {
  Tape& tape = tape_of(a);
  Tensor out = a.value();
  out.as_matrix() *= s;
  return tape.push(std::move(out), {a.id}, [ia = a.id, s](const Tensor& g, Gradients& grads) {
    grads.at(ia).as_matrix() += s * g.as_matrix();
  });
}

Var add_bias(Var x, Var bias) {
  Tape& tape = common_tape(x, bias);
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  require(bv.size() == xv.cols(), ErrorCode::kShapeMismatch,
          "add_bias: bias " + bv.shape_string() + " vs input " + xv.shape_string());
  Tensor out = xv;
  const Eigen::Map<const Eigen::RowVectorXd> b(bv.data().data(), static_cast<Eigen::Index>(bv.size()));
  out.as_matrix().rowwise() += b;
  return tape.push(std::move(out), {x.id, bias.id},
                   [ix = x.id, ib = bias.id](const Tensor& g, Gradients& grads) {
                     if (grads.wants(ix)) grads.at(ix).as_matrix() += g.as_matrix();
                     if (grads.wants(ib)) {
                       Tensor& gb = grads.at(ib);
                       Eigen::Map<Eigen::RowVectorXd> m(gb.data().data(),
                                                        static_cast<Eigen::Index>(gb.size()));
                       m += g.as_matrix().colwise().sum();
                     }
                   });
}

Var linear(Var x, Var weight, Var bias) { return add_bias(matmul(x, weight), bias); }

Var relu(Var x) {
  Tape& tape = tape_of(x);
  Tensor out = x.value();
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return tape.push(std::move(out), {x.id}, [&tape, ix = x.id](const Tensor& g, Gradients& grads) {
    const Tensor& xv = tape.value(ix);
    Tensor& gx = grads.at(ix);
    for (std::size_t i = 0; i < xv.size(); ++i)
      if (xv[i] > 0.0) gx[i] += g[i];
  });
}

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), ErrorCode::kInvalidArgument, "concat_cols of nothing");
  Tape& tape = tape_of(parts[0]);
  const std::size_t rows = parts[0].value().rows();
  std::size_t cols = 0;
  std::vector<int> ids;
  std::vector<std::size_t> offsets;
  for (const Var& p : parts) {
    require(p.tape == &tape, ErrorCode::kInvalidArgument, "concat_cols across tapes");
    require(p.value().rows() == rows, ErrorCode::kShapeMismatch, "concat_cols row mismatch");
    offsets.push_back(cols);
    cols += p.value().cols();
    ids.push_back(p.id);
  }
  Tensor out = matrix_like(rows, cols);
  auto om = out.as_matrix();
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto pm = parts[i].value().as_matrix();
    om.middleCols(static_cast<Eigen::Index>(offsets[i]), pm.cols()) = pm;
  }
  return tape.push(std::move(out), ids,
                   [ids, offsets](const Tensor& g, Gradients& grads) {
                     const auto gm = g.as_matrix();
                     for (std::size_t i = 0; i < ids.size(); ++i) {
                       if (!grads.wants(ids[i])) continue;
                       auto dst = grads.at(ids[i]).as_matrix();
                       dst += gm.middleCols(static_cast<Eigen::Index>(offsets[i]), dst.cols());
                     }
                   });
}

Var repeat_rows(Var x, std::size_t times) {
  Tape& tape = tape_of(x);
  require(times >= 1, ErrorCode::kInvalidArgument, "repeat_rows needs times >= 1");
  const auto xm = x.value().as_matrix();
  Tensor out = matrix_like(static_cast<std::size_t>(xm.rows()) * times,
                           static_cast<std::size_t>(xm.cols()));
  auto om = out.as_matrix();
  for (Eigen::Index r = 0; r < xm.rows(); ++r)
    for (std::size_t k = 0; k < times; ++k) om.row(r * static_cast<Eigen::Index>(times) + static_cast<Eigen::Index>(k)) = xm.row(r);
  return tape.push(std::move(out), {x.id}, [ix = x.id, times](const Tensor& g, Gradients& grads) {
    auto gx = grads.at(ix).as_matrix();
    const auto gm = g.as_matrix();
    const auto t = static_cast<Eigen::Index>(times);
    for (Eigen::Index r = 0; r < gx.rows(); ++r) gx.row(r) += gm.middleRows(r * t, t).colwise().sum();
  });
}

Var graph_mix(Var x, const RowMatrix& mix) {
  Tape& tape = tape_of(x);
  const auto xm = x.value().as_matrix();
  const Eigen::Index group = mix.rows();
  require(mix.rows() == mix.cols() && group > 0 && xm.rows() % group == 0,
          ErrorCode::kShapeMismatch, "graph_mix: rows not a multiple of the graph size");
  Tensor out = matrix_like(static_cast<std::size_t>(xm.rows()), static_cast<std::size_t>(xm.cols()));
  auto om = out.as_matrix();
  for (Eigen::Index b = 0; b < xm.rows() / group; ++b)
    om.middleRows(b * group, group).noalias() = mix * xm.middleRows(b * group, group);
  return tape.push(std::move(out), {x.id}, [ix = x.id, mix](const Tensor& g, Gradients& grads) {
    auto gx = grads.at(ix).as_matrix();
    const auto gm = g.as_matrix();
    const Eigen::Index n = mix.rows();
    for (Eigen::Index b = 0; b < gx.rows() / n; ++b)
      gx.middleRows(b * n, n).noalias() += mix.transpose() * gm.middleRows(b * n, n);
  });
}

Var multi_head_attention(Var q, Var k, Var v, std::size_t group, std::size_t heads,
                         std::vector<RowMatrix>* weights_out) {
  Tape& tape = common_tape(q, k);
  require(v.tape == &tape, ErrorCode::kInvalidArgument, "attention operands on different tapes");
  const Tensor& qv = q.value();
  require(qv.same_shape(k.value()) && qv.same_shape(v.value()), ErrorCode::kShapeMismatch,
          "attention: Q, K, V shapes differ");
  const auto rows = static_cast<Eigen::Index>(qv.rows());
  const auto width = static_cast<Eigen::Index>(qv.cols());
  const auto n = static_cast<Eigen::Index>(group);
  const auto h = static_cast<Eigen::Index>(heads);
  require(width > 0 && h > 0 && width % h == 0, ErrorCode::kInvalidArgument,
          "attention width " + std::to_string(width) + " not divisible by " +
              std::to_string(heads) + " heads");
  require(n > 0 && rows % n == 0, ErrorCode::kShapeMismatch,
          "attention: rows not a multiple of the group size");
  const Eigen::Index dh = width / h;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const Eigen::Index blocks = rows / n;

  const auto qm = qv.as_matrix();
  const auto km = k.value().as_matrix();
  const auto vm = v.value().as_matrix();
  Tensor out = matrix_like(static_cast<std::size_t>(rows), static_cast<std::size_t>(width));
  auto om = out.as_matrix();
  std::vector<RowMatrix> probs(static_cast<std::size_t>(blocks * h));
  for (Eigen::Index b = 0; b < blocks; ++b) {
    for (Eigen::Index hh = 0; hh < h; ++hh) {
      RowMatrix p = inv_sqrt * (qm.block(b * n, hh * dh, n, dh) *
                                km.block(b * n, hh * dh, n, dh).transpose());
      for (Eigen::Index r = 0; r < n; ++r)
        kernels::softmax_inplace(std::span<double>(p.row(r).data(), static_cast<std::size_t>(n)));
      om.block(b * n, hh * dh, n, dh).noalias() = p * vm.block(b * n, hh * dh, n, dh);
      probs[static_cast<std::size_t>(b * h + hh)] = std::move(p);
    }
  }
  if (weights_out) *weights_out = probs;

  return tape.push(
      std::move(out), {q.id, k.id, v.id},
      [&tape, iq = q.id, ik = k.id, iv = v.id, n, h, dh, blocks, inv_sqrt,
       probs = std::move(probs)](const Tensor& g, Gradients& grads) {
        const auto gm = g.as_matrix();
        const auto qm = tape.value(iq).as_matrix();
        const auto km = tape.value(ik).as_matrix();
        const auto vm = tape.value(iv).as_matrix();
        const bool wq = grads.wants(iq), wk = grads.wants(ik), wv = grads.wants(iv);
        for (Eigen::Index b = 0; b < blocks; ++b) {
          for (Eigen::Index hh = 0; hh < h; ++hh) {
            const RowMatrix& p = probs[static_cast<std::size_t>(b * h + hh)];
            const auto go = gm.block(b * n, hh * dh, n, dh);
            if (wv) grads.at(iv).as_matrix().block(b * n, hh * dh, n, dh).noalias() += p.transpose() * go;
            if (!wq && !wk) continue;
            RowMatrix dp = go * vm.block(b * n, hh * dh, n, dh).transpose();
            // Softmax Jacobian per row: ds = p * (dp - <dp, p>).
            const Eigen::VectorXd dots = (dp.array() * p.array()).rowwise().sum();
            RowMatrix ds = p.array() * (dp.colwise() - dots).array();
            ds *= inv_sqrt;
            if (wq) grads.at(iq).as_matrix().block(b * n, hh * dh, n, dh).noalias() += ds * km.block(b * n, hh * dh, n, dh);
            if (wk) grads.at(ik).as_matrix().block(b * n, hh * dh, n, dh).noalias() += ds.transpose() * qm.block(b * n, hh * dh, n, dh);
          }
        }
      });
}

Var layer_norm_rows(Var x, Var gamma, Var beta, double eps) {
  Tape& tape = common_tape(x, gamma);
  require(beta.tape == &tape, ErrorCode::kInvalidArgument, "layer_norm operands on different tapes");
  const Tensor& xv = x.value();
  const std::size_t rows = xv.rows();
  const std::size_t cols = xv.cols();
  require(gamma.value().size() == cols && beta.value().size() == cols, ErrorCode::kShapeMismatch,
          "layer_norm: gamma/beta width does not match input");
  require(cols >= 2, ErrorCode::kInvalidArgument, "layer_norm needs at least two features");

  Tensor xhat = matrix_like(rows, cols);
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r)
    inv_std[r] = kernels::normalize_row(xv.data().subspan(r * cols, cols),
                                        xhat.data().subspan(r * cols, cols), eps);
  Tensor out = xhat;
  const auto gd = gamma.value().data();
  const auto bd = beta.value().data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) = gd[c] * out.at(r, c) + bd[c];

  return tape.push(
      std::move(out), {x.id, gamma.id, beta.id},
      [&tape, ix = x.id, ig = gamma.id, ib = beta.id, xhat = std::move(xhat),
       inv_std = std::move(inv_std), rows, cols](const Tensor& g, Gradients& grads) {
        if (grads.wants(ig)) {
          Tensor& gg = grads.at(ig);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) gg[c] += g.at(r, c) * xhat.at(r, c);
        }
        if (grads.wants(ib)) {
          Tensor& gb = grads.at(ib);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) gb[c] += g.at(r, c);
        }
        if (!grads.wants(ix)) return;
        const auto gd = tape.value(ig).data();
        Tensor& gx = grads.at(ix);
        const double inv_n = 1.0 / static_cast<double>(cols);
        std::vector<double> dxhat(cols);
        for (std::size_t r = 0; r < rows; ++r) {
          double mean_d = 0.0, mean_dx = 0.0;
          for (std::size_t c = 0; c < cols; ++c) {
            dxhat[c] = g.at(r, c) * gd[c];
            mean_d += dxhat[c];
            mean_dx += dxhat[c] * xhat.at(r, c);
          }
          mean_d *= inv_n;
          mean_dx *= inv_n;
          for (std::size_t c = 0; c < cols; ++c)
            gx.at(r, c) += inv_std[r] * (dxhat[c] - mean_d - xhat.at(r, c) * mean_dx);
        }
      });
}

Var softmax_rows(Var x) {
  Tape& tape = tape_of(x);
  Tensor out = x.value();
  const std::size_t cols = out.cols();
  require(cols > 0, ErrorCode::kInvalidArgument, "softmax of empty rows");
  for (std::size_t r = 0; r < out.rows(); ++r) kernels::softmax_inplace(out.data().subspan(r * cols, cols));
  const int self = static_cast<int>(tape.size());
  return tape.push(std::move(out), {x.id},
                   [&tape, ix = x.id, self, cols](const Tensor& g, Gradients& grads) {
                     const Tensor& p = tape.value(self);
                     Tensor& gx = grads.at(ix);
                     for (std::size_t r = 0; r < p.rows(); ++r) {
                       double dot = 0.0;
                       for (std::size_t c = 0; c < cols; ++c) dot += g.at(r, c) * p.at(r, c);
                       for (std::size_t c = 0; c < cols; ++c) gx.at(r, c) += p.at(r, c) * (g.at(r, c) - dot);
                     }
                   });
}

Var sum(Var x) {
  Tape& tape = tape_of(x);
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  return tape.push(Tensor::scalar(total), {x.id}, [ix = x.id](const Tensor& g, Gradients& grads) {
    const double s = g[0];
    for (double& v : grads.at(ix).data()) v += s;
  });
}

Var mse(Var a, Var b) {
  Tape& tape = common_tape(a, b);
  require_same_shape(a.value(), b.value(), "mse");
  const auto diff = (a.value().as_matrix() - b.value().as_matrix()).eval();
  const double n = static_cast<double>(a.value().size());
  const double loss = diff.squaredNorm() / n;
  return tape.push(Tensor::scalar(loss), {a.id, b.id},
                   [ia = a.id, ib = b.id, diff, n](const Tensor& g, Gradients& grads) {
                     const double s = 2.0 * g[0] / n;
                     if (grads.wants(ia)) grads.at(ia).as_matrix() += s * diff;
                     if (grads.wants(ib)) grads.at(ib).as_matrix() -= s * diff;
                   });
}

}  // namespace flowlift::ag

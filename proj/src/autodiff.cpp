#include "advdev/autodiff.hpp"

#include <Eigen/Core>
#include <cmath>
#include <fmt/format.h>
#include <stdexcept>

namespace advdev {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using MatrixMap = Eigen::Map<RowMatrix>;

Eigen::Index idx(std::size_t n) { return static_cast<Eigen::Index>(n); }

void require_same_tape(const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) throw Error("autodiff: operands recorded on different tapes");
}

}  // namespace

const Tensor& Var::value() const { return tape_->nodes_.at(id_).value; }

bool Var::requires_grad() const { return tape_->nodes_.at(id_).requires_grad; }

const Tensor& Gradients::of(const Var& leaf) const& {
  if (!has(leaf)) throw Error(fmt::format("no gradient recorded for node {}", leaf.id()));
  return *grads_[leaf.id()];
}

Tensor Gradients::of(const Var& leaf) && {
  if (!has(leaf)) throw Error(fmt::format("no gradient recorded for node {}", leaf.id()));
  return std::move(*grads_[leaf.id()]);
}

bool Gradients::has(const Var& leaf) const {
  return leaf.id() < grads_.size() && grads_[leaf.id()].has_value();
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  require_finite(value, "leaf");
  nodes_.push_back(Node{std::move(value), {}, {}, requires_grad, true});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  for (const Var& in : inputs) {
    if (in.tape_ != this) throw Error("autodiff: input recorded on a different tape");
    node.inputs.push_back(in.id_);
    node.requires_grad = node.requires_grad || nodes_.at(in.id_).requires_grad;
  }
  if (node.requires_grad && !backward) {
    throw std::logic_error("autodiff: differentiable node recorded without a backward rule");
  }
  node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Gradients Tape::backward(const Var& root) const {
  if (root.tape_ != this) throw Error("backward: root belongs to another tape");
  const Node& root_node = nodes_.at(root.id_);
  if (root_node.value.size() != 1) {
    throw Error("backward: root must be scalar, got " + shape_to_string(root_node.value.shape()));
  }
  std::vector<std::optional<Tensor>> grads(root.id_ + 1);
  grads[root.id_] = Tensor(root_node.value.shape(), 1.0);

  std::vector<Tensor*> slots;
  for (std::size_t id = root.id_ + 1; id-- > 0;) {
    const Node& node = nodes_[id];
    if (!grads[id] || node.is_leaf || !node.requires_grad) continue;
    slots.assign(node.inputs.size(), nullptr);
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      const std::size_t in = node.inputs[k];
      if (in >= id) throw std::logic_error("autodiff: tape order violated");
      if (!nodes_[in].requires_grad) continue;
      if (!grads[in]) grads[in] = Tensor(nodes_[in].value.shape(), 0.0);
      slots[k] = &*grads[in];
    }
    node.backward(*grads[id], slots);
    if (!node.is_leaf) {
      // Interior gradients are consumed exactly once in reverse order.
      grads[id].reset();
    }
  }

  Gradients out;
  out.grads_.resize(grads.size());
  for (std::size_t id = 0; id < grads.size(); ++id) {
    const Node& node = nodes_[id];
    if (!node.is_leaf || !node.requires_grad) continue;
    out.grads_[id] = grads[id] ? std::move(*grads[id]) : Tensor(node.value.shape(), 0.0);
    require_finite(*out.grads_[id], "backward");
  }
  return out;
}

Var conv2d(const Var& input, const Var& weights, const Var& bias, std::size_t stride,
           std::size_t pad) {
  require_same_tape(input, weights);
  require_same_tape(input, bias);
  Tensor out = conv2d(input.value(), weights.value(), bias.value(), stride, pad);
  Tape& tape = input.tape();
  if (!input.requires_grad() && !weights.requires_grad() && !bias.requires_grad()) {
    return tape.record(std::move(out), {input, weights, bias}, {});
  }
  const ConvGeometry g = conv_geometry(input.value().shape(), weights.value().shape(), stride, pad);
  const Tensor* x = &input.value();
  const Tensor* w = &weights.value();
  return tape.record(
      std::move(out), {input, weights, bias},
      [g, x, w](const Tensor& grad_out, std::span<Tensor* const> grads) {
        ConstMatrixMap dout(grad_out.data(), idx(g.out_channels), idx(g.positions()));
        if (grads[1]) {
          const Buffer cols = im2col(*x, g);
          ConstMatrixMap xc(cols.data(), idx(g.patch()), idx(g.positions()));
          MatrixMap dw(grads[1]->data(), idx(g.out_channels), idx(g.patch()));
          dw.noalias() += dout * xc.transpose();
        }
        if (grads[2]) {
          for (std::size_t c = 0; c < g.out_channels; ++c) {
            (*grads[2])[c] += dout.row(idx(c)).sum();
          }
        }
        if (grads[0]) {
          ConstMatrixMap wm(w->data(), idx(g.out_channels), idx(g.patch()));
          RowMatrix dcols = wm.transpose() * dout;
          col2im(std::span<const double>(dcols.data(), static_cast<std::size_t>(dcols.size())), g,
                 *grads[0]);
        }
      });
}

Var dense(const Var& input, const Var& weights, const Var& bias) {
  require_same_tape(input, weights);
  require_same_tape(input, bias);
  Tensor out = dense(input.value(), weights.value(), bias.value());
  Tape& tape = input.tape();
  if (!input.requires_grad() && !weights.requires_grad() && !bias.requires_grad()) {
    return tape.record(std::move(out), {input, weights, bias}, {});
  }
  const Tensor* x = &input.value();
  const Tensor* w = &weights.value();
  return tape.record(std::move(out), {input, weights, bias},
                     [x, w](const Tensor& grad_out, std::span<Tensor* const> grads) {
                       const std::size_t m = w->dim(0);
                       const std::size_t n = w->dim(1);
                       Eigen::Map<const Eigen::VectorXd> g(grad_out.data(), idx(m));
                       if (grads[0]) {
                         ConstMatrixMap wm(w->data(), idx(m), idx(n));
                         Eigen::Map<Eigen::VectorXd> dx(grads[0]->data(), idx(n));
                         dx.noalias() += wm.transpose() * g;
                       }
                       if (grads[1]) {
                         Eigen::Map<const Eigen::VectorXd> xv(x->data(), idx(n));
                         MatrixMap dw(grads[1]->data(), idx(m), idx(n));
                         dw.noalias() += g * xv.transpose();
                       }
                       if (grads[2]) {
                         for (std::size_t i = 0; i < m; ++i) (*grads[2])[i] += grad_out[i];
                       }
                     });
}

Var relu(const Var& x) {
  Tensor out = relu(x.value());
  if (!x.requires_grad()) return x.tape().record(std::move(out), {x}, {});
  const Tensor* in = &x.value();
  return x.tape().record(std::move(out), {x},
                         [in](const Tensor& grad_out, std::span<Tensor* const> grads) {
                           for (std::size_t i = 0; i < grad_out.size(); ++i) {
                             if ((*in)[i] > 0.0) (*grads[0])[i] += grad_out[i];
                           }
                         });
}

Var add(const Var& a, const Var& b) {
  require_same_tape(a, b);
  Tensor out = add(a.value(), b.value());
  if (!a.requires_grad() && !b.requires_grad()) return a.tape().record(std::move(out), {a, b}, {});
  return a.tape().record(std::move(out), {a, b},
                         [](const Tensor& grad_out, std::span<Tensor* const> grads) {
                           for (Tensor* g : grads) {
                             if (!g) continue;
                             for (std::size_t i = 0; i < grad_out.size(); ++i) (*g)[i] += grad_out[i];
                           }
                         });
}

Var global_avg_pool(const Var& x) {
  Tensor out = global_avg_pool(x.value());
  if (!x.requires_grad()) return x.tape().record(std::move(out), {x}, {});
  const std::size_t area = x.value().dim(1) * x.value().dim(2);
  return x.tape().record(std::move(out), {x},
                         [area](const Tensor& grad_out, std::span<Tensor* const> grads) {
                           const double inv = 1.0 / static_cast<double>(area);
                           for (std::size_t c = 0; c < grad_out.size(); ++c) {
                             for (std::size_t i = 0; i < area; ++i) {
                               (*grads[0])[c * area + i] += grad_out[c] * inv;
                             }
                           }
                         });
}

Var softmax(const Var& logits) {
  Tensor out = softmax(logits.value());
  if (!logits.requires_grad()) return logits.tape().record(std::move(out), {logits}, {});
  Tensor probs = out;
  return logits.tape().record(
      std::move(out), {logits},
      [probs = std::move(probs)](const Tensor& grad_out, std::span<Tensor* const> grads) {
        double dot = 0.0;
        for (std::size_t i = 0; i < probs.size(); ++i) dot += grad_out[i] * probs[i];
        for (std::size_t i = 0; i < probs.size(); ++i) {
          (*grads[0])[i] += probs[i] * (grad_out[i] - dot);
        }
      });
}

Var cross_entropy(const Var& logits, std::size_t label) {
  Tensor out = Tensor::scalar(cross_entropy(logits.value(), label));
  if (!logits.requires_grad()) return logits.tape().record(std::move(out), {logits}, {});
  Tensor probs = softmax(logits.value());
  return logits.tape().record(
      std::move(out), {logits},
      [probs = std::move(probs), label](const Tensor& grad_out, std::span<Tensor* const> grads) {
        for (std::size_t i = 0; i < probs.size(); ++i) {
          const double target = i == label ? 1.0 : 0.0;
          (*grads[0])[i] += grad_out[0] * (probs[i] - target);
        }
      });
}

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  Tensor out = Tensor::scalar(s);
  require_finite(out, "sum");
  if (!x.requires_grad()) return x.tape().record(std::move(out), {x}, {});
  return x.tape().record(std::move(out), {x},
                         [](const Tensor& grad_out, std::span<Tensor* const> grads) {
                           for (double& g : grads[0]->values()) g += grad_out[0];
                         });
}

Var scale(const Var& x, double factor) {
  Tensor out = x.value();
  for (double& v : out.values()) v *= factor;
  require_finite(out, "scale");
  if (!x.requires_grad()) return x.tape().record(std::move(out), {x}, {});
  return x.tape().record(std::move(out), {x},
                         [factor](const Tensor& grad_out, std::span<Tensor* const> grads) {
                           for (std::size_t i = 0; i < grad_out.size(); ++i) {
                             (*grads[0])[i] += factor * grad_out[i];
                           }
                         });
}

Var tanh_box(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.values()) v = (std::tanh(v) + 1.0) / 2.0;
  require_finite(out, "tanh_box");
  if (!x.requires_grad()) return x.tape().record(std::move(out), {x}, {});
  const Tensor* in = &x.value();
  return x.tape().record(std::move(out), {x},
                         [in](const Tensor& grad_out, std::span<Tensor* const> grads) {
                           for (std::size_t i = 0; i < grad_out.size(); ++i) {
                             const double t = std::tanh((*in)[i]);
                             (*grads[0])[i] += grad_out[i] * 0.5 * (1.0 - t * t);
                           }
                         });
}

Var squared_distance(const Var& x, const Tensor& target) {
  if (x.value().shape() != target.shape()) throw Error("squared_distance: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double d = x.value()[i] - target[i];
    s += d * d;
  }
  Tensor out = Tensor::scalar(s);
  require_finite(out, "squared_distance");
  if (!x.requires_grad()) return x.tape().record(std::move(out), {x}, {});
  const Tensor* in = &x.value();
  return x.tape().record(std::move(out), {x},
                         [in, target](const Tensor& grad_out, std::span<Tensor* const> grads) {
                           for (std::size_t i = 0; i < target.size(); ++i) {
                             (*grads[0])[i] += grad_out[0] * 2.0 * ((*in)[i] - target[i]);
                           }
                         });
}

}  // namespace advdev

#include "advdev/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <limits>

namespace advdev {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void require_unit_box(const Tensor& x, const char* op) {
  for (double v : x.values()) {
    if (!(v >= 0.0 && v <= 1.0)) throw Error(fmt::format("{}: input value {} outside [0, 1]", op, v));
  }
}

/// Index of the largest logit other than `label` (lowest index on ties).
std::size_t runner_up(std::span<const double> z, std::size_t label) {
  std::size_t best = label == 0 ? 1 : 0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (i != label && z[i] > z[best]) best = i;
  }
  return best;
}

AttackResult finish(const Model& model, const Tensor& x, Tensor adversarial, std::size_t label,
                    std::size_t iterations) {
  AttackResult r;
  r.success = predict(model, adversarial) != label;
  r.l2 = l2_distance(adversarial, x);
  r.linf = linf_distance(adversarial, x);
  r.iterations = iterations;
  r.adversarial = std::move(adversarial);
  return r;
}

}  // namespace

void FgsmConfig::validate() const {
  if (!(epsilon > 0.0 && epsilon <= 1.0)) throw Error("fgsm: epsilon must lie in (0, 1]");
}

void BimConfig::validate() const {
  if (!(epsilon > 0.0 && epsilon <= 1.0)) throw Error("bim: epsilon must lie in (0, 1]");
  if (!(alpha > 0.0)) throw Error("bim: alpha must be positive");
  if (alpha > epsilon) throw Error("bim: alpha must not exceed epsilon");
  if (iterations < 1) throw Error("bim: iterations must be >= 1");
}

void CwConfig::validate() const {
  if (binary_search_steps < 1) throw Error("cw: binary_search_steps must be >= 1");
  if (max_iterations < 1) throw Error("cw: max_iterations must be >= 1");
  if (!(learning_rate > 0.0)) throw Error("cw: learning_rate must be positive");
  if (!(initial_c > 0.0)) throw Error("cw: initial_c must be positive");
  if (!(confidence >= 0.0)) throw Error("cw: confidence must be >= 0");
}

std::string attack_name(const AttackSpec& spec) {
  return std::visit(Overloaded{[](const FgsmConfig&) { return std::string("fgsm"); },
                               [](const BimConfig&) { return std::string("bim"); },
                               [](const CwConfig&) { return std::string("cw"); }},
                    spec);
}

Tensor quantize(const Tensor& x) {
  require_unit_box(x, "quantize");
  Tensor out = x;
  for (double& v : out.values()) v = std::round(v * 255.0) / 255.0;
  return out;
}

double f6_margin(const Tensor& logits, std::size_t label, double kappa) {
  if (logits.size() < 2) throw Error("f6_margin: needs at least two classes");
  if (label >= logits.size()) throw Error("f6_margin: label out of range");
  const auto z = logits.values();
  return std::max(z[label] - z[runner_up(z, label)], -kappa);
}

Var f6_margin(const Var& logits, std::size_t label, double kappa) {
  const double value = f6_margin(logits.value(), label, kappa);
  Tape& tape = logits.tape();
  if (!logits.requires_grad()) return tape.record(Tensor::scalar(value), {logits}, {});
  const auto z = logits.value().values();
  const std::size_t other = runner_up(z, label);
  const bool active = z[label] - z[other] > -kappa;
  return tape.record(Tensor::scalar(value), {logits},
                     [label, other, active](const Tensor& grad_out, std::span<Tensor* const> grads) {
                       if (!active) return;
                       (*grads[0])[label] += grad_out[0];
                       (*grads[0])[other] -= grad_out[0];
                     });
}

AttackResult fgsm(const Model& model, const Tensor& x, std::size_t label, const FgsmConfig& cfg) {
  cfg.validate();
  require_unit_box(x, "fgsm");
  const LossGradient lg = loss_input_gradient(model, x, label);
  const Tensor step = sign(lg.input_gradient);
  Tensor moved = x;
  for (std::size_t i = 0; i < moved.size(); ++i) moved[i] += cfg.epsilon * step[i];
  return finish(model, x, quantize(clip(moved, 0.0, 1.0)), label, 1);
}

AttackResult bim(const Model& model, const Tensor& x, std::size_t label, const BimConfig& cfg) {
  cfg.validate();
  require_unit_box(x, "bim");
  Tensor current = x;
  for (std::size_t t = 0; t < cfg.iterations; ++t) {
    const Tensor step = sign(loss_input_gradient(model, current, label).input_gradient);
    for (std::size_t i = 0; i < current.size(); ++i) current[i] += cfg.alpha * step[i];
    current = clip(clip_ball(current, x, cfg.epsilon), 0.0, 1.0);
  }
  return finish(model, x, quantize(current), label, cfg.iterations);
}

AttackResult cw_l2(const Model& model, const Tensor& x, std::size_t label, const CwConfig& cfg) {
  cfg.validate();
  require_unit_box(x, "cw");
  if (label >= model.info().classes) throw Error("cw: label out of range");

  constexpr double kNudge = 1e-6;
  constexpr double kUnbounded = 1e10;
  Tensor w0 = x;
  for (double& v : w0.values()) v = std::atanh(2.0 * std::clamp(v, kNudge, 1.0 - kNudge) - 1.0);

  double lower = 0.0;
  double upper = kUnbounded;
  double c = cfg.initial_c;
  double best_l2sq = std::numeric_limits<double>::infinity();
  Tensor best;
  Tensor last;
  std::size_t iterations = 0;
  const std::size_t check_every = std::max<std::size_t>(1, cfg.max_iterations / 10);

  for (std::size_t outer = 0; outer < cfg.binary_search_steps; ++outer) {
    Tensor w = w0;
    Tensor m1(w.shape(), 0.0), m2(w.shape(), 0.0);
    double prev = std::numeric_limits<double>::infinity();
    bool step_success = false;

    for (std::size_t it = 0; it < cfg.max_iterations; ++it) {
      Tape tape;
      const Var wv = tape.leaf(w, true);
      const Var xv = tanh_box(wv);
      const TapedForward f = forward_on_tape(tape, model, xv, false);
      const Var dist = squared_distance(xv, x);
      const Var objective = add(dist, scale(f6_margin(f.logits, label, cfg.confidence), c));
      ++iterations;

      const double l2sq = dist.value()[0];
      if (argmax(f.logits.value().values()) != label) {
        step_success = true;
        if (l2sq < best_l2sq) {
          best_l2sq = l2sq;
          best = xv.value();
        }
      }
      last = xv.value();

      const double loss = objective.value()[0];
      if (cfg.abort_early && it % check_every == 0) {
        if (loss > prev * 0.9999) break;
        prev = loss;
      }

      const Gradients grads = tape.backward(objective);
      const Tensor& g = grads.of(wv);
      const double t = static_cast<double>(it + 1);
      const double c1 = 1.0 - std::pow(0.9, t);
      const double c2 = 1.0 - std::pow(0.999, t);
      for (std::size_t i = 0; i < w.size(); ++i) {
        m1[i] = 0.9 * m1[i] + 0.1 * g[i];
        m2[i] = 0.999 * m2[i] + 0.001 * g[i] * g[i];
        w[i] -= cfg.learning_rate * (m1[i] / c1) / (std::sqrt(m2[i] / c2) + 1e-8);
      }
    }

    if (step_success) {
      upper = std::min(upper, c);
      c = (lower + upper) / 2.0;
    } else {
      lower = std::max(lower, c);
      c = upper < kUnbounded ? (lower + upper) / 2.0 : c * 10.0;
    }
  }

  return finish(model, x, best.size() ? std::move(best) : std::move(last), label, iterations);
}

AttackResult run_attack(const Model& model, const Tensor& x, std::size_t label,
                        const AttackSpec& spec) {
  return std::visit(
      Overloaded{[&](const FgsmConfig& c) { return fgsm(model, x, label, c); },
                 [&](const BimConfig& c) { return bim(model, x, label, c); },
                 [&](const CwConfig& c) { return cw_l2(model, x, label, c); }},
      spec);
}

AttackedDataset attack_dataset(const Model& model, const Dataset& data, const AttackSpec& spec) {
  data.validate();
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (predict(model, data.images[i]) != data.labels[i]) {
      throw Error(fmt::format("attack_dataset: record {} is misclassified before the attack",
                              data.ids.empty() ? i : data.ids[i]));
    }
  }
  AttackedDataset out;
  out.data.provenance = attack_name(spec);
  std::size_t successes = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    AttackResult r = run_attack(model, data.images[i], data.labels[i], spec);
    out.data.images.push_back(r.adversarial);
    out.data.labels.push_back(data.labels[i]);
    out.data.ids.push_back(data.ids.empty() ? i : data.ids[i]);
    out.success.push_back(r.success);
    successes += r.success ? 1 : 0;
    out.results.push_back(std::move(r));
  }
  out.success_rate =
      data.empty() ? 0.0 : static_cast<double>(successes) / static_cast<double>(data.size());
  return out;
}

Dataset correctly_classified(const Model& model, const Dataset& data) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (predict(model, data.images[i]) == data.labels[i]) keep.push_back(i);
  }
  return data.select(keep);
}

}  // namespace advdev

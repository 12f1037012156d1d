#include "advdev/network.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <numeric>
#include <sstream>

namespace advdev {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

bool is_head(const Layer& layer) {
  return std::holds_alternative<SoftmaxLayer>(layer) ||
         std::holds_alternative<OneHotArgmaxLayer>(layer);
}

bool identity_skip(const Shape& in, const ResidualLayer& r) {
  return in[0] == r.out_channels && r.stride == 1;
}

const Tensor& value_of(const Tensor& t) { return t; }
const Tensor& value_of(const Var& v) { return v.value(); }

/// Shared forward pass for the plain (Tensor) and recorded (Var) paths.
template <class V, class TapFn>
V run_layers(const ArchitectureSpec& spec, const ArchitectureInfo& info, V x,
             std::span<const V> params, TapFn&& tap) {
  tap(value_of(x));
  Shape in_shape = spec.input_shape;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& ls = spec.layers[i];
    const std::size_t p = info.layer_parameter_offset[i];
    std::visit(Overloaded{
                   [&](const ConvLayer& c) {
                     V y = conv2d(x, params[p], params[p + 1], c.stride, c.pad);
                     x = c.relu ? relu(y) : std::move(y);
                   },
                   [&](const ResidualLayer& r) {
                     V h = relu(conv2d(x, params[p], params[p + 1], r.stride, 1));
                     h = relu(conv2d(h, params[p + 2], params[p + 3], 1, 1));
                     if (identity_skip(in_shape, r)) {
                       x = add(h, x);
                     } else {
                       x = add(h, conv2d(x, params[p + 4], params[p + 5], r.stride, 0));
                     }
                   },
                   [&](const GlobalAvgPoolLayer&) { x = global_avg_pool(x); },
                   [&](const DenseLayer&) { x = dense(x, params[p], params[p + 1]); },
                   [&](const SoftmaxLayer&) {
                     if (ls.checkpoint) tap(softmax(value_of(x)));
                   },
                   [&](const OneHotArgmaxLayer&) {
                     if (ls.checkpoint) {
                       const Tensor& z = value_of(x);
                       tap(one_hot(argmax(z.values()), z.size()));
                     }
                   },
               },
               ls.layer);
    if (ls.checkpoint && !is_head(ls.layer)) tap(value_of(x));
    in_shape = info.layer_output_shapes[i];
  }
  return x;
}

std::vector<std::string> split_words(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> words;
  for (std::string w; in >> w;) words.push_back(w);
  return words;
}

std::size_t parse_extent(const std::string& word, const std::string& line) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(word, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != word.size() || word.empty() || word[0] == '-') {
    throw Error(fmt::format("architecture: expected a non-negative integer in '{}'", line));
  }
  return static_cast<std::size_t>(v);
}

}  // namespace

std::size_t ArchitectureInfo::parameter_count() const {
  std::size_t total = 0;
  for (const Shape& s : parameter_shapes) total += shape_size(s);
  return total;
}

std::string ArchitectureSpec::to_text() const {
  std::string out = fmt::format("input {} {} {}\n", input_shape.at(0), input_shape.at(1),
                                input_shape.at(2));
  for (const LayerSpec& ls : layers) {
    std::visit(Overloaded{
                   [&](const ConvLayer& c) {
                     out += fmt::format("conv {} {} {} {} {}", c.out_channels, c.kernel, c.stride,
                                        c.pad, c.relu ? "relu" : "linear");
                   },
                   [&](const ResidualLayer& r) {
                     out += fmt::format("residual {} {}", r.out_channels, r.stride);
                   },
                   [&](const GlobalAvgPoolLayer&) { out += "avgpool"; },
                   [&](const DenseLayer& d) { out += fmt::format("dense {}", d.out_dim); },
                   [&](const SoftmaxLayer&) { out += "softmax"; },
                   [&](const OneHotArgmaxLayer&) { out += "onehot"; },
               },
               ls.layer);
    out += ls.checkpoint ? " checkpoint\n" : "\n";
  }
  return out;
}

ArchitectureSpec ArchitectureSpec::from_text(std::string_view text) {
  ArchitectureSpec spec;
  spec.layers.clear();
  bool have_input = false;
  std::istringstream in{std::string(text)};
  for (std::string line; std::getline(in, line);) {
    std::vector<std::string> w = split_words(line);
    if (w.empty() || w[0][0] == '#') continue;
    bool checkpoint = false;
    if (w.back() == "checkpoint") {
      checkpoint = true;
      w.pop_back();
    }
    const std::string& kind = w[0];
    auto expect_args = [&](std::size_t n) {
      if (w.size() != n + 1) {
        throw Error(fmt::format("architecture: '{}' expects {} arguments: '{}'", kind, n, line));
      }
    };
    if (kind == "input") {
      expect_args(3);
      if (have_input || !spec.layers.empty()) throw Error("architecture: input must come first");
      spec.input_shape = {parse_extent(w[1], line), parse_extent(w[2], line),
                          parse_extent(w[3], line)};
      have_input = true;
      continue;
    }
    LayerSpec ls;
    ls.checkpoint = checkpoint;
    if (kind == "conv") {
      expect_args(5);
      if (w[5] != "relu" && w[5] != "linear") {
        throw Error("architecture: conv activation must be relu or linear: " + line);
      }
      ls.layer = ConvLayer{parse_extent(w[1], line), parse_extent(w[2], line),
                           parse_extent(w[3], line), parse_extent(w[4], line), w[5] == "relu"};
    } else if (kind == "residual") {
      expect_args(2);
      ls.layer = ResidualLayer{parse_extent(w[1], line), parse_extent(w[2], line)};
    } else if (kind == "avgpool") {
      expect_args(0);
      ls.layer = GlobalAvgPoolLayer{};
    } else if (kind == "dense") {
      expect_args(1);
      ls.layer = DenseLayer{parse_extent(w[1], line)};
    } else if (kind == "softmax") {
      expect_args(0);
      ls.layer = SoftmaxLayer{};
    } else if (kind == "onehot") {
      expect_args(0);
      ls.layer = OneHotArgmaxLayer{};
    } else {
      throw Error("architecture: unknown layer kind '" + kind + "'");
    }
    spec.layers.push_back(ls);
  }
  if (!have_input) throw Error("architecture: missing input line");
  return spec;
}

ArchitectureSpec ArchitectureSpec::small_net() {
  ArchitectureSpec s;
  s.input_shape = {3, 32, 32};
  s.layers = {
      {ConvLayer{16, 3, 1, 1, true}, true},
      {ResidualLayer{32, 2}, true},
      {ResidualLayer{64, 2}, true},
      {GlobalAvgPoolLayer{}, true},
      {DenseLayer{10}, true},
      {SoftmaxLayer{}, true},
      {OneHotArgmaxLayer{}, true},
  };
  return s;
}

ArchitectureSpec ArchitectureSpec::resnet18() {
  ArchitectureSpec s;
  s.input_shape = {3, 32, 32};
  s.layers = {
      {ConvLayer{64, 3, 1, 1, true}, true},
      {ResidualLayer{64, 1}, false},  {ResidualLayer{64, 1}, true},
      {ResidualLayer{128, 2}, false}, {ResidualLayer{128, 1}, true},
      {ResidualLayer{256, 2}, false}, {ResidualLayer{256, 1}, true},
      {ResidualLayer{512, 2}, false}, {ResidualLayer{512, 1}, true},
      {GlobalAvgPoolLayer{}, true},
      {DenseLayer{10}, true},
      {SoftmaxLayer{}, true},
      {OneHotArgmaxLayer{}, true},
  };
  return s;
}

ArchitectureInfo analyze_architecture(const ArchitectureSpec& spec) {
  ArchitectureInfo info;
  if (spec.input_shape.size() != 3 || shape_size(spec.input_shape) == 0 ||
      std::find(spec.input_shape.begin(), spec.input_shape.end(), 0) != spec.input_shape.end()) {
    throw Error("architecture: input shape must be a positive CHW extent");
  }
  Shape cur = spec.input_shape;
  info.checkpoint_shapes.push_back(cur);
  info.checkpoint_layers.push_back(-1);

  auto add_param = [&](Shape shape, std::size_t fan_in) {
    info.parameter_shapes.push_back(std::move(shape));
    info.parameter_fan_in.push_back(fan_in);
  };
  auto require_chw = [&](std::size_t i, const char* what) {
    if (cur.size() != 3) {
      throw Error(fmt::format("architecture: layer {} ({}) needs a CHW input, got {}", i + 1, what,
                              shape_to_string(cur)));
    }
  };
  auto conv_out = [&](std::size_t i, const Shape& in, std::size_t out_c, std::size_t k,
                      std::size_t stride, std::size_t pad) {
    if (out_c == 0 || k == 0) throw Error(fmt::format("architecture: layer {} has zero extent", i + 1));
    try {
      const ConvGeometry g = conv_geometry(in, {out_c, in[0], k, k}, stride, pad);
      return Shape{g.out_channels, g.out_h, g.out_w};
    } catch (const Error& e) {
      throw Error(fmt::format("architecture: layer {}: {}", i + 1, e.what()));
    }
  };

  bool have_dense = false;
  bool in_head = false;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& ls = spec.layers[i];
    info.layer_parameter_offset.push_back(info.parameter_shapes.size());
    if (in_head && !is_head(ls.layer)) {
      throw Error(fmt::format("architecture: layer {} follows a softmax/onehot head", i + 1));
    }
    std::visit(Overloaded{
                   [&](const ConvLayer& c) {
                     require_chw(i, "conv");
                     Shape out = conv_out(i, cur, c.out_channels, c.kernel, c.stride, c.pad);
                     add_param({c.out_channels, cur[0], c.kernel, c.kernel}, cur[0] * c.kernel * c.kernel);
                     add_param({c.out_channels}, cur[0] * c.kernel * c.kernel);
                     cur = out;
                   },
                   [&](const ResidualLayer& r) {
                     require_chw(i, "residual");
                     Shape mid = conv_out(i, cur, r.out_channels, 3, r.stride, 1);
                     Shape out = conv_out(i, mid, r.out_channels, 3, 1, 1);
                     add_param({r.out_channels, cur[0], 3, 3}, cur[0] * 9);
                     add_param({r.out_channels}, cur[0] * 9);
                     add_param({r.out_channels, r.out_channels, 3, 3}, r.out_channels * 9);
                     add_param({r.out_channels}, r.out_channels * 9);
                     if (!identity_skip(cur, r)) {
                       Shape skip = conv_out(i, cur, r.out_channels, 1, r.stride, 0);
                       if (skip != out) {
                         throw Error(fmt::format(
                             "architecture: layer {} projection skip yields {} but block yields {}",
                             i + 1, shape_to_string(skip), shape_to_string(out)));
                       }
                       add_param({r.out_channels, cur[0], 1, 1}, cur[0]);
                       add_param({r.out_channels}, cur[0]);
                     }
                     cur = out;
                   },
                   [&](const GlobalAvgPoolLayer&) {
                     require_chw(i, "avgpool");
                     cur = Shape{cur[0]};
                   },
                   [&](const DenseLayer& d) {
                     if (d.out_dim == 0) throw Error("architecture: dense layer with zero outputs");
                     const std::size_t n = shape_size(cur);
                     add_param({d.out_dim, n}, n);
                     add_param({d.out_dim}, n);
                     cur = Shape{d.out_dim};
                     have_dense = true;
                     info.logits_layer = i;
                     info.classes = d.out_dim;
                   },
                   [&](const SoftmaxLayer&) {
                     if (!have_dense) throw Error("architecture: softmax before any dense layer");
                     in_head = true;
                   },
                   [&](const OneHotArgmaxLayer&) {
                     if (!have_dense) throw Error("architecture: onehot before any dense layer");
                     in_head = true;
                   },
               },
               ls.layer);
    info.layer_output_shapes.push_back(cur);
    if (ls.checkpoint) {
      info.checkpoint_shapes.push_back(cur);
      info.checkpoint_layers.push_back(static_cast<int>(i));
    }
  }
  if (!have_dense) throw Error("architecture: no dense layer produces logits");
  for (std::size_t i = info.logits_layer + 1; i < spec.layers.size(); ++i) {
    if (!is_head(spec.layers[i].layer)) {
      throw Error("architecture: only softmax/onehot may follow the logits layer");
    }
  }
  return info;
}

Model::Model(ArchitectureSpec spec, std::vector<Tensor> parameters, ModelMetadata metadata)
    : spec_(std::move(spec)),
      info_(analyze_architecture(spec_)),
      parameters_(std::move(parameters)),
      metadata_(metadata) {
  if (parameters_.size() != info_.parameter_shapes.size()) {
    throw Error(fmt::format("model: architecture needs {} parameter tensors, got {}",
                            info_.parameter_shapes.size(), parameters_.size()));
  }
  for (std::size_t i = 0; i < parameters_.size(); ++i) {
    if (parameters_[i].shape() != info_.parameter_shapes[i]) {
      throw Error(fmt::format("model: parameter {} has shape {}, expected {}", i,
                              shape_to_string(parameters_[i].shape()),
                              shape_to_string(info_.parameter_shapes[i])));
    }
    require_finite(parameters_[i], "model");
  }
}

void Model::set_parameter(std::size_t index, Tensor value) {
  if (index >= parameters_.size() || value.shape() != info_.parameter_shapes[index]) {
    throw Error(fmt::format("model: parameter {} shape mismatch", index));
  }
  require_finite(value, "set_parameter");
  parameters_[index] = std::move(value);
}

Model build_model(const ArchitectureSpec& spec, Rng& rng) {
  const ArchitectureInfo info = analyze_architecture(spec);
  std::vector<Tensor> params;
  params.reserve(info.parameter_shapes.size());
  for (std::size_t i = 0; i < info.parameter_shapes.size(); ++i) {
    Tensor t(info.parameter_shapes[i], 0.0);
    // Biases are rank 1 and stay zero.
    if (t.rank() > 1) {
      const double bound = std::sqrt(6.0 / static_cast<double>(info.parameter_fan_in[i]));
      for (double& v : t.values()) v = rng.uniform(-bound, bound);
    }
    params.push_back(std::move(t));
  }
  return Model(spec, std::move(params));
}

Model build_model(const ArchitectureSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  Model m = build_model(spec, rng);
  m.set_metadata({seed, 0});
  return m;
}

ForwardResult forward_with_checkpoints(const Model& model, const Tensor& input) {
  if (input.shape() != model.spec().input_shape) {
    throw Error(fmt::format("forward: input shape {} does not match {}",
                            shape_to_string(input.shape()),
                            shape_to_string(model.spec().input_shape)));
  }
  ForwardResult out;
  out.taps.reserve(model.info().checkpoint_count());
  out.logits = run_layers<Tensor>(model.spec(), model.info(), input,
                                  std::span<const Tensor>(model.parameters()),
                                  [&](const Tensor& t) { out.taps.push_back(t); });
  return out;
}

Tensor logits(const Model& model, const Tensor& input) {
  if (input.shape() != model.spec().input_shape) {
    throw Error(fmt::format("forward: input shape {} does not match {}",
                            shape_to_string(input.shape()),
                            shape_to_string(model.spec().input_shape)));
  }
  return run_layers<Tensor>(model.spec(), model.info(), input,
                            std::span<const Tensor>(model.parameters()), [](const Tensor&) {});
}

std::size_t predict(const Model& model, const Tensor& input) {
  return argmax(logits(model, input).values());
}

TapedForward forward_on_tape(Tape& tape, const Model& model, const Var& input,
                             bool parameters_require_grad) {
  if (input.value().shape() != model.spec().input_shape) {
    throw Error("forward: input shape does not match the architecture");
  }
  TapedForward out;
  out.parameters.reserve(model.parameters().size());
  for (const Tensor& p : model.parameters()) {
    out.parameters.push_back(tape.leaf(p, parameters_require_grad));
  }
  out.logits = run_layers<Var>(model.spec(), model.info(), input,
                               std::span<const Var>(out.parameters), [](const Tensor&) {});
  return out;
}

LossGradient loss_input_gradient(const Model& model, const Tensor& x, std::size_t label) {
  Tape tape;
  const Var in = tape.leaf(x, true);
  const TapedForward f = forward_on_tape(tape, model, in, false);
  const Var loss = cross_entropy(f.logits, label);
  const Gradients g = tape.backward(loss);
  return {loss.value()[0], f.logits.value(), g.of(in)};
}

Tensor flip_horizontal(const Tensor& image) {
  if (image.rank() != 3) throw Error("flip_horizontal: image must be CHW");
  Tensor out(image.shape());
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) out.at(k, y, x) = image.at(k, y, w - 1 - x);
    }
  }
  return out;
}

Tensor pad_and_crop(const Tensor& image, std::size_t pad, std::size_t dy, std::size_t dx) {
  if (image.rank() != 3) throw Error("pad_and_crop: image must be CHW");
  if (dy > 2 * pad || dx > 2 * pad) throw Error("pad_and_crop: crop offset outside padded image");
  Tensor out(image.shape(), 0.0);
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t y = 0; y < h; ++y) {
      // Row y of the crop is row y + dy - pad of the original.
      const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + dy) - static_cast<std::ptrdiff_t>(pad);
      if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
      for (std::size_t x = 0; x < w; ++x) {
        const std::ptrdiff_t sx =
            static_cast<std::ptrdiff_t>(x + dx) - static_cast<std::ptrdiff_t>(pad);
        if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
        out.at(k, y, x) = image.at(k, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
      }
    }
  }
  return out;
}

Tensor augment(const Tensor& image, Rng& rng, std::size_t pad) {
  const Tensor flipped = rng.coin() ? flip_horizontal(image) : image;
  const std::size_t dy = rng.uniform_int(2 * pad + 1);
  const std::size_t dx = rng.uniform_int(2 * pad + 1);
  return pad_and_crop(flipped, pad, dy, dx);
}

void TrainConfig::validate() const {
  if (epochs < 1) throw Error("train config: epochs must be >= 1");
  if (batch_size < 1) throw Error("train config: batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw Error("train config: learning_rate must be positive");
  if (!(beta1 > 0.0 && beta1 < 1.0)) throw Error("train config: beta1 must lie in (0, 1)");
  if (!(beta2 > 0.0 && beta2 < 1.0)) throw Error("train config: beta2 must lie in (0, 1)");
  if (!(eps > 0.0)) throw Error("train config: eps must be positive");
  if (loss != "cross_entropy") throw Error("train config: unsupported loss '" + loss + "'");
}

TrainResult train(Model model, const Dataset& data, const TrainConfig& config, Rng& rng,
                  const EpochCallback& on_epoch) {
  config.validate();
  if (data.empty()) throw Error("train: empty dataset");
  data.validate();
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.labels[i] >= model.info().classes) {
      throw Error(fmt::format("train: label {} of record {} outside [0, {})", data.labels[i], i,
                              model.info().classes));
    }
    if (data.images[i].shape() != model.spec().input_shape) {
      throw Error(fmt::format("train: record {} has shape {}", i,
                              shape_to_string(data.images[i].shape())));
    }
  }

  const std::size_t n_params = model.parameters().size();
  std::vector<Tensor> m1, m2, acc;
  for (const Tensor& p : model.parameters()) {
    m1.emplace_back(p.shape(), 0.0);
    m2.emplace_back(p.shape(), 0.0);
    acc.emplace_back(p.shape(), 0.0);
  }

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t step = 0;
  TrainResult result{model, {}};
  ModelMetadata meta = model.metadata();

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng.uniform_int(i)]);
    }
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      for (Tensor& a : acc) std::fill(a.values().begin(), a.values().end(), 0.0);
      for (std::size_t k = start; k < stop; ++k) {
        const std::size_t r = order[k];
        const Tensor input = config.augment ? augment(data.images[r], rng) : data.images[r];
        try {
          Tape tape;
          const TapedForward f = forward_on_tape(tape, model, tape.constant(input), true);
          const Var loss = cross_entropy(f.logits, data.labels[r]);
          epoch_loss += loss.value()[0];
          const Gradients g = tape.backward(loss);
          for (std::size_t p = 0; p < n_params; ++p) {
            const Tensor& gp = g.of(f.parameters[p]);
            for (std::size_t j = 0; j < gp.size(); ++j) acc[p][j] += gp[j];
          }
        } catch (const Error& e) {
          throw Error(fmt::format("train: diverged in epoch {}: {}", epoch, e.what()));
        }
      }
      ++step;
      const double inv_batch = 1.0 / static_cast<double>(stop - start);
      const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
      for (std::size_t p = 0; p < n_params; ++p) {
        Tensor updated = model.parameters()[p];
        for (std::size_t j = 0; j < updated.size(); ++j) {
          const double g = acc[p][j] * inv_batch;
          m1[p][j] = config.beta1 * m1[p][j] + (1.0 - config.beta1) * g;
          m2[p][j] = config.beta2 * m2[p][j] + (1.0 - config.beta2) * g * g;
          const double mhat = m1[p][j] / c1;
          const double vhat = m2[p][j] / c2;
          updated[j] -= config.learning_rate * mhat / (std::sqrt(vhat) + config.eps);
        }
        if (!updated.all_finite()) {
          throw Error(fmt::format("train: diverged in epoch {}: non-finite parameters", epoch));
        }
        model.set_parameter(p, std::move(updated));
      }
    }
    const double mean_loss = epoch_loss / static_cast<double>(data.size());
    if (!std::isfinite(mean_loss)) {
      throw Error(fmt::format("train: diverged in epoch {}: loss is not finite", epoch));
    }
    result.loss_history.push_back(mean_loss);
    ++meta.epochs_completed;
    model.set_metadata(meta);
    if (on_epoch && !on_epoch(epoch, mean_loss)) break;
  }
  result.model = std::move(model);
  return result;
}

TrainResult train(Model model, const Dataset& data, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  Rng rng(config.seed);
  return train(std::move(model), data, config, rng, on_epoch);
}

double evaluate_accuracy(const Model& model, const Dataset& data) {
  if (data.empty()) throw Error("evaluate_accuracy: empty dataset");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (predict(model, data.images[i]) == data.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace advdev

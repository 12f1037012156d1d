#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "advdev/autodiff.hpp"
#include "advdev/dataset.hpp"
#include "advdev/random.hpp"
#include "advdev/tensor.hpp"

namespace advdev {

struct ConvLayer {
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t pad = 1;
  bool relu = true;
};

/// Two 3x3 convolutions, each followed by ReLU, then the skip is added. The skip
/// is the identity when shape-preserving, else a 1x1 convolution with the block's
/// stride.
struct ResidualLayer {
  std::size_t out_channels = 0;
  std::size_t stride = 1;
};

struct GlobalAvgPoolLayer {};
struct DenseLayer {
  std::size_t out_dim = 0;
};
/// Head layers: they only produce checkpoint taps derived from the logits.
struct SoftmaxLayer {};
struct OneHotArgmaxLayer {};

using Layer = std::variant<ConvLayer, ResidualLayer, GlobalAvgPoolLayer, DenseLayer, SoftmaxLayer,
                           OneHotArgmaxLayer>;

struct LayerSpec {
  Layer layer;
  bool checkpoint = false;
};

/// Ordered layers over a CHW input. The input is always checkpoint 1; layers
/// flagged as checkpoints follow in order.
struct ArchitectureSpec {
  Shape input_shape{3, 32, 32};
  std::vector<LayerSpec> layers;

  /// Line-oriented text form, e.g. "conv 16 3 1 1 relu checkpoint".
  std::string to_text() const;
  static ArchitectureSpec from_text(std::string_view text);

  /// Desk-scale residual net with 8 checkpoints.
  static ArchitectureSpec small_net();
  /// ResNet-18 layout (no batch norm) with 10 checkpoints.
  static ArchitectureSpec resnet18();
};

/// Everything derived from a spec by shape propagation.
struct ArchitectureInfo {
  std::vector<Shape> layer_output_shapes;
  std::vector<Shape> checkpoint_shapes;
  /// Layer index producing each checkpoint; -1 for the input.
  std::vector<int> checkpoint_layers;
  std::size_t logits_layer = 0;
  std::size_t classes = 0;
  std::vector<Shape> parameter_shapes;
  std::vector<std::size_t> parameter_fan_in;
  /// First parameter index of each layer.
  std::vector<std::size_t> layer_parameter_offset;

  std::size_t checkpoint_count() const { return checkpoint_shapes.size(); }
  std::size_t parameter_count() const;
};

/// Validates the spec; throws advdev::Error when shape propagation fails.
ArchitectureInfo analyze_architecture(const ArchitectureSpec& spec);

struct ModelMetadata {
  std::uint64_t seed = 0;
  std::size_t epochs_completed = 0;
};

class Model {
 public:
  Model(ArchitectureSpec spec, std::vector<Tensor> parameters, ModelMetadata metadata = {});

  const ArchitectureSpec& spec() const { return spec_; }
  const ArchitectureInfo& info() const { return info_; }
  const std::vector<Tensor>& parameters() const { return parameters_; }
  const ModelMetadata& metadata() const { return metadata_; }

  /// Replaces one parameter tensor; the shape must match.
  void set_parameter(std::size_t index, Tensor value);
  void set_metadata(ModelMetadata metadata) { metadata_ = metadata; }

 private:
  ArchitectureSpec spec_;
  ArchitectureInfo info_;
  std::vector<Tensor> parameters_;
  ModelMetadata metadata_;
};

/// He-uniform weights (bound sqrt(6 / fan_in)), zero biases, drawn in parameter order.
Model build_model(const ArchitectureSpec& spec, Rng& rng);
Model build_model(const ArchitectureSpec& spec, std::uint64_t seed);

struct ForwardResult {
  Tensor logits;
  /// taps[i] is the activation at checkpoint i + 1.
  std::vector<Tensor> taps;
};

ForwardResult forward_with_checkpoints(const Model& model, const Tensor& input);
Tensor logits(const Model& model, const Tensor& input);
/// Argmax of the logits; ties go to the lowest index.
std::size_t predict(const Model& model, const Tensor& input);

struct TapedForward {
  Var logits;
  std::vector<Var> parameters;
};

/// Records the forward pass of `model` on `tape`, starting from `input`.
TapedForward forward_on_tape(Tape& tape, const Model& model, const Var& input,
                             bool parameters_require_grad);

struct LossGradient {
  double loss = 0.0;
  Tensor logits;
  Tensor input_gradient;
};

/// Softmax cross-entropy of (x, label) and its gradient with respect to x.
LossGradient loss_input_gradient(const Model& model, const Tensor& x, std::size_t label);

Tensor flip_horizontal(const Tensor& image);
/// Zero-pads by `pad` per edge, then crops the original extent at offset (dy, dx).
Tensor pad_and_crop(const Tensor& image, std::size_t pad, std::size_t dy, std::size_t dx);
/// Random horizontal flip (p = 0.5), then a random crop of the `pad`-padded image.
Tensor augment(const Tensor& image, Rng& rng, std::size_t pad = 4);

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::string loss = "cross_entropy";
  bool augment = true;
  std::uint64_t seed = 42;

  void validate() const;
};

struct TrainResult {
  Model model;
  /// Mean per-example loss of each epoch.
  std::vector<double> loss_history;
};

/// Called after each epoch; returning false stops training early.
using EpochCallback = std::function<bool(std::size_t epoch, double mean_loss)>;

/// Mini-batch Adam with bias-corrected moments. Per-example gradients are summed
/// in ascending example order and averaged over the batch.
TrainResult train(Model model, const Dataset& data, const TrainConfig& config, Rng& rng,
                  const EpochCallback& on_epoch = {});
TrainResult train(Model model, const Dataset& data, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

double evaluate_accuracy(const Model& model, const Dataset& data);

}  // namespace advdev

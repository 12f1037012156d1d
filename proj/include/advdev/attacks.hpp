#pragma once

#include <cstddef>
#include <string>
#include <variant>
#include <vector>

#include "advdev/autodiff.hpp"
#include "advdev/dataset.hpp"
#include "advdev/network.hpp"
#include "advdev/tensor.hpp"

namespace advdev {

/// Single signed-gradient step of size `epsilon` (pixel units in [0, 1]).
struct FgsmConfig {
  double epsilon = 3.0 / 255.0;
  void validate() const;
};

/// Iterated signed-gradient steps of size `alpha`, kept inside the L-inf
/// `epsilon` ball and the [0, 1] box after every step.
struct BimConfig {
  double alpha = 1.0 / 255.0;
  double epsilon = 3.0 / 255.0;
  std::size_t iterations = 10;
  void validate() const;
};

/// Carlini-Wagner L2, untargeted, tanh box parameterisation.
struct CwConfig {
  std::size_t binary_search_steps = 5;
  double learning_rate = 0.005;
  std::size_t max_iterations = 1000;
  double initial_c = 1.0;
  double confidence = 0.0;
  /// Stop a search step when the objective has not improved by 0.01% over the
  /// last tenth of the iteration budget.
  bool abort_early = true;
  void validate() const;
};

using AttackSpec = std::variant<FgsmConfig, BimConfig, CwConfig>;

/// "fgsm", "bim" or "cw".
std::string attack_name(const AttackSpec& spec);

struct AttackResult {
  Tensor adversarial;
  bool success = false;
  std::size_t iterations = 0;
  double l2 = 0.0;
  double linf = 0.0;
};

/// Snaps each value to the 256-level grid: round(v * 255) / 255, ties away from zero.
Tensor quantize(const Tensor& x);

/// max(Z_y - max_{i != y} Z_i, -kappa). Non-positive means the prediction has left y.
double f6_margin(const Tensor& logits, std::size_t label, double kappa);
Var f6_margin(const Var& logits, std::size_t label, double kappa);

AttackResult fgsm(const Model& model, const Tensor& x, std::size_t label, const FgsmConfig& cfg);
AttackResult bim(const Model& model, const Tensor& x, std::size_t label, const BimConfig& cfg);
AttackResult cw_l2(const Model& model, const Tensor& x, std::size_t label, const CwConfig& cfg);
AttackResult run_attack(const Model& model, const Tensor& x, std::size_t label,
                        const AttackSpec& spec);

struct AttackedDataset {
  /// Adversarial images with the original labels and ids, provenance = attack name.
  Dataset data;
  std::vector<AttackResult> results;
  std::vector<bool> success;
  double success_rate = 0.0;
};

/// Attacks every record in order. Every record must be classified correctly
/// beforehand; filter with `correctly_classified` first.
AttackedDataset attack_dataset(const Model& model, const Dataset& data, const AttackSpec& spec);

/// Records the model classifies correctly, order preserved.
Dataset correctly_classified(const Model& model, const Dataset& data);

}  // namespace advdev

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "advdev/attacks.hpp"
#include "advdev/deviation.hpp"
#include "advdev/io.hpp"
#include "advdev/network.hpp"

namespace advdev {

/// Malformed or inconsistent run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

struct DatasetSource {
  enum class Kind { synthetic, cifar10 };
  Kind kind = Kind::synthetic;
  // cifar10
  std::string path;
  std::size_t train_records = 5000;
  std::size_t test_records = 1000;
  // synthetic
  std::size_t classes = 10;
  std::size_t train_per_class = 100;
  std::size_t test_per_class = 20;
  std::optional<std::uint64_t> seed;
  SyntheticStyle style;
};

/// Parsed run configuration (JSON document, format_version 1). See README for keys.
struct RunConfig {
  std::uint64_t seed = 42;
  DatasetSource dataset;
  ArchitectureSpec architecture = ArchitectureSpec::small_net();
  TrainConfig train;
  std::vector<AttackSpec> attacks;
  std::vector<Metric> metrics{Metric::euclidean, Metric::cosine};
  /// Empty selects every checkpoint.
  std::vector<std::size_t> checkpoints;
  std::optional<std::uint64_t> max_pairs;
  std::optional<std::size_t> attack_limit;
  std::size_t sample_images = 7;
  std::string output_dir = "out";

  /// Re-seeds every stochastic stage from `seed`.
  void set_seed(std::uint64_t s);
};

/// Throws ConfigError on unknown keys, wrong types or invalid values.
RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace advdev

#pragma once

#include <filesystem>
#include <iosfwd>

#include "advdev/config.hpp"

namespace advdev {

/// A stage was started before the artifacts it consumes exist.
class StageError : public Error {
 public:
  using Error::Error;
};

/// Artifact names inside the output directory.
namespace artifacts {
inline constexpr const char* kModel = "model.advd";
inline constexpr const char* kTrainHistory = "train_history.json";
inline constexpr const char* kClean = "clean.advs";
inline constexpr const char* kAttackSummary = "attacks.json";
inline constexpr const char* kDeviations = "deviations.csv";
inline constexpr const char* kSummary = "summary.json";
inline constexpr const char* kNormalization = "normalization.json";
inline constexpr const char* kImages = "images";
}  // namespace artifacts

// Pipeline stages. Each reads only the config plus earlier-stage artifacts in `out`.
void stage_train(const RunConfig& cfg, const std::filesystem::path& out, std::ostream& log);
void stage_attack(const RunConfig& cfg, const std::filesystem::path& out, std::ostream& log);
void stage_analyze(const RunConfig& cfg, const std::filesystem::path& out, std::ostream& log);
void stage_plot(const RunConfig& cfg, const std::filesystem::path& out, std::ostream& log);
void stage_sample_images(const RunConfig& cfg, const std::filesystem::path& out, std::ostream& log);

/// Clean train/test records for the configured source.
struct Splits {
  Dataset train;
  Dataset test;
};
Splits load_splits(const RunConfig& cfg);

/// Entry point: `<train|attack|analyze|plot|pipeline|sample-images> --config <path>
/// [--seed N] [--out DIR]`. Returns 0 on success, 1 on usage/config errors and 2 on
/// runtime errors.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace advdev

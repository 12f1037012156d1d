#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "advdev/deviation.hpp"
#include "advdev/tensor.hpp"

namespace advdev {

namespace fs = std::filesystem;

inline constexpr const char* kDeviationsHeader =
    "image_id,attack,checkpoint,metric,raw_distance,normalized_distance";

/// Renders all rows, ordered by table, image, checkpoint, then metric. Values use
/// 17 significant digits.
std::string deviations_csv(std::span<const DeviationTable> tables);

nlohmann::json summaries_to_json(std::span<const DistributionSummary> summaries);
std::vector<DistributionSummary> summaries_from_json(const nlohmann::json& doc);
nlohmann::json constants_to_json(std::span<const NormalizationConstants> constants);

/// Writes deviations.csv, summary.json and normalization.json into `dir`. Nothing
/// is written if there are no rows.
void write_results(std::span<const DeviationTable> tables,
                   std::span<const DistributionSummary> summaries,
                   std::span<const NormalizationConstants> constants, const fs::path& dir);

/// Linear value-to-pixel mapping shared by every violin in one figure.
struct ViolinLayout {
  double width = 0.0;
  double height = 0.0;
  double left = 80.0;
  double right = 20.0;
  double top = 40.0;
  double bottom = 50.0;
  double slot_width = 70.0;
  double half_width = 28.0;
  double y_min = 0.0;
  double y_max = 1.0;

  double y_of(double value) const {
    return top + (y_max - value) / (y_max - y_min) * (height - top - bottom);
  }
  double x_of(std::size_t slot) const {
    return left + slot_width * (static_cast<double>(slot) + 0.5);
  }
};

ViolinLayout violin_layout(std::span<const DistributionSummary> groups);

/// One figure for the groups of a single (attack, metric): a mirrored density
/// polygon per checkpoint (a horizontal tick for point masses) plus a diamond at
/// the sample mean.
std::string violin_svg(std::span<const DistributionSummary> groups);
void render_violin_svg(std::span<const DistributionSummary> groups, const fs::path& path);
/// Splits `summaries` by (attack, metric) and writes violin_<attack>_<metric>.svg
/// files. Returns the paths written.
std::vector<fs::path> render_all_violins(std::span<const DistributionSummary> summaries,
                                         const fs::path& dir);

/// Binary P6 PPM of a 3-channel CHW image in [0, 1]; bytes are round(v * 255).
std::string image_ppm(const Tensor& image);
void export_image_ppm(const Tensor& image, const fs::path& path);

}  // namespace advdev

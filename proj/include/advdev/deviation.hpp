#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "advdev/dataset.hpp"
#include "advdev/network.hpp"

namespace advdev {

enum class Metric { euclidean, cosine };

std::string metric_name(Metric metric);
/// Accepts "euclidean" or "cosine".
Metric parse_metric(std::string_view name);

/// Vectors with a norm below this count as zero for the cosine metric.
inline constexpr double kZeroNorm = 1e-12;

/// Euclidean ||u - v|| or cosine 1 - u.v / (|u| |v|), clamped to [0, 2].
/// Cosine with a zero vector: 0 if both are zero, else 1.
double distance(std::span<const double> u, std::span<const double> v, Metric metric);
/// As above; increments `zero_norm_hits` whenever the zero-vector rule applies.
double distance(std::span<const double> u, std::span<const double> v, Metric metric,
                std::size_t& zero_norm_hits);

/// n (n - 1) / 2.
std::uint64_t pair_count(std::uint64_t n);

/// Fixed-order cascade summation.
double pairwise_sum(std::span<const double> values);

/// Row-major matrix of flattened activations, one row per image.
struct RepresentationMatrix {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<double> data;

  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(data).subspan(i * dim, dim);
  }
};

struct RepresentationSet {
  std::vector<std::size_t> image_ids;
  /// 1-based checkpoint ids, ascending.
  std::vector<std::size_t> checkpoints;
  /// One matrix per entry of `checkpoints`.
  std::vector<RepresentationMatrix> matrices;

  std::size_t image_count() const { return image_ids.size(); }
  std::size_t checkpoint_count() const { return checkpoints.size(); }
  /// Position of `checkpoint` in `checkpoints`; throws if absent.
  std::size_t slot(std::size_t checkpoint) const;
};

/// Flattened (row-major CHW) checkpoint activations for every image. An empty
/// `checkpoints` selects all of them.
RepresentationSet extract_representations(const Model& model, const Dataset& images,
                                          const std::vector<std::size_t>& checkpoints = {});

struct NormalizationConstants {
  Metric metric = Metric::euclidean;
  std::vector<std::size_t> checkpoints;
  /// Mean pairwise distance per checkpoint, aligned with `checkpoints`.
  std::vector<double> values;
  std::size_t sample_size = 0;
  std::uint64_t pairs_used = 0;
  bool exhaustive = true;
  std::size_t zero_norm_hits = 0;

  double at(std::size_t checkpoint) const;
};

/// Mean pairwise distance between representation rows at each checkpoint. Uses
/// every pair unless `max_pairs` is below the pair count, in which case that many
/// distinct pairs are drawn from `seed`.
NormalizationConstants normalization_constants(const RepresentationSet& reps, Metric metric,
                                               std::optional<std::uint64_t> max_pairs = {},
                                               std::uint64_t seed = 0);

struct DeviationRow {
  std::size_t image_id = 0;
  std::size_t checkpoint = 0;
  Metric metric = Metric::euclidean;
  double raw = 0.0;
  double normalized = 0.0;
};

struct DeviationTable {
  std::string attack;
  bool success_filtered = true;
  std::vector<DeviationRow> rows;
  std::size_t zero_norm_hits = 0;
};

/// Distances between aligned clean/adversarial representations, divided by the
/// checkpoint constant. Only images with `success[i]` set produce rows.
DeviationTable compute_deviations(const RepresentationSet& clean,
                                  const RepresentationSet& adversarial,
                                  const NormalizationConstants& constants,
                                  const std::vector<bool>& success, const std::string& attack);

struct KdeCurve {
  std::vector<double> grid;
  std::vector<double> density;
  double bandwidth = 0.0;
};

/// n^(-1/5).
double scott_factor(std::size_t n);
/// Scott's rule: (n-1)-denominator standard deviation times n^(-1/5).
double scott_bandwidth(std::span<const double> samples);
/// Gaussian kernel density at each point of `at`.
std::vector<double> kde_evaluate(std::span<const double> samples, double bandwidth,
                                 std::span<const double> at);
/// Gaussian KDE on `grid_points` equally spaced abscissae spanning [min, max].
KdeCurve kde(std::span<const double> samples, std::size_t grid_points = 100);

struct DistributionSummary {
  std::string attack;
  Metric metric = Metric::euclidean;
  std::size_t checkpoint = 0;
  std::size_t count = 0;
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  /// Zero-spread group: no density curve.
  bool point_mass = false;
  KdeCurve kde;
};

/// One summary of the normalized distances per (metric, checkpoint), ordered by
/// metric then checkpoint.
std::vector<DistributionSummary> summarize(const DeviationTable& table,
                                           std::size_t grid_points = 100);

}  // namespace advdev

#include "advdev/deviation.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <map>
#include <numbers>
#include <set>

#include "advdev/random.hpp"

namespace advdev {

namespace {

double dot(std::span<const double> u, std::span<const double> v) {
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
  return s;
}

double squared_norm(std::span<const double> u) { return dot(u, u); }

double euclidean(std::span<const double> u, std::span<const double> v) {
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double d = u[i] - v[i];
    s += d * d;
  }
  return std::sqrt(s);
}

/// Takes squared norms: sqrt(s * s) == s exactly, so equal vectors give exactly 0.
double cosine_from(double uv, double su, double sv, std::size_t& zero_norm_hits) {
  const bool zu = std::sqrt(su) < kZeroNorm;
  const bool zv = std::sqrt(sv) < kZeroNorm;
  if (zu || zv) {
    ++zero_norm_hits;
    return zu && zv ? 0.0 : 1.0;
  }
  const double cos = std::clamp(uv / std::sqrt(su * sv), -1.0, 1.0);
  return 1.0 - cos;
}

/// Distance between two rows of one matrix, with squared row norms cached for cosine.
class PairDistance {
 public:
  PairDistance(const RepresentationMatrix& m, Metric metric) : m_(m), metric_(metric) {
    if (metric_ == Metric::cosine) {
      norms_.reserve(m.rows);
      for (std::size_t i = 0; i < m.rows; ++i) norms_.push_back(squared_norm(m.row(i)));
    }
  }

  double operator()(std::size_t i, std::size_t j) {
    if (metric_ == Metric::euclidean) return euclidean(m_.row(i), m_.row(j));
    return cosine_from(dot(m_.row(i), m_.row(j)), norms_[i], norms_[j], zero_norm_hits);
  }

  std::size_t zero_norm_hits = 0;

 private:
  const RepresentationMatrix& m_;
  Metric metric_;
  std::vector<double> norms_;
};

}  // namespace

std::string metric_name(Metric metric) {
  return metric == Metric::euclidean ? "euclidean" : "cosine";
}

Metric parse_metric(std::string_view name) {
  if (name == "euclidean") return Metric::euclidean;
  if (name == "cosine") return Metric::cosine;
  throw Error(fmt::format("unknown metric '{}'", name));
}

double distance(std::span<const double> u, std::span<const double> v, Metric metric,
                std::size_t& zero_norm_hits) {
  if (u.size() != v.size()) {
    throw Error(fmt::format("distance: length mismatch {} vs {}", u.size(), v.size()));
  }
  if (metric == Metric::euclidean) return euclidean(u, v);
  return cosine_from(dot(u, v), squared_norm(u), squared_norm(v), zero_norm_hits);
}

double distance(std::span<const double> u, std::span<const double> v, Metric metric) {
  std::size_t ignored = 0;
  return distance(u, v, metric, ignored);
}

std::uint64_t pair_count(std::uint64_t n) { return n < 2 ? 0 : n * (n - 1) / 2; }

double pairwise_sum(std::span<const double> values) {
  constexpr std::size_t kLeaf = 64;
  if (values.size() <= kLeaf) {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
  const std::size_t half = values.size() / 2;
  return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

std::size_t RepresentationSet::slot(std::size_t checkpoint) const {
  const auto it = std::find(checkpoints.begin(), checkpoints.end(), checkpoint);
  if (it == checkpoints.end()) throw Error(fmt::format("no representations for checkpoint {}", checkpoint));
  return static_cast<std::size_t>(it - checkpoints.begin());
}

RepresentationSet extract_representations(const Model& model, const Dataset& images,
                                          const std::vector<std::size_t>& checkpoints) {
  const std::size_t total = model.info().checkpoint_count();
  RepresentationSet reps;
  if (checkpoints.empty()) {
    for (std::size_t c = 1; c <= total; ++c) reps.checkpoints.push_back(c);
  } else {
    reps.checkpoints = checkpoints;
    std::sort(reps.checkpoints.begin(), reps.checkpoints.end());
    reps.checkpoints.erase(std::unique(reps.checkpoints.begin(), reps.checkpoints.end()),
                           reps.checkpoints.end());
    for (std::size_t c : reps.checkpoints) {
      if (c < 1 || c > total) {
        throw Error(fmt::format("checkpoint {} outside 1..{}", c, total));
      }
    }
  }
  for (std::size_t c : reps.checkpoints) {
    RepresentationMatrix m;
    m.dim = shape_size(model.info().checkpoint_shapes[c - 1]);
    m.data.reserve(m.dim * images.size());
    reps.matrices.push_back(std::move(m));
  }
  for (std::size_t i = 0; i < images.size(); ++i) {
    const ForwardResult fr = forward_with_checkpoints(model, images.images[i]);
    for (std::size_t k = 0; k < reps.checkpoints.size(); ++k) {
      const Tensor& tap = fr.taps[reps.checkpoints[k] - 1];
      RepresentationMatrix& m = reps.matrices[k];
      m.data.insert(m.data.end(), tap.values().begin(), tap.values().end());
      ++m.rows;
    }
    reps.image_ids.push_back(images.ids.empty() ? i : images.ids[i]);
  }
  return reps;
}

double NormalizationConstants::at(std::size_t checkpoint) const {
  const auto it = std::find(checkpoints.begin(), checkpoints.end(), checkpoint);
  if (it == checkpoints.end()) {
    throw Error(fmt::format("no normalization constant for checkpoint {}", checkpoint));
  }
  return values[static_cast<std::size_t>(it - checkpoints.begin())];
}

NormalizationConstants normalization_constants(const RepresentationSet& reps, Metric metric,
                                               std::optional<std::uint64_t> max_pairs,
                                               std::uint64_t seed) {
  const std::size_t n = reps.image_count();
  if (n < 2) throw Error("normalization_constants: needs at least two images");
  const std::uint64_t total = pair_count(n);

  NormalizationConstants out;
  out.metric = metric;
  out.checkpoints = reps.checkpoints;
  out.sample_size = n;
  out.exhaustive = !max_pairs || *max_pairs >= total;
  out.pairs_used = out.exhaustive ? total : *max_pairs;
  if (out.pairs_used == 0) throw Error("normalization_constants: pair budget must be positive");

  // Sampled mode: distinct flat pair indices (Floyd's algorithm), then sorted.
  std::vector<std::uint64_t> sampled;
  if (!out.exhaustive) {
    Rng rng(seed);
    std::set<std::uint64_t> chosen;
    for (std::uint64_t j = total - out.pairs_used; j < total; ++j) {
      const std::uint64_t t = rng.uniform_int(j + 1);
      if (!chosen.insert(t).second) chosen.insert(j);
    }
    sampled.assign(chosen.begin(), chosen.end());
  }

  for (std::size_t k = 0; k < reps.checkpoint_count(); ++k) {
    const RepresentationMatrix& m = reps.matrices[k];
    PairDistance dist(m, metric);
    std::vector<double> row_sums;
    std::vector<double> row;
    if (out.exhaustive) {
      for (std::size_t i = 0; i + 1 < n; ++i) {
        row.clear();
        for (std::size_t j = i + 1; j < n; ++j) row.push_back(dist(i, j));
        row_sums.push_back(pairwise_sum(row));
      }
    } else {
      // Walk rows in order; flat index of pair (i, j>i) is offset(i) + (j - i - 1).
      std::size_t i = 0;
      std::uint64_t row_start = 0;
      for (std::uint64_t flat : sampled) {
        while (flat >= row_start + (n - 1 - i)) {
          if (!row.empty()) {
            row_sums.push_back(pairwise_sum(row));
            row.clear();
          }
          row_start += n - 1 - i;
          ++i;
        }
        row.push_back(dist(i, i + 1 + static_cast<std::size_t>(flat - row_start)));
      }
      if (!row.empty()) row_sums.push_back(pairwise_sum(row));
    }
    const double mean = pairwise_sum(row_sums) / static_cast<double>(out.pairs_used);
    if (!(mean >= 1e-12)) {
      throw Error(fmt::format("degenerate checkpoint {}: mean pairwise {} distance is {}",
                              reps.checkpoints[k], metric_name(metric), mean));
    }
    out.values.push_back(mean);
    out.zero_norm_hits += dist.zero_norm_hits;
  }
  return out;
}

DeviationTable compute_deviations(const RepresentationSet& clean,
                                  const RepresentationSet& adversarial,
                                  const NormalizationConstants& constants,
                                  const std::vector<bool>& success, const std::string& attack) {
  if (clean.image_ids != adversarial.image_ids) {
    throw Error("compute_deviations: clean and adversarial image ids are not aligned");
  }
  if (clean.checkpoints != adversarial.checkpoints) {
    throw Error("compute_deviations: clean and adversarial checkpoints differ");
  }
  if (success.size() != clean.image_count()) {
    throw Error(fmt::format("compute_deviations: success mask has {} entries for {} images",
                            success.size(), clean.image_count()));
  }
  std::vector<double> divisors;
  for (std::size_t c : clean.checkpoints) divisors.push_back(constants.at(c));

  DeviationTable table;
  table.attack = attack;
  table.success_filtered = true;
  for (std::size_t i = 0; i < clean.image_count(); ++i) {
    if (!success[i]) continue;
    for (std::size_t k = 0; k < clean.checkpoint_count(); ++k) {
      DeviationRow r;
      r.image_id = clean.image_ids[i];
      r.checkpoint = clean.checkpoints[k];
      r.metric = constants.metric;
      r.raw = distance(clean.matrices[k].row(i), adversarial.matrices[k].row(i), constants.metric,
                       table.zero_norm_hits);
      r.normalized = r.raw / divisors[k];
      table.rows.push_back(r);
    }
  }
  return table;
}

double scott_factor(std::size_t n) { return std::pow(static_cast<double>(n), -0.2); }

double scott_bandwidth(std::span<const double> samples) {
  const std::size_t n = samples.size();
  if (n < 2) throw Error("degenerate sample: KDE needs at least two values");
  double mean = 0.0;
  for (double s : samples) mean += s;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double s : samples) ss += (s - mean) * (s - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (!(sd > 0.0)) throw Error("degenerate sample: zero spread");
  return sd * scott_factor(n);
}

std::vector<double> kde_evaluate(std::span<const double> samples, double bandwidth,
                                 std::span<const double> at) {
  const double norm = 1.0 / (static_cast<double>(samples.size()) * bandwidth *
                             std::sqrt(2.0 * std::numbers::pi));
  std::vector<double> out;
  out.reserve(at.size());
  for (double g : at) {
    double s = 0.0;
    for (double x : samples) {
      const double z = (g - x) / bandwidth;
      s += std::exp(-0.5 * z * z);
    }
    out.push_back(s * norm);
  }
  return out;
}

KdeCurve kde(std::span<const double> samples, std::size_t grid_points) {
  if (grid_points < 2) throw Error("kde: needs at least two grid points");
  KdeCurve curve;
  curve.bandwidth = scott_bandwidth(samples);
  const auto [lo, hi] = std::minmax_element(samples.begin(), samples.end());
  const double step = (*hi - *lo) / static_cast<double>(grid_points - 1);
  for (std::size_t i = 0; i < grid_points; ++i) {
    curve.grid.push_back(i + 1 == grid_points ? *hi : *lo + step * static_cast<double>(i));
  }
  curve.density = kde_evaluate(samples, curve.bandwidth, curve.grid);
  return curve;
}

std::vector<DistributionSummary> summarize(const DeviationTable& table, std::size_t grid_points) {
  if (table.rows.empty()) throw Error("summarize: empty deviation table");
  std::map<std::pair<Metric, std::size_t>, std::vector<double>> groups;
  for (const DeviationRow& r : table.rows) groups[{r.metric, r.checkpoint}].push_back(r.normalized);

  std::vector<DistributionSummary> out;
  for (const auto& [key, values] : groups) {
    DistributionSummary s;
    s.attack = table.attack;
    s.metric = key.first;
    s.checkpoint = key.second;
    s.count = values.size();
    s.mean = pairwise_sum(values) / static_cast<double>(values.size());
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    s.min = *lo;
    s.max = *hi;
    s.point_mass = values.size() < 2 || s.min == s.max;
    if (!s.point_mass) s.kde = kde(values, grid_points);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace advdev

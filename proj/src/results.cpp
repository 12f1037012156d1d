#include "advdev/results.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <map>

#include "advdev/io.hpp"

namespace advdev {

namespace {

std::string num(double v) { return fmt::format("{:.17g}", v); }
std::string px(double v) { return fmt::format("{:.3f}", v); }

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string deviations_csv(std::span<const DeviationTable> tables) {
  std::string out = std::string(kDeviationsHeader) + "\n";
  // Group rows of each attack by (image order, checkpoint, metric).
  std::vector<std::string> attacks;
  std::map<std::string, std::vector<const DeviationRow*>> by_attack;
  for (const DeviationTable& t : tables) {
    if (!by_attack.contains(t.attack)) attacks.push_back(t.attack);
    auto& rows = by_attack[t.attack];
    for (const DeviationRow& r : t.rows) rows.push_back(&r);
  }
  for (const std::string& attack : attacks) {
    auto& rows = by_attack[attack];
    std::map<std::size_t, std::size_t> first_seen;
    for (const DeviationRow* r : rows) first_seen.emplace(r->image_id, first_seen.size());
    std::stable_sort(rows.begin(), rows.end(), [&](const DeviationRow* a, const DeviationRow* b) {
      const auto ka = std::make_tuple(first_seen[a->image_id], a->checkpoint, a->metric);
      const auto kb = std::make_tuple(first_seen[b->image_id], b->checkpoint, b->metric);
      return ka < kb;
    });
    for (const DeviationRow* r : rows) {
      out += fmt::format("{},{},{},{},{},{}\n", r->image_id, attack, r->checkpoint,
                         metric_name(r->metric), num(r->raw), num(r->normalized));
    }
  }
  return out;
}

nlohmann::json summaries_to_json(std::span<const DistributionSummary> summaries) {
  nlohmann::json groups = nlohmann::json::array();
  for (const DistributionSummary& s : summaries) {
    nlohmann::json g;
    g["attack"] = s.attack;
    g["metric"] = metric_name(s.metric);
    g["checkpoint"] = s.checkpoint;
    g["count"] = s.count;
    g["mean"] = s.mean;
    g["min"] = s.min;
    g["max"] = s.max;
    g["point_mass"] = s.point_mass;
    g["bandwidth"] = s.kde.bandwidth;
    g["grid"] = s.kde.grid;
    g["density"] = s.kde.density;
    groups.push_back(std::move(g));
  }
  return {{"format_version", 1}, {"groups", std::move(groups)}};
}

std::vector<DistributionSummary> summaries_from_json(const nlohmann::json& doc) {
  try {
    if (doc.at("format_version").get<int>() != 1) throw Error("summary.json: unsupported version");
    std::vector<DistributionSummary> out;
    for (const auto& g : doc.at("groups")) {
      DistributionSummary s;
      s.attack = g.at("attack").get<std::string>();
      s.metric = parse_metric(g.at("metric").get<std::string>());
      s.checkpoint = g.at("checkpoint").get<std::size_t>();
      s.count = g.at("count").get<std::size_t>();
      s.mean = g.at("mean").get<double>();
      s.min = g.at("min").get<double>();
      s.max = g.at("max").get<double>();
      s.point_mass = g.at("point_mass").get<bool>();
      s.kde.bandwidth = g.at("bandwidth").get<double>();
      s.kde.grid = g.at("grid").get<std::vector<double>>();
      s.kde.density = g.at("density").get<std::vector<double>>();
      out.push_back(std::move(s));
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("summary.json: ") + e.what());
  }
}

nlohmann::json constants_to_json(std::span<const NormalizationConstants> constants) {
  nlohmann::json list = nlohmann::json::array();
  for (const NormalizationConstants& c : constants) {
    nlohmann::json values = nlohmann::json::array();
    for (std::size_t k = 0; k < c.checkpoints.size(); ++k) {
      values.push_back({{"checkpoint", c.checkpoints[k]}, {"value", c.values[k]}});
    }
    list.push_back({{"metric", metric_name(c.metric)},
                    {"sample_size", c.sample_size},
                    {"pairs", c.pairs_used},
                    {"exhaustive", c.exhaustive},
                    {"zero_norm_pairs", c.zero_norm_hits},
                    {"constants", std::move(values)}});
  }
  return {{"format_version", 1}, {"normalization", std::move(list)}};
}

void write_results(std::span<const DeviationTable> tables,
                   std::span<const DistributionSummary> summaries,
                   std::span<const NormalizationConstants> constants, const fs::path& dir) {
  std::size_t rows = 0;
  for (const DeviationTable& t : tables) rows += t.rows.size();
  if (rows == 0) throw Error("write_results: deviation table is empty");
  if (summaries.empty()) throw Error("write_results: no summaries");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw Error(fmt::format("cannot create '{}'", dir.string()));

  const std::string csv = deviations_csv(tables);
  const std::string summary = summaries_to_json(summaries).dump(1) + "\n";
  const std::string norm = constants_to_json(constants).dump(1) + "\n";
  write_file_atomic(dir / "deviations.csv", csv);
  write_file_atomic(dir / "summary.json", summary);
  write_file_atomic(dir / "normalization.json", norm);
}

ViolinLayout violin_layout(std::span<const DistributionSummary> groups) {
  if (groups.empty()) throw Error("violin plot: no groups");
  ViolinLayout l;
  double lo = 0.0;
  double hi = 0.0;
  for (const DistributionSummary& g : groups) {
    lo = std::min(lo, g.min);
    hi = std::max(hi, g.max);
  }
  if (!(hi > lo)) hi = lo + 1.0;
  l.y_min = lo;
  l.y_max = hi + 0.05 * (hi - lo);
  l.width = l.left + l.right + l.slot_width * static_cast<double>(groups.size());
  l.height = 360.0;
  return l;
}

std::string violin_svg(std::span<const DistributionSummary> groups) {
  const ViolinLayout l = violin_layout(groups);
  const double plot_bottom = l.height - l.bottom;
  const std::string title =
      fmt::format("{} / {}", groups.front().attack, metric_name(groups.front().metric));

  std::string svg = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  svg += fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{}\" height=\"{}\" "
      "viewBox=\"0 0 {} {}\">\n",
      px(l.width), px(l.height), px(l.width), px(l.height));
  svg += "<rect x=\"0\" y=\"0\" width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += fmt::format("<text x=\"{}\" y=\"22\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n",
                     px(l.width / 2), escape_xml(title));

  // Axes and y ticks.
  svg += fmt::format("<line class=\"axis\" x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"black\"/>\n",
                     px(l.left), px(l.top), px(plot_bottom));
  svg += fmt::format("<line class=\"axis\" x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"black\"/>\n",
                     px(l.left), px(plot_bottom), px(l.width - l.right));
  constexpr int kTicks = 5;
  for (int t = 0; t <= kTicks; ++t) {
    const double v = l.y_min + (l.y_max - l.y_min) * t / kTicks;
    const double y = l.y_of(v);
    svg += fmt::format("<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
                       px(l.left - 5), px(y), px(l.left), px(y));
    svg += fmt::format(
        "<text x=\"{}\" y=\"{}\" font-size=\"10\" text-anchor=\"end\">{:.3g}</text>\n",
        px(l.left - 8), px(y + 3), v);
  }
  svg += fmt::format(
      "<text x=\"16\" y=\"{0}\" font-size=\"12\" text-anchor=\"middle\" "
      "transform=\"rotate(-90 16 {0})\">normalized {1} distance</text>\n",
      px((l.top + plot_bottom) / 2), metric_name(groups.front().metric));
  svg += fmt::format("<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">checkpoint</text>\n",
                     px((l.left + l.width - l.right) / 2), px(l.height - 12));

  for (std::size_t slot = 0; slot < groups.size(); ++slot) {
    const DistributionSummary& g = groups[slot];
    const double cx = l.x_of(slot);
    svg += fmt::format("<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
                       px(cx), px(plot_bottom + 16), g.checkpoint);
    if (g.point_mass || g.kde.grid.empty()) {
      const double y = l.y_of(g.mean);
      svg += fmt::format(
          "<line class=\"point-mass\" x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#1f77b4\" "
          "stroke-width=\"2\"/>\n",
          px(cx - l.half_width / 2), px(y), px(cx + l.half_width / 2), px(y));
    } else {
      const double peak = *std::max_element(g.kde.density.begin(), g.kde.density.end());
      std::string points;
      for (std::size_t i = 0; i < g.kde.grid.size(); ++i) {
        const double dx = peak > 0.0 ? g.kde.density[i] / peak * l.half_width : 0.0;
        points += fmt::format("{},{} ", px(cx + dx), px(l.y_of(g.kde.grid[i])));
      }
      for (std::size_t i = g.kde.grid.size(); i-- > 0;) {
        const double dx = peak > 0.0 ? g.kde.density[i] / peak * l.half_width : 0.0;
        points += fmt::format("{},{} ", px(cx - dx), px(l.y_of(g.kde.grid[i])));
      }
      points.pop_back();
      svg += fmt::format(
          "<polygon class=\"violin\" points=\"{}\" fill=\"#1f77b4\" fill-opacity=\"0.45\" "
          "stroke=\"#1f77b4\"/>\n",
          points);
    }
    const double my = l.y_of(g.mean);
    svg += fmt::format(
        "<polygon class=\"mean\" points=\"{0},{1} {2},{3} {0},{4} {5},{3}\" fill=\"black\"/>\n",
        px(cx), px(my - 5), px(cx + 5), px(my), px(my + 5), px(cx - 5));
  }
  svg += "</svg>\n";
  return svg;
}

void render_violin_svg(std::span<const DistributionSummary> groups, const fs::path& path) {
  write_file_atomic(path, violin_svg(groups));
}

std::vector<fs::path> render_all_violins(std::span<const DistributionSummary> summaries,
                                         const fs::path& dir) {
  if (summaries.empty()) throw Error("violin plot: no groups");
  std::vector<std::pair<std::string, Metric>> order;
  std::map<std::pair<std::string, Metric>, std::vector<DistributionSummary>> figures;
  for (const DistributionSummary& s : summaries) {
    const auto key = std::make_pair(s.attack, s.metric);
    if (!figures.contains(key)) order.push_back(key);
    figures[key].push_back(s);
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  std::vector<fs::path> written;
  for (const auto& key : order) {
    auto& groups = figures[key];
    std::stable_sort(groups.begin(), groups.end(),
                     [](const auto& a, const auto& b) { return a.checkpoint < b.checkpoint; });
    const fs::path path = dir / fmt::format("violin_{}_{}.svg", key.first, metric_name(key.second));
    render_violin_svg(groups, path);
    written.push_back(path);
  }
  return written;
}

std::string image_ppm(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw Error("ppm: image must be 3 x H x W");
  const std::size_t h = image.dim(1), w = image.dim(2);
  std::string out = fmt::format("P6\n{} {}\n255\n", w, h);
  out.reserve(out.size() + 3 * h * w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = image.at(c, y, x);
        if (!(v >= 0.0 && v <= 1.0)) throw Error(fmt::format("ppm: value {} outside [0, 1]", v));
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
      }
    }
  }
  return out;
}

void export_image_ppm(const Tensor& image, const fs::path& path) {
  write_file_atomic(path, image_ppm(image));
}

}  // namespace advdev

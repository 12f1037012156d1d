#include "advdev/cli.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>
#include <optional>
#include <ostream>

#include "advdev/attacks.hpp"
#include "advdev/deviation.hpp"
#include "advdev/io.hpp"
#include "advdev/random.hpp"
#include "advdev/results.hpp"

namespace advdev {

namespace {

using nlohmann::json;

void require_artifact(const fs::path& path, const char* producer) {
  if (!fs::exists(path)) {
    throw StageError(fmt::format("stage dependency: '{}' is missing; run `{}` first",
                                 path.string(), producer));
  }
}

fs::path attack_data_path(const fs::path& out, const std::string& name) {
  return out / (name + ".advs");
}
fs::path attack_mask_path(const fs::path& out, const std::string& name) {
  return out / (name + ".mask");
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (!fs::is_directory(dir)) throw Error(fmt::format("cannot create '{}'", dir.string()));
}

}  // namespace

Splits load_splits(const RunConfig& cfg) {
  const DatasetSource& ds = cfg.dataset;
  if (ds.kind == DatasetSource::Kind::cifar10) {
    CifarSplit s = load_cifar10_split(ds.path, ds.train_records, ds.test_records);
    return {std::move(s.train), std::move(s.test)};
  }
  const std::size_t per_class = ds.train_per_class + ds.test_per_class;
  const Dataset all = generate_synthetic(ds.classes, per_class, ds.seed.value_or(cfg.seed), ds.style);
  std::vector<std::size_t> train_pos, test_pos;
  const std::size_t n_train = ds.classes * ds.train_per_class;
  for (std::size_t i = 0; i < all.size(); ++i) (i < n_train ? train_pos : test_pos).push_back(i);
  Splits s{all.select(train_pos), all.select(test_pos)};
  // Ids index each split on its own.
  for (std::size_t i = 0; i < s.test.size(); ++i) s.test.ids[i] = i;
  return s;
}

void stage_train(const RunConfig& cfg, const fs::path& out, std::ostream& log) {
  ensure_dir(out);
  const Splits data = load_splits(cfg);
  if (cfg.architecture.input_shape != Shape{3, 32, 32}) {
    throw Error("train: dataset images are 3x32x32 but the architecture expects " +
                shape_to_string(cfg.architecture.input_shape));
  }
  Rng rng(cfg.seed);
  Model model = build_model(cfg.architecture, rng);
  model.set_metadata({cfg.seed, 0});
  fmt::print(log, "train: {} records, {} epochs, {} parameters\n", data.train.size(),
             cfg.train.epochs, model.info().parameter_count());
  TrainResult result = train(std::move(model), data.train, cfg.train, rng,
                             [&](std::size_t epoch, double loss) {
                               fmt::print(log, "  epoch {:3d}  loss {:.6f}\n", epoch, loss);
                               log.flush();
                               return true;
                             });
  const double train_acc = evaluate_accuracy(result.model, data.train);
  const double test_acc = evaluate_accuracy(result.model, data.test);
  fmt::print(log, "train: accuracy train {:.4f}, test {:.4f}\n", train_acc, test_acc);
  save_model(result.model, out / artifacts::kModel);
  const json history = {{"format_version", 1},
                        {"loss_history", result.loss_history},
                        {"train_accuracy", train_acc},
                        {"test_accuracy", test_acc},
                        {"train_records", data.train.size()},
                        {"test_records", data.test.size()}};
  write_file_atomic(out / artifacts::kTrainHistory, history.dump(1) + "\n");
}

void stage_attack(const RunConfig& cfg, const fs::path& out, std::ostream& log) {
  require_artifact(out / artifacts::kModel, "train");
  const Model model = load_model(out / artifacts::kModel);
  const Splits data = load_splits(cfg);
  Dataset clean = correctly_classified(model, data.test);
  fmt::print(log, "attack: {} of {} test records classified correctly\n", clean.size(),
             data.test.size());
  if (cfg.attack_limit) clean = clean.head(*cfg.attack_limit);
  if (clean.empty()) throw Error("attack: no correctly classified records to attack");
  clean.provenance = "clean";
  save_dataset(clean, out / artifacts::kClean);

  json summary = {{"format_version", 1},
                  {"test_records", data.test.size()},
                  {"attacked_records", clean.size()},
                  {"attacks", json::array()}};
  for (const AttackSpec& spec : cfg.attacks) {
    const std::string name = attack_name(spec);
    AttackedDataset result = attack_dataset(model, clean, spec);
    double l2 = 0.0, linf = 0.0;
    std::size_t successes = 0;
    for (const AttackResult& r : result.results) {
      if (!r.success) continue;
      ++successes;
      l2 += r.l2;
      linf += r.linf;
    }
    const double denom = successes ? static_cast<double>(successes) : 1.0;
    fmt::print(log, "attack: {:<5} success {:.4f} ({}/{})\n", name, result.success_rate, successes,
               clean.size());
    log.flush();
    save_dataset(result.data, attack_data_path(out, name));
    save_mask(result.success, attack_mask_path(out, name));
    summary["attacks"].push_back({{"attack", name},
                                  {"success_rate", result.success_rate},
                                  {"successes", successes},
                                  {"mean_l2_successful", l2 / denom},
                                  {"mean_linf_successful", linf / denom}});
  }
  write_file_atomic(out / artifacts::kAttackSummary, summary.dump(1) + "\n");
}

void stage_analyze(const RunConfig& cfg, const fs::path& out, std::ostream& log) {
  require_artifact(out / artifacts::kModel, "train");
  require_artifact(out / artifacts::kClean, "attack");
  for (const AttackSpec& spec : cfg.attacks) {
    require_artifact(attack_data_path(out, attack_name(spec)), "attack");
    require_artifact(attack_mask_path(out, attack_name(spec)), "attack");
  }
  const Model model = load_model(out / artifacts::kModel);
  const Dataset clean = load_dataset(out / artifacts::kClean);
  const RepresentationSet clean_reps = extract_representations(model, clean, cfg.checkpoints);

  std::vector<NormalizationConstants> constants;
  for (Metric m : cfg.metrics) {
    constants.push_back(normalization_constants(clean_reps, m, cfg.max_pairs, cfg.seed));
    fmt::print(log, "analyze: {} constants over {} pairs\n", metric_name(m),
               constants.back().pairs_used);
  }

  std::vector<DeviationTable> tables;
  std::vector<DistributionSummary> summaries;
  for (const AttackSpec& spec : cfg.attacks) {
    const std::string name = attack_name(spec);
    const Dataset adv = load_dataset(attack_data_path(out, name));
    const std::vector<bool> mask = load_mask(attack_mask_path(out, name));
    const RepresentationSet adv_reps = extract_representations(model, adv, cfg.checkpoints);
    for (const NormalizationConstants& c : constants) {
      DeviationTable t = compute_deviations(clean_reps, adv_reps, c, mask, name);
      if (t.rows.empty()) {
        fmt::print(log, "analyze: {} has no successful attacks; skipped\n", name);
        continue;
      }
      if (t.zero_norm_hits) {
        fmt::print(log, "analyze: warning: {} zero-norm cosine comparisons for {}\n",
                   t.zero_norm_hits, name);
      }
      for (DistributionSummary& s : summarize(t)) summaries.push_back(std::move(s));
      tables.push_back(std::move(t));
    }
  }
  write_results(tables, summaries, constants, out);
  fmt::print(log, "analyze: wrote {} summary groups\n", summaries.size());
}

void stage_plot(const RunConfig&, const fs::path& out, std::ostream& log) {
  require_artifact(out / artifacts::kSummary, "analyze");
  json doc;
  try {
    doc = json::parse(read_file(out / artifacts::kSummary));
  } catch (const json::exception& e) {
    throw Error(std::string("summary.json: ") + e.what());
  }
  const std::vector<DistributionSummary> summaries = summaries_from_json(doc);
  for (const fs::path& p : render_all_violins(summaries, out)) {
    fmt::print(log, "plot: wrote {}\n", p.filename().string());
  }
}

void stage_sample_images(const RunConfig& cfg, const fs::path& out, std::ostream& log) {
  require_artifact(out / artifacts::kClean, "attack");
  for (const AttackSpec& spec : cfg.attacks) {
    require_artifact(attack_data_path(out, attack_name(spec)), "attack");
  }
  const Dataset clean = load_dataset(out / artifacts::kClean);
  std::vector<Dataset> attacked;
  for (const AttackSpec& spec : cfg.attacks) {
    attacked.push_back(load_dataset(attack_data_path(out, attack_name(spec))));
  }
  // Partial Fisher-Yates over record positions.
  std::vector<std::size_t> pos(clean.size());
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = i;
  Rng rng(cfg.seed);
  const std::size_t k = std::min(cfg.sample_images, pos.size());
  for (std::size_t i = 0; i < k; ++i) {
    std::swap(pos[i], pos[i + rng.uniform_int(pos.size() - i)]);
  }
  const fs::path dir = out / artifacts::kImages;
  ensure_dir(dir);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t p = pos[i];
    const std::string stem = fmt::format("sample{}_id{}", i, clean.ids[p]);
    export_image_ppm(clean.images[p], dir / (stem + "_clean.ppm"));
    for (const Dataset& a : attacked) {
      export_image_ppm(a.images[p], dir / fmt::format("{}_{}.ppm", stem, a.provenance));
    }
  }
  fmt::print(log, "sample-images: wrote {} image sets\n", k);
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Adversarial representation-deviation toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  app.add_option("--config", config_path, "Run configuration (JSON)")->required();
  app.add_option("--seed", seed, "Override the configured global seed");
  app.add_option("--out", out_dir, "Override the configured output directory");
  const std::pair<const char*, const char*> commands[] = {
      {"train", "Train the configured network and save model.advd"},
      {"attack", "Attack correctly classified test images"},
      {"analyze", "Compute normalized deviations and their summaries"},
      {"plot", "Render violin plots from summary.json"},
      {"pipeline", "Run train, attack, analyze, plot and sample-images"},
      {"sample-images", "Export clean/adversarial image pairs as PPM"},
  };
  for (const auto& [name, help] : commands) app.add_subcommand(name, help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return 1;
  }

  RunConfig cfg;
  try {
    cfg = load_run_config(config_path);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    err << "config error: " << e.what() << "\n";
    return 1;
  }
  if (seed) cfg.set_seed(*seed);
  const fs::path dir = out_dir.empty() ? fs::path(cfg.output_dir) : fs::path(out_dir);
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    if (command == "train") {
      stage_train(cfg, dir, out);
    } else if (command == "attack") {
      stage_attack(cfg, dir, out);
    } else if (command == "analyze") {
      stage_analyze(cfg, dir, out);
    } else if (command == "plot") {
      stage_plot(cfg, dir, out);
    } else if (command == "sample-images") {
      stage_sample_images(cfg, dir, out);
    } else {
      stage_train(cfg, dir, out);
      stage_attack(cfg, dir, out);
      stage_analyze(cfg, dir, out);
      stage_plot(cfg, dir, out);
      stage_sample_images(cfg, dir, out);
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace advdev

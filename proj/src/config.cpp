#include "advdev/config.hpp"

#include <charconv>
#include <fmt/format.h>
#include <fstream>
#include <set>

namespace advdev {

namespace {

using nlohmann::json;

void only_keys(const json& obj, const std::string& where, std::initializer_list<const char*> keys) {
  if (!obj.is_object()) throw ConfigError(fmt::format("{}: expected an object", where));
  const std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [k, v] : obj.items()) {
    if (!allowed.contains(k)) throw ConfigError(fmt::format("{}: unknown key '{}'", where, k));
  }
}

template <class T>
T get(const json& obj, const char* key, const std::string& where, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(fmt::format("{}.{}: wrong type", where, key));
  }
}

std::size_t get_count(const json& obj, const char* key, const std::string& where,
                      std::size_t fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number_unsigned()) {
    throw ConfigError(fmt::format("{}.{}: expected a non-negative integer", where, key));
  }
  return v.get<std::size_t>();
}

/// A number, or a fraction string such as "3/255".
double get_real(const json& obj, const char* key, const std::string& where, double fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    const std::string s = v.get<std::string>();
    const auto slash = s.find('/');
    double num = 0.0, den = 1.0;
    const char* b = s.data();
    const char* e = s.data() + s.size();
    bool ok;
    if (slash == std::string::npos) {
      ok = std::from_chars(b, e, num).ptr == e;
    } else {
      ok = std::from_chars(b, b + slash, num).ptr == b + slash &&
           std::from_chars(b + slash + 1, e, den).ptr == e && den != 0.0;
    }
    if (ok) return num / den;
  }
  throw ConfigError(fmt::format("{}.{}: expected a number or a fraction like \"3/255\"", where, key));
}

ArchitectureSpec parse_architecture(const json& v) {
  if (v.is_string()) {
    const std::string name = v.get<std::string>();
    if (name == "smallnet") return ArchitectureSpec::small_net();
    if (name == "resnet18") return ArchitectureSpec::resnet18();
    throw ConfigError("architecture: unknown preset '" + name + "'");
  }
  if (v.is_array()) {
    std::string text;
    for (const json& line : v) {
      if (!line.is_string()) throw ConfigError("architecture: layer lines must be strings");
      text += line.get<std::string>() + "\n";
    }
    try {
      ArchitectureSpec spec = ArchitectureSpec::from_text(text);
      analyze_architecture(spec);
      return spec;
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
  }
  throw ConfigError("architecture: expected a preset name or a list of layer lines");
}

AttackSpec parse_attack(const std::string& name, const json& v) {
  const std::string where = "attacks." + name;
  AttackSpec spec;
  if (name == "fgsm") {
    only_keys(v, where, {"epsilon"});
    FgsmConfig c;
    c.epsilon = get_real(v, "epsilon", where, c.epsilon);
    spec = c;
  } else if (name == "bim") {
    only_keys(v, where, {"epsilon", "alpha", "iterations"});
    BimConfig c;
    c.epsilon = get_real(v, "epsilon", where, c.epsilon);
    c.alpha = get_real(v, "alpha", where, c.alpha);
    c.iterations = get_count(v, "iterations", where, c.iterations);
    spec = c;
  } else if (name == "cw") {
    only_keys(v, where, {"binary_search_steps", "learning_rate", "max_iterations", "initial_c",
                         "confidence", "abort_early"});
    CwConfig c;
    c.binary_search_steps = get_count(v, "binary_search_steps", where, c.binary_search_steps);
    c.learning_rate = get_real(v, "learning_rate", where, c.learning_rate);
    c.max_iterations = get_count(v, "max_iterations", where, c.max_iterations);
    c.initial_c = get_real(v, "initial_c", where, c.initial_c);
    c.confidence = get_real(v, "confidence", where, c.confidence);
    c.abort_early = get(v, "abort_early", where, c.abort_early);
    spec = c;
  } else {
    throw ConfigError(fmt::format("attacks: unknown attack '{}'", name));
  }
  try {
    std::visit([](const auto& c) { c.validate(); }, spec);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return spec;
}

}  // namespace

void RunConfig::set_seed(std::uint64_t s) {
  seed = s;
  train.seed = s;
}

RunConfig parse_run_config(const json& doc) {
  only_keys(doc, "config",
            {"format_version", "seed", "dataset", "architecture", "train", "attacks", "metrics",
             "checkpoints", "normalization", "attack_limit", "sample_images", "output_dir"});
  if (get<int>(doc, "format_version", "config", 1) != 1) {
    throw ConfigError("config: unsupported format_version");
  }
  RunConfig cfg;
  cfg.set_seed(get_count(doc, "seed", "config", cfg.seed));

  if (doc.contains("dataset")) {
    const json& d = doc.at("dataset");
    const std::string source = get<std::string>(d, "source", "dataset", "synthetic");
    DatasetSource& ds = cfg.dataset;
    if (source == "cifar10") {
      only_keys(d, "dataset", {"source", "path", "train_records", "test_records"});
      ds.kind = DatasetSource::Kind::cifar10;
      ds.path = get<std::string>(d, "path", "dataset", "");
      if (ds.path.empty()) throw ConfigError("dataset.path: required for cifar10");
      ds.train_records = get_count(d, "train_records", "dataset", ds.train_records);
      ds.test_records = get_count(d, "test_records", "dataset", ds.test_records);
    } else if (source == "synthetic") {
      only_keys(d, "dataset",
                {"source", "classes", "train_per_class", "test_per_class", "seed", "amplitude",
                 "noise"});
      ds.kind = DatasetSource::Kind::synthetic;
      ds.classes = get_count(d, "classes", "dataset", ds.classes);
      ds.train_per_class = get_count(d, "train_per_class", "dataset", ds.train_per_class);
      ds.test_per_class = get_count(d, "test_per_class", "dataset", ds.test_per_class);
      if (d.contains("seed")) ds.seed = get_count(d, "seed", "dataset", 0);
      ds.style.amplitude = get_real(d, "amplitude", "dataset", ds.style.amplitude);
      ds.style.noise = get_real(d, "noise", "dataset", ds.style.noise);
      if (ds.classes < 2) throw ConfigError("dataset.classes: must be >= 2");
    } else {
      throw ConfigError("dataset.source: expected \"cifar10\" or \"synthetic\"");
    }
  }

  if (doc.contains("architecture")) cfg.architecture = parse_architecture(doc.at("architecture"));

  if (doc.contains("train")) {
    const json& t = doc.at("train");
    only_keys(t, "train",
              {"epochs", "batch_size", "learning_rate", "beta1", "beta2", "eps", "loss", "augment"});
    TrainConfig& tc = cfg.train;
    tc.epochs = get_count(t, "epochs", "train", tc.epochs);
    tc.batch_size = get_count(t, "batch_size", "train", tc.batch_size);
    tc.learning_rate = get_real(t, "learning_rate", "train", tc.learning_rate);
    tc.beta1 = get_real(t, "beta1", "train", tc.beta1);
    tc.beta2 = get_real(t, "beta2", "train", tc.beta2);
    tc.eps = get_real(t, "eps", "train", tc.eps);
    tc.loss = get<std::string>(t, "loss", "train", tc.loss);
    tc.augment = get<bool>(t, "augment", "train", tc.augment);
  }
  try {
    cfg.train.validate();
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }

  if (doc.contains("attacks")) {
    const json& a = doc.at("attacks");
    only_keys(a, "attacks", {"fgsm", "bim", "cw"});
    // Fixed order regardless of key order in the document.
    for (const char* name : {"fgsm", "bim", "cw"}) {
      if (a.contains(name)) cfg.attacks.push_back(parse_attack(name, a.at(name)));
    }
  } else {
    cfg.attacks = {FgsmConfig{}, BimConfig{}, CwConfig{}};
  }

  if (doc.contains("metrics")) {
    cfg.metrics.clear();
    const json& m = doc.at("metrics");
    if (!m.is_array() || m.empty()) throw ConfigError("metrics: expected a non-empty list");
    for (const json& v : m) {
      if (!v.is_string()) throw ConfigError("metrics: expected strings");
      try {
        cfg.metrics.push_back(parse_metric(v.get<std::string>()));
      } catch (const Error& e) {
        throw ConfigError(e.what());
      }
    }
  }

  const ArchitectureInfo info = analyze_architecture(cfg.architecture);
  if (doc.contains("checkpoints") && !doc.at("checkpoints").is_null()) {
    const json& c = doc.at("checkpoints");
    if (!c.is_array()) throw ConfigError("checkpoints: expected a list of ids");
    for (const json& v : c) {
      if (!v.is_number_unsigned()) throw ConfigError("checkpoints: expected positive integers");
      const std::size_t id = v.get<std::size_t>();
      if (id < 1 || id > info.checkpoint_count()) {
        throw ConfigError(fmt::format("checkpoints: {} outside 1..{}", id, info.checkpoint_count()));
      }
      cfg.checkpoints.push_back(id);
    }
  }

  if (doc.contains("normalization")) {
    const json& n = doc.at("normalization");
    only_keys(n, "normalization", {"max_pairs"});
    if (n.contains("max_pairs") && !n.at("max_pairs").is_null()) {
      cfg.max_pairs = get_count(n, "max_pairs", "normalization", 0);
      if (*cfg.max_pairs == 0) throw ConfigError("normalization.max_pairs: must be positive");
    }
  }
  if (doc.contains("attack_limit") && !doc.at("attack_limit").is_null()) {
    cfg.attack_limit = get_count(doc, "attack_limit", "config", 0);
  }
  cfg.sample_images = get_count(doc, "sample_images", "config", cfg.sample_images);
  cfg.output_dir = get<std::string>(doc, "output_dir", "config", cfg.output_dir);
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open config '{}'", path.string()));
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("config '{}': {}", path.string(), e.what()));
  }
  return parse_run_config(doc);
}

}  // namespace advdev

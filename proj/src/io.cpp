#include "advdev/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fmt/format.h>
#include <fstream>
#include <numbers>
#include <sstream>

#include "advdev/random.hpp"

namespace advdev {

namespace {

constexpr std::size_t kCifarRecord = 3073;
constexpr std::uint32_t kModelVersion = 1;
constexpr std::uint32_t kDatasetVersion = 1;

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void text(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t>& data() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  ByteReader(const std::uint8_t* p, std::size_t n, std::string what) : p_(p), n_(n), what_(std::move(what)) {}

  bool done() const { return pos_ == n_; }
  void need(std::size_t k) {
    if (n_ - pos_ < k) throw Error(fmt::format("{}: truncated at byte {}", what_, pos_));
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p_[pos_++]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string raw(std::size_t k) {
    need(k);
    std::string s(reinterpret_cast<const char*>(p_ + pos_), k);
    pos_ += k;
    return s;
  }
  std::string text() { return raw(u32()); }

 private:
  const std::uint8_t* p_;
  std::size_t n_;
  std::size_t pos_ = 0;
  std::string what_;
};

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(fmt::format("cannot open '{}'", path.string()));
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

std::string as_string(const std::vector<std::uint8_t>& bytes) {
  return std::string(bytes.begin(), bytes.end());
}

}  // namespace

void write_file_atomic(const fs::path& path, const std::string& bytes) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(fmt::format("cannot write '{}'", tmp.string()));
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(fmt::format("write failed for '{}'", tmp.string()));
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw Error(fmt::format("cannot move output into '{}'", path.string()));
  }
}

std::string read_file(const fs::path& path) { return as_string(read_bytes(path)); }

Dataset load_cifar10(const fs::path& path, std::size_t limit) {
  const std::vector<std::uint8_t> bytes = read_bytes(path);
  if (bytes.size() % kCifarRecord != 0) {
    throw Error(fmt::format("cifar10: '{}' has {} bytes, not a whole number of {}-byte records",
                            path.string(), bytes.size(), kCifarRecord));
  }
  const std::size_t n = std::min(limit, bytes.size() / kCifarRecord);
  Dataset data;
  data.images.reserve(n);
  for (std::size_t r = 0; r < n; ++r) {
    const std::uint8_t* rec = bytes.data() + r * kCifarRecord;
    if (rec[0] > 9) {
      throw Error(fmt::format("cifar10: record {} has label byte {}", r, static_cast<int>(rec[0])));
    }
    Tensor img({3, 32, 32});
    for (std::size_t i = 0; i < 3072; ++i) img[i] = static_cast<double>(rec[1 + i]) / 255.0;
    data.images.push_back(std::move(img));
    data.labels.push_back(rec[0]);
    data.ids.push_back(r);
  }
  return data;
}

CifarSplit load_cifar10_split(const fs::path& dir, std::size_t train_records,
                              std::size_t test_records) {
  CifarSplit split;
  for (int b = 1; b <= 5 && split.train.size() < train_records; ++b) {
    const Dataset part =
        load_cifar10(dir / fmt::format("data_batch_{}.bin", b), train_records - split.train.size());
    for (std::size_t i = 0; i < part.size(); ++i) {
      split.train.images.push_back(part.images[i]);
      split.train.labels.push_back(part.labels[i]);
      split.train.ids.push_back(split.train.ids.size());
    }
  }
  split.test = load_cifar10(dir / "test_batch.bin", test_records);
  if (split.train.size() < train_records || split.test.size() < test_records) {
    throw Error(fmt::format("cifar10: '{}' holds fewer records than requested", dir.string()));
  }
  return split;
}

Dataset generate_synthetic(std::size_t classes, std::size_t per_class, std::uint64_t seed,
                           const SyntheticStyle& style) {
  if (classes < 2) throw Error("generate_synthetic: needs at least two classes");
  constexpr std::size_t C = 3, H = 32, W = 32;
  constexpr int kWaves = 3;
  Rng rng(seed);

  std::vector<Tensor> prototypes;
  for (std::size_t k = 0; k < classes; ++k) {
    Tensor proto({C, H, W});
    for (std::size_t c = 0; c < C; ++c) {
      double fy[kWaves], fx[kWaves], phase[kWaves], amp[kWaves];
      for (int m = 0; m < kWaves; ++m) {
        fy[m] = static_cast<double>(rng.uniform_int(4));
        fx[m] = static_cast<double>(rng.uniform_int(4));
        phase[m] = rng.uniform(0.0, 2.0 * std::numbers::pi);
        amp[m] = rng.normal();
      }
      double peak = 0.0;
      for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) {
          double v = 0.0;
          for (int m = 0; m < kWaves; ++m) {
            v += amp[m] * std::cos(2.0 * std::numbers::pi *
                                       (fy[m] * static_cast<double>(y) / H +
                                        fx[m] * static_cast<double>(x) / W) +
                                   phase[m]);
          }
          proto.at(c, y, x) = v;
          peak = std::max(peak, std::abs(v));
        }
      }
      for (std::size_t i = 0; i < H * W; ++i) {
        double& v = proto[c * H * W + i];
        v = 0.5 + style.amplitude * (peak > 0.0 ? v / peak : 0.0);
      }
    }
    prototypes.push_back(std::move(proto));
  }

  Dataset data;
  data.provenance = "clean";
  const std::size_t n = classes * per_class;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = i % classes;
    Tensor img = prototypes[label];
    for (double& v : img.values()) {
      v = std::round(std::clamp(v + style.noise * rng.normal(), 0.0, 1.0) * 255.0) / 255.0;
    }
    data.images.push_back(std::move(img));
    data.labels.push_back(label);
    data.ids.push_back(i);
  }
  return data;
}

std::vector<std::uint8_t> serialize_model(const Model& model) {
  ByteWriter w;
  w.bytes("ADVD", 4);
  w.u32(kModelVersion);
  std::string descriptor = model.spec().to_text();
  descriptor += fmt::format("@seed {}\n@epochs {}\n", model.metadata().seed,
                            model.metadata().epochs_completed);
  w.text(descriptor);
  for (const Tensor& p : model.parameters()) {
    w.u32(static_cast<std::uint32_t>(p.rank()));
    for (std::size_t e : p.shape()) w.u32(static_cast<std::uint32_t>(e));
    for (double v : p.values()) w.f64(v);
  }
  return std::move(w.data());
}

Model deserialize_model(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes.data(), bytes.size(), "model");
  if (r.raw(4) != "ADVD") throw Error("model: bad magic (expected ADVD)");
  const std::uint32_t version = r.u32();
  if (version != kModelVersion) throw Error(fmt::format("model: unsupported version {}", version));

  const std::string descriptor = r.text();
  std::string arch_text;
  ModelMetadata meta;
  std::istringstream lines(descriptor);
  for (std::string line; std::getline(lines, line);) {
    if (line.rfind("@seed ", 0) == 0) {
      meta.seed = std::stoull(line.substr(6));
    } else if (line.rfind("@epochs ", 0) == 0) {
      meta.epochs_completed = std::stoull(line.substr(8));
    } else {
      arch_text += line + "\n";
    }
  }
  const ArchitectureSpec spec = ArchitectureSpec::from_text(arch_text);
  const ArchitectureInfo info = analyze_architecture(spec);

  std::vector<Tensor> params;
  while (!r.done()) {
    if (params.size() == info.parameter_shapes.size()) {
      throw Error(fmt::format("model: more parameter tensors than the {} the architecture declares",
                              info.parameter_shapes.size()));
    }
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > 4) throw Error(fmt::format("model: bad tensor rank {}", rank));
    Shape shape;
    for (std::uint32_t k = 0; k < rank; ++k) shape.push_back(r.u32());
    if (shape != info.parameter_shapes[params.size()]) {
      throw Error(fmt::format("model: parameter {} has shape {}, architecture expects {}",
                              params.size(), shape_to_string(shape),
                              shape_to_string(info.parameter_shapes[params.size()])));
    }
    std::vector<double> values(shape_size(shape));
    for (double& v : values) v = r.f64();
    params.emplace_back(std::move(shape), std::move(values));
  }
  if (params.size() != info.parameter_shapes.size()) {
    throw Error(fmt::format("model: found {} parameter tensors, architecture declares {}",
                            params.size(), info.parameter_shapes.size()));
  }
  return Model(spec, std::move(params), meta);
}

void save_model(const Model& model, const fs::path& path) {
  write_file_atomic(path, as_string(serialize_model(model)));
}

Model load_model(const fs::path& path) { return deserialize_model(read_bytes(path)); }

void save_dataset(const Dataset& data, const fs::path& path) {
  data.validate();
  ByteWriter w;
  w.bytes("ADVS", 4);
  w.u32(kDatasetVersion);
  w.text(data.provenance);
  w.u64(data.size());
  const Shape shape = data.empty() ? Shape{3, 32, 32} : data.images.front().shape();
  w.u32(static_cast<std::uint32_t>(shape.size()));
  for (std::size_t e : shape) w.u32(static_cast<std::uint32_t>(e));
  for (std::size_t i = 0; i < data.size(); ++i) {
    w.u32(static_cast<std::uint32_t>(data.labels[i]));
    w.u64(data.ids.empty() ? i : data.ids[i]);
    for (double v : data.images[i].values()) w.f64(v);
  }
  write_file_atomic(path, as_string(w.data()));
}

Dataset load_dataset(const fs::path& path) {
  const std::vector<std::uint8_t> bytes = read_bytes(path);
  ByteReader r(bytes.data(), bytes.size(), "dataset");
  if (r.raw(4) != "ADVS") throw Error("dataset: bad magic (expected ADVS)");
  const std::uint32_t version = r.u32();
  if (version != kDatasetVersion) throw Error(fmt::format("dataset: unsupported version {}", version));
  Dataset data;
  data.provenance = r.text();
  const std::uint64_t n = r.u64();
  const std::uint32_t rank = r.u32();
  if (rank == 0 || rank > 4) throw Error("dataset: bad image rank");
  Shape shape;
  for (std::uint32_t k = 0; k < rank; ++k) shape.push_back(r.u32());
  for (std::uint64_t i = 0; i < n; ++i) {
    data.labels.push_back(r.u32());
    data.ids.push_back(r.u64());
    std::vector<double> values(shape_size(shape));
    for (double& v : values) v = r.f64();
    data.images.emplace_back(shape, std::move(values));
  }
  if (!r.done()) throw Error("dataset: trailing bytes after the last record");
  data.validate();
  return data;
}

void save_mask(const std::vector<bool>& mask, const fs::path& path) {
  std::string out;
  for (bool b : mask) out += b ? "1\n" : "0\n";
  write_file_atomic(path, out);
}

std::vector<bool> load_mask(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::vector<bool> mask;
  for (std::string line; std::getline(in, line);) {
    if (line == "1") {
      mask.push_back(true);
    } else if (line == "0") {
      mask.push_back(false);
    } else {
      throw Error(fmt::format("mask '{}': unexpected line '{}'", path.string(), line));
    }
  }
  return mask;
}

}  // namespace advdev

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "advdev/dataset.hpp"
#include "advdev/network.hpp"

namespace advdev {

namespace fs = std::filesystem;

/// CIFAR-10 binary batch: whole 3073-byte records, one label byte (0-9) then
/// 32x32 R, G and B planes. Pixels are scaled by 1/255. At most `limit` records
/// are read when given.
Dataset load_cifar10(const fs::path& path, std::size_t limit = SIZE_MAX);

/// Reads the standard batch files from a CIFAR-10 binary directory: the first
/// `train_records` of data_batch_1..5 and the first `test_records` of test_batch.
struct CifarSplit {
  Dataset train;
  Dataset test;
};
CifarSplit load_cifar10_split(const fs::path& dir, std::size_t train_records,
                              std::size_t test_records);

struct SyntheticStyle {
  /// Peak deviation of a class prototype from mid-grey.
  double amplitude = 0.12;
  /// Per-pixel Gaussian noise standard deviation.
  double noise = 0.08;
};

/// Class-dependent smooth prototypes plus Gaussian noise, clipped to [0, 1] and
/// snapped to the 1/255 grid. Labels cycle 0, 1, ..., classes-1 so every prefix
/// is near-balanced.
Dataset generate_synthetic(std::size_t classes, std::size_t per_class, std::uint64_t seed,
                           const SyntheticStyle& style = {});

/// Model file: "ADVD", u32 version, u32-length-prefixed architecture text (with
/// metadata lines), then per parameter: u32 rank, u32 extents, f64 values, all
/// little-endian.
void save_model(const Model& model, const fs::path& path);
Model load_model(const fs::path& path);
std::vector<std::uint8_t> serialize_model(const Model& model);
Model deserialize_model(const std::vector<std::uint8_t>& bytes);

/// Dataset container: "ADVS", u32 version, u32-length-prefixed provenance, u64
/// record count, u32 rank and u32 extents of the image shape, then per record:
/// u32 label, u64 id, f64 values, all little-endian. Holds unquantized images.
void save_dataset(const Dataset& data, const fs::path& path);
Dataset load_dataset(const fs::path& path);

/// Sidecar success mask: one "0" or "1" per line.
void save_mask(const std::vector<bool>& mask, const fs::path& path);
std::vector<bool> load_mask(const fs::path& path);

/// Writes `bytes` to a temporary sibling, then renames it over `path`.
void write_file_atomic(const fs::path& path, const std::string& bytes);
std::string read_file(const fs::path& path);

}  // namespace advdev

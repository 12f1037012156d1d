#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "advdev/tensor.hpp"

namespace advdev {

/// Labelled images in [0, 1]. `ids` carry each record's index in the source split
/// so that filtered subsets can be traced back.
struct Dataset {
  std::vector<Tensor> images;
  std::vector<std::size_t> labels;
  std::vector<std::size_t> ids;
  std::string provenance = "clean";

  std::size_t size() const { return images.size(); }
  bool empty() const { return images.empty(); }

  /// Checks equal counts, per-image shape agreement and the [0, 1] value range.
  void validate() const;

  /// Subset in the given order.
  Dataset select(const std::vector<std::size_t>& positions) const;
  /// First `n` records (or all if fewer).
  Dataset head(std::size_t n) const;
};

}  // namespace advdev

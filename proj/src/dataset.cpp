#include "advdev/dataset.hpp"

#include <fmt/format.h>

namespace advdev {

void Dataset::validate() const {
  if (labels.size() != images.size()) {
    throw Error(fmt::format("dataset: {} images but {} labels", images.size(), labels.size()));
  }
  if (!ids.empty() && ids.size() != images.size()) {
    throw Error(fmt::format("dataset: {} images but {} ids", images.size(), ids.size()));
  }
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].shape() != images.front().shape()) {
      throw Error(fmt::format("dataset: record {} has shape {}, expected {}", i,
                              shape_to_string(images[i].shape()),
                              shape_to_string(images.front().shape())));
    }
    for (double v : images[i].values()) {
      if (!(v >= 0.0 && v <= 1.0)) {
        throw Error(fmt::format("dataset: record {} has value {} outside [0, 1]", i, v));
      }
    }
  }
}

Dataset Dataset::select(const std::vector<std::size_t>& positions) const {
  Dataset out;
  out.provenance = provenance;
  for (std::size_t p : positions) {
    out.images.push_back(images.at(p));
    out.labels.push_back(labels.at(p));
    out.ids.push_back(ids.empty() ? p : ids.at(p));
  }
  return out;
}

Dataset Dataset::head(std::size_t n) const {
  std::vector<std::size_t> positions;
  for (std::size_t i = 0; i < std::min(n, size()); ++i) positions.push_back(i);
  return select(positions);
}

}  // namespace advdev

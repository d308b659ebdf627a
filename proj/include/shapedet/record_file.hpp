#pragma once

// Binary container for boxed point sets, shared by the shape corpus and the
// ground-truth database. Layout in docs/formats.md.

#include <string>
#include <vector>

#include "shapedet/geometry.hpp"

namespace shapedet {

struct PointSetRecord {
  Box7 box;
  /// Each set holds n * channels values, stored on disk as 32-bit floats.
  std::vector<std::vector<float>> sets;
};

struct PointSetFile {
  std::uint32_t channels = 3;
  std::vector<PointSetRecord> records;
};

void write_point_sets(const std::string& path, const PointSetFile& file);
PointSetFile read_point_sets(const std::string& path);

}  // namespace shapedet

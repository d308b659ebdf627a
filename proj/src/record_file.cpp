#include "shapedet/record_file.hpp"

#include "binary_io.hpp"

namespace shapedet {

namespace {
constexpr char kMagic[] = "SHPDETPS";
constexpr std::uint32_t kVersion = 1;
}  // namespace

void write_point_sets(const std::string& path, const PointSetFile& file) {
  if (file.channels == 0) throw DomainError("write_point_sets: zero channels");
  io::Writer w(path);
  w.bytes(std::string(kMagic, 8));
  w.put<std::uint32_t>(kVersion);
  w.put<std::uint32_t>(file.channels);
  w.put<std::uint64_t>(file.records.size());
  for (const auto& rec : file.records) {
    for (double v : rec.box.as_array()) w.put<double>(v);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(rec.sets.size()));
    for (const auto& set : rec.sets) {
      if (set.size() % file.channels != 0) throw ShapeError("write_point_sets: ragged point set");
      w.put<std::uint32_t>(static_cast<std::uint32_t>(set.size() / file.channels));
      for (float v : set) w.put<float>(v);
    }
  }
  w.close();
}

PointSetFile read_point_sets(const std::string& path) {
  io::Reader r(path);
  if (r.bytes(8) != std::string(kMagic, 8)) throw FormatError(path + ": not a point-set file (bad magic)");
  if (const auto version = r.get<std::uint32_t>(); version != kVersion) {
    throw FormatError(path + ": unsupported point-set version " + std::to_string(version));
  }
  PointSetFile file;
  file.channels = r.get<std::uint32_t>();
  if (file.channels == 0) throw FormatError(path + ": zero channels");
  const auto count = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    PointSetRecord rec;
    std::array<double, 7> b{};
    for (double& v : b) v = r.get<double>();
    rec.box = Box7::from_array(b);
    rec.sets.resize(r.get<std::uint32_t>());
    for (auto& set : rec.sets) {
      set.resize(static_cast<std::size_t>(r.get<std::uint32_t>()) * file.channels);
      for (float& v : set) v = r.get<float>();
    }
    file.records.push_back(std::move(rec));
  }
  if (!r.at_end()) throw FormatError(path + ": trailing bytes after last record");
  return file;
}

}  // namespace shapedet

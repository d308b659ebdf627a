#include <map>

#include "binary_io.hpp"
#include "shapedet/tensor.hpp"

namespace shapedet {

namespace {
constexpr char kMagic[] = "SHPDETCK";
constexpr std::uint32_t kVersion = 1;
}  // namespace

void save_checkpoint(const std::string& path, std::span<const Parameter* const> params) {
  io::Writer w(path);
  w.bytes(std::string(kMagic, 8));
  w.put<std::uint32_t>(kVersion);
  w.put<std::uint64_t>(params.size());
  for (const Parameter* p : params) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(p->name.size()));
    w.bytes(p->name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(p->value.rank()));
    for (std::size_t d : p->value.shape()) w.put<std::uint64_t>(d);
    for (double v : p->value.data()) w.put<double>(v);
  }
  w.close();
}

std::vector<NamedTensor> load_checkpoint(const std::string& path) {
  io::Reader r(path);
  if (r.bytes(8) != std::string(kMagic, 8)) throw FormatError(path + ": not a checkpoint (bad magic)");
  if (const auto version = r.get<std::uint32_t>(); version != kVersion) {
    throw FormatError(path + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = r.get<std::uint64_t>();
  std::vector<NamedTensor> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedTensor nt;
    nt.name = r.bytes(r.get<std::uint32_t>());
    const auto rank = r.get<std::uint32_t>();
    std::vector<std::size_t> shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = static_cast<std::size_t>(r.get<std::uint64_t>());
      n *= d;
    }
    std::vector<double> data(n);
    for (double& v : data) v = r.get<double>();
    nt.value = Tensor(std::move(shape), std::move(data));
    out.push_back(std::move(nt));
  }
  if (!r.at_end()) throw FormatError(path + ": trailing bytes after last parameter");
  return out;
}

void restore_checkpoint(std::span<Parameter* const> params, const std::vector<NamedTensor>& loaded) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& nt : loaded) by_name[nt.name] = &nt.value;
  for (Parameter* p : params) {
    const auto it = by_name.find(p->name);
    if (it == by_name.end()) throw ShapeError("checkpoint: missing parameter " + p->name);
    if (!it->second->same_shape(p->value)) {
      throw ShapeError("checkpoint: " + p->name + " has shape " + shape_string(it->second->shape()) +
                       ", expected " + shape_string(p->value.shape()));
    }
    p->value = *it->second;
    p->zero_grad();
  }
}

}  // namespace shapedet

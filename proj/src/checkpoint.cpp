#include "evs/checkpoint.hpp"

#include <fstream>
#include <unordered_map>

#include "evs/binary_io.hpp"

namespace evs {

namespace {
constexpr char kMagic[4] = {'E', 'V', 'S', 'K'};
}

void write_checkpoint(std::ostream& os, const std::vector<NamedTensor>& tensors) {
  os.write(kMagic, 4);
  io::put_le<std::uint32_t>(os, kCheckpointVersion);
  for (const auto& [name, t] : tensors) {
    io::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    io::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) io::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    for (double v : t.data()) io::put_le<float>(os, static_cast<float>(v));
  }
  if (!os) throw FormatError("checkpoint write failed");
}

std::vector<NamedTensor> read_checkpoint(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("not a checkpoint: bad magic");
  }
  const auto version = io::require_le<std::uint32_t, FormatError>(is, "version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  std::vector<NamedTensor> out;
  std::uint32_t name_len = 0;
  while (io::get_le(is, name_len)) {
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw FormatError("truncated tensor name");
    const auto rank = io::require_le<std::uint32_t, FormatError>(is, "rank");
    Shape shape(rank);
    for (auto& d : shape) d = io::require_le<std::uint32_t, FormatError>(is, "dims");
    std::vector<double> values(shape_numel(shape));
    for (auto& v : values) v = io::require_le<float, FormatError>(is, ("payload of " + name).c_str());
    out.push_back({std::move(name), Tensor::from(shape, std::move(values))});
  }
  if (!is.eof()) throw FormatError("trailing bytes in checkpoint");
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  write_checkpoint(os, tensors);
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  return read_checkpoint(is);
}

void assign_from(const std::vector<NamedTensor>& source, std::vector<NamedTensor>& destination) {
  std::unordered_map<std::string, const Tensor*> by_name;
  for (const auto& nt : source) by_name[nt.name] = &nt.tensor;
  for (auto& nt : destination) {
    auto it = by_name.find(nt.name);
    if (it == by_name.end()) throw FormatError("checkpoint is missing tensor '" + nt.name + "'");
    if (it->second->shape() != nt.tensor.shape()) {
      throw FormatError("checkpoint tensor '" + nt.name + "' has shape " + shape_str(it->second->shape()) +
                        ", expected " + shape_str(nt.tensor.shape()));
    }
    auto src = it->second->data();
    std::copy(src.begin(), src.end(), nt.tensor.data().begin());
  }
}

}  // namespace evs

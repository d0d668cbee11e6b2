#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "evs/tensor.hpp"

namespace evs {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Flat binary weight file: "EVSK", u32 version, then until EOF one record per
// tensor {u32 name length, UTF-8 name, u32 rank, u32 dims[rank], f32 payload},
// all little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(std::ostream& os, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_checkpoint(std::istream& is);

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

/// Copies checkpoint values into same-named destination tensors. Throws on a
/// missing name or a shape mismatch.
void assign_from(const std::vector<NamedTensor>& source, std::vector<NamedTensor>& destination);

}  // namespace evs

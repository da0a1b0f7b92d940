#pragma once

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pv/tensor.hpp"

namespace pv {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Binary tensor: "PVT1", u32 rank, rank x u32 extents, little-endian f32
// values in row-major order.
void write_tensor(std::ostream& os, const Tensor<float>& t);
Tensor<float> read_tensor(std::istream& is);
void save_tensor(const std::filesystem::path& path, const Tensor<float>& t);
Tensor<float> load_tensor(const std::filesystem::path& path);

// Named archive: repeated entries of (u32 name length, UTF-8 name bytes,
// tensor) until end of file.
using NamedTensors = std::vector<std::pair<std::string, Tensor<float>>>;
void save_archive(const std::filesystem::path& path, const NamedTensors& entries);
NamedTensors load_archive(const std::filesystem::path& path);

}  // namespace pv

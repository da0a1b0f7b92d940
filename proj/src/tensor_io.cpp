#include "pv/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace pv {

namespace {

constexpr std::array<char, 4> kMagic{'P', 'V', 'T', '1'};
constexpr std::uint32_t kMaxRank = 16;
constexpr std::uint32_t kMaxName = 4096;

void put_u32(std::ostream& os, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                              static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b.data(), 4);
}

bool get_u32(std::istream& is, std::uint32_t& v) {
  std::array<unsigned char, 4> b{};
  if (!is.read(reinterpret_cast<char*>(b.data()), 4)) {
    if (is.gcount() != 0) throw FormatError("truncated u32 field");
    return false;
  }
  v = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
      (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  return true;
}

std::uint32_t require_u32(std::istream& is, const char* what) {
  std::uint32_t v = 0;
  if (!get_u32(is, v)) throw FormatError(std::string("truncated tensor data while reading ") + what);
  return v;
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor<float>& t) {
  os.write(kMagic.data(), kMagic.size());
  put_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t e : t.shape()) put_u32(os, static_cast<std::uint32_t>(e));
  for (float v : t.data()) put_u32(os, std::bit_cast<std::uint32_t>(v));
  if (!os) throw FormatError("failed writing tensor");
}

Tensor<float> read_tensor(std::istream& is) {
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMagic) throw FormatError("bad tensor magic (expected PVT1)");
  const std::uint32_t rank = require_u32(is, "rank");
  if (rank > kMaxRank) throw FormatError("tensor rank " + std::to_string(rank) + " exceeds limit");
  Shape shape(rank);
  for (auto& e : shape) {
    e = require_u32(is, "extent");
    if (e == 0) throw FormatError("tensor extent of zero");
  }
  std::vector<float> values(shape_numel(shape));
  for (float& v : values) v = std::bit_cast<float>(require_u32(is, "values"));
  return Tensor<float>(std::move(shape), std::move(values));
}

void save_tensor(const std::filesystem::path& path, const Tensor<float>& t) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  write_tensor(os, t);
}

Tensor<float> load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  return read_tensor(is);
}

void save_archive(const std::filesystem::path& path, const NamedTensors& entries) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  for (const auto& [name, tensor] : entries) {
    put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(os, tensor);
  }
  if (!os) throw FormatError("failed writing " + path.string());
}

NamedTensors load_archive(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  NamedTensors entries;
  std::uint32_t length = 0;
  while (get_u32(is, length)) {
    if (length == 0 || length > kMaxName) throw FormatError("malformed archive entry name in " + path.string());
    std::string name(length, '\0');
    if (!is.read(name.data(), length)) throw FormatError("truncated archive " + path.string());
    entries.emplace_back(std::move(name), read_tensor(is));
  }
  if (!is.eof()) throw FormatError("trailing bytes in archive " + path.string());
  return entries;
}

}  // namespace pv

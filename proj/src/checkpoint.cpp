#include "hsimamba/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace hsi {

static_assert(std::endian::native == std::endian::little,
              "checkpoint container assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'H', 'S', 'C', 'K'};
constexpr std::uint16_t kVersion = 1;

template <typename T>
void write_raw(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_raw(std::ifstream& in, T& v, const char* what) {
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError(std::string("checkpoint truncated while reading ") + what);
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out.write(kMagic, 4);
  write_raw(out, kVersion);

  const std::string header = ckpt.header.dump();
  write_raw(out, static_cast<std::uint32_t>(header.size()));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));

  write_raw(out, static_cast<std::uint32_t>(ckpt.arrays.size()));
  for (const auto& a : ckpt.arrays) {
    write_raw(out, static_cast<std::uint16_t>(a.name.size()));
    out.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
    write_raw(out, static_cast<std::uint8_t>(a.dtype));
    write_raw(out, static_cast<std::uint8_t>(a.shape.size()));
    for (auto d : a.shape) write_raw(out, static_cast<std::uint32_t>(d));
    write_raw(out, static_cast<std::uint64_t>(a.raw.size()));
    out.write(reinterpret_cast<const char*>(a.raw.data()),
              static_cast<std::streamsize>(a.raw.size()));
  }
  if (!out) throw IoError("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);

  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw IoError("bad magic in checkpoint: " + path);
  }
  std::uint16_t version = 0;
  read_raw(in, version, "version");
  if (version != kVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }

  std::uint32_t header_len = 0;
  read_raw(in, header_len, "header length");
  std::string header(header_len, '\0');
  in.read(header.data(), header_len);
  if (!in) throw IoError("checkpoint truncated while reading header");

  Checkpoint ckpt;
  try {
    ckpt.header = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed checkpoint header: ") + e.what());
  }

  std::uint32_t count = 0;
  read_raw(in, count, "array count");
  ckpt.arrays.resize(count);
  for (auto& a : ckpt.arrays) {
    std::uint16_t name_len = 0;
    read_raw(in, name_len, "array name length");
    a.name.resize(name_len);
    in.read(a.name.data(), name_len);
    if (!in) throw IoError("checkpoint truncated while reading array name");

    std::uint8_t dtype = 0, ndim = 0;
    read_raw(in, dtype, "array dtype");
    if (dtype > 1) throw IoError("unknown dtype in checkpoint array " + a.name);
    a.dtype = static_cast<ArrayDType>(dtype);
    read_raw(in, ndim, "array rank");
    a.shape.resize(ndim);
    for (auto& d : a.shape) {
      std::uint32_t v = 0;
      read_raw(in, v, "array extent");
      d = v;
    }
    std::uint64_t bytes = 0;
    read_raw(in, bytes, "array byte length");
    const std::size_t elem = a.dtype == ArrayDType::kF32 ? 4 : 8;
    if (bytes != a.numel() * elem) {
      throw IoError("checkpoint array " + a.name + " has inconsistent byte length");
    }
    a.raw.resize(bytes);
    in.read(reinterpret_cast<char*>(a.raw.data()), static_cast<std::streamsize>(bytes));
    if (!in) throw IoError("checkpoint truncated while reading array data");
  }
  return ckpt;
}

}  // namespace hsi

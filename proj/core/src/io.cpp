#include "stmtl/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace stmtl {

static_assert(std::endian::native == std::endian::little,
              "tensor container writes little-endian payloads directly");

namespace {

constexpr char kMagic[4] = {'S', 'T', 'M', 'T'};
constexpr std::uint8_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw ContractError("tensor container: truncated stream");
  return v;
}

}  // namespace

void save_tensor(std::ostream& os, const Tensor& t) {
  os.write(kMagic, 4);
  write_pod(os, kVersion);
  write_pod(os, static_cast<std::uint8_t>(t.dtype()));
  write_pod(os, static_cast<std::uint32_t>(t.ndim()));
  for (auto d : t.dims()) write_pod(os, static_cast<std::uint32_t>(d));
  if (t.dtype() == Dtype::f32) {
    for (double v : t.data()) write_pod(os, static_cast<float>(v));
  } else {
    for (double v : t.data()) write_pod(os, v);
  }
}

Tensor load_tensor(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw ContractError("tensor container: bad magic");
  const auto version = read_pod<std::uint8_t>(is);
  if (version != kVersion)
    throw ContractError("tensor container: unsupported version " + std::to_string(version));
  const auto dtype_raw = read_pod<std::uint8_t>(is);
  if (dtype_raw > 1) throw ContractError("tensor container: bad dtype byte");
  const Dtype dtype = static_cast<Dtype>(dtype_raw);
  const auto ndim = read_pod<std::uint32_t>(is);
  if (ndim > 8) throw ContractError("tensor container: implausible ndim");
  std::vector<std::int64_t> dims(ndim);
  std::int64_t numel = 1;
  for (auto& d : dims) {
    d = read_pod<std::uint32_t>(is);
    numel *= d;
  }
  std::vector<double> data(static_cast<size_t>(numel));
  if (dtype == Dtype::f32) {
    for (auto& v : data) v = static_cast<double>(read_pod<float>(is));
  } else {
    for (auto& v : data) v = read_pod<double>(is);
  }
  return Tensor::from_data(std::move(data), std::move(dims), dtype);
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ContractError("cannot open for write: " + path.string());
  save_tensor(os, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ContractError("cannot open for read: " + path.string());
  return load_tensor(is);
}

void save_archive(std::ostream& os, const NamedTensors& records) {
  write_pod(os, static_cast<std::uint32_t>(records.size()));
  for (const auto& [name, t] : records) {
    if (name.size() > 0xffff) throw ContractError("archive: record name too long");
    write_pod(os, static_cast<std::uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    save_tensor(os, t);
  }
}

NamedTensors load_archive(std::istream& is) {
  const auto count = read_pod<std::uint32_t>(is);
  NamedTensors records;
  records.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = read_pod<std::uint16_t>(is);
    std::string name(len, '\0');
    is.read(name.data(), len);
    if (!is) throw ContractError("archive: truncated record name");
    records.emplace_back(std::move(name), load_tensor(is));
  }
  return records;
}

void save_archive(const std::filesystem::path& path, const NamedTensors& records) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ContractError("cannot open for write: " + path.string());
  save_archive(os, records);
}

NamedTensors load_archive(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ContractError("cannot open for read: " + path.string());
  return load_archive(is);
}

std::vector<unsigned char> archive_bytes(const NamedTensors& records) {
  std::ostringstream os(std::ios::binary);
  save_archive(os, records);
  const std::string s = os.str();
  return std::vector<unsigned char>(s.begin(), s.end());
}

std::uint64_t file_checksum(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ContractError("cannot open for read: " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ull;
  char buf[4096];
  while (is) {
    is.read(buf, sizeof(buf));
    for (std::streamsize i = 0; i < is.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ull;
    }
  }
  return h;
}

}  // namespace stmtl

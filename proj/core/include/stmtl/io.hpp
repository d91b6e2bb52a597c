#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "stmtl/tensor.hpp"

namespace stmtl {

// Tensor container format: magic "STMT", version u8=1, dtype u8 (0=f32,
// 1=f64), ndim u32, dims u32[ndim], payload little-endian. The archive
// variant prepends a record count u32 and stores (name_len u16, name, tensor)
// records.

void save_tensor(std::ostream& os, const Tensor& t);
Tensor load_tensor(std::istream& is);
void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

void save_archive(std::ostream& os, const NamedTensors& records);
NamedTensors load_archive(std::istream& is);
void save_archive(const std::filesystem::path& path, const NamedTensors& records);
NamedTensors load_archive(const std::filesystem::path& path);

/// Archive bytes without touching disk; used for freeze/byte-identity checks.
std::vector<unsigned char> archive_bytes(const NamedTensors& records);

/// FNV-1a 64-bit checksum of a file's bytes.
std::uint64_t file_checksum(const std::filesystem::path& path);

}  // namespace stmtl

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "stmtl/common.hpp"

namespace stmtl {

/// Binary PPM (P6), 8-bit, interleaved RGB rows.
void write_ppm(const std::filesystem::path& path, const std::vector<std::uint8_t>& rgb, int h,
               int w);
std::vector<std::uint8_t> read_ppm(const std::filesystem::path& path, int& h, int& w);

/// Binary PGM (P5), 8-bit.
void write_pgm(const std::filesystem::path& path, const std::vector<std::uint8_t>& gray, int h,
               int w);
std::vector<std::uint8_t> read_pgm(const std::filesystem::path& path, int& h, int& w);

}  // namespace stmtl

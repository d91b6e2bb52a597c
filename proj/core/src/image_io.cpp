#include "stmtl/image_io.hpp"

#include <fstream>

namespace stmtl {

namespace {

void write_pnm(const std::filesystem::path& path, const char* magic,
               const std::vector<std::uint8_t>& data, int h, int w, int channels) {
  if (h <= 0 || w <= 0 || data.size() != static_cast<size_t>(h) * static_cast<size_t>(w) *
                                             static_cast<size_t>(channels))
    throw ContractError("pnm write: payload does not match " + std::to_string(h) + "x" +
                        std::to_string(w));
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ContractError("cannot open for write: " + path.string());
  os << magic << "\n" << w << " " << h << "\n255\n";
  os.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
}

int read_pnm_int(std::istream& is) {
  // skips whitespace and '#' comment lines
  while (true) {
    int c = is.peek();
    if (c == '#') {
      std::string line;
      std::getline(is, line);
    } else if (std::isspace(c)) {
      is.get();
    } else {
      break;
    }
  }
  int v = -1;
  is >> v;
  if (!is || v < 0) throw ContractError("pnm read: malformed header");
  return v;
}

std::vector<std::uint8_t> read_pnm(const std::filesystem::path& path, const char* magic, int& h,
                                   int& w, int channels) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ContractError("cannot open for read: " + path.string());
  char m0 = 0, m1 = 0;
  is >> m0 >> m1;
  if (m0 != magic[0] || m1 != magic[1])
    throw ContractError("pnm read: expected " + std::string(magic) + " in " + path.string());
  w = read_pnm_int(is);
  h = read_pnm_int(is);
  const int maxval = read_pnm_int(is);
  if (maxval != 255) throw ContractError("pnm read: only 8-bit maxval 255 supported");
  is.get();  // single whitespace after maxval
  std::vector<std::uint8_t> data(static_cast<size_t>(h) * static_cast<size_t>(w) *
                                 static_cast<size_t>(channels));
  is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!is) throw ContractError("pnm read: truncated payload in " + path.string());
  return data;
}

}  // namespace

void write_ppm(const std::filesystem::path& path, const std::vector<std::uint8_t>& rgb, int h,
               int w) {
  write_pnm(path, "P6", rgb, h, w, 3);
}

std::vector<std::uint8_t> read_ppm(const std::filesystem::path& path, int& h, int& w) {
  return read_pnm(path, "P6", h, w, 3);
}

void write_pgm(const std::filesystem::path& path, const std::vector<std::uint8_t>& gray, int h,
               int w) {
  write_pnm(path, "P5", gray, h, w, 1);
}

std::vector<std::uint8_t> read_pgm(const std::filesystem::path& path, int& h, int& w) {
  return read_pnm(path, "P5", h, w, 1);
}

}  // namespace stmtl

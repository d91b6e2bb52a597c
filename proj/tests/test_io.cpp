#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "stmtl/io.hpp"

using namespace stmtl;
namespace fs = std::filesystem;

namespace {
fs::path temp_dir() {
  auto p = fs::temp_directory_path() / "stmtl_io_test";
  fs::create_directories(p);
  return p;
}
}  // namespace

TEST_CASE("tensor container golden bytes") {
  auto t = Tensor::from_data({1.0, 2.0}, {2}, Dtype::f32);
  std::ostringstream os(std::ios::binary);
  save_tensor(os, t);
  const std::string s = os.str();
  // magic, version=1, dtype=0 (f32), ndim=1, dims=[2], payload 1.0f 2.0f
  const unsigned char expect[] = {'S', 'T', 'M', 'T', 1, 0, 1, 0, 0, 0, 2, 0, 0, 0,
                                  0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0x40};
  REQUIRE(s.size() == sizeof(expect));
  CHECK(std::memcmp(s.data(), expect, sizeof(expect)) == 0);
}

TEST_CASE("tensor round trip preserves dims dtype and payload") {
  auto t64 = Tensor::from_data({-1.5, 0.25, 3.0, 7.125, -0.0078125, 42.0}, {2, 3}, Dtype::f64);
  std::stringstream ss(std::ios::in | std::ios::out | std::ios::binary);
  save_tensor(ss, t64);
  auto back = load_tensor(ss);
  CHECK(back.dims() == t64.dims());
  CHECK(back.dtype() == Dtype::f64);
  for (size_t i = 0; i < 6; ++i) CHECK(back.data()[i] == t64.data()[i]);

  auto t32 = Tensor::from_data({0.1, 0.2, 0.3}, {3}, Dtype::f32);
  std::stringstream s2(std::ios::in | std::ios::out | std::ios::binary);
  save_tensor(s2, t32);
  auto b2 = load_tensor(s2);
  CHECK(b2.dtype() == Dtype::f32);
  for (size_t i = 0; i < 3; ++i) CHECK(b2.data()[i] == t32.data()[i]);
}

TEST_CASE("archive round trip and bad input errors") {
  NamedTensors recs;
  recs.emplace_back("sh.w", Tensor::from_data({1, 2, 3, 4}, {2, 2}, Dtype::f32));
  recs.emplace_back("t.b", Tensor::from_data({-1.0}, {1}, Dtype::f64));
  auto dir = temp_dir();
  auto path = dir / "arch.stmt";
  save_archive(path, recs);
  auto back = load_archive(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].first == "sh.w");
  CHECK(back[1].first == "t.b");
  CHECK(back[0].second.dims() == std::vector<std::int64_t>{2, 2});
  CHECK(back[1].second.data()[0] == -1.0);

  std::ofstream bad(dir / "bad.stmt", std::ios::binary);
  bad << "NOPE";
  bad.close();
  CHECK_THROWS_AS(load_tensor(dir / "bad.stmt"), ContractError);

  // archive_bytes equals on-disk bytes
  auto bytes = archive_bytes(recs);
  std::ifstream is(path, std::ios::binary);
  std::vector<unsigned char> disk((std::istreambuf_iterator<char>(is)),
                                  std::istreambuf_iterator<char>());
  CHECK(bytes == disk);
}

TEST_CASE("file checksum is stable") {
  auto dir = temp_dir();
  auto p = dir / "sum.txt";
  std::ofstream(p) << "hello";
  auto a = file_checksum(p);
  auto b = file_checksum(p);
  CHECK(a == b);
  std::ofstream(p) << "hellp";
  CHECK(file_checksum(p) != a);
}

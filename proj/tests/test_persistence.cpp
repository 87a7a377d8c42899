#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "geoflow/checkpoint.hpp"
#include "geoflow/container.hpp"
#include "geoflow/rng.hpp"

using namespace geoflow;

namespace {

std::string tmp_file(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

std::vector<char> slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::vector<char>((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void dump(const std::string& path, const std::vector<char>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("empty payload roundtrip") {
  const auto path = tmp_file("gf_empty.gfdc");
  write_container(path, ContainerHeader{.kind = 0, .count = 0, .dim = 3}, {});
  const auto back = read_container(path);
  CHECK(back.header.dim == 3);
  CHECK(back.payload.empty());
  std::remove(path.c_str());
}

TEST_CASE("random payload roundtrip is bit-exact") {
  CounterRng rng(1);
  Vec payload(60);
  for (auto& v : payload) v = rng.normal() * 1e3;
  const auto path = tmp_file("gf_rand.gfdc");
  write_container(path, ContainerHeader{.kind = 1, .count = 10, .dim = 6, .aux0 = 2}, payload);
  const auto back = read_container(path);
  CHECK(back.header.aux0 == 2);
  REQUIRE(back.payload.size() == payload.size());
  for (std::size_t i = 0; i < payload.size(); ++i) {
    // Bitwise equality, not approximate.
    CHECK(std::memcmp(&back.payload[i], &payload[i], 8) == 0);
  }
  std::remove(path.c_str());
}

TEST_CASE("every single-bit payload flip is detected") {
  Vec payload{1.5, -2.25, 3.0};
  const auto path = tmp_file("gf_flip.gfdc");
  write_container(path, ContainerHeader{.kind = 0, .count = 1, .dim = 3}, payload);
  const auto pristine = slurp(path);
  constexpr std::size_t kHeaderSize = 44;
  REQUIRE(pristine.size() == kHeaderSize + 24);
  for (std::size_t byte = kHeaderSize; byte < pristine.size(); ++byte)
    for (int bit = 0; bit < 8; ++bit) {
      auto corrupted = pristine;
      corrupted[byte] = static_cast<char>(corrupted[byte] ^ (1 << bit));
      dump(path, corrupted);
      CHECK_THROWS_WITH(read_container(path), Catch::Matchers::ContainsSubstring("checksum"));
    }
  std::remove(path.c_str());
}

TEST_CASE("truncated container is rejected") {
  Vec payload{1.0, 2.0};
  const auto path = tmp_file("gf_trunc.gfdc");
  write_container(path, ContainerHeader{.kind = 0, .count = 1, .dim = 2}, payload);
  auto bytes = slurp(path);
  bytes.resize(bytes.size() - 5);
  dump(path, bytes);
  CHECK_THROWS_WITH(read_container(path), Catch::Matchers::ContainsSubstring("truncated"));
  std::remove(path.c_str());
}

TEST_CASE("checkpoint save-load-save produces byte-identical files") {
  auto net = CorrectorNet::create(2, {8, 8}, Activation::silu, 77);
  CounterRng rng(4);
  for (auto& p : net.params) p = rng.normal();
  const auto p1 = tmp_file("gf_ck1.gfnc");
  const auto p2 = tmp_file("gf_ck2.gfnc");
  save_checkpoint(net, p1);
  auto loaded = load_corrector(p1);
  CHECK(loaded.params == net.params);
  CHECK(loaded.spec == net.spec);
  save_checkpoint(loaded, p2);
  CHECK(slurp(p1) == slurp(p2));
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("corrupted checkpoint byte raises a checksum error, not a silent misload") {
  auto net = VelocityNet::create(2, 1, {4}, Activation::tanh, 9);
  CounterRng rng(6);
  for (auto& p : net.params) p = rng.normal();
  const auto path = tmp_file("gf_ckc.gfnc");
  save_checkpoint(net, path);
  auto bytes = slurp(path);
  bytes.back() = static_cast<char>(bytes.back() ^ 0x10);
  dump(path, bytes);
  CHECK_THROWS_WITH(load_velocity(path), Catch::Matchers::ContainsSubstring("checksum"));
  std::remove(path.c_str());
}

TEST_CASE("loading the wrong kind or using the wrong dims is an explicit error") {
  auto net = CorrectorNet::create(3, {4}, Activation::silu, 1);
  const auto path = tmp_file("gf_kind.gfnc");
  save_checkpoint(net, path);
  CHECK_THROWS_WITH(load_velocity(path), Catch::Matchers::ContainsSubstring("kind"));
  auto corrector = load_corrector(path);
  // Evaluating at the wrong dimension fails loudly.
  CHECK_THROWS_AS(corrector_eval(corrector, Vec{1.0, 2.0}, Vec{3.0, 4.0}, 0.5),
                  std::invalid_argument);
  std::remove(path.c_str());
}

TEST_CASE("f32 checkpoints roundtrip with reduced precision") {
  auto net = CorrectorNet::create(2, {4}, Activation::silu, 5);
  CounterRng rng(2);
  for (auto& p : net.params) p = rng.normal();
  const auto path = tmp_file("gf_f32.gfnc");
  save_checkpoint(net, path, /*f32=*/true);
  const auto loaded = load_corrector(path);
  for (std::size_t i = 0; i < net.params.size(); ++i)
    CHECK(loaded.params[i] == Catch::Approx(net.params[i]).margin(1e-6));
  std::remove(path.c_str());
}

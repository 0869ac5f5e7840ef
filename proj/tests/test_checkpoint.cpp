#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "schoolcount/checkpoint.hpp"
#include "schoolcount/error.hpp"
#include "schoolcount/optimizer.hpp"

using namespace schoolcount;
namespace fs = std::filesystem;

namespace {

ModelConfig small() {
  ModelConfig m;
  m.stage_channels = {2, 3, 4, 5, 6};
  m.input_h = 64;
  m.input_w = 64;
  return m;
}

fs::path temp_file(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "schoolcount_ckpt_test";
  fs::create_directories(dir);
  return dir / name;
}

bool bit_equal(const ModelParams& a, const ModelParams& b) {
  if (a.tensors.size() != b.tensors.size()) return false;
  for (std::size_t i = 0; i < a.tensors.size(); ++i) {
    const auto& x = a.tensors[i];
    const auto& y = b.tensors[i];
    if (x.name != y.name || x.shape != y.shape || x.trainable != y.trainable) return false;
    if (x.values.size() != y.values.size()) return false;
    if (std::memcmp(x.values.data(), y.values.data(), x.values.size() * sizeof(float)) != 0) return false;
  }
  return true;
}

Checkpoint sample_checkpoint() {
  Checkpoint c;
  c.model = small();
  c.epoch = 7;
  c.params = init_params(c.model, 3);
  AdamState a = AdamState::like(c.params, 3e-4);
  a.step = 123;
  for (auto& t : a.m.tensors)
    for (std::size_t i = 0; i < t.values.size(); ++i) t.values[i] = static_cast<float>(i) * 1e-3f;
  c.optimizer = a;
  c.best = init_params(c.model, 4);
  c.state = {{"note", "x"}, {"value", 0.1}};
  return c;
}

}  // namespace

TEST_CASE("adam first step on a scalar") {
  ModelParams p;
  p.add("w", {1});
  ModelParams g = p.zeros_like();
  g.tensors[0].values[0] = 1.0f;
  auto s = AdamState::like(p, 1e-4);
  adam_step(p, s, g);
  CHECK(p.tensors[0].values[0] == doctest::Approx(-1e-4).epsilon(1e-6));
  CHECK(s.step == 1);
}

TEST_CASE("adam leaves frozen tensors alone and rejects non-finite gradients") {
  ModelParams p;
  p.add("a", {2});
  p.add("b", {2}, false);
  auto g = p.zeros_like();
  for (auto& t : g.tensors) t.values = {1.0f, -1.0f};
  auto s = AdamState::like(p, 0.1);
  adam_step(p, s, g);
  CHECK(p.get("a").values[0] < 0);
  CHECK(p.get("a").values[1] > 0);
  CHECK(p.get("b").values == std::vector<float>{0, 0});

  const auto before = p.get("a").values;
  g.get("a").values[1] = std::nanf("");
  CHECK_THROWS_AS(adam_step(p, s, g), NumericError);
  CHECK(p.get("a").values == before);
  CHECK(s.step == 1);
}

TEST_CASE("checkpoint roundtrip is bit-exact") {
  const auto c = sample_checkpoint();
  const auto file = temp_file("roundtrip.ckpt");
  save_checkpoint(c, file);
  const auto model = small();
  const auto r = load_checkpoint(file, &model);
  CHECK(r.model == c.model);
  CHECK(r.epoch == 7);
  CHECK(bit_equal(r.params, c.params));
  REQUIRE(r.optimizer);
  CHECK(bit_equal(r.optimizer->m, c.optimizer->m));
  CHECK(bit_equal(r.optimizer->v, c.optimizer->v));
  CHECK(r.optimizer->step == 123);
  CHECK(r.optimizer->lr == 3e-4);
  CHECK(r.optimizer->hyper == AdamHyper{});
  REQUIRE(r.best);
  CHECK(bit_equal(*r.best, *c.best));
  CHECK(r.state == c.state);

  Checkpoint bare;
  bare.model = small();
  bare.params = init_params(bare.model, 1);
  save_checkpoint(bare, file);
  const auto rb = load_checkpoint(file);
  CHECK_FALSE(rb.optimizer);
  CHECK_FALSE(rb.best);
  CHECK(bit_equal(rb.params, bare.params));
}

TEST_CASE("checkpoint errors") {
  const auto c = sample_checkpoint();
  const auto file = temp_file("bad.ckpt");
  save_checkpoint(c, file);
  std::string bytes;
  {
    std::ifstream in(file, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  auto write = [&](const std::string& b) {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    out.write(b.data(), static_cast<std::streamsize>(b.size()));
  };

  SUBCASE("other architecture") {
    auto other = small();
    other.stage_channels[4] = 7;
    try {
      load_checkpoint(file, &other);
      FAIL("expected CheckpointError");
    } catch (const CheckpointError& e) {
      CHECK(std::string(e.what()).find("hash") != std::string::npos);
    }
  }
  SUBCASE("flipped byte in the tensor data") {
    auto b = bytes;
    b[b.size() - 40] ^= 0x10;
    write(b);
    CHECK_THROWS_AS(load_checkpoint(file), CheckpointError);
  }
  SUBCASE("flipped byte in the header") {
    auto b = bytes;
    b[20] ^= 0x01;
    write(b);
    CHECK_THROWS_AS(load_checkpoint(file), CheckpointError);
  }
  SUBCASE("truncated") {
    write(bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_AS(load_checkpoint(file), CheckpointError);
  }
  SUBCASE("unknown version") {
    auto b = bytes;
    b[4] = 9;
    write(b);
    try {
      load_checkpoint(file);
      FAIL("expected CheckpointError");
    } catch (const CheckpointError& e) {
      CHECK(std::string(e.what()).find("version") != std::string::npos);
    }
  }
  SUBCASE("bad magic") {
    auto b = bytes;
    b[0] = 'X';
    write(b);
    CHECK_THROWS_AS(load_checkpoint(file), CheckpointError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(load_checkpoint(temp_file("absent.ckpt")), IoError); }
}

#include <doctest.h>

#include <filesystem>
#include <random>

#include "oracles.hpp"
#include "usev/checkpoint.hpp"
#include "usev/error.hpp"
#include "usev/model.hpp"

using namespace usev;
using ad::Tensor;

namespace {

Tensor rand_tensor(ad::Shape shape, std::mt19937_64& rng, double sd = 1.0) {
  return Tensor::from(shape, oracle::randn(ad::numel(shape), rng, sd));
}

VisemeMatrix rand_visemes(std::size_t frames, std::size_t dim, std::mt19937_64& rng) {
  return {oracle::randn(frames * dim, rng), frames, dim, 25.0};
}

std::filesystem::path tmp_dir(const char* name) {
  auto p = std::filesystem::temp_directory_path() / "usev_tests" / name;
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("encoder frame counts") {
  CHECK(encoder_frames(16000, UsevConfig::full()) == 799);
  CHECK(encoder_frames(8000, UsevConfig::desk()) == 399);
  CHECK_THROWS_AS(encoder_frames(39, UsevConfig::desk()), Error);
}

TEST_CASE("viseme upsampling repeats each frame") {
  const auto idx = upsample_index(25, 799, UsevConfig::full());
  REQUIRE(idx.size() == 799);
  for (std::size_t t = 0; t < 799; ++t) CHECK(idx[t] == t / 32);
  const auto clamped = upsample_index(3, 799, UsevConfig::full());
  CHECK(clamped.back() == 2);
}

TEST_CASE("output length equals input length") {
  const UsevModel m(UsevConfig::desk(), 3);
  std::mt19937_64 rng(1);
  for (std::size_t len : {40u, 41u, 799u, 1234u, 8000u}) {
    const auto x = oracle::randn(len, rng, 0.1);
    const auto v = rand_visemes(static_cast<std::size_t>(std::ceil(len / 8000.0 * 25.0)), 8, rng);
    CHECK(m.infer(x, v).size() == len);
    // Viseme streams of any length are accepted.
    CHECK(m.infer(x, rand_visemes(2, 8, rng)).size() == len);
  }
}

TEST_CASE("mask is nonnegative and bounds the masked embeddings") {
  const UsevModel m(UsevConfig::desk(), 5);
  std::mt19937_64 rng(2);
  const auto x = Tensor::from({2000}, oracle::randn(2000, rng, 0.1));
  const auto X = m.speech_encode(x);
  const auto V = m.visual_encode(visemes_tensor(rand_visemes(7, 8, rng)), X.dim(1));
  const auto M = m.extract_mask(X, V);
  REQUIRE(M.shape() == X.shape());
  double mmax = 0;
  for (double v : M.data()) {
    CHECK(v >= 0.0);
    mmax = std::max(mmax, v);
  }
  const auto S = ad::mul(X, M);
  for (std::size_t i = 0; i < S.numel(); ++i)
    CHECK(std::abs(S.data()[i]) <= std::abs(X.data()[i]) * mmax + 1e-15);
  for (double v : X.data()) CHECK(v >= 0.0);
}

TEST_CASE("zero inputs give zero embeddings") {
  const UsevModel m(UsevConfig::desk(), 7);
  const auto X = m.speech_encode(Tensor::zeros({800}));
  for (double v : X.data()) CHECK(v == 0.0);
  const auto V = m.visual_encode(Tensor::zeros({5, 8}), 39);
  CHECK(V.shape() == ad::Shape{64, 39});
  for (double v : V.data()) CHECK(v == 0.0);
  const auto y = m.decode(Tensor::zeros({64, 39}), 800);
  for (double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("decoder is linear and sized to the request") {
  const UsevModel m(UsevConfig::desk(), 9);
  std::mt19937_64 rng(4);
  const auto S = rand_tensor({64, 30}, rng);
  const auto y1 = m.decode(S, 620);
  const auto y3 = m.decode(ad::scale(S, 3.0), 620);
  CHECK(y1.numel() == 620);
  for (std::size_t i = 0; i < 620; ++i)
    CHECK(std::abs(y3.data()[i] - 3.0 * y1.data()[i]) <= 1e-12 * (1 + std::abs(y3.data()[i])));
  CHECK(m.decode(S, 700).numel() == 700);
  CHECK(m.decode(S, 100).numel() == 100);
}

TEST_CASE("forward is deterministic") {
  std::mt19937_64 rng(6);
  const auto x = oracle::randn(3000, rng, 0.1);
  const auto v = rand_visemes(10, 8, rng);
  const UsevModel a(UsevConfig::desk(), 11), b(UsevConfig::desk(), 11);
  CHECK(a.infer(x, v) == b.infer(x, v));
  CHECK(a.infer(x, v) == a.infer(x, v));
  const UsevModel c(UsevConfig::desk(), 12);
  CHECK(c.infer(x, v) != a.infer(x, v));
  const auto graph = a.forward(Tensor::from({3000}, x), visemes_tensor(v));
  CHECK(std::vector<double>(graph.data().begin(), graph.data().end()) == a.infer(x, v));
}

TEST_CASE("parameter counts") {
  CHECK(UsevModel(UsevConfig::desk()).parameter_count() == 152457);
  const UsevModel full(UsevConfig::full());
  CHECK(full.parameter_count() == 4114345);
  CHECK(full.parameter_count(true) == 3983017);
}

TEST_CASE("frozen front-end is not trainable") {
  const UsevModel m(UsevConfig::micro());
  const auto& w = m.param("visual.frontend.weight");
  for (const auto& t : m.trainable()) CHECK(t.node() != w.node());
  CHECK(!w.requires_grad());
}

TEST_CASE("config text round trip and validation") {
  for (const auto& c : {UsevConfig::desk(), UsevConfig::full(), UsevConfig::micro()})
    CHECK(UsevConfig::from_text(c.to_text()) == c);
  auto bad = UsevConfig::desk();
  bad.K = 15;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = UsevConfig::desk();
  bad.L = 41;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("checkpoints round trip") {
  const auto dir = tmp_dir("ckpt");
  const UsevModel m(UsevConfig::desk(), 21);
  save_model(m, dir / "m.ckpt");
  const auto back = load_model(dir / "m.ckpt");
  CHECK(back.config() == m.config());
  std::mt19937_64 rng(3);
  const auto x = oracle::randn(1000, rng, 0.1);
  const auto v = rand_visemes(4, 8, rng);
  CHECK(back.infer(x, v) == m.infer(x, v));

  save_model(m, dir / "m32.ckpt", Precision::Float32);
  const auto b32 = load_model(dir / "m32.ckpt");
  const auto& w = b32.param("encoder.weight");
  CHECK(w.data()[0] == static_cast<double>(static_cast<float>(m.param("encoder.weight").data()[0])));
}

TEST_CASE("mismatched checkpoints are rejected") {
  const auto dir = tmp_dir("ckpt");
  const UsevModel m(UsevConfig::desk(), 21);
  save_model(m, dir / "desk.ckpt");
  UsevModel other(UsevConfig::micro());
  try {
    restore(other, read_checkpoint(dir / "desk.ckpt"));
    FAIL("expected a shape error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Shape);
  }
  auto ck = snapshot(m);
  ck.tensors.pop_back();
  UsevModel same(UsevConfig::desk());
  CHECK_THROWS_AS(restore(same, ck), Error);
  ck = snapshot(m);
  ck.tensors[0].shape = {1};
  CHECK_THROWS_AS(restore(same, ck), Error);
  CHECK_THROWS_AS(read_checkpoint(dir / "missing.ckpt"), Error);
}

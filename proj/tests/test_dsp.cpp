#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "oracles.hpp"
#include "usev/audio_io.hpp"
#include "usev/dsp.hpp"
#include "usev/error.hpp"

using namespace usev;

namespace {

std::filesystem::path tmp_dir(const char* name) {
  auto p = std::filesystem::temp_directory_path() / "usev_tests" / name;
  std::filesystem::create_directories(p);
  return p;
}

ErrorKind kind_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  return static_cast<ErrorKind>(0);
}

}  // namespace

TEST_CASE("frame counts") {
  CHECK(num_frames(16000, 40, 20) == 799);
  CHECK(num_frames(8000, 40, 20) == 399);
  CHECK(num_frames(40, 40, 20) == 1);
  CHECK(num_frames(59, 40, 20) == 1);
  CHECK(num_frames(60, 40, 20) == 2);
  CHECK(kind_of([] { num_frames(39, 40, 20); }) == ErrorKind::Length);
}

TEST_CASE("frame_signal small example") {
  const std::vector<double> x{1, 2, 3, 4};
  const auto f = frame_signal(x, 2, 1);
  REQUIRE(f.num_frames == 3);
  CHECK(f.data == std::vector<double>{1, 2, 2, 3, 3, 4});
}

TEST_CASE("overlap_add small examples") {
  FrameMatrix one{{1, 2, 3}, 1, 3, 7};
  CHECK(overlap_add(one, 7) == std::vector<double>{1, 2, 3});
  FrameMatrix two{{1, 1, 1, 1}, 2, 2, 1};
  CHECK(overlap_add(two, 1) == std::vector<double>{1, 2, 1});
}

TEST_CASE("framing and overlap-add are adjoint") {
  std::mt19937_64 rng(7);
  for (auto [n, L, hop] : {std::tuple{1000u, 40u, 20u}, {517u, 16u, 8u}, {333u, 10u, 3u}}) {
    const auto x = oracle::randn(n, rng);
    const auto F = frame_signal(x, L, hop);
    const auto y = oracle::randn(F.data.size(), rng);
    const double lhs = dot(F.data, y);
    auto back = overlap_add(y, F.num_frames, L, hop);
    back.resize(n, 0.0);
    const double rhs = dot(x, back);
    CHECK(std::abs(lhs - rhs) <= 1e-12 * std::max(1.0, std::abs(lhs)));
  }
}

TEST_CASE("energy") {
  CHECK(energy(std::vector<double>(50, 0.0)) == 0.0);
  CHECK(energy(std::vector<double>{3, 4}) == 25.0);
  std::mt19937_64 rng(3);
  const auto x = oracle::randn(40000, rng);
  CHECK(oracle::rel_err(energy(x), static_cast<double>(oracle::sumsq(x))) <= 1e-12);
}

TEST_CASE("snr scaling") {
  std::mt19937_64 rng(11);
  const auto a = oracle::randn(1000, rng);
  CHECK(snr_gain(5.0, 5.0, 0.0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(snr_gain(5.0, 5.0, 10.0) == doctest::Approx(0.31623).epsilon(1e-5));
  CHECK(snr_gain(5.0, 5.0, 10.0) == doctest::Approx(std::pow(10.0, -0.5)).epsilon(1e-14));
  for (int i = 0; i < 20; ++i) {
    const auto r = oracle::randn(800, rng);
    const auto s = oracle::randn(600, rng, 0.2);
    const auto scaled = scale_to_snr(r, s, -10.0);
    CHECK(std::abs(measure_snr_db(r, scaled) + 10.0) <= 1e-9);
  }
  const std::vector<double> silent(10, 0.0);
  CHECK(kind_of([&] { scale_to_snr(a, silent, 0.0); }) == ErrorKind::DegenerateInput);
}

TEST_CASE("fit_length") {
  const std::vector<double> x{1, 2, 3};
  CHECK(fit_length(x, 2) == std::vector<double>{1, 2});
  CHECK(fit_length(x, 5) == std::vector<double>{1, 2, 3, 0, 0});
}

TEST_CASE("wav round trips") {
  const auto dir = tmp_dir("dsp");
  std::mt19937_64 rng(5);
  AudioClip c{oracle::randn(777, rng, 0.2), 8000};
  write_wav(dir / "f.wav", c, WavEncoding::Float32);
  const auto f = read_wav(dir / "f.wav");
  CHECK(f.sample_rate == 8000);
  REQUIRE(f.size() == c.size());
  for (std::size_t i = 0; i < c.size(); ++i)
    CHECK(f.samples[i] == static_cast<double>(static_cast<float>(c.samples[i])));

  write_wav(dir / "p.wav", c, WavEncoding::Pcm16);
  const auto p = read_wav(dir / "p.wav");
  REQUIRE(p.size() == c.size());
  double worst = 0;
  for (std::size_t i = 0; i < c.size(); ++i)
    worst = std::max(worst, std::abs(p.samples[i] - c.samples[i]));
  CHECK(worst <= 1.0 / 32768.0);

  write_raw_f32(dir / "r.f32", c.samples);
  CHECK(read_raw_f32(dir / "r.f32").size() == c.size());
}

TEST_CASE("wav errors") {
  const auto dir = tmp_dir("dsp");
  CHECK(kind_of([&] { read_wav(dir / "missing.wav"); }) == ErrorKind::Io);
  {
    std::ofstream os(dir / "junk.wav", std::ios::binary);
    os << "not a wave file at all, just text";
  }
  CHECK(kind_of([&] { read_wav(dir / "junk.wav"); }) == ErrorKind::Format);
  AudioClip bad{{0.0, std::nan("")}, 8000};
  CHECK_THROWS_AS(bad.validate(), Error);
}

#include "usev/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "usev/error.hpp"

namespace usev {

void AudioClip::validate() const {
  require(sample_rate > 0, ErrorKind::Parameter,
          "sample_rate must be positive, got " + std::to_string(sample_rate));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!std::isfinite(samples[i]))
      fail(ErrorKind::Parameter,
           "non-finite sample at index " + std::to_string(i));
  }
}

std::size_t num_frames(std::size_t n, std::size_t frame_len, std::size_t hop) {
  require(frame_len >= 1, ErrorKind::Parameter, "frame_len must be >= 1");
  require(hop >= 1 && hop <= frame_len, ErrorKind::Parameter,
          "hop must satisfy 1 <= hop <= frame_len");
  require(n >= frame_len, ErrorKind::Length,
          "signal of " + std::to_string(n) + " samples is shorter than one frame of " +
              std::to_string(frame_len));
  return (n - frame_len) / hop + 1;
}

FrameMatrix frame_signal(std::span<const double> samples, std::size_t frame_len,
                         std::size_t hop) {
  FrameMatrix out;
  out.num_frames = num_frames(samples.size(), frame_len, hop);
  out.frame_len = frame_len;
  out.hop = hop;
  out.data.resize(out.num_frames * frame_len);
  for (std::size_t t = 0; t < out.num_frames; ++t) {
    std::copy_n(samples.begin() + t * hop, frame_len,
                out.data.begin() + t * frame_len);
  }
  return out;
}

std::vector<double> overlap_add(std::span<const double> frames,
                                std::size_t num_frames, std::size_t frame_len,
                                std::size_t hop) {
  require(num_frames >= 1 && frame_len >= 1, ErrorKind::Shape,
          "overlap_add needs at least one non-empty frame");
  require(frames.size() == num_frames * frame_len, ErrorKind::Shape,
          "frame buffer size does not match num_frames * frame_len");
  require(hop >= 1, ErrorKind::Parameter, "hop must be >= 1");
  std::vector<double> out((num_frames - 1) * hop + frame_len, 0.0);
  for (std::size_t t = 0; t < num_frames; ++t) {
    const double* src = frames.data() + t * frame_len;
    double* dst = out.data() + t * hop;
    for (std::size_t l = 0; l < frame_len; ++l) dst[l] += src[l];
  }
  return out;
}

std::vector<double> overlap_add(const FrameMatrix& frames, std::size_t hop) {
  return overlap_add(frames.data, frames.num_frames, frames.frame_len, hop);
}

double energy(std::span<const double> x) {
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return acc;
}

double dot(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorKind::Shape, "dot: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double snr_gain(double reference_energy, double signal_energy, double snr_db) {
  require(reference_energy > 0.0 && signal_energy > 0.0,
          ErrorKind::DegenerateInput,
          "cannot scale to an SNR against a zero-energy signal");
  require(std::isfinite(snr_db), ErrorKind::Parameter, "snr_db must be finite");
  return std::sqrt(reference_energy /
                   (signal_energy * std::pow(10.0, snr_db / 10.0)));
}

std::vector<double> scale_to_snr(std::span<const double> reference,
                                 std::span<const double> signal, double snr_db) {
  const double g = snr_gain(energy(reference), energy(signal), snr_db);
  std::vector<double> out(signal.begin(), signal.end());
  for (double& v : out) v *= g;
  return out;
}

double measure_snr_db(std::span<const double> reference,
                      std::span<const double> signal) {
  return 10.0 * std::log10(energy(reference) / energy(signal));
}

std::vector<double> fit_length(std::span<const double> x, std::size_t n) {
  std::vector<double> out(n, 0.0);
  std::copy_n(x.begin(), std::min(n, x.size()), out.begin());
  return out;
}

}  // namespace usev

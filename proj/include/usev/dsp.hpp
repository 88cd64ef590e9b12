#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace usev {

/// Mono waveform. Samples are dimensionless amplitudes.
struct AudioClip {
  std::vector<double> samples;
  int sample_rate = 16000;

  std::size_t size() const { return samples.size(); }
  double duration_s() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
  /// Throws if sample_rate <= 0 or any sample is non-finite.
  void validate() const;
};

/// T frames of L samples each, row-major, taken every `hop` samples.
struct FrameMatrix {
  std::vector<double> data;
  std::size_t num_frames = 0;
  std::size_t frame_len = 0;
  std::size_t hop = 0;

  std::span<const double> frame(std::size_t t) const {
    return {data.data() + t * frame_len, frame_len};
  }
  std::span<double> frame(std::size_t t) {
    return {data.data() + t * frame_len, frame_len};
  }
};

/// floor((n - frame_len) / hop) + 1; throws a length error when n < frame_len.
std::size_t num_frames(std::size_t n, std::size_t frame_len, std::size_t hop);

/// Trailing samples that do not fill a whole frame are dropped.
FrameMatrix frame_signal(std::span<const double> samples, std::size_t frame_len,
                         std::size_t hop);

/// Sums every frame sample into position t*hop + l. Output length is
/// (T-1)*hop + L. This is the adjoint of frame_signal.
std::vector<double> overlap_add(const FrameMatrix& frames, std::size_t hop);
std::vector<double> overlap_add(std::span<const double> frames,
                                std::size_t num_frames, std::size_t frame_len,
                                std::size_t hop);

double energy(std::span<const double> x);
double dot(std::span<const double> a, std::span<const double> b);

/// Gain g such that 10*log10(energy(reference) / energy(g*signal)) == snr_db.
double snr_gain(double reference_energy, double signal_energy, double snr_db);

/// Returns g*signal for the g above. Both inputs must have positive energy.
std::vector<double> scale_to_snr(std::span<const double> reference,
                                 std::span<const double> signal, double snr_db);

/// 10*log10(energy(reference) / energy(signal)), no stabilizer.
double measure_snr_db(std::span<const double> reference,
                      std::span<const double> signal);

/// Truncates or zero-pads to exactly n samples.
std::vector<double> fit_length(std::span<const double> x, std::size_t n);

}  // namespace usev

#pragma once

// Synthetic speech corpora and mixture simulation.
//
// Real audio-visual corpora are replaced by a deterministic generator:
// each utterance is a sum of amplitude-modulated harmonics of a speaker
// dependent fundamental, gated by an alternating speech/quiet pattern, with
// a 25 fps viseme stream derived from the local envelope and a pseudo
// phoneme index. Mixtures are built from such utterances with ground-truth
// activity, so scenario labels are exact at sample resolution.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "usev/dsp.hpp"
#include "usev/scenario.hpp"

namespace usev {

/// Frames x dim features, row-major, at `fps` frames per second.
struct VisemeMatrix {
  std::vector<double> data;
  std::size_t frames = 0;
  std::size_t dim = 0;
  double fps = 25.0;

  std::span<const double> row(std::size_t f) const { return {data.data() + f * dim, dim}; }
  bool row_is_zero(std::size_t f) const;
  bool operator==(const VisemeMatrix&) const = default;
};

/// Binary layout: "USVV", u32 frames, u32 dim, f32 fps, then frames*dim
/// little-endian float32 values.
void write_visemes(const std::filesystem::path& path, const VisemeMatrix& v);
VisemeMatrix read_visemes(const std::filesystem::path& path);

struct SynthConfig {
  int sample_rate = 8000;
  double min_utterance_s = 3.0;
  std::size_t viseme_dim = 8;
  double video_fps = 25.0;
  double speech_min_s = 0.4, speech_max_s = 1.6;
  double quiet_min_s = 0.2, quiet_max_s = 1.0;
  double phone_min_s = 0.06, phone_max_s = 0.18;
  double f0_min_hz = 90.0, f0_max_hz = 260.0;
  std::size_t harmonics = 6;
  double level = 0.1;  // peak harmonic-sum amplitude
};

enum class UtteranceKind : std::uint8_t { Alternating, AlwaysActive, Silent };

struct SyntheticUtterance {
  AudioClip clip;
  ActivityMask activity;
  std::vector<std::uint8_t> phones;  // pseudo-phoneme index per sample
  VisemeMatrix visemes;
  std::uint64_t speaker_id = 0;
  std::uint64_t seed = 0;
};

/// Deterministic in (speaker_id, seed, duration, kind, cfg). Inactive spans
/// are exactly zero in audio and in every viseme frame they fully cover.
SyntheticUtterance gen_utterance(std::uint64_t speaker_id, std::uint64_t seed,
                                 double duration_s, const SynthConfig& cfg,
                                 UtteranceKind kind = UtteranceKind::Alternating);

/// Viseme frames for a span of audio: ceil(n / sr * fps) frames; frames
/// with no active sample are zero.
VisemeMatrix viseme_features(std::span<const double> audio, const ActivityMask& activity,
                             std::span<const std::uint8_t> phones, const SynthConfig& cfg);

/// Filtered white noise with spectral tilt `tilt` in (-1, 1).
std::vector<double> colored_noise(std::size_t n, double tilt, std::uint64_t seed);

struct UtteranceRef {
  std::uint64_t speaker_id = 0;
  std::uint64_t seed = 0;
  double duration_s = 0.0;
  UtteranceKind kind = UtteranceKind::Alternating;
};

struct InterferencePlacement {
  UtteranceRef source;
  std::size_t source_offset = 0;  // first sample taken from the source
  std::size_t clip_offset = 0;    // where it lands in the clip
  std::size_t length = 0;         // samples requested (truncated at clip end)
  double snr_db = 0.0;            // target-to-interference
};

enum class MixtureKind : std::uint8_t { General, HighlyOverlapped };

struct MixtureSpec {
  MixtureKind kind = MixtureKind::General;
  UtteranceRef target;
  std::size_t target_offset = 0;
  std::vector<InterferencePlacement> interferences;  // 1..2
  std::optional<double> noise_snr_db;
  double noise_tilt = 0.0;
  std::uint64_t noise_seed = 0;
  bool target_absent = false;
  std::size_t clip_len = 0;  // ignored for HighlyOverlapped
  std::uint64_t seed = 0;
};

struct MixtureRecord {
  std::string id;
  AudioClip mixture;
  AudioClip target_truth;
  VisemeMatrix visemes;
  ScenarioTrack track;
  MixtureSpec spec;
  /// Scaled, placed interference signals and noise, each of clip length.
  std::vector<std::vector<double>> interference_components;
  std::vector<double> noise_component;
  /// Energy the SNRs are measured against (the target segment, or a
  /// same-distribution stand-in for target-absent clips).
  double reference_energy = 0.0;
  /// Occluded viseme frames as [start, end) frame ranges.
  std::vector<std::pair<std::size_t, std::size_t>> occlusion_spans;
  double effective_visual_ratio = 1.0;
};

MixtureRecord simulate_general(const MixtureSpec& spec, const SynthConfig& cfg);
MixtureRecord simulate_highly_overlapped(const MixtureSpec& spec, const SynthConfig& cfg);

/// Zeroes one contiguous span of viseme frames covering a fraction drawn
/// uniformly from [lo, hi] of the stream. Audio is untouched. Spans
/// accumulate across calls.
MixtureRecord apply_occlusion(MixtureRecord record, std::uint64_t seed, double lo, double hi);
/// Non-occluded frames over total frames, from the stored spans.
double effective_visual_ratio(std::size_t frames,
                              std::span<const std::pair<std::size_t, std::size_t>> spans);

/// Knobs for drawing random mixture specs.
struct CorpusConfig {
  SynthConfig synth;
  MixtureKind kind = MixtureKind::General;
  std::uint64_t num_speakers = 40;
  double clip_min_s = 0.6, clip_max_s = 1.0;
  double ta_probability = 0.05;
  double snr_min_db = -10.0, snr_max_db = 10.0;
  double noise_snr_min_db = -5.0, noise_snr_max_db = 15.0;
  bool noisy = false;
  /// Interference segment length as a fraction of the clip.
  double interference_min_frac = 0.3, interference_max_frac = 1.0;
  /// Highly overlapped source durations.
  double overlapped_min_s = 3.0, overlapped_max_s = 4.0;
  std::optional<std::pair<double, double>> occlusion;
};

/// Per-clip generator seeded from (corpus_seed, index) only, so output never
/// depends on generation order. Retries internally on degenerate draws.
MixtureRecord generate_clip(const CorpusConfig& cfg, std::uint64_t corpus_seed,
                            std::uint64_t index);

}  // namespace usev

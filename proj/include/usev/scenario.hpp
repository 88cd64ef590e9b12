#pragma once

// Target/interference pairing scenarios over a clip.
//
//   QQ  target quiet,    interference quiet
//   SQ  target speaking, interference quiet
//   SS  target speaking, interference speaking
//   QS  target quiet,    interference speaking

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace usev {

enum class Scenario : unsigned char { QQ = 0, SQ = 1, SS = 2, QS = 3 };
inline constexpr std::array<Scenario, 4> kAllScenarios = {
    Scenario::QQ, Scenario::SQ, Scenario::SS, Scenario::QS};

std::string_view to_string(Scenario s);
Scenario parse_scenario(std::string_view s);

inline bool target_active(Scenario s) {
  return s == Scenario::SQ || s == Scenario::SS;
}
inline bool interference_active(Scenario s) {
  return s == Scenario::SS || s == Scenario::QS;
}
inline Scenario classify_sample(bool target, bool interference) {
  if (target) return interference ? Scenario::SS : Scenario::SQ;
  return interference ? Scenario::QS : Scenario::QQ;
}

/// One flag per audio sample.
using ActivityMask = std::vector<bool>;

struct ScenarioSegment {
  std::size_t start = 0;  // inclusive
  std::size_t end = 0;    // exclusive
  Scenario kind = Scenario::QQ;

  std::size_t length() const { return end - start; }
  bool operator==(const ScenarioSegment&) const = default;
};

/// Maximal runs tiling [0, clip_len).
struct ScenarioTrack {
  std::vector<ScenarioSegment> segments;
  std::size_t clip_len = 0;

  bool operator==(const ScenarioTrack&) const = default;

  /// Throws a format error when the tiling or maximality invariant is broken.
  void validate() const;
  std::array<std::size_t, 4> samples_per_kind() const;
  std::size_t samples_of(Scenario s) const {
    return samples_per_kind()[static_cast<std::size_t>(s)];
  }
  /// Indices of every sample labeled `s`, in clip order.
  std::vector<std::size_t> indices_of(Scenario s) const;
  /// Per-sample labels.
  std::vector<Scenario> expand() const;
  /// Track restricted to [start, start + len), re-based at 0.
  ScenarioTrack crop(std::size_t start, std::size_t len) const;
};

/// Merges per-sample labels into maximal runs.
ScenarioTrack track_from_labels(std::span<const Scenario> labels);

ScenarioTrack label_scenarios(const ActivityMask& target,
                              const ActivityMask& interference);
/// Interference masks are OR-combined before labeling.
ScenarioTrack label_scenarios(const ActivityMask& target,
                              std::span<const ActivityMask> interferences);

/// Reconstructs (target, interference) masks from a track.
std::pair<ActivityMask, ActivityMask> masks_from_track(const ScenarioTrack& track);

/// SS / (SS + SQ + QS). nullopt when the denominator is zero.
std::optional<double> overlap_ratio(const ScenarioTrack& track);

enum class ClipClass { TA, TP };
ClipClass classify_clip(const ScenarioTrack& track);

/// TA, 0%, (0,20], (20,40], (40,60], (60,80], (80,100].
enum class OverlapBucket : unsigned char {
  TA = 0, Zero, To20, To40, To60, To80, To100,
};
inline constexpr std::size_t kNumBuckets = 7;
inline constexpr std::array<OverlapBucket, kNumBuckets> kAllBuckets = {
    OverlapBucket::TA,   OverlapBucket::Zero, OverlapBucket::To20,
    OverlapBucket::To40, OverlapBucket::To60, OverlapBucket::To80,
    OverlapBucket::To100};

OverlapBucket overlap_bucket(std::optional<double> ratio);
std::string_view to_string(OverlapBucket b);

}  // namespace usev

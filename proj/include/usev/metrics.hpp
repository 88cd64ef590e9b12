#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "usev/scenario.hpp"

namespace usev {

struct MixtureRecord;

/// Scale-invariant SDR (dB) with the eps placement used throughout:
/// p = <est,s>/(|s|^2+eps) s;  10 log10(|p|^2 / (|est-p|^2+eps) + eps).
double si_sdr(std::span<const double> est, std::span<const double> ref);

/// 10 log10(|est|^2 / T_s + eps), T_s the duration in seconds.
double power_db_per_s(std::span<const double> est, int sample_rate);

/// One clip to score. Spans must outlive the report call.
struct EvalItem {
  std::string id;
  const ScenarioTrack* track = nullptr;
  std::span<const double> reference;
  std::span<const double> estimate;
  int sample_rate = 16000;
  double effective_visual_ratio = 1.0;
};

struct EvalRecord {
  std::string id;
  ClipClass clip_class = ClipClass::TP;
  std::optional<double> overlap;
  OverlapBucket bucket = OverlapBucket::TA;
  /// SI-SDR for TP clips, power for TA clips.
  double clip_metric = 0.0;
  /// Power for QQ/QS, SI-SDR for SQ/SS over the clip's samples of that kind.
  std::array<std::optional<double>, 4> per_kind;
  double effective_visual_ratio = 1.0;
};

struct MeanCell {
  double sum = 0.0;
  std::size_t count = 0;
  void add(double v) { sum += v; ++count; }
  /// NaN when empty.
  double mean() const;
};

/// Effective-visual-cue bins of 5%: [0,5], (5,10], ..., (95,100].
inline constexpr std::size_t kVisualBins = 20;
std::size_t visual_bin(double effective_visual_ratio);

/// Power histogram bins: edges -100, -95, ..., 40 dB/s; values outside are
/// clamped into the first/last bin.
inline constexpr double kHistLo = -100.0;
inline constexpr double kHistStep = 5.0;
inline constexpr std::size_t kHistBins = 28;

struct ReportTables {
  std::vector<EvalRecord> clips;
  // Clip view: TA power and per-bucket / overall TP SI-SDR.
  MeanCell ta_power;
  std::array<MeanCell, kNumBuckets> bucket_si_sdr;  // index 0 (TA) unused
  MeanCell tp_si_sdr;
  // Scenario view.
  std::array<MeanCell, 4> per_kind;
  // Power distribution per kind: counts per histogram bin.
  std::array<std::array<std::size_t, kHistBins>, 4> power_hist{};
  // Occlusion view: per kind metric by effective visual cue bin.
  std::array<std::array<MeanCell, kVisualBins>, 4> occlusion;

  std::string to_text() const;
  /// Writes clip_view.csv, scenario_view.csv, power_hist.csv, occlusion.csv
  /// and per_clip.csv into `dir`.
  void write_csv(const std::filesystem::path& dir) const;
};

EvalRecord evaluate_clip(const EvalItem& item);
ReportTables eval_report(std::span<const EvalItem> items);
/// Scores (record, extracted) pairs against each record's target.
ReportTables eval_report(
    std::span<const std::pair<const MixtureRecord*, std::span<const double>>> pairs);

}  // namespace usev

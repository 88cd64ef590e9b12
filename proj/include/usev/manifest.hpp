#pragma once

// Corpus manifests: one JSON object per line describing a simulated clip,
// its files (relative to the manifest's directory), scenario track, seeds
// and occlusion state.

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "usev/mixsim.hpp"

namespace usev {

struct ManifestEntry {
  std::string id;
  std::string mixture_path;
  std::string target_path;
  std::string visemes_path;
  int sample_rate = 0;
  ScenarioTrack track;
  MixtureSpec spec;
  double reference_energy = 0.0;
  std::vector<std::pair<std::size_t, std::size_t>> occlusion_spans;
  double effective_visual_ratio = 1.0;
};

std::string to_manifest_line(const ManifestEntry& e);
/// `line_no` is only used in error messages.
ManifestEntry parse_manifest_line(const std::string& line, std::size_t line_no);

/// Throws a format error naming the offending line.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

/// Writes the record's audio (float32 WAV) and viseme files under
/// `root/clips/` and returns its manifest entry.
ManifestEntry save_record(const MixtureRecord& rec, const std::filesystem::path& root);
/// Loads audio and visemes; interference/noise components are not stored
/// and come back empty.
MixtureRecord load_record(const ManifestEntry& e, const std::filesystem::path& root);
std::vector<MixtureRecord> load_corpus(const std::filesystem::path& manifest);

struct SimulateOptions {
  CorpusConfig corpus;
  std::size_t count = 0;
  std::uint64_t seed = 0;
  unsigned jobs = 1;
};

/// Generates `count` clips into `out_dir` and writes out_dir/manifest.jsonl
/// in clip-index order. Output does not depend on `jobs`.
std::vector<ManifestEntry> simulate_corpus(const SimulateOptions& opt,
                                           const std::filesystem::path& out_dir);

/// Clip counts per overlap bucket and total durations per scenario kind.
struct StatsReport {
  std::size_t clips = 0;
  std::array<std::size_t, kNumBuckets> bucket_counts{};
  std::array<double, 4> kind_seconds{};

  std::string to_text() const;
  std::string to_csv() const;
};

StatsReport corpus_stats(const std::vector<ManifestEntry>& entries);
StatsReport corpus_stats(const std::filesystem::path& manifest);

}  // namespace usev

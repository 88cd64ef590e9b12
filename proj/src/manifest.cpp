#include "usev/manifest.hpp"

#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <sstream>
#include <thread>

#include "usev/audio_io.hpp"
#include "usev/error.hpp"

namespace usev {

using nlohmann::json;

namespace {

const char* kind_name(UtteranceKind k) {
  switch (k) {
    case UtteranceKind::Alternating: return "alternating";
    case UtteranceKind::AlwaysActive: return "active";
    case UtteranceKind::Silent: return "silent";
  }
  return "alternating";
}

UtteranceKind parse_kind(const std::string& s) {
  if (s == "alternating") return UtteranceKind::Alternating;
  if (s == "active") return UtteranceKind::AlwaysActive;
  if (s == "silent") return UtteranceKind::Silent;
  fail(ErrorKind::Format, "unknown utterance kind '" + s + "'");
}

json ref_json(const UtteranceRef& r) {
  return {{"speaker", r.speaker_id}, {"seed", r.seed}, {"duration_s", r.duration_s},
          {"kind", kind_name(r.kind)}};
}

UtteranceRef ref_from(const json& j) {
  UtteranceRef r;
  r.speaker_id = j.at("speaker").get<std::uint64_t>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.duration_s = j.at("duration_s").get<double>();
  r.kind = parse_kind(j.at("kind").get<std::string>());
  return r;
}

}  // namespace

std::string to_manifest_line(const ManifestEntry& e) {
  json track = json::array();
  for (const auto& s : e.track.segments)
    track.push_back(json::array({s.start, s.end, std::string(to_string(s.kind))}));
  json interf = json::array();
  for (const auto& ip : e.spec.interferences)
    interf.push_back({{"source", ref_json(ip.source)},
                      {"source_offset", ip.source_offset},
                      {"clip_offset", ip.clip_offset},
                      {"length", ip.length},
                      {"snr_db", ip.snr_db}});
  json occl = json::array();
  for (const auto& [a, b] : e.occlusion_spans) occl.push_back(json::array({a, b}));
  json j = {
      {"id", e.id},
      {"mixture", e.mixture_path},
      {"target", e.target_path},
      {"visemes", e.visemes_path},
      {"sample_rate", e.sample_rate},
      {"clip_len", e.track.clip_len},
      {"track", track},
      {"kind", e.spec.kind == MixtureKind::General ? "general" : "overlapped"},
      {"target_absent", e.spec.target_absent},
      {"target_source", ref_json(e.spec.target)},
      {"target_offset", e.spec.target_offset},
      {"interference", interf},
      {"noise_snr_db", e.spec.noise_snr_db ? json(*e.spec.noise_snr_db) : json(nullptr)},
      {"noise_tilt", e.spec.noise_tilt},
      {"noise_seed", e.spec.noise_seed},
      {"seed", e.spec.seed},
      {"reference_energy", e.reference_energy},
      {"occlusion_spans", occl},
      {"effective_visual_ratio", e.effective_visual_ratio},
  };
  return j.dump();
}

ManifestEntry parse_manifest_line(const std::string& line, std::size_t line_no) {
  const std::string where = "manifest line " + std::to_string(line_no) + ": ";
  try {
    const json j = json::parse(line);
    ManifestEntry e;
    e.id = j.at("id").get<std::string>();
    e.mixture_path = j.at("mixture").get<std::string>();
    e.target_path = j.at("target").get<std::string>();
    e.visemes_path = j.at("visemes").get<std::string>();
    e.sample_rate = j.at("sample_rate").get<int>();
    require(e.sample_rate > 0, ErrorKind::Format, "sample_rate must be positive");
    e.track.clip_len = j.at("clip_len").get<std::size_t>();
    for (const auto& t : j.at("track")) {
      if (!t.is_array() || t.size() != 3) fail(ErrorKind::Format, "track entries are [start,end,kind]");
      e.track.segments.push_back({t[0].get<std::size_t>(), t[1].get<std::size_t>(),
                                  parse_scenario(t[2].get<std::string>())});
    }
    e.track.validate();
    const auto kind = j.at("kind").get<std::string>();
    if (kind != "general" && kind != "overlapped") fail(ErrorKind::Format, "unknown clip kind " + kind);
    e.spec.kind = kind == "general" ? MixtureKind::General : MixtureKind::HighlyOverlapped;
    e.spec.target_absent = j.at("target_absent").get<bool>();
    e.spec.target = ref_from(j.at("target_source"));
    e.spec.target_offset = j.at("target_offset").get<std::size_t>();
    for (const auto& ij : j.at("interference")) {
      InterferencePlacement ip;
      ip.source = ref_from(ij.at("source"));
      ip.source_offset = ij.at("source_offset").get<std::size_t>();
      ip.clip_offset = ij.at("clip_offset").get<std::size_t>();
      ip.length = ij.at("length").get<std::size_t>();
      ip.snr_db = ij.at("snr_db").get<double>();
      e.spec.interferences.push_back(ip);
    }
    if (!j.at("noise_snr_db").is_null()) e.spec.noise_snr_db = j.at("noise_snr_db").get<double>();
    e.spec.noise_tilt = j.at("noise_tilt").get<double>();
    e.spec.noise_seed = j.at("noise_seed").get<std::uint64_t>();
    e.spec.seed = j.at("seed").get<std::uint64_t>();
    e.spec.clip_len = e.track.clip_len;
    e.reference_energy = j.at("reference_energy").get<double>();
    for (const auto& s : j.at("occlusion_spans"))
      e.occlusion_spans.emplace_back(s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>());
    e.effective_visual_ratio = j.at("effective_visual_ratio").get<double>();
    return e;
  } catch (const json::exception& ex) {
    fail(ErrorKind::Format, where + ex.what());
  } catch (const Error& ex) {
    fail(ErrorKind::Format, where + ex.what());
  }
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorKind::Io, "cannot open manifest " + path.string());
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(parse_manifest_line(line, line_no));
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) fail(ErrorKind::Io, "cannot create manifest " + path.string());
  for (const auto& e : entries) os << to_manifest_line(e) << '\n';
  if (!os) fail(ErrorKind::Io, "write failed for " + path.string());
}

ManifestEntry save_record(const MixtureRecord& rec, const std::filesystem::path& root) {
  std::filesystem::create_directories(root / "clips");
  ManifestEntry e;
  e.id = rec.id;
  e.mixture_path = "clips/" + rec.id + "_mix.wav";
  e.target_path = "clips/" + rec.id + "_target.wav";
  e.visemes_path = "clips/" + rec.id + "_visemes.bin";
  e.sample_rate = rec.mixture.sample_rate;
  e.track = rec.track;
  e.spec = rec.spec;
  e.reference_energy = rec.reference_energy;
  e.occlusion_spans = rec.occlusion_spans;
  e.effective_visual_ratio = rec.effective_visual_ratio;
  write_wav(root / e.mixture_path, rec.mixture, WavEncoding::Float32);
  write_wav(root / e.target_path, rec.target_truth, WavEncoding::Float32);
  write_visemes(root / e.visemes_path, rec.visemes);
  return e;
}

MixtureRecord load_record(const ManifestEntry& e, const std::filesystem::path& root) {
  MixtureRecord rec;
  rec.id = e.id;
  rec.mixture = read_wav(root / e.mixture_path);
  rec.target_truth = read_wav(root / e.target_path);
  rec.visemes = read_visemes(root / e.visemes_path);
  rec.track = e.track;
  rec.spec = e.spec;
  rec.reference_energy = e.reference_energy;
  rec.occlusion_spans = e.occlusion_spans;
  rec.effective_visual_ratio = e.effective_visual_ratio;
  if (rec.mixture.size() != e.track.clip_len || rec.target_truth.size() != e.track.clip_len)
    fail(ErrorKind::Format, "clip " + e.id + ": audio length does not match clip_len " +
                                std::to_string(e.track.clip_len));
  if (rec.mixture.sample_rate != e.sample_rate)
    fail(ErrorKind::Format, "clip " + e.id + ": sample rate mismatch");
  return rec;
}

std::vector<MixtureRecord> load_corpus(const std::filesystem::path& manifest) {
  const auto entries = read_manifest(manifest);
  const auto root = manifest.parent_path();
  std::vector<MixtureRecord> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(load_record(e, root));
  return out;
}

std::vector<ManifestEntry> simulate_corpus(const SimulateOptions& opt,
                                           const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::vector<ManifestEntry> entries(opt.count);
  const unsigned jobs = std::max(1u, opt.jobs);
  auto worker = [&](unsigned w) {
    for (std::size_t i = w; i < opt.count; i += jobs)
      entries[i] = save_record(generate_clip(opt.corpus, opt.seed, i), out_dir);
  };
  if (jobs == 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(jobs);
    for (unsigned w = 0; w < jobs; ++w)
      pool.emplace_back([&, w] {
        try {
          worker(w);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  write_manifest(out_dir / "manifest.jsonl", entries);
  return entries;
}

StatsReport corpus_stats(const std::vector<ManifestEntry>& entries) {
  StatsReport r;
  for (const auto& e : entries) {
    ++r.clips;
    const auto b = classify_clip(e.track) == ClipClass::TA ? OverlapBucket::TA
                                                           : overlap_bucket(overlap_ratio(e.track));
    ++r.bucket_counts[static_cast<std::size_t>(b)];
    const auto n = e.track.samples_per_kind();
    for (std::size_t k = 0; k < 4; ++k)
      r.kind_seconds[k] += static_cast<double>(n[k]) / e.sample_rate;
  }
  return r;
}

StatsReport corpus_stats(const std::filesystem::path& manifest) {
  return corpus_stats(read_manifest(manifest));
}

std::string StatsReport::to_text() const {
  std::ostringstream os;
  os << "clips: " << clips << '\n';
  for (std::size_t b = 0; b < kNumBuckets; ++b)
    os << (b == 0 ? "TA clips" : "TP " + std::string(to_string(kAllBuckets[b])))
       << ": " << bucket_counts[b] << '\n';
  os << std::fixed << std::setprecision(4);
  for (Scenario k : kAllScenarios)
    os << to_string(k) << " duration: " << kind_seconds[static_cast<std::size_t>(k)] / 3600.0
       << " h (" << kind_seconds[static_cast<std::size_t>(k)] << " s)\n";
  return os.str();
}

std::string StatsReport::to_csv() const {
  std::ostringstream os;
  os << "TA";
  for (std::size_t b = 1; b < kNumBuckets; ++b) os << ",\"" << to_string(kAllBuckets[b]) << '"';
  for (Scenario k : kAllScenarios) os << ',' << to_string(k) << "_hours";
  os << '\n' << bucket_counts[0];
  for (std::size_t b = 1; b < kNumBuckets; ++b) os << ',' << bucket_counts[b];
  os << std::setprecision(17);
  for (std::size_t k = 0; k < 4; ++k) os << ',' << kind_seconds[k] / 3600.0;
  os << '\n';
  return os.str();
}

}  // namespace usev

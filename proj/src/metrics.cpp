#include "usev/metrics.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "usev/dsp.hpp"
#include "usev/error.hpp"
#include "usev/losses.hpp"
#include "usev/mixsim.hpp"

namespace usev {

double si_sdr(std::span<const double> est, std::span<const double> ref) {
  require(est.size() == ref.size(), ErrorKind::Shape,
          "si_sdr: estimate has " + std::to_string(est.size()) + " samples, reference has " +
              std::to_string(ref.size()));
  const double scale = dot(est, ref) / (energy(ref) + kEpsilon);
  double proj = 0.0, resid = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const double p = scale * ref[i];
    proj += p * p;
    resid += (est[i] - p) * (est[i] - p);
  }
  return 10.0 * std::log10(proj / (resid + kEpsilon) + kEpsilon);
}

double power_db_per_s(std::span<const double> est, int sample_rate) {
  require(!est.empty(), ErrorKind::Parameter, "power of a zero-duration signal");
  require(sample_rate > 0, ErrorKind::Parameter, "sample_rate must be positive");
  const double seconds = static_cast<double>(est.size()) / sample_rate;
  return 10.0 * std::log10(energy(est) / seconds + kEpsilon);
}

double MeanCell::mean() const {
  return count ? sum / static_cast<double>(count) : std::numeric_limits<double>::quiet_NaN();
}

std::size_t visual_bin(double r) {
  if (!(r > 0.0)) return 0;
  const auto b = static_cast<std::size_t>(std::ceil(r * kVisualBins - 1e-9));
  return std::min(kVisualBins, std::max<std::size_t>(b, 1)) - 1;
}

namespace {

std::size_t hist_bin(double v) {
  const double x = std::floor((v - kHistLo) / kHistStep);
  if (!(x >= 0.0)) return 0;
  return std::min(kHistBins - 1, static_cast<std::size_t>(x));
}

std::vector<double> pick(std::span<const double> x, const std::vector<std::size_t>& idx) {
  std::vector<double> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = x[idx[i]];
  return out;
}

std::string fmt(double v, int prec = 2) {
  if (std::isnan(v)) return "n/a";
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

std::string csv_num(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::ofstream open_csv(const std::filesystem::path& p) {
  std::ofstream os(p, std::ios::trunc);
  if (!os) fail(ErrorKind::Io, "cannot create " + p.string());
  return os;
}

}  // namespace

EvalRecord evaluate_clip(const EvalItem& item) {
  require(item.track != nullptr, ErrorKind::Shape, "clip " + item.id + " has no scenario track");
  const auto& track = *item.track;
  if (item.estimate.size() != item.reference.size() || item.reference.size() != track.clip_len)
    fail(ErrorKind::Shape, "clip " + item.id + ": estimate (" +
                               std::to_string(item.estimate.size()) + "), reference (" +
                               std::to_string(item.reference.size()) + ") and track (" +
                               std::to_string(track.clip_len) + ") lengths differ");
  EvalRecord r;
  r.id = item.id;
  r.clip_class = classify_clip(track);
  r.overlap = overlap_ratio(track);
  r.bucket = r.clip_class == ClipClass::TA ? OverlapBucket::TA : overlap_bucket(r.overlap);
  r.effective_visual_ratio = item.effective_visual_ratio;
  r.clip_metric = r.clip_class == ClipClass::TA
                      ? power_db_per_s(item.estimate, item.sample_rate)
                      : si_sdr(item.estimate, item.reference);
  for (Scenario k : kAllScenarios) {
    const auto idx = track.indices_of(k);
    if (idx.empty()) continue;
    const auto est = pick(item.estimate, idx);
    r.per_kind[static_cast<std::size_t>(k)] =
        target_active(k) ? si_sdr(est, pick(item.reference, idx))
                         : power_db_per_s(est, item.sample_rate);
  }
  return r;
}

ReportTables eval_report(std::span<const EvalItem> items) {
  ReportTables rep;
  for (const auto& item : items) {
    EvalRecord r = evaluate_clip(item);
    if (r.clip_class == ClipClass::TA) {
      rep.ta_power.add(r.clip_metric);
    } else {
      rep.tp_si_sdr.add(r.clip_metric);
      rep.bucket_si_sdr[static_cast<std::size_t>(r.bucket)].add(r.clip_metric);
    }
    // Power histogram of each kind's material, including SQ/SS.
    for (Scenario k : kAllScenarios) {
      const auto ki = static_cast<std::size_t>(k);
      if (!r.per_kind[ki]) continue;
      rep.per_kind[ki].add(*r.per_kind[ki]);
      rep.occlusion[ki][visual_bin(r.effective_visual_ratio)].add(*r.per_kind[ki]);
      const double p = target_active(k)
                           ? power_db_per_s(pick(item.estimate, item.track->indices_of(k)),
                                            item.sample_rate)
                           : *r.per_kind[ki];
      ++rep.power_hist[ki][hist_bin(p)];
    }
    rep.clips.push_back(std::move(r));
  }
  return rep;
}

ReportTables eval_report(
    std::span<const std::pair<const MixtureRecord*, std::span<const double>>> pairs) {
  std::vector<EvalItem> items;
  items.reserve(pairs.size());
  for (const auto& [rec, est] : pairs) {
    EvalItem it;
    it.id = rec->id;
    it.track = &rec->track;
    it.reference = rec->target_truth.samples;
    it.estimate = est;
    it.sample_rate = rec->target_truth.sample_rate;
    it.effective_visual_ratio = rec->effective_visual_ratio;
    items.push_back(it);
  }
  return eval_report(items);
}

std::string ReportTables::to_text() const {
  std::ostringstream os;
  os << "Clip view (" << clips.size() << " clips)\n";
  os << "  " << std::left << std::setw(12) << "group" << std::setw(10) << "clips"
     << "metric\n";
  os << "  " << std::setw(12) << "TA" << std::setw(10) << ta_power.count
     << fmt(ta_power.mean()) << " dB/s (power)\n";
  for (std::size_t b = 1; b < kNumBuckets; ++b) {
    os << "  " << std::setw(12) << to_string(kAllBuckets[b]) << std::setw(10)
       << bucket_si_sdr[b].count << fmt(bucket_si_sdr[b].mean()) << " dB (SI-SDR)\n";
  }
  os << "  " << std::setw(12) << "TP average" << std::setw(10) << tp_si_sdr.count
     << fmt(tp_si_sdr.mean()) << " dB (SI-SDR)\n";
  os << "Scenario view\n";
  for (Scenario k : kAllScenarios) {
    const auto& c = per_kind[static_cast<std::size_t>(k)];
    os << "  " << std::setw(12) << to_string(k) << std::setw(10) << c.count << fmt(c.mean())
       << (target_active(k) ? " dB (SI-SDR)\n" : " dB/s (power)\n");
  }
  return os.str();
}

void ReportTables::write_csv(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  {
    auto os = open_csv(dir / "clip_view.csv");
    os << "group,metric,clips,mean\n";
    os << "TA,power_db_per_s," << ta_power.count << ',' << csv_num(ta_power.mean()) << '\n';
    for (std::size_t b = 1; b < kNumBuckets; ++b)
      os << '"' << to_string(kAllBuckets[b]) << "\",si_sdr_db," << bucket_si_sdr[b].count << ','
         << csv_num(bucket_si_sdr[b].mean()) << '\n';
    os << "TP,si_sdr_db," << tp_si_sdr.count << ',' << csv_num(tp_si_sdr.mean()) << '\n';
  }
  {
    auto os = open_csv(dir / "scenario_view.csv");
    os << "scenario,metric,clips,mean\n";
    for (Scenario k : kAllScenarios) {
      const auto& c = per_kind[static_cast<std::size_t>(k)];
      os << to_string(k) << ',' << (target_active(k) ? "si_sdr_db" : "power_db_per_s") << ','
         << c.count << ',' << csv_num(c.mean()) << '\n';
    }
  }
  {
    auto os = open_csv(dir / "power_hist.csv");
    os << "scenario,bin_edge_db_per_s,count\n";
    for (Scenario k : kAllScenarios)
      for (std::size_t b = 0; b < kHistBins; ++b)
        os << to_string(k) << ',' << kHistLo + kHistStep * static_cast<double>(b) << ','
           << power_hist[static_cast<std::size_t>(k)][b] << '\n';
  }
  {
    auto os = open_csv(dir / "occlusion.csv");
    os << "scenario,visual_cue_lo_pct,visual_cue_hi_pct,clips,mean\n";
    for (Scenario k : kAllScenarios)
      for (std::size_t b = 0; b < kVisualBins; ++b) {
        const auto& c = occlusion[static_cast<std::size_t>(k)][b];
        os << to_string(k) << ',' << b * 5 << ',' << (b + 1) * 5 << ',' << c.count << ','
           << csv_num(c.mean()) << '\n';
      }
  }
  {
    auto os = open_csv(dir / "per_clip.csv");
    os << "id,class,bucket,overlap_ratio,clip_metric,QQ_power,SQ_si_sdr,SS_si_sdr,QS_power,"
          "effective_visual_ratio\n";
    for (const auto& r : clips) {
      os << r.id << ',' << (r.clip_class == ClipClass::TA ? "TA" : "TP") << ','
         << '"' << to_string(r.bucket) << "\"," << (r.overlap ? csv_num(*r.overlap) : "") << ','
         << csv_num(r.clip_metric);
      for (const auto& v : r.per_kind) os << ',' << (v ? csv_num(*v) : "");
      os << ',' << csv_num(r.effective_visual_ratio) << '\n';
    }
  }
}

}  // namespace usev

#include "usev/scenario.hpp"

#include <algorithm>

#include "usev/error.hpp"

namespace usev {

std::string_view to_string(Scenario s) {
  switch (s) {
    case Scenario::QQ: return "QQ";
    case Scenario::SQ: return "SQ";
    case Scenario::SS: return "SS";
    case Scenario::QS: return "QS";
  }
  return "??";
}

Scenario parse_scenario(std::string_view s) {
  for (Scenario k : kAllScenarios)
    if (to_string(k) == s) return k;
  fail(ErrorKind::Format, "unknown scenario kind '" + std::string(s) + "'");
}

void ScenarioTrack::validate() const {
  std::size_t pos = 0;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const auto& seg = segments[i];
    if (seg.start != pos || seg.start >= seg.end)
      fail(ErrorKind::Format, "scenario segments must tile the clip contiguously (segment " +
                                  std::to_string(i) + ")");
    if (i > 0 && segments[i - 1].kind == seg.kind)
      fail(ErrorKind::Format, "adjacent scenario segments share a kind (segment " +
                                  std::to_string(i) + ")");
    pos = seg.end;
  }
  if (pos != clip_len)
    fail(ErrorKind::Format, "scenario segments end at " + std::to_string(pos) +
                                " but clip has " + std::to_string(clip_len) + " samples");
}

std::array<std::size_t, 4> ScenarioTrack::samples_per_kind() const {
  std::array<std::size_t, 4> out{};
  for (const auto& seg : segments) out[static_cast<std::size_t>(seg.kind)] += seg.length();
  return out;
}

std::vector<std::size_t> ScenarioTrack::indices_of(Scenario s) const {
  std::vector<std::size_t> idx;
  for (const auto& seg : segments) {
    if (seg.kind != s) continue;
    for (std::size_t i = seg.start; i < seg.end; ++i) idx.push_back(i);
  }
  return idx;
}

std::vector<Scenario> ScenarioTrack::expand() const {
  std::vector<Scenario> out(clip_len, Scenario::QQ);
  for (const auto& seg : segments)
    std::fill(out.begin() + static_cast<std::ptrdiff_t>(seg.start),
              out.begin() + static_cast<std::ptrdiff_t>(seg.end), seg.kind);
  return out;
}

ScenarioTrack ScenarioTrack::crop(std::size_t start, std::size_t len) const {
  require(start + len <= clip_len, ErrorKind::Length, "crop exceeds track length");
  ScenarioTrack out;
  out.clip_len = len;
  for (const auto& seg : segments) {
    const std::size_t s = std::max(seg.start, start);
    const std::size_t e = std::min(seg.end, start + len);
    if (s < e) out.segments.push_back({s - start, e - start, seg.kind});
  }
  return out;
}

ScenarioTrack track_from_labels(std::span<const Scenario> labels) {
  ScenarioTrack track;
  track.clip_len = labels.size();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!track.segments.empty() && track.segments.back().kind == labels[i]) {
      track.segments.back().end = i + 1;
    } else {
      track.segments.push_back({i, i + 1, labels[i]});
    }
  }
  return track;
}

ScenarioTrack label_scenarios(const ActivityMask& target,
                              const ActivityMask& interference) {
  require(target.size() == interference.size(), ErrorKind::Shape,
          "activity masks differ in length (" + std::to_string(target.size()) +
              " vs " + std::to_string(interference.size()) + ")");
  ScenarioTrack track;
  track.clip_len = target.size();
  for (std::size_t i = 0; i < target.size(); ++i) {
    const Scenario k = classify_sample(target[i], interference[i]);
    if (!track.segments.empty() && track.segments.back().kind == k) {
      track.segments.back().end = i + 1;
    } else {
      track.segments.push_back({i, i + 1, k});
    }
  }
  return track;
}

ScenarioTrack label_scenarios(const ActivityMask& target,
                              std::span<const ActivityMask> interferences) {
  ActivityMask any(target.size(), false);
  for (const auto& m : interferences) {
    require(m.size() == target.size(), ErrorKind::Shape,
            "interference mask length differs from target mask");
    for (std::size_t i = 0; i < m.size(); ++i)
      if (m[i]) any[i] = true;
  }
  return label_scenarios(target, any);
}

std::pair<ActivityMask, ActivityMask> masks_from_track(const ScenarioTrack& track) {
  ActivityMask t(track.clip_len, false), b(track.clip_len, false);
  for (const auto& seg : track.segments) {
    for (std::size_t i = seg.start; i < seg.end; ++i) {
      t[i] = target_active(seg.kind);
      b[i] = interference_active(seg.kind);
    }
  }
  return {std::move(t), std::move(b)};
}

std::optional<double> overlap_ratio(const ScenarioTrack& track) {
  const auto n = track.samples_per_kind();
  const std::size_t ss = n[static_cast<std::size_t>(Scenario::SS)];
  const std::size_t denom = ss + n[static_cast<std::size_t>(Scenario::SQ)] +
                            n[static_cast<std::size_t>(Scenario::QS)];
  if (denom == 0) return std::nullopt;
  return static_cast<double>(ss) / static_cast<double>(denom);
}

ClipClass classify_clip(const ScenarioTrack& track) {
  for (const auto& seg : track.segments)
    if (target_active(seg.kind)) return ClipClass::TP;
  return ClipClass::TA;
}

OverlapBucket overlap_bucket(std::optional<double> ratio) {
  if (!ratio) return OverlapBucket::TA;
  const double r = *ratio;
  if (r <= 0.0) return OverlapBucket::Zero;
  if (r <= 0.2) return OverlapBucket::To20;
  if (r <= 0.4) return OverlapBucket::To40;
  if (r <= 0.6) return OverlapBucket::To60;
  if (r <= 0.8) return OverlapBucket::To80;
  return OverlapBucket::To100;
}

std::string_view to_string(OverlapBucket b) {
  switch (b) {
    case OverlapBucket::TA: return "TA";
    case OverlapBucket::Zero: return "0%";
    case OverlapBucket::To20: return "(0,20]%";
    case OverlapBucket::To40: return "(20,40]%";
    case OverlapBucket::To60: return "(40,60]%";
    case OverlapBucket::To80: return "(60,80]%";
    case OverlapBucket::To100: return "(80,100]%";
  }
  return "?";
}

}  // namespace usev

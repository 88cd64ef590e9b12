#include "usev/mixsim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "usev/binio.hpp"
#include "usev/error.hpp"

namespace usev {

namespace {

constexpr std::size_t kNumPhones = 16;
constexpr std::uint64_t kPhoneBookSeed = 0x9b0c7e11ULL;
constexpr double kEdgeRampS = 0.015;

std::mt19937_64 make_rng(std::initializer_list<std::uint64_t> words) {
  std::vector<std::uint32_t> v;
  for (auto w : words) {
    v.push_back(static_cast<std::uint32_t>(w));
    v.push_back(static_cast<std::uint32_t>(w >> 32));
  }
  std::seed_seq seq(v.begin(), v.end());
  return std::mt19937_64(seq);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  if (hi <= lo) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

std::size_t uniform_index(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  if (hi <= lo) return lo;
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Shared phone inventory: harmonic weights and viseme code per phone.
struct PhoneBook {
  std::vector<std::vector<double>> harmonic_weights;
  std::vector<std::vector<double>> codes;
};

PhoneBook phone_book(std::size_t harmonics, std::size_t dim) {
  auto rng = make_rng({kPhoneBookSeed, harmonics, dim});
  PhoneBook pb;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t p = 0; p < kNumPhones; ++p) {
    std::vector<double> w(harmonics);
    for (auto& x : w) x = uniform(rng, 0.15, 1.0);
    pb.harmonic_weights.push_back(std::move(w));
    std::vector<double> c(dim);
    double norm = 0.0;
    for (auto& x : c) {
      x = normal(rng);
      norm += x * x;
    }
    norm = std::sqrt(norm);
    for (auto& x : c) x /= (norm > 0.0 ? norm : 1.0);
    pb.codes.push_back(std::move(c));
  }
  return pb;
}

std::size_t seconds_to_samples(double s, int sr) {
  return static_cast<std::size_t>(std::llround(s * sr));
}

std::size_t viseme_frame_count(std::size_t n, int sr, double fps) {
  return static_cast<std::size_t>(std::ceil(static_cast<double>(n) * fps / sr - 1e-9));
}

void check_cfg(const SynthConfig& cfg) {
  require(cfg.sample_rate > 0, ErrorKind::Parameter, "sample_rate must be positive");
  require(cfg.video_fps > 0.0, ErrorKind::Parameter, "video_fps must be positive");
  require(cfg.viseme_dim >= 1, ErrorKind::Parameter, "viseme_dim must be >= 1");
  require(cfg.harmonics >= 1, ErrorKind::Parameter, "harmonics must be >= 1");
}

}  // namespace

bool VisemeMatrix::row_is_zero(std::size_t f) const {
  const auto r = row(f);
  return std::all_of(r.begin(), r.end(), [](double v) { return v == 0.0; });
}

void write_visemes(const std::filesystem::path& path, const VisemeMatrix& v) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail(ErrorKind::Io, "cannot create " + path.string());
  os.write("USVV", 4);
  binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(v.frames));
  binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(v.dim));
  binio::put<float>(os, static_cast<float>(v.fps));
  for (double x : v.data) binio::put<float>(os, static_cast<float>(x));
  if (!os) fail(ErrorKind::Io, "write failed for " + path.string());
}

VisemeMatrix read_visemes(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::Io, "cannot open " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "USVV")
    fail(ErrorKind::Format, "bad viseme stream magic in " + path.string());
  VisemeMatrix v;
  v.frames = binio::get<std::uint32_t>(is, "viseme frame count");
  v.dim = binio::get<std::uint32_t>(is, "viseme dim");
  v.fps = binio::get<float>(is, "viseme fps");
  v.data.resize(v.frames * v.dim);
  for (auto& x : v.data) x = binio::get<float>(is, "viseme value");
  return v;
}

VisemeMatrix viseme_features(std::span<const double> audio, const ActivityMask& activity,
                             std::span<const std::uint8_t> phones, const SynthConfig& cfg) {
  check_cfg(cfg);
  const std::size_t n = audio.size();
  require(activity.size() == n && phones.size() == n, ErrorKind::Shape,
          "viseme_features: audio, activity and phones must align");
  const PhoneBook pb = phone_book(cfg.harmonics, cfg.viseme_dim);
  VisemeMatrix v;
  v.fps = cfg.video_fps;
  v.dim = cfg.viseme_dim;
  v.frames = viseme_frame_count(n, cfg.sample_rate, cfg.video_fps);
  v.data.assign(v.frames * v.dim, 0.0);
  const double spf = cfg.sample_rate / cfg.video_fps;
  for (std::size_t f = 0; f < v.frames; ++f) {
    const auto a = static_cast<std::size_t>(std::floor(f * spf));
    const auto b = std::min(n, static_cast<std::size_t>(std::floor((f + 1) * spf)));
    std::size_t first_active = b;
    double acc = 0.0;
    for (std::size_t i = a; i < b; ++i) {
      if (activity[i] && first_active == b) first_active = i;
      acc += audio[i] * audio[i];
    }
    if (first_active == b || b <= a) continue;
    const double rms = std::sqrt(acc / static_cast<double>(b - a));
    const double openness = 3.0 * rms / cfg.level;
    const auto& code = pb.codes[phones[first_active] % kNumPhones];
    for (std::size_t d = 0; d < v.dim; ++d) v.data[f * v.dim + d] = openness * code[d];
  }
  return v;
}

SyntheticUtterance gen_utterance(std::uint64_t speaker_id, std::uint64_t seed,
                                 double duration_s, const SynthConfig& cfg,
                                 UtteranceKind kind) {
  check_cfg(cfg);
  require(duration_s + 1e-9 >= cfg.min_utterance_s, ErrorKind::Parameter,
          "utterance of " + std::to_string(duration_s) + " s is shorter than the minimum " +
              std::to_string(cfg.min_utterance_s) + " s");
  const int sr = cfg.sample_rate;
  const std::size_t n = seconds_to_samples(duration_s, sr);
  require(n >= 1, ErrorKind::Parameter, "utterance duration rounds to zero samples");

  SyntheticUtterance u;
  u.speaker_id = speaker_id;
  u.seed = seed;
  u.clip.sample_rate = sr;
  u.clip.samples.assign(n, 0.0);
  u.activity.assign(n, false);
  u.phones.assign(n, 0);

  // Speaker voice: fundamental, vibrato and harmonic timbre.
  auto spk = make_rng({speaker_id, 0x5bea4e5ULL});
  const double f0 = uniform(spk, cfg.f0_min_hz, cfg.f0_max_hz);
  const double vib_rate = uniform(spk, 4.0, 6.0);
  const double vib_depth = uniform(spk, 0.01, 0.03);
  std::vector<double> timbre(cfg.harmonics);
  for (std::size_t h = 0; h < cfg.harmonics; ++h)
    timbre[h] = uniform(spk, 0.3, 1.0) / std::pow(static_cast<double>(h + 1), 0.7);

  auto rng = make_rng({speaker_id, seed, 0x7e11ULL});

  // Activity runs.
  std::vector<std::pair<std::size_t, std::size_t>> runs;
  if (kind == UtteranceKind::AlwaysActive) {
    runs.emplace_back(0, n);
  } else if (kind == UtteranceKind::Alternating) {
    bool speaking = std::bernoulli_distribution(0.5)(rng);
    std::size_t pos = 0;
    while (pos < n) {
      const double d = speaking ? uniform(rng, cfg.speech_min_s, cfg.speech_max_s)
                                : uniform(rng, cfg.quiet_min_s, cfg.quiet_max_s);
      const std::size_t end = std::min(n, pos + std::max<std::size_t>(1, seconds_to_samples(d, sr)));
      if (speaking) runs.emplace_back(pos, end);
      pos = end;
      speaking = !speaking;
    }
  }

  const PhoneBook pb = phone_book(cfg.harmonics, cfg.viseme_dim);
  const double nyquist = 0.5 * sr;
  const auto ramp = std::max<std::size_t>(1, seconds_to_samples(kEdgeRampS, sr));
  std::vector<double> phase(cfg.harmonics);
  for (auto& p : phase) p = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  double timbre_norm = 0.0;
  for (double t : timbre) timbre_norm += t;

  for (const auto& [a, b] : runs) {
    std::size_t pos = a;
    std::size_t prev_phone = std::uniform_int_distribution<std::size_t>(0, kNumPhones - 1)(rng);
    while (pos < b) {
      const std::size_t phone = std::uniform_int_distribution<std::size_t>(0, kNumPhones - 1)(rng);
      const std::size_t len = std::max<std::size_t>(
          1, seconds_to_samples(uniform(rng, cfg.phone_min_s, cfg.phone_max_s), sr));
      const std::size_t end = std::min(b, pos + len);
      const double plen = static_cast<double>(end - pos);
      for (std::size_t i = pos; i < end; ++i) {
        const double x = static_cast<double>(i - pos) / plen;
        const double blend = std::min(1.0, x / 0.25);
        const double syllable = 0.6 + 0.4 * std::sin(std::numbers::pi * x);
        double edge = 1.0;
        if (i - a < ramp) edge = 0.5 - 0.5 * std::cos(std::numbers::pi * (i - a + 0.5) / ramp);
        if (b - i <= ramp) edge = std::min(edge, 0.5 - 0.5 * std::cos(std::numbers::pi * (b - i - 0.5) / ramp));
        const double t = static_cast<double>(i) / sr;
        const double f = f0 * (1.0 + vib_depth * std::sin(2.0 * std::numbers::pi * vib_rate * t));
        double s = 0.0;
        for (std::size_t h = 0; h < cfg.harmonics; ++h) {
          const double fh = f * static_cast<double>(h + 1);
          phase[h] += 2.0 * std::numbers::pi * fh / sr;
          if (fh >= 0.9 * nyquist) continue;
          const double w = (1.0 - blend) * pb.harmonic_weights[prev_phone][h] +
                           blend * pb.harmonic_weights[phone][h];
          s += w * timbre[h] * std::sin(phase[h]);
        }
        u.clip.samples[i] = cfg.level * syllable * edge * s / timbre_norm;
        u.activity[i] = true;
        u.phones[i] = static_cast<std::uint8_t>(phone);
      }
      prev_phone = phone;
      pos = end;
    }
  }
  u.visemes = viseme_features(u.clip.samples, u.activity, u.phones, cfg);
  return u;
}

std::vector<double> colored_noise(std::size_t n, double tilt, std::uint64_t seed) {
  require(tilt > -1.0 && tilt < 1.0, ErrorKind::Parameter, "noise tilt must lie in (-1, 1)");
  auto rng = make_rng({seed, 0x401aeULL});
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> out(n);
  double y = 0.0;
  for (auto& v : out) {
    y = tilt * y + normal(rng);
    v = y;
  }
  return out;
}

namespace {

template <typename T>
std::vector<T> slice(const std::vector<T>& v, std::size_t start, std::size_t len) {
  return std::vector<T>(v.begin() + static_cast<std::ptrdiff_t>(start),
                        v.begin() + static_cast<std::ptrdiff_t>(start + len));
}

ActivityMask slice_mask(const ActivityMask& m, std::size_t start, std::size_t len) {
  ActivityMask out(len);
  for (std::size_t i = 0; i < len; ++i) out[i] = m[start + i];
  return out;
}

void add_noise_and_mix(MixtureRecord& rec, const MixtureSpec& spec) {
  const std::size_t n = rec.target_truth.size();
  if (spec.noise_snr_db) {
    auto noise = colored_noise(n, spec.noise_tilt, spec.noise_seed);
    const double g = snr_gain(rec.reference_energy, energy(noise), *spec.noise_snr_db);
    for (auto& v : noise) v *= g;
    rec.noise_component = std::move(noise);
  }
  rec.mixture.sample_rate = rec.target_truth.sample_rate;
  rec.mixture.samples = rec.target_truth.samples;
  for (const auto& comp : rec.interference_components)
    for (std::size_t i = 0; i < n; ++i) rec.mixture.samples[i] += comp[i];
  if (!rec.noise_component.empty())
    for (std::size_t i = 0; i < n; ++i) rec.mixture.samples[i] += rec.noise_component[i];
}

}  // namespace

MixtureRecord simulate_general(const MixtureSpec& spec, const SynthConfig& cfg) {
  require(!spec.interferences.empty() && spec.interferences.size() <= 2, ErrorKind::Parameter,
          "a mixture needs 1 or 2 interference sources");
  require(spec.clip_len >= 1, ErrorKind::Parameter, "clip_len must be positive");
  const std::size_t n = spec.clip_len;
  const int sr = cfg.sample_rate;

  const auto tgt = gen_utterance(spec.target.speaker_id, spec.target.seed,
                                 spec.target.duration_s, cfg, spec.target.kind);
  require(spec.target_offset + n <= tgt.clip.size(), ErrorKind::Length,
          "target segment exceeds the target utterance");

  MixtureRecord rec;
  rec.spec = spec;
  rec.target_truth.sample_rate = sr;
  auto seg = slice(tgt.clip.samples, spec.target_offset, n);
  rec.reference_energy = energy(seg);
  require(rec.reference_energy > 0.0, ErrorKind::DegenerateInput,
          "target segment is silent; no reference level for mixing");

  ActivityMask target_mask(n, false);
  if (spec.target_absent) {
    rec.target_truth.samples.assign(n, 0.0);
    rec.visemes.fps = cfg.video_fps;
    rec.visemes.dim = cfg.viseme_dim;
    rec.visemes.frames = viseme_frame_count(n, sr, cfg.video_fps);
    rec.visemes.data.assign(rec.visemes.frames * rec.visemes.dim, 0.0);
  } else {
    target_mask = slice_mask(tgt.activity, spec.target_offset, n);
    rec.visemes = viseme_features(seg, target_mask, slice(tgt.phones, spec.target_offset, n), cfg);
    rec.target_truth.samples = std::move(seg);
  }

  std::vector<ActivityMask> interference_masks;
  for (const auto& ip : spec.interferences) {
    require(ip.clip_offset < n && ip.length >= 1, ErrorKind::Parameter,
            "interference placement outside the clip");
    const std::size_t len = std::min(ip.length, n - ip.clip_offset);
    const auto src = gen_utterance(ip.source.speaker_id, ip.source.seed, ip.source.duration_s,
                                   cfg, ip.source.kind);
    require(ip.source_offset + len <= src.clip.size(), ErrorKind::Length,
            "interference segment exceeds its source utterance");
    const auto piece = slice(src.clip.samples, ip.source_offset, len);
    const double g = snr_gain(rec.reference_energy, energy(piece), ip.snr_db);
    std::vector<double> comp(n, 0.0);
    ActivityMask mask(n, false);
    for (std::size_t i = 0; i < len; ++i) {
      comp[ip.clip_offset + i] = g * piece[i];
      mask[ip.clip_offset + i] = src.activity[ip.source_offset + i];
    }
    rec.interference_components.push_back(std::move(comp));
    interference_masks.push_back(std::move(mask));
  }
  add_noise_and_mix(rec, spec);
  rec.track = label_scenarios(target_mask, interference_masks);
  rec.effective_visual_ratio = 1.0;
  return rec;
}

MixtureRecord simulate_highly_overlapped(const MixtureSpec& spec, const SynthConfig& cfg) {
  require(spec.interferences.size() == 1, ErrorKind::Parameter,
          "highly overlapped mixtures take exactly one interference source");
  const auto& ip = spec.interferences[0];
  const auto tgt = gen_utterance(spec.target.speaker_id, spec.target.seed,
                                 spec.target.duration_s, cfg, spec.target.kind);
  const auto src = gen_utterance(ip.source.speaker_id, ip.source.seed, ip.source.duration_s,
                                 cfg, ip.source.kind);
  // The longer source is truncated to the shorter one.
  const std::size_t n = std::min(tgt.clip.size(), src.clip.size());

  MixtureRecord rec;
  rec.spec = spec;
  rec.spec.clip_len = n;
  rec.spec.target_offset = 0;
  rec.spec.interferences[0].source_offset = 0;
  rec.spec.interferences[0].clip_offset = 0;
  rec.spec.interferences[0].length = n;
  rec.target_truth.sample_rate = cfg.sample_rate;
  rec.target_truth.samples = slice(tgt.clip.samples, 0, n);
  rec.reference_energy = energy(rec.target_truth.samples);
  const auto target_mask = slice_mask(tgt.activity, 0, n);
  rec.visemes = viseme_features(rec.target_truth.samples, target_mask, slice(tgt.phones, 0, n), cfg);

  const auto piece = slice(src.clip.samples, 0, n);
  const double g = snr_gain(rec.reference_energy, energy(piece), ip.snr_db);
  std::vector<double> comp(piece);
  for (auto& v : comp) v *= g;
  rec.interference_components.push_back(std::move(comp));
  add_noise_and_mix(rec, spec);
  rec.track = label_scenarios(target_mask, slice_mask(src.activity, 0, n));
  return rec;
}

double effective_visual_ratio(std::size_t frames,
                              std::span<const std::pair<std::size_t, std::size_t>> spans) {
  if (frames == 0) return 1.0;
  std::vector<bool> occluded(frames, false);
  for (const auto& [a, b] : spans)
    for (std::size_t f = a; f < std::min(b, frames); ++f) occluded[f] = true;
  const auto hidden = static_cast<std::size_t>(std::count(occluded.begin(), occluded.end(), true));
  return static_cast<double>(frames - hidden) / static_cast<double>(frames);
}

MixtureRecord apply_occlusion(MixtureRecord record, std::uint64_t seed, double lo, double hi) {
  require(0.0 <= lo && lo <= hi && hi <= 1.0, ErrorKind::Parameter,
          "occlusion fractions must satisfy 0 <= lo <= hi <= 1");
  auto rng = make_rng({seed, 0x0cc1ULL});
  const double frac = uniform(rng, lo, hi);
  auto& v = record.visemes;
  const auto count = std::min(v.frames, static_cast<std::size_t>(std::llround(frac * v.frames)));
  if (count > 0) {
    const std::size_t start = uniform_index(rng, 0, v.frames - count);
    std::fill(v.data.begin() + static_cast<std::ptrdiff_t>(start * v.dim),
              v.data.begin() + static_cast<std::ptrdiff_t>((start + count) * v.dim), 0.0);
    record.occlusion_spans.emplace_back(start, start + count);
  }
  record.effective_visual_ratio = effective_visual_ratio(v.frames, record.occlusion_spans);
  return record;
}

namespace {

std::uint64_t draw_speaker(std::mt19937_64& rng, std::uint64_t num_speakers,
                           std::span<const std::uint64_t> avoid) {
  std::uniform_int_distribution<std::uint64_t> d(0, num_speakers - 1);
  while (true) {
    const auto s = d(rng);
    if (std::find(avoid.begin(), avoid.end(), s) == avoid.end()) return s;
  }
}

MixtureSpec draw_general_spec(const CorpusConfig& cfg, std::mt19937_64& rng) {
  const auto& syn = cfg.synth;
  const int sr = syn.sample_rate;
  MixtureSpec spec;
  spec.kind = MixtureKind::General;
  spec.seed = rng();
  const double clip_s = uniform(rng, cfg.clip_min_s, cfg.clip_max_s);
  spec.clip_len = std::max<std::size_t>(1, seconds_to_samples(clip_s, sr));
  const double utt_min = std::max(syn.min_utterance_s, clip_s);

  std::vector<std::uint64_t> used;
  spec.target.speaker_id = draw_speaker(rng, cfg.num_speakers, used);
  used.push_back(spec.target.speaker_id);
  spec.target.seed = rng();
  spec.target.duration_s = uniform(rng, utt_min, utt_min + 1.0);
  const std::size_t tgt_n = seconds_to_samples(spec.target.duration_s, sr);
  spec.target_offset = uniform_index(rng, 0, tgt_n - std::min(tgt_n, spec.clip_len));
  spec.target_absent = std::bernoulli_distribution(cfg.ta_probability)(rng);

  const std::size_t count = std::bernoulli_distribution(0.5)(rng) ? 2 : 1;
  for (std::size_t i = 0; i < count; ++i) {
    InterferencePlacement ip;
    ip.source.speaker_id = draw_speaker(rng, cfg.num_speakers, used);
    used.push_back(ip.source.speaker_id);
    ip.source.seed = rng();
    ip.source.duration_s = uniform(rng, utt_min, utt_min + 1.0);
    const std::size_t src_n = seconds_to_samples(ip.source.duration_s, sr);
    const double frac = uniform(rng, cfg.interference_min_frac, cfg.interference_max_frac);
    ip.length = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(frac * static_cast<double>(spec.clip_len))), 1,
        spec.clip_len);
    ip.clip_offset = uniform_index(rng, 0, spec.clip_len - ip.length);
    ip.source_offset = uniform_index(rng, 0, src_n - std::min(src_n, ip.length));
    ip.snr_db = uniform(rng, cfg.snr_min_db, cfg.snr_max_db);
    spec.interferences.push_back(ip);
  }
  return spec;
}

MixtureSpec draw_overlapped_spec(const CorpusConfig& cfg, std::mt19937_64& rng) {
  MixtureSpec spec;
  spec.kind = MixtureKind::HighlyOverlapped;
  spec.seed = rng();
  std::vector<std::uint64_t> used;
  spec.target.speaker_id = draw_speaker(rng, cfg.num_speakers, used);
  used.push_back(spec.target.speaker_id);
  spec.target.seed = rng();
  spec.target.kind = UtteranceKind::AlwaysActive;
  spec.target.duration_s = uniform(rng, cfg.overlapped_min_s, cfg.overlapped_max_s);
  InterferencePlacement ip;
  ip.source.speaker_id = draw_speaker(rng, cfg.num_speakers, used);
  ip.source.seed = rng();
  ip.source.kind = UtteranceKind::AlwaysActive;
  ip.source.duration_s = uniform(rng, cfg.overlapped_min_s, cfg.overlapped_max_s);
  ip.snr_db = uniform(rng, cfg.snr_min_db, cfg.snr_max_db);
  spec.interferences.push_back(ip);
  return spec;
}

}  // namespace

MixtureRecord generate_clip(const CorpusConfig& cfg, std::uint64_t corpus_seed,
                            std::uint64_t index) {
  require(cfg.num_speakers >= 3, ErrorKind::Parameter, "need at least 3 speakers");
  constexpr int kMaxAttempts = 100;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    auto rng = make_rng({corpus_seed, index, static_cast<std::uint64_t>(attempt)});
    MixtureSpec spec = cfg.kind == MixtureKind::General ? draw_general_spec(cfg, rng)
                                                        : draw_overlapped_spec(cfg, rng);
    if (cfg.noisy) {
      spec.noise_snr_db = uniform(rng, cfg.noise_snr_min_db, cfg.noise_snr_max_db);
      spec.noise_tilt = uniform(rng, -0.9, 0.9);
      spec.noise_seed = rng();
    }
    const std::uint64_t occlusion_seed = rng();
    try {
      MixtureRecord rec = cfg.kind == MixtureKind::General
                              ? simulate_general(spec, cfg.synth)
                              : simulate_highly_overlapped(spec, cfg.synth);
      if (cfg.occlusion)
        rec = apply_occlusion(std::move(rec), occlusion_seed, cfg.occlusion->first,
                              cfg.occlusion->second);
      char id[32];
      std::snprintf(id, sizeof id, "clip%06llu", static_cast<unsigned long long>(index));
      rec.id = id;
      return rec;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::DegenerateInput) throw;
    }
  }
  fail(ErrorKind::DegenerateInput, "could not draw a non-degenerate mixture for clip " +
                                       std::to_string(index));
}

}  // namespace usev

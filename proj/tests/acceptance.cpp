// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include "oracles.hpp"
#include "usev/checkpoint.hpp"
#include "usev/dsp.hpp"
#include "usev/harness.hpp"
#include "usev/manifest.hpp"

using namespace usev;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool cond, const std::string& what) {
    if (!cond) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += "FAILED " + what;
    }
  }
  void note(const std::string& s) {
    if (!detail.empty()) detail += "; ";
    detail += s;
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::filesystem::path work_dir(const char* name) {
  auto p = std::filesystem::temp_directory_path() / "usev_acceptance" / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(is), {});
}

ScenarioTrack runs(std::initializer_list<std::pair<Scenario, std::size_t>> rs) {
  std::vector<Scenario> labels;
  for (auto [k, n] : rs) labels.insert(labels.end(), n, k);
  return track_from_labels(labels);
}

Outcome metric_oracles() {
  Outcome o;
  std::mt19937_64 rng(1001);
  std::uniform_int_distribution<std::size_t> len(100, 50000);
  std::uniform_real_distribution<double> wd(0.0, 2.0);
  double worst[6] = {};
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = len(rng);
    const auto ref = oracle::randn(n, rng);
    auto est = oracle::randn(n, rng, 0.5);
    for (std::size_t i = 0; i < n; ++i) est[i] += 0.7 * ref[i];
    const auto labels = oracle::random_labels(n, rng, n / 4 + 1);
    const auto track = track_from_labels(labels);
    const LossWeights w{wd(rng), wd(rng), wd(rng), wd(rng) + 0.01};
    const double errs[6] = {
        oracle::rel_err(loss_uniform(est, ref), oracle::uniform_loss(est, ref)),
        oracle::rel_err(loss_sdr(est, ref), oracle::sdr_loss(est, ref)),
        oracle::rel_err(loss_energy(est), oracle::energy_loss(est)),
        oracle::rel_err(loss_differentiated(est, ref, track, w),
                        oracle::differentiated(est, ref, labels, w.alpha, w.beta, w.gamma, w.delta)),
        oracle::rel_err(si_sdr(est, ref), oracle::si_sdr(est, ref)),
        oracle::rel_err(power_db_per_s(est, 8000), oracle::power(est, 8000)),
    };
    for (int k = 0; k < 6; ++k) worst[k] = std::max(worst[k], errs[k]);
  }
  const char* names[6] = {"loss_uniform", "loss_sdr", "loss_energy", "loss_differentiated",
                          "si_sdr", "power_db_per_s"};
  double overall = 0;
  for (int k = 0; k < 6; ++k) {
    o.require(worst[k] <= 1e-9, std::string(names[k]) + fmt(" rel err %.3g", worst[k]));
    overall = std::max(overall, worst[k]);
  }
  o.note("1000 pairs, max rel err " + fmt("%.3g", overall));
  return o;
}

Outcome anchored_constants() {
  Outcome o;
  o.require(power_db_per_s(std::vector<double>(16000, 0.0), 16000) == -80.0, "silence power");
  o.require(power_db_per_s(std::vector<double>(12345, 0.0), 8000) == 10.0 * std::log10(1e-8),
            "silence power, other duration");
  o.require(kEpsilon == 1e-8, "epsilon");
  const LossWeights w;
  o.require(w.alpha == 0.005 && w.beta == 1.0 && w.gamma == 1.0 && w.delta == 0.005,
            "default weights");
  o.note("silence -80.00 dB/s, eps 1e-8, weights " + w.str());
  return o;
}

Outcome scenario_algebra() {
  Outcome o;
  std::mt19937_64 rng(303);
  std::uniform_int_distribution<std::size_t> len(1, 5000);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = len(rng);
    const double p = u(rng) * 0.1;
    ActivityMask t(n), i(n);
    bool a = u(rng) < 0.5, b = u(rng) < 0.5;
    for (std::size_t k = 0; k < n; ++k) {
      if (u(rng) < p) a = !a;
      if (u(rng) < p) b = !b;
      t[k] = a;
      i[k] = b;
    }
    const auto labels = label_scenarios(t, i).expand();
    for (std::size_t k = 0; k < n; ++k) mismatches += labels[k] != oracle::classify(t[k], i[k]);
  }
  o.require(mismatches == 0, std::to_string(mismatches) + " labeling mismatches");

  using S = Scenario;
  using B = OverlapBucket;
  struct Case {
    ScenarioTrack track;
    std::optional<double> ratio;
    B bucket;
  };
  const std::vector<Case> cases{
      {runs({{S::SS, 200}, {S::SQ, 100}, {S::QS, 100}}), 0.5, B::To60},
      {runs({{S::SQ, 300}}), 0.0, B::Zero},
      {runs({{S::QQ, 300}}), std::nullopt, B::TA},
      {runs({{S::QQ, 50}, {S::QS, 70}}), 0.0, B::TA},
      {runs({{S::SS, 20}, {S::SQ, 80}}), 0.2, B::To20},
      {runs({{S::SS, 20}, {S::QS, 80}}), 0.2, B::To20},
      {runs({{S::SS, 21}, {S::SQ, 79}}), 0.21, B::To40},
      {runs({{S::SS, 40}, {S::SQ, 60}}), 0.4, B::To40},
      {runs({{S::SS, 41}, {S::SQ, 59}}), 0.41, B::To60},
      {runs({{S::SS, 60}, {S::QS, 40}}), 0.6, B::To60},
      {runs({{S::SS, 61}, {S::QS, 39}}), 0.61, B::To80},
      {runs({{S::SS, 80}, {S::SQ, 20}}), 0.8, B::To80},
      {runs({{S::SS, 81}, {S::SQ, 19}}), 0.81, B::To100},
      {runs({{S::SS, 100}}), 1.0, B::To100},
      {runs({{S::QQ, 9}, {S::SS, 100}, {S::QQ, 9}}), 1.0, B::To100},
      {runs({{S::SS, 1}, {S::SQ, 999}}), 0.001, B::To20},
      {runs({{S::SQ, 10}, {S::QQ, 5}, {S::QS, 10}}), 0.0, B::Zero},
      {runs({{S::SQ, 1}, {S::SS, 3}}), 0.75, B::To80},
      {runs({{S::SS, 3}, {S::QS, 1}, {S::SQ, 1}}), 0.6, B::To60},
      {runs({{S::QS, 10}, {S::SS, 10}, {S::QQ, 30}, {S::SQ, 30}}), 0.2, B::To20},
  };
  std::size_t bad = 0;
  for (const auto& c : cases) {
    const auto r = overlap_ratio(c.track);
    const bool ratio_ok = r.has_value() == c.ratio.has_value() &&
                          (!r || std::abs(*r - *c.ratio) <= 1e-15);
    const auto bucket = classify_clip(c.track) == ClipClass::TA ? B::TA : overlap_bucket(r);
    bad += !(ratio_ok && bucket == c.bucket);
  }
  o.require(bad == 0, std::to_string(bad) + " of 20 crafted tracks wrong");
  o.require(overlap_bucket(0.2) == B::To20 && overlap_bucket(0.2000001) == B::To40 &&
                overlap_bucket(std::nullopt) == B::TA,
            "bucket edges");
  o.note("1000 mask pairs exact, 20 crafted tracks");
  return o;
}

Outcome gradient_checks() {
  Outcome o;
  const auto rep = gradcheck("all", 20);
  double op_worst = 0, model_err = 0;
  for (const auto& e : rep.entries) {
    o.require(e.passed() && e.seeds >= 20, e.name + fmt(" err %.3g", e.max_rel_error));
    if (e.tolerance == kOpTolerance) op_worst = std::max(op_worst, e.max_rel_error);
    else model_err = e.max_rel_error;
  }
  o.require(gradcheck_op_names().size() >= 30, "operator coverage");
  o.note(std::to_string(rep.entries.size() - 1) + " ops x 20 seeds, worst " + fmt("%.3g", op_worst) +
         "; micro model " + fmt("%.3g", model_err));
  return o;
}

Outcome structural_identities() {
  Outcome o;
  std::mt19937_64 rng(505);
  double adj = 0;
  for (auto [n, L, hop] : {std::tuple{16000u, 40u, 20u}, {8000u, 40u, 20u}, {1001u, 16u, 8u}}) {
    const auto x = oracle::randn(n, rng);
    const auto F = frame_signal(x, L, hop);
    const auto y = oracle::randn(F.data.size(), rng);
    auto back = overlap_add(y, F.num_frames, L, hop);
    back.resize(n, 0.0);
    const double lhs = dot(F.data, y), rhs = dot(x, back);
    adj = std::max(adj, std::abs(lhs - rhs) / std::max(1.0, std::abs(lhs)));
  }
  o.require(adj <= 1e-12, fmt("adjoint %.3g", adj));

  double rt = 0;
  for (auto [C, T, K] : {std::tuple{4u, 399u, 16u}, {16u, 100u, 16u}, {3u, 57u, 100u}, {2u, 8u, 4u}}) {
    const auto x = ad::Tensor::from({C, T}, oracle::randn(C * T, rng));
    const auto back = ad::aggregate_chunks(ad::segment_chunks(x, K), T);
    for (std::size_t i = 0; i < x.numel(); ++i)
      rt = std::max(rt, std::abs(back.data()[i] - x.data()[i]));
  }
  o.require(rt <= 1e-12, fmt("chunk round trip %.3g", rt));

  bool p_ok = true;
  for (std::size_t K : {4u, 16u, 100u})
    for (std::size_t m : {1u, 2u, 3u, 8u})
      p_ok = p_ok && ad::chunk_layout(K * m, K).num_chunks == 2 * K * m / K + 1;
  o.require(p_ok, "chunk count formula");

  const UsevModel model(UsevConfig::desk(), 5);
  bool len_ok = true;
  for (std::size_t n : {40u, 57u, 800u, 1999u, 8000u}) {
    const auto x = oracle::randn(n, rng, 0.1);
    VisemeMatrix v{oracle::randn(4 * 8, rng), 4, 8, 25.0};
    len_ok = len_ok && model.infer(x, v).size() == n;
  }
  o.require(len_ok, "decoder output length");
  o.note(fmt("adjoint %.2g", adj) + fmt(", chunk round trip %.2g", rt) + ", P formula, lengths");
  return o;
}

Outcome simulation_soundness() {
  Outcome o;
  CorpusConfig cfg;
  double snr_err = 0, sum_err = 0;
  StatsReport hist;
  std::vector<ManifestEntry> entries;
  for (std::uint64_t i = 0; i < 500; ++i) {
    const auto r = generate_clip(cfg, 6006, i);
    for (std::size_t j = 0; j < r.interference_components.size(); ++j) {
      const double snr = 10.0 * std::log10(r.reference_energy / energy(r.interference_components[j]));
      snr_err = std::max(snr_err, std::abs(snr - r.spec.interferences[j].snr_db));
    }
    for (std::size_t k = 0; k < r.mixture.size(); ++k) {
      double s = r.target_truth.samples[k];
      for (const auto& c : r.interference_components) s += c[k];
      if (!r.noise_component.empty()) s += r.noise_component[k];
      sum_err = std::max(sum_err, std::abs(s - r.mixture.samples[k]));
    }
    ManifestEntry e;
    e.sample_rate = r.mixture.sample_rate;
    e.track = r.track;
    entries.push_back(e);
  }
  const auto st = corpus_stats(entries);
  o.require(snr_err <= 1e-9, fmt("snr round trip %.3g dB", snr_err));
  o.require(sum_err <= 1e-12, fmt("component sum %.3g", sum_err));
  bool kinds = true, buckets = true;
  for (double s : st.kind_seconds) kinds = kinds && s > 0.0;
  for (auto c : st.bucket_counts) buckets = buckets && c > 0;
  o.require(kinds, "all four scenario kinds present");
  o.require(buckets, "all buckets present");

  using S = Scenario;
  const std::vector<ScenarioTrack> fixture{
      runs({{S::QQ, 400}}),
      runs({{S::QQ, 100}, {S::QS, 300}}),
      runs({{S::SQ, 200}}),
      runs({{S::SQ, 100}, {S::QQ, 50}, {S::QS, 100}}),
      runs({{S::SS, 20}, {S::SQ, 80}}),
      runs({{S::SS, 30}, {S::SQ, 70}}),
      runs({{S::SS, 100}, {S::QS, 100}}),
      runs({{S::SS, 70}, {S::SQ, 30}, {S::QQ, 100}}),
      runs({{S::SS, 300}}),
      runs({{S::QQ, 100}, {S::SS, 90}, {S::QS, 10}}),
  };
  const auto dir = work_dir("stats");
  std::vector<ManifestEntry> fx;
  for (std::size_t i = 0; i < fixture.size(); ++i) {
    ManifestEntry e;
    e.id = "f" + std::to_string(i);
    e.mixture_path = e.id + "_mix.wav";
    e.target_path = e.id + "_target.wav";
    e.visemes_path = e.id + "_visemes.bin";
    e.sample_rate = 100;
    e.track = fixture[i];
    fx.push_back(e);
  }
  write_manifest(dir / "manifest.jsonl", fx);
  const auto fs = corpus_stats(dir / "manifest.jsonl");
  const std::array<std::size_t, kNumBuckets> want_buckets{2, 2, 1, 1, 1, 1, 2};
  const std::array<double, 4> want_seconds{7.5, 4.8, 6.1, 5.1};
  bool fx_ok = fs.clips == 10 && fs.bucket_counts == want_buckets;
  for (std::size_t k = 0; k < 4; ++k) fx_ok = fx_ok && std::abs(fs.kind_seconds[k] - want_seconds[k]) <= 1e-9;
  o.require(fx_ok, "10-clip fixture stats");
  o.note(fmt("snr err %.2g dB", snr_err) + fmt(", sum err %.2g", sum_err) + ", 500 clips: TA " +
         std::to_string(st.bucket_counts[0]) + ", 0% " + std::to_string(st.bucket_counts[1]) +
         ", (80,100] " + std::to_string(st.bucket_counts[6]));
  return o;
}

/// Mean over clips of the output power of each clip's pooled QQ and QS samples.
double pooled_quiet_power(const std::vector<MixtureRecord>& clips,
                          const std::vector<std::vector<double>>& est, std::size_t& n) {
  double acc = 0;
  n = 0;
  for (std::size_t c = 0; c < clips.size(); ++c) {
    auto idx = clips[c].track.indices_of(Scenario::QQ);
    const auto qs = clips[c].track.indices_of(Scenario::QS);
    idx.insert(idx.end(), qs.begin(), qs.end());
    if (idx.empty()) continue;
    std::vector<double> v;
    for (auto i : idx) v.push_back(est[c][i]);
    acc += power_db_per_s(v, clips[c].mixture.sample_rate);
    ++n;
  }
  return n ? acc / static_cast<double>(n) : std::nan("");
}

Outcome desk_overfit() {
  Outcome o;
  CorpusConfig cc;
  std::vector<MixtureRecord> clips;
  for (std::uint64_t i = 0; i < 8; ++i) clips.push_back(generate_clip(cc, 2024, i));
  for (const auto& c : clips) o.require(c.mixture.duration_s() <= 1.0, "clip length");

  TrainConfig tc;
  tc.model = UsevConfig::desk();
  tc.loss = LossKind::Differentiated;
  tc.weights = LossWeights{};
  tc.lr0 = 1e-3;
  tc.lr_decay = 1.0;
  tc.max_epochs = 100;
  tc.patience = 1000;
  tc.batch_size = 1;
  tc.seed = 1;
  UsevModel model(tc.model, 1);
  const auto res = train(tc, clips, {}, model);
  o.require(res.steps >= 200, std::to_string(res.steps) + " steps");

  const auto mix_est = extract_all(clips, ExtractorKind::Mixture, nullptr);
  const auto out_est = extract_all(clips, ExtractorKind::Model, &model);
  const auto mix = evaluate(clips, ExtractorKind::Mixture, nullptr);
  std::vector<std::pair<const MixtureRecord*, std::span<const double>>> pairs;
  for (std::size_t i = 0; i < clips.size(); ++i) pairs.emplace_back(&clips[i], out_est[i]);
  const auto out = eval_report(pairs);

  const auto ss = static_cast<std::size_t>(Scenario::SS);
  const auto qs = static_cast<std::size_t>(Scenario::QS);
  const auto qq = static_cast<std::size_t>(Scenario::QQ);
  const double ss_gain = out.per_kind[ss].mean() - mix.per_kind[ss].mean();
  std::size_t n_mix = 0, n_out = 0;
  const double quiet_mix = pooled_quiet_power(clips, mix_est, n_mix);
  const double quiet_out = pooled_quiet_power(clips, out_est, n_out);
  const double drop = quiet_mix - quiet_out;
  o.require(mix.per_kind[ss].count > 0 && ss_gain >= 5.0, fmt("SS SI-SDR gain %.2f dB", ss_gain));
  o.require(n_mix > 0 && drop >= 10.0, fmt("QQ/QS power drop %.2f dB", drop));
  o.note(std::to_string(res.steps) + " steps" + fmt(", SS SI-SDR %.2f", mix.per_kind[ss].mean()) +
         fmt(" -> %.2f dB", out.per_kind[ss].mean()) + fmt(" (+%.2f)", ss_gain) +
         fmt(", QQ/QS power %.2f", quiet_mix) + fmt(" -> %.2f dB/s", quiet_out) +
         fmt(" (-%.2f)", drop) + fmt("; QS alone %.2f", mix.per_kind[qs].mean()) +
         fmt(" -> %.2f", out.per_kind[qs].mean()) + fmt(", QQ alone %.2f", mix.per_kind[qq].mean()) +
         fmt(" -> %.2f", out.per_kind[qq].mean()));
  return o;
}

Outcome loss_selectivity() {
  Outcome o;
  CorpusConfig cc;
  const UsevModel model(UsevConfig::desk(), 3);
  std::size_t leaks = 0, live_checked = 0, clips_used = 0;
  for (std::uint64_t i = 0; i < 6; ++i) {
    const auto rec = generate_clip(cc, 808, i);
    const auto labels = rec.track.expand();
    for (int pass = 0; pass < 2; ++pass) {
      const LossWeights w = pass == 0 ? LossWeights{0, 1, 1, 0} : LossWeights{0.005, 0, 0, 0.005};
      const auto x = ad::Tensor::from({rec.mixture.size()}, rec.mixture.samples);
      const auto est = model.forward(x, visemes_tensor(rec.visemes));
      bool any_weighted = false;
      for (auto l : labels) any_weighted = any_weighted || (pass == 0 ? target_active(l) : !target_active(l));
      if (!any_weighted) continue;
      ad::backward(loss_differentiated(est, rec.target_truth.samples, rec.track, w));
      const auto g = est.grad();
      if (g.size() != labels.size()) {
        o.require(false, "output gradient missing");
        return o;
      }
      for (std::size_t k = 0; k < labels.size(); ++k) {
        const bool zeroed = pass == 0 ? !target_active(labels[k]) : target_active(labels[k]);
        if (zeroed) leaks += g[k] != 0.0;
        else live_checked += g[k] != 0.0;
      }
      ++clips_used;
    }
  }
  o.require(leaks == 0, std::to_string(leaks) + " nonzero gradients on zero-weight samples");
  o.require(live_checked > 0, "weighted samples receive gradient");
  o.note(std::to_string(clips_used) + " clip passes, 0 leaks");
  return o;
}

Outcome occlusion_pipeline() {
  Outcome o;
  CorpusConfig cc;
  std::size_t bad = 0;
  std::vector<MixtureRecord> occluded;
  for (std::uint64_t i = 0; i < 20; ++i) {
    const auto base = generate_clip(cc, 909, i);
    const double q = 1.0 / static_cast<double>(base.visemes.frames);
    const auto r0 = apply_occlusion(base, i, 0.0, 0.0);
    const auto r5 = apply_occlusion(base, i, 0.5, 0.5);
    const auto r1 = apply_occlusion(base, i, 1.0, 1.0);
    bad += r0.effective_visual_ratio != 1.0 || r0.visemes != base.visemes;
    bad += std::abs(r5.effective_visual_ratio - 0.5) > q + 1e-12;
    bad += r1.effective_visual_ratio != 0.0;
    for (double v : r1.visemes.data) bad += v != 0.0;
    occluded.push_back(apply_occlusion(base, 100 + i, 0.0, 1.0));
  }
  o.require(bad == 0, std::to_string(bad) + " occlusion mismatches");

  bool bins_ok = kVisualBins == 20;
  for (std::size_t b = 0; b < 20; ++b) {
    const double lo = 0.05 * static_cast<double>(b), hi = 0.05 * static_cast<double>(b + 1);
    bins_ok = bins_ok && visual_bin(hi) == b && (b == 0 || visual_bin(lo + 1e-9) == b);
  }
  bins_ok = bins_ok && visual_bin(0.0) == 0;
  o.require(bins_ok, "5% bin edges");

  const auto rep = evaluate(occluded, ExtractorKind::Mixture, nullptr);
  std::array<std::size_t, kVisualBins> want{};
  for (const auto& r : rep.clips)
    if (r.per_kind[static_cast<std::size_t>(Scenario::SS)]) ++want[visual_bin(r.effective_visual_ratio)];
  bool view_ok = true;
  for (std::size_t b = 0; b < kVisualBins; ++b)
    view_ok = view_ok && rep.occlusion[static_cast<std::size_t>(Scenario::SS)][b].count == want[b];
  o.require(view_ok, "occlusion view binning");
  o.note("fractions {0, 0.5, 1} on 20 clips, 20 bins of 5%");
  return o;
}

Outcome reproducibility() {
  Outcome o;
  const auto a = work_dir("repro_a"), b = work_dir("repro_b");
  SimulateOptions opt;
  opt.count = 10;
  opt.seed = 1010;
  opt.corpus.occlusion = std::pair{0.0, 0.5};
  const auto ea = simulate_corpus(opt, a / "corpus");
  opt.jobs = 2;
  simulate_corpus(opt, b / "corpus");
  bool same = slurp(a / "corpus" / "manifest.jsonl") == slurp(b / "corpus" / "manifest.jsonl");
  for (const auto& e : ea)
    for (const auto& f : {e.mixture_path, e.target_path, e.visemes_path})
      same = same && slurp(a / "corpus" / f) == slurp(b / "corpus" / f);
  o.require(same, "simulate outputs differ");

  TrainConfig tc;
  tc.max_epochs = 2;
  tc.batch_size = 2;
  tc.seed = 7;
  tc.lr0 = 1e-3;
  train(tc, a / "corpus" / "manifest.jsonl", std::nullopt, a / "run");
  train(tc, b / "corpus" / "manifest.jsonl", std::nullopt, b / "run");
  bool train_same = true;
  for (const char* f : {"train_log.jsonl", "best.ckpt", "last.ckpt", "run_config.txt"})
    train_same = train_same && slurp(a / "run" / f) == slurp(b / "run" / f) &&
                 !slurp(a / "run" / f).empty();
  o.require(train_same, "training outputs differ");
  o.note("10-clip corpus and 2-epoch run byte-identical");
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"metric and loss oracles", metric_oracles},
      {"anchored constants", anchored_constants},
      {"scenario algebra", scenario_algebra},
      {"gradient verification", gradient_checks},
      {"structural identities", structural_identities},
      {"simulation soundness", simulation_soundness},
      {"desk-scale overfit", desk_overfit},
      {"loss selectivity", loss_selectivity},
      {"occlusion pipeline", occlusion_pipeline},
      {"reproducibility", reproducibility},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failures += !o.pass;
    std::printf("criterion %2zu %s  %-26s %7.1fs  %s\n", i + 1, o.pass ? "PASS" : "FAIL",
                criteria[i].first, secs, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria failed\n", failures, criteria.size());
  return failures == 0 ? 0 : 1;
}

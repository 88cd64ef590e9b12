#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "oracles.hpp"
#include "usev/checkpoint.hpp"
#include "usev/error.hpp"
#include "usev/harness.hpp"
#include "usev/manifest.hpp"

using namespace usev;

namespace {

std::filesystem::path tmp_dir(const char* name) {
  auto p = std::filesystem::temp_directory_path() / "usev_tests" / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

/// Small hand-made clip at the micro config's 100 Hz rate.
MixtureRecord micro_clip(std::uint64_t seed, std::size_t len) {
  std::mt19937_64 rng(seed);
  MixtureRecord r;
  r.id = "m" + std::to_string(seed);
  const auto labels = oracle::random_labels(len, rng, len / 3 + 1);
  r.track = track_from_labels(labels);
  r.target_truth = {oracle::randn(len, rng, 0.3), 100};
  r.mixture = {oracle::randn(len, rng, 0.2), 100};
  for (std::size_t i = 0; i < len; ++i) {
    if (!target_active(labels[i])) r.target_truth.samples[i] = 0.0;
    r.mixture.samples[i] += r.target_truth.samples[i];
  }
  const std::size_t frames = (len + 3) / 4;
  r.visemes = {oracle::randn(frames * 3, rng), frames, 3, 25.0};
  return r;
}

TrainConfig micro_train_config() {
  TrainConfig c;
  c.model = UsevConfig::micro();
  c.lr0 = 1e-2;
  c.max_epochs = 3;
  c.batch_size = 2;
  c.seed = 4;
  return c;
}

}  // namespace

TEST_CASE("learning rate schedule") {
  TrainConfig c;
  c.lr0 = 0.001;
  CHECK(lr_at_epoch(c, 0) == 0.001);
  CHECK(lr_at_epoch(c, 2) == doctest::Approx(0.0009604).epsilon(1e-12));
  const auto pre = TrainConfig::for_stage(TrainStage::PretrainOverlapped);
  CHECK(pre.lr0 == 1e-3);
  CHECK(pre.loss == LossKind::Sdr);
  const auto gen = TrainConfig::for_stage(TrainStage::TrainGeneral);
  CHECK(gen.lr0 == 1e-4);
  CHECK(gen.lr_decay == 0.98);
  CHECK(gen.patience == 8);
  CHECK(gen.clip_truncate_s == 6.0);
  CHECK(gen.loss == LossKind::Differentiated);
}

TEST_CASE("early stopping waits exactly the patience") {
  EarlyStopping s(8);
  CHECK(s.update(1.0));
  std::size_t epochs = 1;
  for (double loss = 1.5; !s.should_stop(); loss += 0.5, ++epochs) CHECK(!s.update(loss));
  CHECK(epochs == 9);
  CHECK(s.bad_epochs() == 8);
  CHECK(s.best() == 1.0);
  EarlyStopping t(2);
  t.update(3.0);
  t.update(4.0);
  CHECK(t.update(2.0));
  CHECK(!t.should_stop());
  t.update(2.0);
  t.update(2.5);
  CHECK(t.should_stop());
}

TEST_CASE("config parsing") {
  const auto kv = KeyValueConfig::parse(
      "# run\n"
      "train.stage = pretrain_overlapped\n"
      "train.lr0 = 0.002\n"
      "train.weights = 0.01-1-1-0.01\n"
      "train.loss = uniform\n"
      "model.preset = micro\n"
      "model.N = 6\n",
      "inline");
  const auto c = TrainConfig::from_config(kv);
  CHECK(c.stage == TrainStage::PretrainOverlapped);
  CHECK(c.lr0 == 0.002);
  CHECK(c.loss == LossKind::Uniform);
  CHECK(c.weights == LossWeights{0.01, 1, 1, 0.01});
  CHECK(c.model.N == 6);
  CHECK(c.model.K == UsevConfig::micro().K);
  const auto again = TrainConfig::from_config(KeyValueConfig::parse(c.to_text(), "round trip"));
  CHECK(again.to_text() == c.to_text());

  CHECK_THROWS_AS(TrainConfig::from_config(KeyValueConfig::parse("train.lr = 1\n", "x")), Error);
  CHECK_THROWS_AS(TrainConfig::from_config(KeyValueConfig::parse("train.lr_decay = 1.5\n", "x")),
                  Error);
  CHECK_THROWS_AS(KeyValueConfig::parse("a = 1\na = 2\n", "x"), Error);
  CHECK_THROWS_AS(KeyValueConfig::parse("just words\n", "x"), Error);
}

TEST_CASE("crops start on viseme frames and carry their labels") {
  CorpusConfig cc;
  const auto rec = generate_clip(cc, 3, 1);
  std::mt19937_64 rng(1);
  const std::size_t max_len = 2000;
  const double spf = rec.mixture.sample_rate / rec.visemes.fps;
  for (int i = 0; i < 20; ++i) {
    const auto ex = crop_example(rec, max_len, rng);
    REQUIRE(ex.mixture.size() == max_len);
    CHECK(ex.track.clip_len == max_len);
    const auto it = std::search(rec.mixture.samples.begin(), rec.mixture.samples.end(),
                                ex.mixture.begin(), ex.mixture.end());
    REQUIRE(it != rec.mixture.samples.end());
    const auto start = static_cast<std::size_t>(it - rec.mixture.samples.begin());
    const double frame = start / spf;
    CHECK(std::abs(frame - std::round(frame)) * spf <= 0.5 + 1e-9);
    CHECK(ex.track == rec.track.crop(start, max_len));
    const auto f0 = static_cast<std::size_t>(std::round(frame));
    CHECK(ex.visemes.row(0)[0] == rec.visemes.row(f0)[0]);
  }
  const auto whole = crop_example(rec, rec.mixture.size() + 10, rng);
  CHECK(whole.mixture == rec.mixture.samples);
}

TEST_CASE("oracle, zero and mixture extractors") {
  CorpusConfig cc;
  cc.ta_probability = 0.3;
  std::vector<MixtureRecord> clips;
  for (std::uint64_t i = 0; i < 12; ++i) clips.push_back(generate_clip(cc, 9, i));
  const auto oracle_rep = evaluate(clips, ExtractorKind::Oracle, nullptr);
  for (const auto& r : oracle_rep.clips) {
    const auto& rec = *std::find_if(clips.begin(), clips.end(),
                                    [&](const MixtureRecord& m) { return m.id == r.id; });
    const double e = energy(rec.target_truth.samples);
    if (r.clip_class == ClipClass::TA) {
      CHECK(r.clip_metric == -80.0);
    } else {
      // ŝ = s gives 10 log10(|s|^2 / eps + eps): 80 dB for a unit-energy target.
      CHECK(r.clip_metric == doctest::Approx(80.0 + 10.0 * std::log10(e)).epsilon(1e-6));
      CHECK(oracle::rel_err(r.clip_metric, oracle::si_sdr(rec.target_truth.samples,
                                                          rec.target_truth.samples)) <= 1e-9);
    }
  }
  REQUIRE(oracle_rep.ta_power.count > 0);
  CHECK(oracle_rep.ta_power.mean() == -80.0);

  const auto zero_rep = evaluate(clips, ExtractorKind::Zero, nullptr);
  CHECK(zero_rep.ta_power.mean() == -80.0);
  CHECK(zero_rep.per_kind[static_cast<std::size_t>(Scenario::SS)].mean() ==
        doctest::Approx(-80.0).epsilon(1e-12));
  CHECK(zero_rep.per_kind[static_cast<std::size_t>(Scenario::QQ)].mean() == -80.0);

  const auto mix_rep = evaluate(clips, ExtractorKind::Mixture, nullptr);
  CHECK(mix_rep.tp_si_sdr.mean() < oracle_rep.tp_si_sdr.mean());
  CHECK(parse_extractor("oracle") == ExtractorKind::Oracle);
  CHECK_THROWS_AS(parse_extractor("magic"), Error);
}

TEST_CASE("report matches a recomputation from the per-clip dump") {
  const auto dir = tmp_dir("evaluate");
  SimulateOptions opt;
  opt.count = 6;
  opt.seed = 17;
  opt.corpus.ta_probability = 0.3;
  simulate_corpus(opt, dir / "corpus");
  const auto rep = evaluate(std::nullopt, dir / "corpus" / "manifest.jsonl", dir / "out",
                            ExtractorKind::Mixture);
  std::ifstream is(dir / "out" / "per_clip.csv");
  REQUIRE(is);
  std::string line;
  std::getline(is, line);
  double sum = 0;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    std::vector<std::string> cols(1);
    bool quoted = false;
    for (char ch : line) {
      if (ch == '"') quoted = !quoted;
      else if (ch == ',' && !quoted) cols.emplace_back();
      else cols.back() += ch;
    }
    if (cols.at(1) == "TP") {
      sum += std::stod(cols.at(4));
      ++n;
    }
  }
  CHECK(n == rep.tp_si_sdr.count);
  if (n > 0) CHECK(sum / n == doctest::Approx(rep.tp_si_sdr.mean()).epsilon(1e-9));
  CHECK(std::filesystem::exists(dir / "out" / "report.txt"));
  CHECK_THROWS_AS(evaluate(std::nullopt, dir / "corpus" / "manifest.jsonl", dir / "out"), Error);
}

TEST_CASE("training loop bookkeeping and determinism") {
  std::vector<MixtureRecord> tr{micro_clip(1, 24), micro_clip(2, 30), micro_clip(3, 18)};
  std::vector<MixtureRecord> val{micro_clip(4, 26)};
  const auto cfg = micro_train_config();
  UsevModel a(cfg.model, cfg.seed), b(cfg.model, cfg.seed);
  std::vector<EpochLog> seen;
  const auto ra = train(cfg, tr, val, a, {[&](const EpochLog& l) { seen.push_back(l); }, {}, {}});
  const auto rb = train(cfg, tr, val, b);
  REQUIRE(ra.epochs.size() == 3);
  CHECK(seen.size() == 3);
  CHECK(ra.steps == 6);
  for (std::size_t e = 0; e < 3; ++e) {
    CHECK(ra.epochs[e].lr == lr_at_epoch(cfg, e));
    CHECK(ra.epochs[e].json() == rb.epochs[e].json());
    CHECK(ra.epochs[e].json().find("wall") == std::string::npos);
  }
  CHECK(ra.best_val_loss == ra.epochs[ra.best_epoch].val_loss);
  CHECK(mean_loss(a, val, cfg.loss, cfg.weights) == doctest::Approx(ra.best_val_loss).epsilon(1e-12));
  CHECK(snapshot(a).tensors[0].values == snapshot(b).tensors[0].values);

  std::vector<MixtureRecord> wrong{micro_clip(5, 20)};
  wrong[0].visemes.dim = 4;
  wrong[0].visemes.data.resize(wrong[0].visemes.frames * 4);
  CHECK_THROWS_AS(train(cfg, wrong, val, a), Error);
}

TEST_CASE("file-based training writes its artifacts") {
  const auto dir = tmp_dir("trainrun");
  std::vector<ManifestEntry> entries;
  for (std::uint64_t i = 0; i < 3; ++i) entries.push_back(save_record(micro_clip(10 + i, 24), dir));
  write_manifest(dir / "manifest.jsonl", entries);
  const auto cfg = micro_train_config();
  const auto res = train(cfg, dir / "manifest.jsonl", std::nullopt, dir / "run");
  for (const char* f : {"best.ckpt", "last.ckpt", "train_log.jsonl", "timing.jsonl", "run_config.txt"})
    CHECK(std::filesystem::exists(dir / "run" / f));
  const auto m = load_model(dir / "run" / "best.ckpt");
  CHECK(m.config() == cfg.model);
  std::ifstream log(dir / "run" / "train_log.jsonl");
  std::size_t lines = 0;
  for (std::string l; std::getline(log, l);) ++lines;
  CHECK(lines == res.epochs.size());

  auto mismatch = cfg;
  mismatch.model.N = 6;
  mismatch.init_checkpoint = dir / "run" / "best.ckpt";
  CHECK_THROWS_AS(train(mismatch, dir / "manifest.jsonl", std::nullopt, dir / "run2"), Error);
}

TEST_CASE("weight grid and sweep table") {
  const auto grid = default_weight_grid();
  CHECK(grid.size() == 6);
  CHECK(std::find(grid.begin(), grid.end(), LossWeights{}) != grid.end());

  std::vector<MixtureRecord> tr{micro_clip(1, 24), micro_clip(2, 30)};
  auto cfg = micro_train_config();
  cfg.max_epochs = 1;
  const std::vector<LossWeights> two{{0.005, 1, 1, 0.005}, {0.01, 0.1, 1, 0.01}};
  const auto rows = sweep_weights(cfg, two, tr, tr);
  REQUIRE(rows.size() == 2);
  const auto csv = sweep_table_csv(rows);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
  CHECK(!sweep_table_text(rows).empty());

  // One tuple matches a direct train + evaluate.
  const auto one = sweep_weights(cfg, {two[0]}, tr, tr);
  auto direct_cfg = cfg;
  direct_cfg.weights = two[0];
  UsevModel m(direct_cfg.model, direct_cfg.seed);
  const auto run = train(direct_cfg, tr, tr, m);
  const auto rep = evaluate(tr, ExtractorKind::Model, &m);
  CHECK(one[0].run.best_val_loss == run.best_val_loss);
  CHECK(one[0].report.tp_si_sdr.mean() == rep.tp_si_sdr.mean());
  CHECK_THROWS_AS(sweep_weights(cfg, {}, tr, tr), Error);
}

TEST_CASE("gradient checks report failures") {
  const auto bad = gradcheck_op("corrupted_square", 3);
  CHECK(bad.max_rel_error > kOpTolerance);
  const auto model = gradcheck_model(1);
  CHECK(model.passed());
  CHECK(model.tolerance == kModelTolerance);
  CHECK_THROWS_AS(gradcheck("everything", 1), Error);
}

#include "usev/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <limits>
#include <numeric>
#include <sstream>

#include "usev/checkpoint.hpp"
#include "usev/error.hpp"
#include "usev/manifest.hpp"

namespace usev {

using ad::Tensor;

std::string_view to_string(TrainStage s) {
  return s == TrainStage::PretrainOverlapped ? "pretrain_overlapped" : "train_general";
}

std::string_view to_string(LossKind k) {
  switch (k) {
    case LossKind::Sdr: return "sdr";
    case LossKind::Uniform: return "uniform";
    case LossKind::Differentiated: return "differentiated";
  }
  return "differentiated";
}

void TrainConfig::validate() const {
  require(lr0 > 0.0, ErrorKind::Parameter, "learning rate must be positive");
  require(lr_decay > 0.0 && lr_decay <= 1.0, ErrorKind::Parameter,
          "lr decay must lie in (0, 1]");
  require(patience >= 1, ErrorKind::Parameter, "patience must be at least 1");
  require(batch_size >= 1, ErrorKind::Parameter, "batch size must be at least 1");
  require(max_epochs >= 1, ErrorKind::Parameter, "max_epochs must be at least 1");
  require(clip_truncate_s > 0.0, ErrorKind::Parameter, "clip_truncate_s must be positive");
  weights.validate();
  model.validate();
}

TrainConfig TrainConfig::for_stage(TrainStage stage) {
  TrainConfig c;
  c.stage = stage;
  if (stage == TrainStage::PretrainOverlapped) {
    c.lr0 = 1e-3;
    c.loss = LossKind::Sdr;
  }
  return c;
}

TrainConfig TrainConfig::from_config(const KeyValueConfig& kv) {
  std::set<std::string> known = {
      "train.stage",      "train.lr0",        "train.lr_decay",       "train.max_epochs",
      "train.patience",   "train.batch_size", "train.clip_truncate_s", "train.loss",
      "train.weights",    "train.seed",       "train.init_checkpoint", "model.preset",
      "model.sample_rate", "model.N",         "model.L",              "model.B",
      "model.R",          "model.K",          "model.visual_dim",     "model.vtcn_blocks",
      "model.video_fps"};
  kv.check_known(known);
  const auto stage_s = kv.get_string("train.stage", "train_general");
  TrainStage stage;
  if (stage_s == "pretrain_overlapped") stage = TrainStage::PretrainOverlapped;
  else if (stage_s == "train_general") stage = TrainStage::TrainGeneral;
  else fail(ErrorKind::Format, "unknown train.stage '" + stage_s + "'");
  TrainConfig c = for_stage(stage);
  c.lr0 = kv.get_double("train.lr0", c.lr0);
  c.lr_decay = kv.get_double("train.lr_decay", c.lr_decay);
  c.max_epochs = kv.get_uint("train.max_epochs", c.max_epochs);
  c.patience = kv.get_uint("train.patience", c.patience);
  c.batch_size = kv.get_uint("train.batch_size", c.batch_size);
  c.clip_truncate_s = kv.get_double("train.clip_truncate_s", c.clip_truncate_s);
  if (const auto l = kv.raw("train.loss")) {
    if (*l == "sdr") c.loss = LossKind::Sdr;
    else if (*l == "uniform") c.loss = LossKind::Uniform;
    else if (*l == "differentiated") c.loss = LossKind::Differentiated;
    else fail(ErrorKind::Format, "unknown train.loss '" + *l + "'");
  }
  if (const auto w = kv.raw("train.weights")) c.weights = LossWeights::parse(*w);
  c.seed = kv.get_uint("train.seed", c.seed);
  if (const auto p = kv.raw("train.init_checkpoint")) c.init_checkpoint = *p;
  c.model = UsevConfig::from_config(kv);
  c.validate();
  return c;
}

std::string TrainConfig::to_text() const {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "train.stage = " << to_string(stage) << '\n'
     << "train.lr0 = " << lr0 << '\n'
     << "train.lr_decay = " << lr_decay << '\n'
     << "train.max_epochs = " << max_epochs << '\n'
     << "train.patience = " << patience << '\n'
     << "train.batch_size = " << batch_size << '\n'
     << "train.clip_truncate_s = " << clip_truncate_s << '\n'
     << "train.loss = " << to_string(loss) << '\n'
     << "train.weights = " << weights.str() << '\n'
     << "train.seed = " << seed << '\n';
  if (init_checkpoint) os << "train.init_checkpoint = " << init_checkpoint->string() << '\n';
  os << model.to_text();
  return os.str();
}

double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch) {
  return cfg.lr0 * std::pow(cfg.lr_decay, static_cast<double>(epoch));
}

Example whole_example(const MixtureRecord& rec) {
  return {rec.mixture.samples, rec.target_truth.samples, rec.visemes, rec.track};
}

Example crop_example(const MixtureRecord& rec, std::size_t max_len, std::mt19937_64& rng) {
  const std::size_t n = rec.mixture.size();
  if (n <= max_len) return whole_example(rec);
  const double frame_samples = rec.mixture.sample_rate / rec.visemes.fps;
  const auto last_frame =
      static_cast<std::size_t>(std::floor(static_cast<double>(n - max_len) / frame_samples));
  const std::size_t f0 = std::uniform_int_distribution<std::size_t>(0, last_frame)(rng);
  const auto start = std::min<std::size_t>(
      n - max_len, static_cast<std::size_t>(std::llround(static_cast<double>(f0) * frame_samples)));
  Example ex;
  ex.mixture.assign(rec.mixture.samples.begin() + static_cast<std::ptrdiff_t>(start),
                    rec.mixture.samples.begin() + static_cast<std::ptrdiff_t>(start + max_len));
  ex.target.assign(rec.target_truth.samples.begin() + static_cast<std::ptrdiff_t>(start),
                   rec.target_truth.samples.begin() + static_cast<std::ptrdiff_t>(start + max_len));
  ex.track = rec.track.crop(start, max_len);
  const auto& v = rec.visemes;
  const auto want = static_cast<std::size_t>(
      std::ceil(static_cast<double>(max_len) / frame_samples - 1e-9));
  const std::size_t f_begin = std::min(f0, v.frames == 0 ? 0 : v.frames - 1);
  const std::size_t f_end = std::min(v.frames, f_begin + std::max<std::size_t>(want, 1));
  ex.visemes.dim = v.dim;
  ex.visemes.fps = v.fps;
  ex.visemes.frames = f_end - f_begin;
  ex.visemes.data.assign(v.data.begin() + static_cast<std::ptrdiff_t>(f_begin * v.dim),
                         v.data.begin() + static_cast<std::ptrdiff_t>(f_end * v.dim));
  return ex;
}

Tensor example_loss(const UsevModel& model, const Example& ex, LossKind loss,
                    const LossWeights& w) {
  const Tensor x = Tensor::from({ex.mixture.size()}, ex.mixture);
  const Tensor est = model.forward(x, visemes_tensor(ex.visemes));
  switch (loss) {
    case LossKind::Sdr: return loss_sdr(est, ex.target);
    case LossKind::Uniform: return loss_uniform(est, ex.target);
    case LossKind::Differentiated: return loss_differentiated(est, ex.target, ex.track, w);
  }
  fail(ErrorKind::Parameter, "unknown loss kind");
}

double mean_loss(const UsevModel& model, const std::vector<MixtureRecord>& clips, LossKind loss,
                 const LossWeights& w) {
  if (clips.empty()) return std::numeric_limits<double>::quiet_NaN();
  ad::NoGradGuard guard;
  double acc = 0.0;
  for (const auto& rec : clips) acc += example_loss(model, whole_example(rec), loss, w).item();
  return acc / static_cast<double>(clips.size());
}

std::string EpochLog::json() const {
  nlohmann::ordered_json j;
  j["epoch"] = epoch;
  j["lr"] = lr;
  j["train_loss"] = train_loss;
  j["val_loss"] = val_loss;
  j["improved"] = improved;
  j["steps"] = steps;
  return j.dump();
}

namespace {

void check_compatible(const UsevModel& model, const std::vector<MixtureRecord>& clips,
                      const char* what) {
  const auto& c = model.config();
  for (const auto& rec : clips) {
    if (rec.mixture.sample_rate != c.sample_rate)
      fail(ErrorKind::Shape, std::string(what) + " clip " + rec.id + " has sample rate " +
                                 std::to_string(rec.mixture.sample_rate) + ", model expects " +
                                 std::to_string(c.sample_rate));
    if (rec.visemes.dim != c.visual_dim)
      fail(ErrorKind::Shape, std::string(what) + " clip " + rec.id + " has viseme dim " +
                                 std::to_string(rec.visemes.dim) + ", model expects " +
                                 std::to_string(c.visual_dim));
  }
}

}  // namespace

bool EarlyStopping::update(double loss) {
  if (loss < best_) {
    best_ = loss;
    bad_epochs_ = 0;
    return true;
  }
  ++bad_epochs_;
  return false;
}

TrainResult train(const TrainConfig& cfg, const std::vector<MixtureRecord>& train_set,
                  const std::vector<MixtureRecord>& val_set, UsevModel& model,
                  const TrainCallbacks& cb) {
  cfg.validate();
  require(!train_set.empty(), ErrorKind::Parameter, "training set is empty");
  require(model.config() == cfg.model, ErrorKind::Shape,
          "model config does not match the training config");
  check_compatible(model, train_set, "training");
  check_compatible(model, val_set, "validation");

  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed),
                    static_cast<std::uint32_t>(cfg.seed >> 32), 0x74726e31u};
  std::mt19937_64 rng(seq);
  ad::Adam opt(model.trainable());
  const auto max_len = static_cast<std::size_t>(
      std::llround(cfg.clip_truncate_s * cfg.model.sample_rate));

  TrainResult res;
  res.best_val_loss = std::numeric_limits<double>::infinity();
  Checkpoint best = snapshot(model);
  EarlyStopping stopper(cfg.patience);
  std::vector<std::size_t> order(train_set.size());

  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochLog log;
    log.epoch = epoch;
    log.lr = lr_at_epoch(cfg, epoch);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double acc = 0.0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(order.size(), b + cfg.batch_size);
      opt.zero_grad();
      for (std::size_t i = b; i < e; ++i) {
        const Example ex = crop_example(train_set[order[i]], max_len, rng);
        const Tensor l = example_loss(model, ex, cfg.loss, cfg.weights);
        acc += l.item();
        ad::backward(ad::scale(l, 1.0 / static_cast<double>(e - b)));
      }
      opt.step(log.lr);
      ++res.steps;
    }
    log.train_loss = acc / static_cast<double>(order.size());
    log.val_loss = val_set.empty() ? log.train_loss
                                   : mean_loss(model, val_set, cfg.loss, cfg.weights);
    log.steps = res.steps;
    log.improved = stopper.update(log.val_loss);
    log.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (log.improved) {
      res.best_val_loss = log.val_loss;
      res.best_epoch = epoch;
      best = snapshot(model);
    }
    res.epochs.push_back(log);
    if (cb.on_epoch) cb.on_epoch(log);
    if (log.improved && cb.on_best) cb.on_best(model, log);
    if (stopper.should_stop()) {
      res.early_stopped = true;
      break;
    }
  }
  if (cb.on_finish) cb.on_finish(model);
  restore(model, best);
  return res;
}

TrainResult train(const TrainConfig& cfg, const std::filesystem::path& train_manifest,
                  const std::optional<std::filesystem::path>& val_manifest,
                  const std::filesystem::path& out_dir) {
  cfg.validate();
  const auto train_set = load_corpus(train_manifest);
  const auto val_set = val_manifest ? load_corpus(*val_manifest) : std::vector<MixtureRecord>{};
  UsevModel model(cfg.model, cfg.seed);
  if (cfg.init_checkpoint) restore(model, read_checkpoint(*cfg.init_checkpoint));

  std::filesystem::create_directories(out_dir);
  {
    std::ofstream os(out_dir / "run_config.txt", std::ios::trunc);
    if (!os) fail(ErrorKind::Io, "cannot write into " + out_dir.string());
    os << cfg.to_text();
  }
  std::ofstream log(out_dir / "train_log.jsonl", std::ios::trunc);
  std::ofstream timing(out_dir / "timing.jsonl", std::ios::trunc);
  if (!log || !timing) fail(ErrorKind::Io, "cannot create logs in " + out_dir.string());

  TrainCallbacks cb;
  cb.on_epoch = [&](const EpochLog& e) {
    log << e.json() << '\n' << std::flush;
    nlohmann::ordered_json t;
    t["epoch"] = e.epoch;
    t["wall_s"] = e.wall_s;
    timing << t.dump() << '\n' << std::flush;
  };
  cb.on_best = [&](const UsevModel& m, const EpochLog&) { save_model(m, out_dir / "best.ckpt"); };
  cb.on_finish = [&](const UsevModel& m) { save_model(m, out_dir / "last.ckpt"); };
  return train(cfg, train_set, val_set, model, cb);
}

ExtractorKind parse_extractor(const std::string& s) {
  if (s == "model") return ExtractorKind::Model;
  if (s == "oracle") return ExtractorKind::Oracle;
  if (s == "zero") return ExtractorKind::Zero;
  if (s == "mixture") return ExtractorKind::Mixture;
  fail(ErrorKind::Usage, "unknown extractor '" + s + "' (model, oracle, zero, mixture)");
}

std::vector<std::vector<double>> extract_all(const std::vector<MixtureRecord>& clips,
                                             ExtractorKind kind, const UsevModel* model) {
  require(kind != ExtractorKind::Model || model != nullptr, ErrorKind::Usage,
          "model extractor needs a checkpoint");
  if (model) check_compatible(*model, clips, "evaluation");
  std::vector<std::vector<double>> out;
  out.reserve(clips.size());
  for (const auto& rec : clips) {
    switch (kind) {
      case ExtractorKind::Model: out.push_back(model->infer(rec.mixture.samples, rec.visemes)); break;
      case ExtractorKind::Oracle: out.push_back(rec.target_truth.samples); break;
      case ExtractorKind::Zero: out.emplace_back(rec.mixture.size(), 0.0); break;
      case ExtractorKind::Mixture: out.push_back(rec.mixture.samples); break;
    }
  }
  return out;
}

ReportTables evaluate(const std::vector<MixtureRecord>& clips, ExtractorKind kind,
                      const UsevModel* model) {
  const auto est = extract_all(clips, kind, model);
  std::vector<std::pair<const MixtureRecord*, std::span<const double>>> pairs;
  for (std::size_t i = 0; i < clips.size(); ++i) pairs.emplace_back(&clips[i], est[i]);
  return eval_report(pairs);
}

ReportTables evaluate(const std::optional<std::filesystem::path>& checkpoint,
                      const std::filesystem::path& manifest, const std::filesystem::path& out_dir,
                      ExtractorKind kind) {
  std::optional<UsevModel> model;
  if (kind == ExtractorKind::Model) {
    require(checkpoint.has_value(), ErrorKind::Usage, "model evaluation needs --checkpoint");
    model.emplace(load_model(*checkpoint));
  }
  const auto clips = load_corpus(manifest);
  ReportTables rep = evaluate(clips, kind, model ? &*model : nullptr);
  rep.write_csv(out_dir);
  std::ofstream os(out_dir / "report.txt", std::ios::trunc);
  if (!os) fail(ErrorKind::Io, "cannot write " + (out_dir / "report.txt").string());
  os << rep.to_text();
  return rep;
}

std::vector<LossWeights> default_weight_grid() {
  return {{0.01, 1, 1, 0.01},   {0.01, 0.1, 1, 0.01},  {0.005, 1, 1, 0.005},
          {0.001, 0.1, 1, 0.001}, {0.005, 1, 1, 0.01}, {0.001, 1, 1, 0.001}};
}

std::vector<SweepRow> sweep_weights(const TrainConfig& base, const std::vector<LossWeights>& grid,
                                    const std::vector<MixtureRecord>& train_set,
                                    const std::vector<MixtureRecord>& val_set) {
  require(!grid.empty(), ErrorKind::Parameter, "weight grid is empty");
  std::optional<Checkpoint> init;
  if (base.init_checkpoint) init = read_checkpoint(*base.init_checkpoint);
  std::vector<SweepRow> rows;
  for (const auto& w : grid) {
    TrainConfig cfg = base;
    cfg.weights = w;
    cfg.loss = LossKind::Differentiated;
    UsevModel model(cfg.model, cfg.seed);
    if (init) restore(model, *init);
    SweepRow row;
    row.weights = w;
    row.run = train(cfg, train_set, val_set, model);
    row.report = evaluate(val_set.empty() ? train_set : val_set, ExtractorKind::Model, &model);
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace {

std::string v(double x) {
  if (std::isnan(x)) return {};
  std::ostringstream os;
  os << std::setprecision(17) << x;
  return os.str();
}

std::string cell(double v) {
  if (std::isnan(v)) return "n/a";
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << v;
  return os.str();
}

}  // namespace

std::string sweep_table_text(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(24) << "weights (a-b-c-d)" << std::setw(12) << "QQ dB/s"
     << std::setw(12) << "SQ dB" << std::setw(12) << "SS dB" << std::setw(12) << "QS dB/s"
     << std::setw(12) << "TP dB" << "TA dB/s\n";
  for (const auto& r : rows) {
    const auto& k = r.report.per_kind;
    os << std::setw(24) << r.weights.str() << std::setw(12) << cell(k[0].mean()) << std::setw(12)
       << cell(k[1].mean()) << std::setw(12) << cell(k[2].mean()) << std::setw(12)
       << cell(k[3].mean()) << std::setw(12) << cell(r.report.tp_si_sdr.mean())
       << cell(r.report.ta_power.mean()) << '\n';
  }
  return os.str();
}

std::string sweep_table_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "alpha,beta,gamma,delta,QQ_power,SQ_si_sdr,SS_si_sdr,QS_power,TP_si_sdr,TA_power,"
        "best_epoch,best_val_loss\n";
  os << std::setprecision(17);
  for (const auto& r : rows) {
    const auto& k = r.report.per_kind;
    os << r.weights.alpha << ',' << r.weights.beta << ',' << r.weights.gamma << ','
       << r.weights.delta << ',' << v(k[0].mean()) << ',' << v(k[1].mean()) << ','
       << v(k[2].mean()) << ',' << v(k[3].mean()) << ',' << v(r.report.tp_si_sdr.mean()) << ','
       << v(r.report.ta_power.mean()) << ',' << r.run.best_epoch << ','
       << v(r.run.best_val_loss) << '\n';
  }
  return os.str();
}

CorpusConfig corpus_config_from(const KeyValueConfig& kv) {
  kv.check_known({"corpus.kind", "corpus.sample_rate", "corpus.num_speakers", "corpus.clip_min_s",
                  "corpus.clip_max_s", "corpus.ta_probability", "corpus.snr_min_db",
                  "corpus.snr_max_db", "corpus.noise_snr_min_db", "corpus.noise_snr_max_db",
                  "corpus.noisy", "corpus.interference_min_frac", "corpus.interference_max_frac",
                  "corpus.overlapped_min_s", "corpus.overlapped_max_s", "corpus.viseme_dim",
                  "corpus.min_utterance_s", "corpus.occlusion_lo", "corpus.occlusion_hi"});
  CorpusConfig c;
  const auto kind = kv.get_string("corpus.kind", "general");
  if (kind == "general") c.kind = MixtureKind::General;
  else if (kind == "overlapped") c.kind = MixtureKind::HighlyOverlapped;
  else fail(ErrorKind::Format, "unknown corpus.kind '" + kind + "'");
  c.synth.sample_rate = static_cast<int>(kv.get_int("corpus.sample_rate", c.synth.sample_rate));
  c.synth.viseme_dim = kv.get_uint("corpus.viseme_dim", c.synth.viseme_dim);
  c.synth.min_utterance_s = kv.get_double("corpus.min_utterance_s", c.synth.min_utterance_s);
  c.num_speakers = kv.get_uint("corpus.num_speakers", c.num_speakers);
  c.clip_min_s = kv.get_double("corpus.clip_min_s", c.clip_min_s);
  c.clip_max_s = kv.get_double("corpus.clip_max_s", c.clip_max_s);
  c.ta_probability = kv.get_double("corpus.ta_probability", c.ta_probability);
  c.snr_min_db = kv.get_double("corpus.snr_min_db", c.snr_min_db);
  c.snr_max_db = kv.get_double("corpus.snr_max_db", c.snr_max_db);
  c.noise_snr_min_db = kv.get_double("corpus.noise_snr_min_db", c.noise_snr_min_db);
  c.noise_snr_max_db = kv.get_double("corpus.noise_snr_max_db", c.noise_snr_max_db);
  c.noisy = kv.get_bool("corpus.noisy", c.noisy);
  c.interference_min_frac = kv.get_double("corpus.interference_min_frac", c.interference_min_frac);
  c.interference_max_frac = kv.get_double("corpus.interference_max_frac", c.interference_max_frac);
  c.overlapped_min_s = kv.get_double("corpus.overlapped_min_s", c.overlapped_min_s);
  c.overlapped_max_s = kv.get_double("corpus.overlapped_max_s", c.overlapped_max_s);
  if (kv.has("corpus.occlusion_lo") || kv.has("corpus.occlusion_hi"))
    c.occlusion = std::make_pair(kv.get_double("corpus.occlusion_lo", 0.0),
                                 kv.get_double("corpus.occlusion_hi", 1.0));
  require(c.clip_min_s > 0.0 && c.clip_min_s <= c.clip_max_s, ErrorKind::Parameter,
          "corpus clip length range is invalid");
  require(c.snr_min_db <= c.snr_max_db && c.noise_snr_min_db <= c.noise_snr_max_db,
          ErrorKind::Parameter, "corpus SNR ranges are invalid");
  require(c.ta_probability >= 0.0 && c.ta_probability <= 1.0, ErrorKind::Parameter,
          "corpus.ta_probability must lie in [0, 1]");
  return c;
}

}  // namespace usev

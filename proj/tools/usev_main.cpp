// usev: simulate corpora, train, evaluate, sweep loss weights, check gradients.

#include <CLI11.hpp>
#include <fstream>
#include <iostream>

#include "usev/checkpoint.hpp"
#include "usev/error.hpp"
#include "usev/harness.hpp"
#include "usev/manifest.hpp"

namespace {

// Exit codes: 0 success, 1 unexpected failure, 3 gradient check failed,
// 10 + ErrorKind for library errors.
constexpr int kExitUnexpected = 1;
constexpr int kExitGradcheckFailed = 3;

int exit_code(usev::ErrorKind k) { return 10 + static_cast<int>(k); }

std::pair<double, double> parse_pair(const std::string& s) {
  const auto comma = s.find(',');
  if (comma == std::string::npos)
    usev::fail(usev::ErrorKind::Usage, "expected lo,hi but got '" + s + "'");
  try {
    return {std::stod(s.substr(0, comma)), std::stod(s.substr(comma + 1))};
  } catch (const std::exception&) {
    usev::fail(usev::ErrorKind::Usage, "expected lo,hi but got '" + s + "'");
  }
}

usev::KeyValueConfig load_or_empty(const std::string& path) {
  return path.empty() ? usev::KeyValueConfig{} : usev::KeyValueConfig::load(path);
}

std::vector<usev::LossWeights> parse_grid(const std::string& s) {
  if (s.empty()) return usev::default_weight_grid();
  std::vector<usev::LossWeights> grid;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto end = s.find(';', start);
    const auto item = s.substr(start, end == std::string::npos ? std::string::npos : end - start);
    if (!item.empty()) grid.push_back(usev::LossWeights::parse(item));
    if (end == std::string::npos) break;
    start = end + 1;
  }
  return grid;
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::trunc);
  if (!os) usev::fail(usev::ErrorKind::Io, "cannot write " + p.string());
  os << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Universal speaker extraction toolkit"};
  app.require_subcommand(1);

  auto* sim = app.add_subcommand("simulate", "Simulate a mixture corpus");
  std::string sim_config, sim_out, sim_occl, sim_kind;
  std::size_t sim_count = 0;
  std::uint64_t sim_seed = 0;
  unsigned sim_jobs = 1;
  bool sim_noisy = false;
  sim->add_option("--config", sim_config, "Corpus config file (corpus.* keys)");
  sim->add_option("--out", sim_out, "Output directory")->required();
  sim->add_option("--count", sim_count, "Number of clips")->required();
  sim->add_option("--seed", sim_seed, "Corpus seed")->required();
  sim->add_option("--occlusion", sim_occl, "Occluded viseme fraction range lo,hi");
  sim->add_flag("--noisy", sim_noisy, "Mix background noise");
  sim->add_option("--kind", sim_kind, "general or overlapped (overrides config)");
  sim->add_option("--jobs", sim_jobs, "Worker threads (output is independent of this)");

  auto* stats = app.add_subcommand("stats", "Corpus composition statistics");
  std::string stats_manifest, stats_csv;
  stats->add_option("--manifest", stats_manifest, "Manifest file")->required();
  stats->add_option("--csv", stats_csv, "Also write the table as CSV");

  auto* tr = app.add_subcommand("train", "Train a model");
  std::string tr_config, tr_train, tr_val, tr_out;
  tr->add_option("--config", tr_config, "Run config (train.* and model.* keys)");
  tr->add_option("--train", tr_train, "Training manifest")->required();
  tr->add_option("--val", tr_val, "Validation manifest");
  tr->add_option("--out", tr_out, "Run directory")->required();

  auto* ev = app.add_subcommand("evaluate", "Evaluate an extractor on a corpus");
  std::string ev_ckpt, ev_manifest, ev_out, ev_kind = "model";
  ev->add_option("--checkpoint", ev_ckpt, "Model checkpoint");
  ev->add_option("--manifest", ev_manifest, "Test manifest")->required();
  ev->add_option("--out", ev_out, "Report directory")->required();
  ev->add_option("--extractor", ev_kind, "model, oracle, zero or mixture");

  auto* sw = app.add_subcommand("sweep", "Train and evaluate per loss-weight tuple");
  std::string sw_config, sw_train, sw_val, sw_out, sw_grid;
  sw->add_option("--config", sw_config, "Base run config");
  sw->add_option("--train", sw_train, "Training manifest")->required();
  sw->add_option("--val", sw_val, "Validation manifest");
  sw->add_option("--out", sw_out, "Output directory")->required();
  sw->add_option("--grid", sw_grid, "Tuples a-b-c-d separated by ';' (default: built-in grid)");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  std::string gc_scope = "all";
  std::size_t gc_seeds = 20;
  gc->add_option("--scope", gc_scope, "ops, model or all");
  gc->add_option("--seeds", gc_seeds, "Random seeds per operator");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sim) {
      usev::SimulateOptions opt;
      opt.corpus = usev::corpus_config_from(load_or_empty(sim_config));
      if (sim_noisy) opt.corpus.noisy = true;
      if (!sim_occl.empty()) opt.corpus.occlusion = parse_pair(sim_occl);
      if (sim_kind == "general") opt.corpus.kind = usev::MixtureKind::General;
      else if (sim_kind == "overlapped") opt.corpus.kind = usev::MixtureKind::HighlyOverlapped;
      else if (!sim_kind.empty()) usev::fail(usev::ErrorKind::Usage, "unknown --kind " + sim_kind);
      opt.count = sim_count;
      opt.seed = sim_seed;
      opt.jobs = sim_jobs;
      const auto entries = usev::simulate_corpus(opt, sim_out);
      std::cout << "wrote " << entries.size() << " clips to "
                << (std::filesystem::path(sim_out) / "manifest.jsonl").string() << '\n';
    } else if (*stats) {
      const auto rep = usev::corpus_stats(std::filesystem::path(stats_manifest));
      std::cout << rep.to_text();
      if (!stats_csv.empty()) write_text(stats_csv, rep.to_csv());
    } else if (*tr) {
      const auto cfg = usev::TrainConfig::from_config(load_or_empty(tr_config));
      std::optional<std::filesystem::path> val;
      if (!tr_val.empty()) val = tr_val;
      const auto res = usev::train(cfg, tr_train, val, tr_out);
      std::cout << "epochs: " << res.epochs.size() << ", steps: " << res.steps
                << ", best epoch: " << res.best_epoch << ", best val loss: " << res.best_val_loss
                << (res.early_stopped ? " (early stop)" : "") << '\n';
    } else if (*ev) {
      std::optional<std::filesystem::path> ckpt;
      if (!ev_ckpt.empty()) ckpt = ev_ckpt;
      const auto rep = usev::evaluate(ckpt, ev_manifest, ev_out, usev::parse_extractor(ev_kind));
      std::cout << rep.to_text();
    } else if (*sw) {
      const auto base = usev::TrainConfig::from_config(load_or_empty(sw_config));
      const auto train_set = usev::load_corpus(sw_train);
      const auto val_set = sw_val.empty() ? std::vector<usev::MixtureRecord>{}
                                          : usev::load_corpus(sw_val);
      const auto rows = usev::sweep_weights(base, parse_grid(sw_grid), train_set, val_set);
      std::filesystem::create_directories(sw_out);
      write_text(std::filesystem::path(sw_out) / "sweep.csv", usev::sweep_table_csv(rows));
      write_text(std::filesystem::path(sw_out) / "sweep.txt", usev::sweep_table_text(rows));
      std::cout << usev::sweep_table_text(rows);
    } else if (*gc) {
      const auto rep = usev::gradcheck(gc_scope, gc_seeds);
      std::cout << rep.to_text();
      if (!rep.passed()) return kExitGradcheckFailed;
    }
  } catch (const usev::Error& e) {
    std::cerr << "usev: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "usev: " << e.what() << '\n';
    return kExitUnexpected;
  }
  return 0;
}

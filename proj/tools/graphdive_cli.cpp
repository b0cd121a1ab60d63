#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "graphdive/graphdive.h"

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
  bool time = false;
};

class CliError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void check(gd_status s, const char* what) {
  if (s != GD_OK) throw CliError(std::string(what) + ": " + gd_last_error());
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CliError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Timer {
 public:
  explicit Timer(bool on) : on_(on) {}
  void phase(const char* name) {
    const auto now = std::chrono::steady_clock::now();
    if (on_) std::fprintf(stderr, "time %s %.3f s\n", name, std::chrono::duration<double>(now - last_).count());
    last_ = now;
  }

 private:
  bool on_;
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

// RAII owners for the C handles.
struct Dataset {
  gd_dataset* p = nullptr;
  ~Dataset() { gd_dataset_free(p); }
};
struct Config {
  gd_config* p = nullptr;
  ~Config() { gd_config_free(p); }
};
struct Ckpt {
  gd_checkpoint* p = nullptr;
  ~Ckpt() { gd_checkpoint_free(p); }
};

void load_config(Config& cfg, const std::string& path) {
  if (path.empty()) {
    cfg.p = gd_config_new();
  } else {
    check(gd_config_parse(slurp(path).c_str(), &cfg.p), "config");
  }
}

gd_split parse_split(const std::string& s) {
  if (s == "train") return GD_SPLIT_TRAIN;
  if (s == "valid") return GD_SPLIT_VALID;
  return GD_SPLIT_TEST;
}

void print_epoch(size_t epoch, double loss, double auc, double seconds, void*) {
  if (std::isnan(auc))
    std::printf("epoch %zu loss %.6f valid_auc NA (%.2fs)\n", epoch, loss, seconds);
  else
    std::printf("epoch %zu loss %.6f valid_auc %.4f (%.2fs)\n", epoch, loss, auc, seconds);
  std::fflush(stdout);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mixture-of-experts graph classification for imbalanced data"};
  app.failure_message(CLI::FailureMessage::help);
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Override the random seed");
  app.add_option("--threads", g.threads, "Parallel workers for sweeps")->check(CLI::PositiveNumber);
  app.add_flag("--time", g.time, "Print wall-clock time per phase");

  std::string spec, data, config, out, ckpt, split = "test", resume, grid_m, grid_lambda;

  auto* synth = app.add_subcommand("synth", "Generate the synthetic imbalanced benchmark");
  synth->add_option("--spec", spec, "Synth spec file (key = value)")->required();
  synth->add_option("--out", out, "Output dataset")->required();

  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--data", data, "Dataset file")->required();
  train->add_option("--config", config, "Config file (key = value)");
  train->add_option("--out", out, "Output checkpoint")->required();
  train->add_option("--resume", resume, "Continue from this checkpoint up to the configured epochs");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--data", data, "Dataset file")->required();
  eval->add_option("--ckpt", ckpt, "Checkpoint")->required();
  eval->add_option("--split", split, "train, valid or test")->check(CLI::IsMember({"train", "valid", "test"}));
  eval->add_option("--out", out, "Output report")->required();

  auto* sweep = app.add_subcommand("sweep", "Grid over expert count and lambda");
  sweep->add_option("--data", data, "Dataset file")->required();
  sweep->add_option("--config", config, "Config file (key = value)");
  sweep->add_option("--grid-m", grid_m, "Expert counts, e.g. 2..8 or 2,4,8");
  sweep->add_option("--grid-lambda", grid_lambda, "Lambda values, e.g. 0.01,0.1,1");
  sweep->add_option("--out", out, "Output table")->required();

  auto* analyze = app.add_subcommand("analyze-experts", "Per-class gate weights of a checkpoint");
  analyze->add_option("--data", data, "Dataset file")->required();
  analyze->add_option("--ckpt", ckpt, "Checkpoint")->required();
  analyze->add_option("--split", split, "train, valid or test")->check(CLI::IsMember({"train", "valid", "test"}));
  analyze->add_option("--out", out, "Output usage table")->required();

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient check suite");
  gradcheck->add_option("--config", config, "Config file (key = value)");

  for (auto* sub : {synth, train, eval, sweep, analyze, gradcheck}) sub->fallthrough();

  CLI11_PARSE(app, argc, argv);

  try {
    Timer timer(g.time);
    const std::string seed_text = g.seed ? std::to_string(*g.seed) : std::string();

    if (synth->parsed()) {
      std::string text = slurp(spec);
      if (g.seed) text += "\nseed = " + seed_text + "\n";
      Dataset ds;
      check(gd_dataset_synth(text.c_str(), &ds.p), "synth");
      timer.phase("generate");
      check(gd_dataset_save(ds.p, out.c_str()), "save");
      timer.phase("save");
      std::printf("wrote %zu graphs to %s\n", gd_dataset_size(ds.p), out.c_str());
    } else if (train->parsed()) {
      Config cfg;
      load_config(cfg, config);
      if (g.seed) check(gd_config_set(cfg.p, "seed", seed_text.c_str()), "seed");
      Dataset ds;
      check(gd_dataset_load(data.c_str(), &ds.p), "load dataset");
      timer.phase("load");
      Ckpt result;
      if (!resume.empty()) {
        Ckpt from;
        check(gd_checkpoint_load(resume.c_str(), &from.p), "load checkpoint");
        const std::size_t epochs = gd_config_epochs(cfg.p);
        check(gd_resume(from.p, ds.p, epochs, print_epoch, nullptr, &result.p), "resume");
      } else {
        check(gd_train(cfg.p, ds.p, print_epoch, nullptr, &result.p), "train");
      }
      timer.phase("train");
      check(gd_checkpoint_save(result.p, out.c_str()), "save checkpoint");
      timer.phase("save");
    } else if (eval->parsed()) {
      Dataset ds;
      Ckpt ck;
      check(gd_dataset_load(data.c_str(), &ds.p), "load dataset");
      check(gd_checkpoint_load(ckpt.c_str(), &ck.p), "load checkpoint");
      timer.phase("load");
      double auc = 0.0;
      check(gd_evaluate(ck.p, ds.p, parse_split(split), out.c_str(), &auc), "eval");
      timer.phase("eval");
      if (std::isnan(auc))
        std::printf("%s mean_auc NA\n", split.c_str());
      else
        std::printf("%s mean_auc %.6f\n", split.c_str(), auc);
    } else if (sweep->parsed()) {
      Config cfg;
      load_config(cfg, config);
      if (g.seed) check(gd_config_set(cfg.p, "sweep_seeds", seed_text.c_str()), "seed");
      if (!grid_m.empty()) check(gd_config_set(cfg.p, "grid_experts", grid_m.c_str()), "--grid-m");
      if (!grid_lambda.empty()) check(gd_config_set(cfg.p, "grid_lambda", grid_lambda.c_str()), "--grid-lambda");
      Dataset ds;
      check(gd_dataset_load(data.c_str(), &ds.p), "load dataset");
      timer.phase("load");
      check(gd_sweep(cfg.p, ds.p, g.threads, out.c_str()), "sweep");
      timer.phase("sweep");
      std::printf("wrote %s\n", out.c_str());
    } else if (analyze->parsed()) {
      Dataset ds;
      Ckpt ck;
      check(gd_dataset_load(data.c_str(), &ds.p), "load dataset");
      check(gd_checkpoint_load(ckpt.c_str(), &ck.p), "load checkpoint");
      timer.phase("load");
      check(gd_analyze_experts(ck.p, ds.p, parse_split(split), out.c_str()), "analyze-experts");
      timer.phase("analyze");
      std::printf("wrote %s\n", out.c_str());
    } else if (gradcheck->parsed()) {
      Config cfg;
      load_config(cfg, config);
      int passed = 0;
      double worst = 0.0;
      check(gd_gradcheck(cfg.p, &passed, &worst), "gradcheck");
      timer.phase("gradcheck");
      std::printf("max relative error %.3e %s\n", worst, passed ? "PASS" : "FAIL");
      return passed ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

#include "graphdive/graphdive.h"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>
#include <string>

#include "graphdive/io.hpp"
#include "graphdive/training.hpp"

struct gd_dataset {
  graphdive::Dataset ds;
};
struct gd_config {
  graphdive::TrainConfig cfg;
};
struct gd_checkpoint {
  graphdive::Checkpoint ck;
};

namespace {

thread_local std::string g_last_error;

gd_status fail(gd_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

template <typename Fn>
gd_status guarded(Fn&& fn) {
  g_last_error.clear();
  try {
    fn();
    return GD_OK;
  } catch (const graphdive::FormatError& e) {
    return fail(GD_ERR_FORMAT, e.what());
  } catch (const std::invalid_argument& e) {
    return fail(GD_ERR_INVALID_ARGUMENT, e.what());
  } catch (const std::out_of_range& e) {
    return fail(GD_ERR_INVALID_ARGUMENT, e.what());
  } catch (const std::domain_error& e) {
    return fail(GD_ERR_NUMERIC, e.what());
  } catch (const std::runtime_error& e) {
    return fail(GD_ERR_IO, e.what());
  } catch (const std::exception& e) {
    return fail(GD_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(GD_ERR_INTERNAL, "unknown error");
  }
}

#define GD_REQUIRE(cond)                                                    \
  do {                                                                      \
    if (!(cond)) return fail(GD_ERR_INVALID_ARGUMENT, "null argument: " #cond); \
  } while (0)

graphdive::Split to_split(gd_split s) {
  switch (s) {
    case GD_SPLIT_TRAIN: return graphdive::Split::Train;
    case GD_SPLIT_VALID: return graphdive::Split::Valid;
    case GD_SPLIT_TEST: return graphdive::Split::Test;
  }
  throw std::invalid_argument("unknown split");
}

graphdive::EpochCallback wrap(gd_epoch_fn cb, void* user) {
  if (!cb) return {};
  return [cb, user](std::size_t epoch, const graphdive::EpochRecord& r) {
    cb(epoch, r.train_loss, r.valid_auc.value_or(std::numeric_limits<double>::quiet_NaN()), r.seconds, user);
  };
}

}  // namespace

extern "C" {

GD_API const char* gd_last_error(void) { return g_last_error.c_str(); }

GD_API const char* gd_version(void) { return "1.0.0"; }

GD_API gd_status gd_dataset_load(const char* path, gd_dataset** out) {
  GD_REQUIRE(path && out);
  *out = nullptr;
  return guarded([&] { *out = new gd_dataset{graphdive::load_dataset(path)}; });
}

GD_API gd_status gd_dataset_save(const gd_dataset* ds, const char* path) {
  GD_REQUIRE(ds && path);
  return guarded([&] { graphdive::save_dataset(ds->ds, path); });
}

GD_API gd_status gd_dataset_synth(const char* spec_text, gd_dataset** out) {
  GD_REQUIRE(spec_text && out);
  *out = nullptr;
  return guarded([&] {
    *out = new gd_dataset{graphdive::synth_generate(graphdive::parse_synth_spec(spec_text))};
  });
}

GD_API size_t gd_dataset_size(const gd_dataset* ds) { return ds ? ds->ds.size() : 0; }
GD_API size_t gd_dataset_tasks(const gd_dataset* ds) { return ds ? ds->ds.tasks() : 0; }
GD_API void gd_dataset_free(gd_dataset* ds) { delete ds; }

GD_API gd_config* gd_config_new(void) { return new gd_config{}; }

GD_API gd_status gd_config_parse(const char* text, gd_config** out) {
  GD_REQUIRE(text && out);
  *out = nullptr;
  return guarded([&] { *out = new gd_config{graphdive::parse_config(text, {}, false)}; });
}

GD_API gd_status gd_config_set(gd_config* cfg, const char* key, const char* value) {
  GD_REQUIRE(cfg && key && value);
  return guarded([&] {
    if (std::strpbrk(key, "=#\n") || std::strpbrk(value, "#\n"))
      throw std::invalid_argument("config key or value contains a reserved character");
    cfg->cfg = graphdive::parse_config(std::string(key) + " = " + value, cfg->cfg, false);
  });
}

GD_API gd_status gd_config_text(const gd_config* cfg, char* buf, size_t cap, size_t* len) {
  GD_REQUIRE(cfg);
  return guarded([&] {
    const std::string text = graphdive::config_to_text(cfg->cfg);
    if (len) *len = text.size();
    if (buf && cap > 0) {
      const std::size_t n = std::min(cap - 1, text.size());
      std::memcpy(buf, text.data(), n);
      buf[n] = '\0';
    }
  });
}

GD_API size_t gd_config_epochs(const gd_config* cfg) { return cfg ? cfg->cfg.epochs : 0; }
GD_API void gd_config_free(gd_config* cfg) { delete cfg; }

GD_API gd_status gd_train(const gd_config* cfg, const gd_dataset* ds, gd_epoch_fn cb, void* user,
                          gd_checkpoint** out) {
  GD_REQUIRE(cfg && ds && out);
  *out = nullptr;
  return guarded([&] { *out = new gd_checkpoint{graphdive::train(cfg->cfg, ds->ds, wrap(cb, user))}; });
}

GD_API gd_status gd_resume(const gd_checkpoint* from, const gd_dataset* ds, size_t total_epochs,
                           gd_epoch_fn cb, void* user, gd_checkpoint** out) {
  GD_REQUIRE(from && ds && out);
  *out = nullptr;
  return guarded([&] {
    *out = new gd_checkpoint{graphdive::resume(from->ck, ds->ds, total_epochs, wrap(cb, user))};
  });
}

GD_API gd_status gd_checkpoint_save(const gd_checkpoint* ck, const char* path) {
  GD_REQUIRE(ck && path);
  return guarded([&] { graphdive::save_checkpoint(ck->ck, path); });
}

GD_API gd_status gd_checkpoint_load(const char* path, gd_checkpoint** out) {
  GD_REQUIRE(path && out);
  *out = nullptr;
  return guarded([&] { *out = new gd_checkpoint{graphdive::load_checkpoint(path)}; });
}

GD_API size_t gd_checkpoint_epoch(const gd_checkpoint* ck) { return ck ? ck->ck.epoch : 0; }
GD_API void gd_checkpoint_free(gd_checkpoint* ck) { delete ck; }

GD_API gd_status gd_evaluate(const gd_checkpoint* ck, const gd_dataset* ds, gd_split split,
                             const char* path, double* mean_auc) {
  GD_REQUIRE(ck && ds);
  return guarded([&] {
    const auto rep = graphdive::evaluate(ck->ck, ds->ds, to_split(split));
    if (path) graphdive::write_file_atomic(path, graphdive::format_eval_report(rep));
    if (mean_auc) *mean_auc = rep.mean_auc.value_or(std::numeric_limits<double>::quiet_NaN());
  });
}

GD_API gd_status gd_analyze_experts(const gd_checkpoint* ck, const gd_dataset* ds, gd_split split,
                                    const char* path) {
  GD_REQUIRE(ck && ds && path);
  return guarded([&] {
    const auto usage = graphdive::analyze_experts(ck->ck, ds->ds, to_split(split));
    graphdive::write_file_atomic(path, graphdive::format_expert_usage(usage));
  });
}

GD_API gd_status gd_sweep(const gd_config* cfg, const gd_dataset* ds, size_t threads, const char* path) {
  GD_REQUIRE(cfg && ds && path);
  return guarded([&] {
    const auto res = graphdive::sweep(cfg->cfg, ds->ds, threads);
    graphdive::write_file_atomic(path, graphdive::format_sweep_table(res));
  });
}

GD_API gd_status gd_gradcheck(const gd_config* cfg, int* passed, double* worst) {
  GD_REQUIRE(cfg);
  return guarded([&] {
    const auto rep = graphdive::run_gradcheck_suite(cfg->cfg);
    if (passed) *passed = rep.passed ? 1 : 0;
    if (worst) *worst = rep.worst;
  });
}

}  // extern "C"

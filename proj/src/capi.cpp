#include "udair.h"

#include <cstring>
#include <string>

#include "pipeline.hpp"

using udair::RunConfig;

struct udair_config {
  RunConfig cfg;
};

namespace {

thread_local std::string g_last_error;

udair_status status_of(const udair::Error& e) {
  switch (e.kind()) {
    case udair::ErrorKind::Config: return UDAIR_ERR_CONFIG;
    case udair::ErrorKind::Data: return UDAIR_ERR_DATA;
    case udair::ErrorKind::Numeric: return UDAIR_ERR_NUMERIC;
    case udair::ErrorKind::Io: return UDAIR_ERR_IO;
    case udair::ErrorKind::Format: return UDAIR_ERR_FORMAT;
    case udair::ErrorKind::Internal: return UDAIR_ERR_INTERNAL;
  }
  return UDAIR_ERR_INTERNAL;
}

template <class F>
udair_status guarded(F&& fn) {
  try {
    fn();
    g_last_error.clear();
    return UDAIR_OK;
  } catch (const udair::Error& e) {
    g_last_error = e.what();
    return status_of(e);
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return UDAIR_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return UDAIR_ERR_INTERNAL;
  }
}

udair_status require(bool cond, const char* msg) {
  if (cond) return UDAIR_OK;
  g_last_error = msg;
  return UDAIR_ERR_CONFIG;
}

}  // namespace

extern "C" {

const char* udair_version(void) { return "0.1.0"; }

const char* udair_last_error(void) { return g_last_error.c_str(); }

udair_status udair_config_create(const char* profile, udair_config** out) {
  if (auto s = require(out != nullptr, "out handle is null")) return s;
  *out = nullptr;
  return guarded([&] {
    auto* handle = new udair_config{RunConfig::profile(profile ? profile : "ci")};
    *out = handle;
  });
}

void udair_config_destroy(udair_config* cfg) { delete cfg; }

udair_status udair_config_load_file(udair_config* cfg, const char* path) {
  if (auto s = require(cfg && path, "null argument")) return s;
  return guarded([&] { cfg->cfg.merge_file(path); });
}

udair_status udair_config_set(udair_config* cfg, const char* dotted_key, const char* value) {
  if (auto s = require(cfg && dotted_key && value, "null argument")) return s;
  return guarded([&] { cfg->cfg.set(dotted_key, value); });
}

udair_status udair_config_dump(const udair_config* cfg, char* buf, size_t cap, size_t* len) {
  if (auto s = require(cfg != nullptr, "null config")) return s;
  std::string dump = cfg->cfg.root().dump(2);
  if (len) *len = dump.size();
  if (!buf) return UDAIR_OK;
  if (cap < dump.size() + 1) {
    g_last_error = "buffer too small for config dump";
    return UDAIR_ERR_CONFIG;
  }
  std::memcpy(buf, dump.data(), dump.size());
  buf[dump.size()] = '\0';
  return UDAIR_OK;
}

udair_status udair_synth_data(const udair_config* cfg, const char* out_dir) {
  if (auto s = require(cfg && out_dir, "null argument")) return s;
  return guarded([&] { udair::run_synth_data(cfg->cfg, out_dir); });
}

udair_status udair_train(const udair_config* cfg, const char* out_dir) {
  if (auto s = require(cfg && out_dir, "null argument")) return s;
  return guarded([&] { udair::run_train(cfg->cfg, out_dir); });
}

udair_status udair_eval(const udair_config* cfg, const char* domain, int tta,
                        const char* out_dir) {
  if (auto s = require(cfg && domain && out_dir, "null argument")) return s;
  return guarded([&] {
    udair::run_eval(cfg->cfg, udair::domain_from_name(domain), tta != 0, out_dir);
  });
}

udair_status udair_analyze_features(const udair_config* cfg, const char* out_dir) {
  if (auto s = require(cfg && out_dir, "null argument")) return s;
  return guarded([&] { udair::run_analyze_features(cfg->cfg, out_dir); });
}

udair_status udair_count_params(const udair_config* cfg, const char* group,
                                const char* out_dir, long long* out_count) {
  if (auto s = require(cfg != nullptr, "null config")) return s;
  return guarded([&] {
    long long n = udair::run_count_params(cfg->cfg, group ? group : "",
                                          out_dir ? out_dir : "");
    if (out_count) *out_count = n;
  });
}

}  // extern "C"

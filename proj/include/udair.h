/*
 * udair — unified domain-adaptive image restoration, C API.
 *
 * The library is consumed through an opaque configuration handle plus a
 * handful of pipeline entry points. All functions return udair_status;
 * udair_last_error() describes the most recent failure on the calling
 * thread.
 */
#ifndef UDAIR_H
#define UDAIR_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum udair_status {
  UDAIR_OK = 0,
  UDAIR_ERR_INTERNAL = 1,
  UDAIR_ERR_CONFIG = 2,
  UDAIR_ERR_DATA = 3,
  UDAIR_ERR_NUMERIC = 4,
  UDAIR_ERR_IO = 5,
  UDAIR_ERR_FORMAT = 6
} udair_status;

typedef struct udair_config udair_config;

const char* udair_version(void);

/* Message for the last failing call on this thread; empty string if none. */
const char* udair_last_error(void);

/* profile: "ci" or "paper". On success *out owns the handle. */
udair_status udair_config_create(const char* profile, udair_config** out);
void udair_config_destroy(udair_config* cfg);

/* Merge a JSON config file over the profile; unknown keys are rejected. */
udair_status udair_config_load_file(udair_config* cfg, const char* path);

/* Override one leaf, e.g. ("train.lr", "5e-4"). */
udair_status udair_config_set(udair_config* cfg, const char* dotted_key,
                              const char* value);

/* Serializes the effective config as JSON into buf (NUL-terminated). *len
 * receives the full length; returns UDAIR_ERR_CONFIG if cap is too small. */
udair_status udair_config_dump(const udair_config* cfg, char* buf, size_t cap,
                               size_t* len);

/* Pipeline commands. out_dir receives the effective config snapshot plus the
 * command's artifacts. */
udair_status udair_synth_data(const udair_config* cfg, const char* out_dir);
udair_status udair_train(const udair_config* cfg, const char* out_dir);
/* domain: "source" or "target"; tta: nonzero routes through test-time
 * adaptation (requires a checkpoint with anchors). */
udair_status udair_eval(const udair_config* cfg, const char* domain, int tta,
                        const char* out_dir);
udair_status udair_analyze_features(const udair_config* cfg, const char* out_dir);
/* group: NULL/"total" or one of theta_r, theta_a, theta_da. */
udair_status udair_count_params(const udair_config* cfg, const char* group,
                                const char* out_dir, long long* out_count);

#ifdef __cplusplus
}
#endif

#endif /* UDAIR_H */

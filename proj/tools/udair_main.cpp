// Command-line front end. Talks to the library exclusively through the C API;
// exit codes are the udair_status values (0 ok, 2 config, 3 data, 4 numeric,
// 5 io, 6 format, 1 internal).

#include <udair.h>

#include <CLI11.hpp>

#include <cstdio>
#include <memory>
#include <string>
#include <vector>

namespace {

struct ConfigDeleter {
  void operator()(udair_config* c) const { udair_config_destroy(c); }
};
using ConfigPtr = std::unique_ptr<udair_config, ConfigDeleter>;

struct CommonOpts {
  std::string profile = "ci";
  std::string config_file;
  std::vector<std::string> sets;
  std::string out_dir = "runs/out";
  long long seed = -1;
  std::string variant;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--profile", o.profile, "configuration profile (ci or paper)")
      ->capture_default_str();
  cmd->add_option("--config", o.config_file, "JSON config file merged over the profile");
  cmd->add_option("--set", o.sets, "override a config leaf, e.g. --set train.lr=5e-4");
  cmd->add_option("--out-dir", o.out_dir, "directory for all outputs")
      ->capture_default_str();
  cmd->add_option("--seed", o.seed, "random seed (overrides config)");
  cmd->add_option("--variant", o.variant, "model variant: full|no_cscl|no_codebook|baseline");
}

int fail(udair_status s) {
  std::fprintf(stderr, "error: %s\n", udair_last_error());
  return int(s);
}

udair_status build_config(const CommonOpts& o, ConfigPtr& out) {
  udair_config* raw = nullptr;
  if (udair_status s = udair_config_create(o.profile.c_str(), &raw)) return s;
  out.reset(raw);
  if (!o.config_file.empty())
    if (udair_status s = udair_config_load_file(out.get(), o.config_file.c_str())) return s;
  if (o.seed >= 0) {
    std::string v = std::to_string(o.seed);
    if (udair_status s = udair_config_set(out.get(), "seed", v.c_str())) return s;
  }
  if (!o.variant.empty())
    if (udair_status s = udair_config_set(out.get(), "train.variant", o.variant.c_str()))
      return s;
  for (const auto& kv : o.sets) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) {
      std::fprintf(stderr, "error: --set expects key=value, got '%s'\n", kv.c_str());
      return UDAIR_ERR_CONFIG;
    }
    if (udair_status s = udair_config_set(out.get(), kv.substr(0, eq).c_str(),
                                          kv.substr(eq + 1).c_str()))
      return s;
  }
  return UDAIR_OK;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"udair: unified domain-adaptive image restoration"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(udair_version()));

  CommonOpts synth_o, train_o, eval_o, analyze_o, count_o;
  std::string eval_domain = "target";
  bool eval_tta = false;
  std::string count_group;

  auto* synth = app.add_subcommand("synth-data", "synthesize the paired source/target dataset");
  add_common(synth, synth_o);
  auto* train = app.add_subcommand("train", "train the restoration model");
  add_common(train, train_o);
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint with PSNR/SSIM");
  add_common(eval, eval_o);
  eval->add_option("--domain", eval_domain, "source or target")->capture_default_str();
  eval->add_flag("--tta", eval_tta, "enable test-time adaptation");
  auto* analyze = app.add_subcommand("analyze-features", "feature density, KL and cluster report");
  add_common(analyze, analyze_o);
  auto* count = app.add_subcommand("count-params", "report parameter counts");
  add_common(count, count_o);
  count->add_option("--group", count_group, "theta_r, theta_a, theta_da or total");

  CLI11_PARSE(app, argc, argv);

  ConfigPtr cfg;
  udair_status s = UDAIR_OK;
  if (synth->parsed()) {
    if ((s = build_config(synth_o, cfg))) return fail(s);
    if ((s = udair_synth_data(cfg.get(), synth_o.out_dir.c_str()))) return fail(s);
  } else if (train->parsed()) {
    if ((s = build_config(train_o, cfg))) return fail(s);
    if ((s = udair_train(cfg.get(), train_o.out_dir.c_str()))) return fail(s);
  } else if (eval->parsed()) {
    if ((s = build_config(eval_o, cfg))) return fail(s);
    if ((s = udair_eval(cfg.get(), eval_domain.c_str(), eval_tta ? 1 : 0,
                        eval_o.out_dir.c_str())))
      return fail(s);
  } else if (analyze->parsed()) {
    if ((s = build_config(analyze_o, cfg))) return fail(s);
    if ((s = udair_analyze_features(cfg.get(), analyze_o.out_dir.c_str()))) return fail(s);
  } else if (count->parsed()) {
    if ((s = build_config(count_o, cfg))) return fail(s);
    long long n = 0;
    if ((s = udair_count_params(cfg.get(), count_group.empty() ? nullptr : count_group.c_str(),
                                count_o.out_dir.c_str(), &n)))
      return fail(s);
  }
  return 0;
}

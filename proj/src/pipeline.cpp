#include "pipeline.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace udair {

namespace {

void prepare_out_dir(const RunConfig& cfg, const std::string& out_dir) {
  if (out_dir.empty()) throw ConfigError("out_dir must not be empty");
  fs::create_directories(out_dir);
  cfg.write_snapshot((fs::path(out_dir) / "config.json").string());
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path.string());
  return f;
}

LoadedCheckpoint load_eval_checkpoint(const RunConfig& cfg) {
  std::string path = cfg.eval_checkpoint();
  if (path.empty())
    throw ConfigError("eval.checkpoint is not set; point it at a trained checkpoint");
  return load_checkpoint(path);
}

void write_code_usage(Model& model, Variant variant,
                      const std::vector<std::vector<SamplePair>>& per_task,
                      const fs::path& path) {
  int k = model.config().daam.codebook_size;
  std::vector<int64_t> usage(size_t(k), 0);
  if (variant != Variant::Baseline) {
    for (const auto& task_samples : per_task)
      for (const auto& s : task_samples) {
        auto f = model.degradation_features(s.degraded, variant);
        for (int idx : f.indices) ++usage[size_t(idx)];
      }
  }
  auto f = open_out(path);
  f << "code_index\tcount\n";
  for (int i = 0; i < k; ++i) f << i << "\t" << usage[size_t(i)] << "\n";
}

struct FeatureCollection {
  std::vector<std::vector<double>> pooled;  // per sample
  std::vector<int> labels;
  std::vector<std::vector<double>> values_per_task;  // flattened map entries
};

FeatureCollection collect_features(Model& model, Variant variant,
                                   const std::vector<std::vector<SamplePair>>& per_task,
                                   bool apply_dam, const AnchorSet* anchors,
                                   const TtaConfig* tta) {
  FeatureCollection out;
  out.values_per_task.resize(per_task.size());
  for (size_t t = 0; t < per_task.size(); ++t) {
    for (const auto& s : per_task[t]) {
      if (tta) model.tta_adapt(s.degraded, *anchors, *tta, variant);
      auto f = model.degradation_features(s.degraded, variant, apply_dam);
      const Tensor& pooled = f.pooled->value;
      out.pooled.emplace_back(pooled.data(), pooled.data() + pooled.numel());
      out.labels.push_back(int(t));
      const Tensor& map = f.map->value;
      auto& vals = out.values_per_task[t];
      vals.insert(vals.end(), map.data(), map.data() + map.numel());
    }
  }
  return out;
}

}  // namespace

void run_synth_data(const RunConfig& cfg, const std::string& out_dir) {
  prepare_out_dir(cfg, out_dir);
  SynthConfig synth = cfg.synth_config();
  generate_dataset(synth, out_dir);
  std::cout << "synthesized " << kNumTasks << " tasks (" << synth.train_per_task
            << " train / " << synth.test_per_task << " test per task) under " << out_dir
            << "\n";
}

void run_train(const RunConfig& cfg, const std::string& out_dir) {
  prepare_out_dir(cfg, out_dir);
  TrainSettings settings = cfg.train_settings();
  fs::path source_root = fs::path(cfg.data_root()) / "source";
  auto train_sets = load_all_tasks(source_root, Split::Train, Domain::Source);

  std::unique_ptr<Model> model;
  int64_t start_step = 0;
  if (!cfg.init_checkpoint().empty()) {
    auto loaded = load_checkpoint(cfg.init_checkpoint());
    model = std::move(loaded.model);
    start_step = loaded.step;
  } else {
    model = std::make_unique<Model>(cfg.model_config());
  }

  Trainer trainer(*model, settings, train_sets);
  auto metrics = open_out(fs::path(out_dir) / "metrics.jsonl");
  int64_t remaining = settings.steps - start_step;
  auto t0 = std::chrono::steady_clock::now();
  for (int64_t i = 0; i < remaining; ++i) {
    StepMetrics m = trainer.step();
    json rec = {{"step", m.step + start_step},     {"lr", m.lr},
                {"mae", m.loss.mae},               {"cscl", m.loss.cscl},
                {"codebook", m.loss.codebook},     {"commitment", m.loss.commitment},
                {"total", m.loss.total}};
    metrics << rec.dump() << "\n";
  }
  auto dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  int64_t final_step = start_step + std::max<int64_t>(remaining, 0);

  AnchorSet anchors;
  bool with_anchors = cfg.compute_anchors() && settings.variant != Variant::Baseline;
  if (with_anchors) anchors = model->compute_anchors(train_sets, settings.variant);

  save_checkpoint((fs::path(out_dir) / "checkpoint.udc").string(), *model, cfg.root(),
                  mix_seed(settings.seed, "post-train", uint64_t(final_step)), final_step,
                  with_anchors ? &anchors : nullptr);
  write_code_usage(*model, settings.variant, train_sets,
                   fs::path(out_dir) / "code_usage.tsv");
  std::cout << "trained " << remaining << " steps in " << dt << "s; checkpoint at "
            << (fs::path(out_dir) / "checkpoint.udc") << "\n";
}

void run_eval(const RunConfig& cfg, Domain domain, bool tta, const std::string& out_dir) {
  prepare_out_dir(cfg, out_dir);
  auto loaded = load_eval_checkpoint(cfg);
  Model& model = *loaded.model;
  Variant variant = cfg.variant();
  TtaConfig tta_cfg = cfg.tta_config();
  SsimConfig ssim_cfg = cfg.ssim_config();

  if (tta && domain == Domain::Source) {
    std::cerr << "warning: TTA is inactive on the source domain; evaluating without it\n";
    tta = false;
  }
  if (tta && (!loaded.anchors || loaded.anchors->empty()))
    throw ConfigError("tta evaluation requires a checkpoint with anchors");

  fs::path root = fs::path(cfg.data_root()) / domain_name(domain);
  auto sets = load_all_tasks(root, Split::Test, domain);

  auto metrics = open_out(fs::path(out_dir) / "metrics.jsonl");
  std::ofstream reports;
  if (tta) reports = open_out(fs::path(out_dir) / "tta_reports.jsonl");

  struct Agg {
    double psnr_sum = 0, ssim_sum = 0;
    int64_t n = 0;
  };
  std::vector<Agg> agg(kNumTasks);

  for (int t = 0; t < kNumTasks; ++t) {
    for (const auto& sample : sets[size_t(t)]) {
      Image restored;
      TtaReport report;
      auto t0 = std::chrono::steady_clock::now();
      if (tta) {
        restored = model.restore_with_tta(sample.degraded, *loaded.anchors, tta_cfg,
                                          variant, &report);
      } else {
        restored = model.restore(sample.degraded, variant);
      }
      double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      restored.clamp01();
      double p = psnr(restored, sample.clean);
      double s = ssim(restored, sample.clean, ssim_cfg);
      json rec = {{"id", sample.name},          {"task", task_name(Task(t))},
                  {"psnr", p},                  {"ssim", s},
                  {"domain", domain_name(domain)}, {"tta", tta}};
      metrics << rec.dump() << "\n";
      if (tta) {
        json r = {{"id", sample.name},
                  {"task", task_name(Task(t))},
                  {"selected_task", report.selected_task},
                  {"coral_per_step", report.coral_per_step},
                  {"seconds", dt}};
        reports << r.dump() << "\n";
      }
      agg[size_t(t)].psnr_sum += p;
      agg[size_t(t)].ssim_sum += s;
      ++agg[size_t(t)].n;
    }
  }

  auto csv = open_out(fs::path(out_dir) / "aggregate.csv");
  csv << "task,domain,tta,mean_psnr,mean_ssim,count\n";
  for (int t = 0; t < kNumTasks; ++t) {
    const Agg& a = agg[size_t(t)];
    if (a.n == 0) continue;
    csv << task_name(Task(t)) << "," << domain_name(domain) << "," << (tta ? 1 : 0) << ","
        << a.psnr_sum / double(a.n) << "," << a.ssim_sum / double(a.n) << "," << a.n << "\n";
  }
}

void run_analyze_features(const RunConfig& cfg, const std::string& out_dir) {
  prepare_out_dir(cfg, out_dir);
  auto loaded = load_eval_checkpoint(cfg);
  Model& model = *loaded.model;
  Variant variant = cfg.variant();
  TtaConfig tta_cfg = cfg.tta_config();
  int bins = cfg.kl_bins();

  auto source = load_all_tasks(fs::path(cfg.data_root()) / "source", Split::Test,
                               Domain::Source);
  auto target = load_all_tasks(fs::path(cfg.data_root()) / "target", Split::Test,
                               Domain::Target);

  auto src = collect_features(model, variant, source, false, nullptr, nullptr);
  auto raw = collect_features(model, variant, target, false, nullptr, nullptr);

  bool have_anchors = loaded.anchors && !loaded.anchors->empty();
  FeatureCollection adapted;
  if (have_anchors) {
    adapted = collect_features(model, variant, target, /*apply_dam=*/true,
                               &*loaded.anchors, &tta_cfg);
  } else {
    std::cerr << "warning: checkpoint has no anchors; skipping adapted-feature analysis\n";
  }

  std::vector<std::string> names;
  for (int t = 0; t < kNumTasks; ++t) names.push_back(task_name(Task(t)));
  export_features(src.pooled, src.labels, names,
                  (fs::path(out_dir) / "features_source.tsv").string());
  export_features(raw.pooled, raw.labels, names,
                  (fs::path(out_dir) / "features_target_raw.tsv").string());
  if (have_anchors)
    export_features(adapted.pooled, adapted.labels, names,
                    (fs::path(out_dir) / "features_target_adapted.tsv").string());

  json report;
  report["tasks"] = json::array();
  std::vector<double> all_src, all_raw, all_adapted;
  for (int t = 0; t < kNumTasks; ++t) {
    json tr;
    tr["task"] = task_name(Task(t));
    tr["kl_source_vs_raw"] =
        feature_density_kl(src.values_per_task[size_t(t)], raw.values_per_task[size_t(t)], bins);
    if (have_anchors)
      tr["kl_source_vs_adapted"] = feature_density_kl(
          src.values_per_task[size_t(t)], adapted.values_per_task[size_t(t)], bins);
    report["tasks"].push_back(tr);
    auto& s = src.values_per_task[size_t(t)];
    auto& r = raw.values_per_task[size_t(t)];
    all_src.insert(all_src.end(), s.begin(), s.end());
    all_raw.insert(all_raw.end(), r.begin(), r.end());
    if (have_anchors) {
      auto& a = adapted.values_per_task[size_t(t)];
      all_adapted.insert(all_adapted.end(), a.begin(), a.end());
    }
  }
  report["kl_source_vs_raw"] = feature_density_kl(all_src, all_raw, bins);
  if (have_anchors)
    report["kl_source_vs_adapted"] = feature_density_kl(all_src, all_adapted, bins);

  auto margin_json = [](const ClusterMargin& m) {
    return json{{"intra", m.intra}, {"inter", m.inter}, {"margin", m.margin}};
  };
  report["cluster_margin_source"] = margin_json(cluster_margin(src.pooled, src.labels));
  report["cluster_margin_target_raw"] = margin_json(cluster_margin(raw.pooled, raw.labels));
  if (have_anchors)
    report["cluster_margin_target_adapted"] =
        margin_json(cluster_margin(adapted.pooled, adapted.labels));

  auto f = open_out(fs::path(out_dir) / "report.json");
  f << report.dump(2) << "\n";
  std::cout << "feature analysis written to " << (fs::path(out_dir) / "report.json") << "\n";
}

int64_t run_count_params(const RunConfig& cfg, const std::string& group,
                         const std::string& out_dir) {
  std::unique_ptr<Model> model;
  if (!cfg.eval_checkpoint().empty())
    model = load_checkpoint(cfg.eval_checkpoint()).model;
  else
    model = std::make_unique<Model>(cfg.model_config());

  std::optional<ParamGroup> filter;
  if (!group.empty() && group != "total") {
    filter = param_group_from_name(group);
    if (!filter) throw ConfigError("unknown parameter group: " + group);
  }
  int64_t count = model->params().count(filter);

  json report = {
      {"total", model->params().count()},
      {"theta_r", model->params().count(ParamGroup::Restoration)},
      {"theta_a", model->params().count(ParamGroup::Awareness)},
      {"theta_da", model->params().count(ParamGroup::Adaptation)},
  };
  if (!out_dir.empty()) {
    prepare_out_dir(cfg, out_dir);
    auto f = open_out(fs::path(out_dir) / "params.json");
    f << report.dump(2) << "\n";
  }
  std::cout << report.dump() << "\n";
  return count;
}

}  // namespace udair

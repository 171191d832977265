#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

#include "fewsound/pipeline.hpp"
#include "fewsound/toyset.hpp"

using namespace fewsound;

namespace {

struct Overrides {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::size_t way = 0, shot = 0, episodes = 0;
  std::string head, attentional, distance, section;
  std::string features_dir, manifest, norm_stats;
};

void add_common_flags(CLI::App* cmd, Overrides& ov) {
  cmd->add_option("--config", ov.config_path, "run configuration (JSON)");
  cmd->add_option("--seed", ov.seed, "seed override")->each([&](const std::string&) {
    ov.seed_set = true;
  });
  cmd->add_option("--way", ov.way, "classes per episode");
  cmd->add_option("--shot", ov.shot, "support examples per class");
  cmd->add_option("--episodes", ov.episodes,
                  "episodes per epoch (train) / evaluation episodes (eval)");
  cmd->add_option("--head", ov.head, "model head")
      ->check(CLI::IsMember({"siamese", "matching", "prototypical"}));
  cmd->add_option("--attentional", ov.attentional, "attentional similarity")
      ->check(CLI::IsMember({"on", "off"}));
  cmd->add_option("--distance", ov.distance, "distance kind")
      ->check(CLI::IsMember({"inner", "cosine", "euclidean"}));
  cmd->add_option("--section", ov.section, "evaluation section")
      ->check(CLI::IsMember({"val", "test"}));
  cmd->add_option("--features", ov.features_dir, "feature cache directory");
  cmd->add_option("--manifest", ov.manifest, "dataset manifest CSV");
  cmd->add_option("--norm-stats", ov.norm_stats, "normalization statistics JSON");
}

RunConfig resolve_config(const Overrides& ov, bool for_train) {
  RunConfig cfg = ov.config_path.empty() ? default_config() : load_config(ov.config_path);
  if (!ov.features_dir.empty()) cfg.data.features_dir = ov.features_dir;
  if (!ov.manifest.empty()) cfg.data.manifest = ov.manifest;
  if (!ov.norm_stats.empty()) cfg.data.norm_stats = ov.norm_stats;
  if (ov.seed_set) {
    cfg.schedule.seed = ov.seed;
    if (!for_train) cfg.eval.seed = ov.seed;
  }
  if (ov.way) {
    cfg.schedule.way = ov.way;
    cfg.eval.way = ov.way;
  }
  if (ov.shot) {
    cfg.schedule.shot = ov.shot;
    cfg.eval.shot = ov.shot;
  }
  if (ov.episodes) {
    if (for_train) {
      cfg.schedule.episodes_per_epoch = ov.episodes;
    } else {
      cfg.eval.episodes = ov.episodes;
    }
  }
  if (!ov.head.empty()) {
    cfg.head.head = head_kind_from_string(ov.head);
    if (ov.distance.empty()) cfg.head.distance = default_distance(cfg.head.head);
  }
  if (!ov.attentional.empty()) {
    if (ov.attentional == "on") {
      cfg.head.similarity = SimKind::attentional;
    } else if (cfg.head.similarity == SimKind::attentional) {
      cfg.head.similarity = SimKind::pooled;
    }
  }
  if (!ov.distance.empty()) cfg.head.distance = distance_from_string(ov.distance);
  if (!ov.section.empty()) cfg.eval.section = ov.section;
  cfg.backbone.attention = cfg.head.attentional();
  cfg.backbone.validate();
  return cfg;
}

int dispatch(int argc, char** argv) {
  CLI::App app{"few-shot sound recognition with attentional similarity"};
  app.require_subcommand(1);

  // make-toy-dataset
  auto* toy = app.add_subcommand("make-toy-dataset",
                                 "generate the synthetic transient-event corpus");
  std::string toy_out;
  ToyConfig toy_cfg;
  toy->add_option("--out", toy_out, "output directory")->required();
  toy->add_option("--classes", toy_cfg.n_classes, "number of classes");
  toy->add_option("--clips", toy_cfg.clips_per_class, "clips per class");
  toy->add_option("--seed", toy_cfg.seed, "generation seed");
  toy->add_option("--noise-level", toy_cfg.noise_level, "background noise RMS");

  // prepare
  auto* prep = app.add_subcommand("prepare", "extract features and build the manifest");
  PrepareOptions prep_opt;
  prep->add_option("--data", prep_opt.data_dir, "dataset directory (ESC-50 layout)")
      ->required();
  prep->add_option("--out", prep_opt.out_dir, "feature cache output directory")->required();
  prep->add_option("--meta", prep_opt.meta_path, "metadata CSV (default: autodetect)");
  prep->add_option("--train-classes", prep_opt.split.n_train, "classes in the train split");
  prep->add_option("--val-classes", prep_opt.split.n_val, "classes in the val split");
  prep->add_option("--test-classes", prep_opt.split.n_test, "classes in the test split");
  prep->add_option("--split-seed", prep_opt.split.seed, "class split seed");

  // synth-noise
  auto* synth = app.add_subcommand("synth-noise", "synthesize the noise-augmented dataset");
  SynthNoiseOptions synth_opt;
  synth->add_option("--esc", synth_opt.esc_dir, "source dataset directory")->required();
  synth->add_option("--scenes", synth_opt.scenes_dir, "acoustic scene recordings directory")
      ->required();
  synth->add_option("--out", synth_opt.out_dir, "output dataset directory")->required();
  synth->add_option("--seed", synth_opt.seed, "synthesis seed");
  synth->add_option("--snr-min", synth_opt.snr_min, "minimum SNR (dB)");
  synth->add_option("--snr-max", synth_opt.snr_max, "maximum SNR (dB)");
  synth->add_option("--meta", synth_opt.meta_path, "metadata CSV (default: autodetect)");

  // train
  auto* tr = app.add_subcommand("train", "episodic training");
  Overrides tr_ov;
  std::string tr_out = "checkpoint.fsam", tr_log;
  add_common_flags(tr, tr_ov);
  tr->add_option("--out", tr_out, "checkpoint output path");
  tr->add_option("--log", tr_log, "training log path (JSON lines)");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  Overrides ev_ov;
  std::string ev_ckpt, ev_rows, ev_name;
  add_common_flags(ev, ev_ov);
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint path")->required();
  ev->add_option("--row-out", ev_rows, "append a report row fragment to this CSV");
  ev->add_option("--model-name", ev_name, "model name for the report row");

  // report
  auto* rep = app.add_subcommand("report", "assemble the comparison table");
  std::string rep_rows, rep_csv, rep_text;
  rep->add_option("--rows", rep_rows, "row fragment CSV from eval runs")->required();
  rep->add_option("--csv", rep_csv, "write the table as CSV here");
  rep->add_option("--text", rep_text, "write the aligned text table here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;  // --help is a success
  }

  if (toy->parsed()) {
    write_toy_dataset(toy_out, toy_cfg);
    std::printf("wrote %zu classes x %zu clips to %s\n", toy_cfg.n_classes,
                toy_cfg.clips_per_class, toy_out.c_str());
    return kExitOk;
  }

  if (prep->parsed()) {
    const PrepareResult r = run_prepare(prep_opt);
    std::printf("prepared %zu clips (%zu extracted, %zu cache hits)\n",
                r.n_clips - r.errors.size(), r.n_extracted, r.n_cache_hits);
    if (!r.errors.empty()) {
      std::fprintf(stderr, "%zu files failed:\n", r.errors.size());
      for (const auto& e : r.errors) std::fprintf(stderr, "  %s\n", e.c_str());
      return kExitData;
    }
    return kExitOk;
  }

  if (synth->parsed()) {
    const SynthNoiseResult r = run_synth_noise(synth_opt);
    std::printf("synthesized %zu noisy clips into %s\n", r.n_clips,
                synth_opt.out_dir.c_str());
    if (!r.errors.empty()) {
      std::fprintf(stderr, "%zu files failed:\n", r.errors.size());
      for (const auto& e : r.errors) std::fprintf(stderr, "  %s\n", e.c_str());
      return kExitData;
    }
    return kExitOk;
  }

  if (tr->parsed()) {
    const RunConfig cfg = resolve_config(tr_ov, true);
    std::printf("model: %s head, depth %s, %zu trainable parameters\n",
                to_string(cfg.head.head).c_str(), depth_string(cfg).c_str(),
                param_count(cfg.backbone));
    const TrainOutput out = run_train(cfg, tr_out, tr_log);
    const auto& last = out.result.history.back();
    std::printf("trained %zu epochs; best epoch %zu", out.result.history.size(),
                out.result.best_epoch);
    if (last.val_accuracy >= 0) {
      std::printf(" (val accuracy %.4f)",
                  out.result.history[out.result.best_epoch].val_accuracy);
    }
    std::printf("; checkpoint: %s\n", tr_out.c_str());
    return kExitOk;
  }

  if (ev->parsed()) {
    const RunConfig cfg = resolve_config(ev_ov, false);
    const EvalOutput out = run_eval(cfg, ev_ckpt);
    std::printf("%zu-way %zu-shot on %s: accuracy %.4f +- %.4f (%zu episodes, seed %llu)\n",
                cfg.eval.way, cfg.eval.shot, cfg.eval.section.c_str(), out.result.accuracy,
                out.result.ci95, out.result.episodes,
                static_cast<unsigned long long>(cfg.eval.seed));
    if (!ev_rows.empty()) {
      EvalRow row;
      row.model = ev_name.empty() ? to_string(cfg.head.head) : ev_name;
      row.attentional = cfg.head.attentional();
      row.depth = out.depth;
      row.params = out.params;
      row.way = cfg.eval.way;
      row.shot = cfg.eval.shot;
      row.accuracy = out.result.accuracy;
      row.ci95 = out.result.ci95;
      row.section = cfg.eval.section;
      row.episodes = out.result.episodes;
      row.seed = cfg.eval.seed;
      append_eval_row(ev_rows, row);
    }
    return kExitOk;
  }

  if (rep->parsed()) {
    const ReportTables tables = build_report(read_eval_rows(rep_rows));
    if (!rep_csv.empty()) {
      std::ofstream f(rep_csv);
      f << tables.csv;
    }
    if (!rep_text.empty()) {
      std::ofstream f(rep_text);
      f << tables.text;
    }
    std::fputs(tables.text.c_str(), stdout);
    return kExitOk;
  }
  return kExitUsage;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitUsage;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return kExitNumeric;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  }
}

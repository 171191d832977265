#include "fewsound/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "fewsound/audio.hpp"
#include "fewsound/checkpoint.hpp"
#include "fewsound/wav.hpp"

namespace fewsound {

namespace fs = std::filesystem;

namespace {

struct MetaEntry {
  std::string filename;
  std::string category;
};

std::string find_meta(const std::string& data_dir, const std::string& explicit_path) {
  if (!explicit_path.empty()) {
    if (!fs::exists(explicit_path)) throw DataError("metadata not found: " + explicit_path);
    return explicit_path;
  }
  for (const char* candidate : {"meta/esc50.csv", "esc50.csv", "meta.csv"}) {
    const fs::path p = fs::path(data_dir) / candidate;
    if (fs::exists(p)) return p.string();
  }
  throw DataError("no metadata CSV found under " + data_dir +
                  " (looked for meta/esc50.csv, esc50.csv, meta.csv)");
}

// Reads an ESC-50-style metadata CSV; only the filename and category columns
// are used, located by header name.
std::vector<MetaEntry> read_meta(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open metadata: " + path);
  std::string line;
  if (!std::getline(f, line)) throw DataError("empty metadata: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();

  std::vector<std::string> header;
  {
    std::istringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) header.push_back(field);
  }
  long fn_col = -1, cat_col = -1;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == "filename") fn_col = static_cast<long>(i);
    if (header[i] == "category") cat_col = static_cast<long>(i);
  }
  if (fn_col < 0 || cat_col < 0) {
    throw DataError("metadata needs 'filename' and 'category' columns: " + path);
  }

  std::vector<MetaEntry> entries;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::istringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() <= static_cast<std::size_t>(std::max(fn_col, cat_col))) {
      throw DataError("malformed metadata row in " + path + ": '" + line + "'");
    }
    entries.push_back({fields[fn_col], fields[cat_col]});
  }
  if (entries.empty()) throw DataError("no clips found in " + path);
  std::sort(entries.begin(), entries.end(),
            [](const MetaEntry& a, const MetaEntry& b) { return a.filename < b.filename; });
  return entries;
}

std::string locate_audio(const std::string& data_dir, const std::string& filename) {
  for (const fs::path& p : {fs::path(data_dir) / "audio" / filename,
                            fs::path(data_dir) / filename}) {
    if (fs::exists(p)) return p.string();
  }
  throw DataError("audio file not found: " + filename + " under " + data_dir);
}

std::string stem_of(const std::string& filename) {
  return fs::path(filename).stem().string();
}

std::string mel_digest_hex(const MelConfig& mel) {
  nlohmann::json j = {{"window", mel.window},   {"hop", mel.hop},
                      {"n_mels", mel.n_mels},   {"fmin", mel.fmin},
                      {"fmax", mel.fmax},       {"target_frames", mel.target_frames},
                      {"log_floor", mel.log_floor}};
  return to_hex(sha256(j.dump()));
}

}  // namespace

PrepareResult run_prepare(const PrepareOptions& opt) {
  const std::string meta_path = find_meta(opt.data_dir, opt.meta_path);
  const std::vector<MetaEntry> entries = read_meta(meta_path);
  fs::create_directories(opt.out_dir);

  const std::string mel_digest = mel_digest_hex(opt.mel);
  const fs::path index_path = fs::path(opt.out_dir) / "cache_index.json";
  nlohmann::json index = nlohmann::json::object();
  if (fs::exists(index_path)) {
    std::ifstream f(index_path);
    try {
      f >> index;
    } catch (const nlohmann::json::exception&) {
      index = nlohmann::json::object();  // rebuild a corrupt index
    }
  }

  PrepareResult result;
  std::vector<MetaEntry> prepared;
  for (const auto& entry : entries) {
    ++result.n_clips;
    try {
      const std::string wav_path = locate_audio(opt.data_dir, entry.filename);
      const std::string stem = stem_of(entry.filename);
      const fs::path lmel_path = fs::path(opt.out_dir) / (stem + ".lmel");
      const std::string source_hex = to_hex(sha256_file(wav_path));

      const bool hit = fs::exists(lmel_path) && index.contains(stem) &&
                       index[stem].value("source_sha256", "") == source_hex &&
                       index[stem].value("mel", "") == mel_digest;
      if (hit) {
        ++result.n_cache_hits;
      } else {
        AudioClip clip = load_wav_clip(wav_path, stem);
        clip = resample(clip, 16000);
        const MelSpectrogram spec = logmel(clip, opt.mel);
        write_lmel(lmel_path.string(), spec.bins);
        index[stem] = {{"source_sha256", source_hex}, {"mel", mel_digest}};
        ++result.n_extracted;
      }
      prepared.push_back({stem, entry.category});
    } catch (const std::exception& e) {
      result.errors.push_back(entry.filename + ": " + e.what());
    }
  }
  if (prepared.empty()) throw DataError("no clips could be prepared from " + opt.data_dir);

  std::vector<std::string> labels;
  for (const auto& e : prepared) labels.push_back(e.category);
  const ClassSplit split = split_classes(labels, opt.split.n_train, opt.split.n_val,
                                         opt.split.n_test, opt.split.seed);
  std::map<std::string, std::string> section;
  for (const auto& c : split.train) section[c] = "train";
  for (const auto& c : split.val) section[c] = "val";
  for (const auto& c : split.test) section[c] = "test";

  std::vector<ManifestRow> manifest;
  for (const auto& e : prepared) {
    manifest.push_back({e.filename, e.category, section.at(e.category)});
  }
  write_manifest((fs::path(opt.out_dir) / "manifest.csv").string(), manifest);

  // Normalization statistics from the training split only.
  std::vector<MelSpectrogram> train_specs;
  for (const auto& row : manifest) {
    if (row.split != "train") continue;
    MelSpectrogram spec;
    spec.bins = read_lmel((fs::path(opt.out_dir) / (row.clip_id + ".lmel")).string());
    spec.clip_ref = row.clip_id;
    train_specs.push_back(std::move(spec));
  }
  if (train_specs.empty()) throw DataError("no training-split clips to fit statistics on");
  std::vector<const MelSpectrogram*> ptrs;
  for (const auto& s : train_specs) ptrs.push_back(&s);
  save_norm_stats((fs::path(opt.out_dir) / "norm_stats.json").string(), fit_norm(ptrs));

  std::ofstream idx(index_path);
  idx << index.dump(1) << '\n';
  return result;
}

SynthNoiseResult run_synth_noise(const SynthNoiseOptions& opt) {
  const std::string meta_path = find_meta(opt.esc_dir, opt.meta_path);
  const std::vector<MetaEntry> entries = read_meta(meta_path);

  std::vector<std::string> scene_files;
  for (const auto& p : fs::recursive_directory_iterator(opt.scenes_dir)) {
    if (p.is_regular_file() && p.path().extension() == ".wav") {
      scene_files.push_back(p.path().string());
    }
  }
  std::sort(scene_files.begin(), scene_files.end());
  if (scene_files.empty()) throw DataError("no scene recordings under " + opt.scenes_dir);

  std::map<std::string, AudioClip> scene_cache;
  auto scene_at = [&](std::size_t i) -> const AudioClip& {
    const std::string& path = scene_files[i];
    auto it = scene_cache.find(path);
    if (it == scene_cache.end()) {
      AudioClip clip = load_wav_clip(path, fs::path(path).filename().string());
      clip = resample(clip, 16000);
      it = scene_cache.emplace(path, std::move(clip)).first;
    }
    return it->second;
  };

  fs::create_directories(fs::path(opt.out_dir) / "audio");
  std::ofstream meta_out(fs::path(opt.out_dir) / "meta.csv");
  meta_out << "filename,category\n";
  std::ofstream synth_out(fs::path(opt.out_dir) / "synth_manifest.csv");
  synth_out << "filename,scene_file,offset,snr_db,gain,peak_scale\n";
  synth_out.precision(17);
  {
    // the synthesis is fully determined by this record plus the scene files
    nlohmann::json info = {{"seed", opt.seed},
                           {"snr_min", opt.snr_min},
                           {"snr_max", opt.snr_max},
                           {"sample_rate", 16000}};
    std::ofstream(fs::path(opt.out_dir) / "synth_info.json") << info.dump(2) << '\n';
  }

  const Rng root(opt.seed);
  SynthNoiseResult result;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& entry = entries[i];
    try {
      Rng rng = root.derive(i + 1);
      AudioClip event = load_wav_clip(locate_audio(opt.esc_dir, entry.filename),
                                      stem_of(entry.filename));
      event = resample(event, 16000);

      std::vector<std::size_t> eligible;
      for (std::size_t s = 0; s < scene_files.size(); ++s) {
        if (scene_at(s).samples.size() >= event.samples.size()) eligible.push_back(s);
      }
      if (eligible.empty()) {
        throw DataError("no scene recording is as long as " + entry.filename);
      }
      const std::size_t pick = eligible[rng.below(eligible.size())];
      const double snr = rng.uniform(opt.snr_min, opt.snr_max);
      const MixResult mix = mix_noise(event, scene_at(pick), snr, rng);

      write_wav16((fs::path(opt.out_dir) / "audio" / entry.filename).string(),
                  mix.clip.samples, 16000);
      meta_out << entry.filename << ',' << entry.category << '\n';
      synth_out << entry.filename << ',' << fs::path(scene_files[pick]).filename().string()
                << ',' << mix.scene_offset << ',' << snr << ',' << mix.gain << ','
                << mix.peak_scale << '\n';
      ++result.n_clips;
    } catch (const std::exception& e) {
      result.errors.push_back(entry.filename + ": " + e.what());
    }
  }
  if (result.n_clips == 0) throw DataError("no clips could be synthesized");
  return result;
}

ClassSplit split_from_manifest(const std::vector<ManifestRow>& rows) {
  std::map<std::string, std::string> seen;
  for (const auto& r : rows) {
    const auto it = seen.find(r.label);
    if (it == seen.end()) {
      seen[r.label] = r.split;
    } else if (it->second != r.split) {
      throw DataError("manifest assigns class '" + r.label + "' to both '" + it->second +
                      "' and '" + r.split + "'");
    }
  }
  ClassSplit split;
  for (const auto& [label, section] : seen) {
    if (section == "train") {
      split.train.push_back(label);
    } else if (section == "val") {
      split.val.push_back(label);
    } else if (section == "test") {
      split.test.push_back(label);
    } else {
      throw DataError("manifest has unknown split '" + section + "' for class '" + label +
                      "'");
    }
  }
  return split;
}

TrainOutput run_train(const RunConfig& cfg, const std::string& checkpoint_path,
                      const std::string& log_path) {
  if (cfg.data.manifest.empty() || cfg.data.features_dir.empty()) {
    throw ConfigError("train: config needs data.manifest and data.features_dir");
  }
  const std::vector<ManifestRow> manifest = read_manifest(cfg.data.manifest);
  const ClassSplit split = split_from_manifest(manifest);
  const std::string stats_path = cfg.data.norm_stats.empty()
                                     ? cfg.data.features_dir + "/norm_stats.json"
                                     : cfg.data.norm_stats;
  DiskFeatureStore store(cfg.data.features_dir, load_norm_stats(stats_path));

  Model<float> model(cfg.backbone, cfg.schedule.seed);
  std::ofstream log;
  if (!log_path.empty()) {
    log.open(log_path);
    if (!log) throw DataError("cannot write training log: " + log_path);
  }

  TrainOutput out{train(std::move(model), cfg.schedule, split, cfg.head, manifest, store,
                        log_path.empty() ? nullptr : &log),
                  model_digest(cfg)};

  // Leakage check: training must never have touched a test-class clip.
  {
    std::set<std::string> test_classes(split.test.begin(), split.test.end());
    for (const auto& row : manifest) {
      if (test_classes.count(row.label) && store.access_log().count(row.clip_id)) {
        throw DataError("test-class clip '" + row.clip_id + "' was accessed during training");
      }
    }
  }

  if (!checkpoint_path.empty()) {
    save_checkpoint(checkpoint_path, out.result.best, out.digest);
  }
  return out;
}

EvalOutput run_eval(const RunConfig& cfg, const std::string& checkpoint_path) {
  if (cfg.data.manifest.empty() || cfg.data.features_dir.empty()) {
    throw ConfigError("eval: config needs data.manifest and data.features_dir");
  }
  const std::vector<ManifestRow> manifest = read_manifest(cfg.data.manifest);
  const ClassSplit split = split_from_manifest(manifest);
  const std::string stats_path = cfg.data.norm_stats.empty()
                                     ? cfg.data.features_dir + "/norm_stats.json"
                                     : cfg.data.norm_stats;
  DiskFeatureStore store(cfg.data.features_dir, load_norm_stats(stats_path));

  Model<float> model(cfg.backbone, cfg.schedule.seed);
  const Digest256 expected = model_digest(cfg);
  load_checkpoint(checkpoint_path, model, &expected);

  const EpisodePool pool(manifest, cfg.eval.section == "val" ? split.val : split.test);
  if (pool.empty()) {
    throw DataError("eval: no classes in section '" + cfg.eval.section + "'");
  }
  EvalOutput out;
  out.result = evaluate(model, cfg.head, pool, store, cfg.eval.way, cfg.eval.shot,
                        cfg.eval.episodes, cfg.eval.seed);
  out.params = model.param_count();
  out.depth = depth_string(cfg);
  return out;
}

}  // namespace fewsound

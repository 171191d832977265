#include "fewsound/episode.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "fewsound/common.hpp"

namespace fewsound {

std::vector<ManifestRow> read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open manifest: " + path);
  std::vector<ManifestRow> rows;
  std::string line;
  bool header = true;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (header) {
      header = false;
      if (line != "filename,class_label,split") {
        throw DataError("manifest header mismatch in " + path + ": '" + line + "'");
      }
      continue;
    }
    std::istringstream ss(line);
    ManifestRow row;
    if (!std::getline(ss, row.clip_id, ',') || !std::getline(ss, row.label, ',') ||
        !std::getline(ss, row.split, ',')) {
      throw DataError("malformed manifest row in " + path + ": '" + line + "'");
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_manifest(const std::string& path, const std::vector<ManifestRow>& rows) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write manifest: " + path);
  f << "filename,class_label,split\n";
  for (const auto& r : rows) f << r.clip_id << ',' << r.label << ',' << r.split << '\n';
}

ClassSplit split_classes(std::vector<std::string> labels, std::size_t n_train,
                         std::size_t n_val, std::size_t n_test, std::uint64_t seed) {
  std::sort(labels.begin(), labels.end());
  labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
  if (n_train + n_val + n_test != labels.size()) {
    throw ConfigError("split_classes: " + std::to_string(n_train) + "+" +
                      std::to_string(n_val) + "+" + std::to_string(n_test) +
                      " classes requested, dataset has " + std::to_string(labels.size()));
  }
  Rng rng = Rng(seed).derive(0x73706c6974ULL);
  for (std::size_t i = labels.size(); i > 1; --i) {
    std::swap(labels[i - 1], labels[rng.below(i)]);
  }
  ClassSplit split;
  split.seed = seed;
  split.train.assign(labels.begin(), labels.begin() + n_train);
  split.val.assign(labels.begin() + n_train, labels.begin() + n_train + n_val);
  split.test.assign(labels.begin() + n_train + n_val, labels.end());
  return split;
}

EpisodePool::EpisodePool(const std::vector<ManifestRow>& manifest,
                         const std::vector<std::string>& classes) {
  classes_ = classes;
  std::sort(classes_.begin(), classes_.end());
  clips_.resize(classes_.size());
  for (const auto& row : manifest) {
    const auto it = std::lower_bound(classes_.begin(), classes_.end(), row.label);
    if (it != classes_.end() && *it == row.label) {
      clips_[it - classes_.begin()].push_back(row.clip_id);
    }
  }
  for (auto& clips : clips_) std::sort(clips.begin(), clips.end());
}

Episode sample_episode(const EpisodePool& pool, std::size_t way, std::size_t shot,
                       Rng& rng, std::size_t n_queries) {
  if (way == 0 || shot == 0 || n_queries == 0) {
    throw ConfigError("sample_episode: way, shot and n_queries must be positive");
  }
  if (pool.n_classes() < way) {
    throw DataError("sample_episode: pool has " + std::to_string(pool.n_classes()) +
                    " classes, need " + std::to_string(way));
  }
  for (std::size_t c = 0; c < pool.n_classes(); ++c) {
    if (pool.clips_of(c).size() < shot + n_queries) {
      throw DataError("sample_episode: class '" + pool.classes()[c] + "' has " +
                      std::to_string(pool.clips_of(c).size()) + " clips, needs at least " +
                      std::to_string(shot + n_queries));
    }
  }

  // Partial Fisher-Yates over class indices.
  std::vector<std::size_t> order(pool.n_classes());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = 0; i < way; ++i) {
    std::swap(order[i], order[i + rng.below(order.size() - i)]);
  }

  Episode ep;
  ep.way = way;
  ep.shot = shot;
  ep.query_class = static_cast<std::size_t>(rng.below(way));
  ep.support.resize(way);
  for (std::size_t c = 0; c < way; ++c) {
    const auto& clips = pool.clips_of(order[c]);
    const std::size_t need = shot + (c == ep.query_class ? n_queries : 0);
    std::vector<std::size_t> idx(clips.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    for (std::size_t i = 0; i < need; ++i) {
      std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
    }
    for (std::size_t i = 0; i < shot; ++i) ep.support[c].push_back(clips[idx[i]]);
    if (c == ep.query_class) {
      for (std::size_t q = 0; q < n_queries; ++q) ep.queries.push_back(clips[idx[shot + q]]);
    }
  }
  return ep;
}

const Tensor<float>& MemoryFeatureStore::get(const std::string& clip_id) {
  const auto it = features_.find(clip_id);
  if (it == features_.end()) {
    throw DataError("feature store: unknown clip '" + clip_id + "'");
  }
  log_access(clip_id);
  return it->second;
}

const Tensor<float>& DiskFeatureStore::get(const std::string& clip_id) {
  log_access(clip_id);
  const auto it = cache_.find(clip_id);
  if (it != cache_.end()) return it->second;
  Tensor<float> raw = read_lmel(dir_ + "/" + clip_id + ".lmel");
  MelSpectrogram spec;
  spec.bins = std::move(raw);
  spec.clip_ref = clip_id;
  MelSpectrogram normed = apply_norm(spec, stats_);
  if (!all_finite(normed.bins)) {
    throw NumericError("feature store: non-finite features in '" + clip_id + "'");
  }
  auto [pos, inserted] = cache_.emplace(clip_id, std::move(normed.bins));
  return pos->second;
}

}  // namespace fewsound

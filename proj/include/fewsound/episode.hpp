#pragma once

#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "fewsound/mel.hpp"
#include "fewsound/rng.hpp"
#include "fewsound/tensor.hpp"

namespace fewsound {

struct ManifestRow {
  std::string clip_id;
  std::string label;
  std::string split;  // train | val | test
};

std::vector<ManifestRow> read_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<ManifestRow>& rows);

// Disjoint class partition covering every label exactly once.
struct ClassSplit {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
  std::uint64_t seed = 0;
};

ClassSplit split_classes(std::vector<std::string> labels, std::size_t n_train,
                         std::size_t n_val, std::size_t n_test, std::uint64_t seed);

// Clips of one manifest section, grouped by class.
class EpisodePool {
 public:
  EpisodePool() = default;
  EpisodePool(const std::vector<ManifestRow>& manifest,
              const std::vector<std::string>& classes);

  std::size_t n_classes() const { return classes_.size(); }
  const std::vector<std::string>& classes() const { return classes_; }
  const std::vector<std::string>& clips_of(std::size_t class_idx) const {
    return clips_[class_idx];
  }
  bool empty() const { return classes_.empty(); }

 private:
  std::vector<std::string> classes_;
  std::vector<std::vector<std::string>> clips_;
};

// One c-way k-shot task. Episodes carry a single query by default;
// multi-query episodes (a variance-reduction option during training) list
// several queries of the same class.
struct Episode {
  std::size_t way = 0;
  std::size_t shot = 0;
  std::vector<std::vector<std::string>> support;  // way groups of shot clip ids
  std::vector<std::string> queries;               // all of query_class
  std::size_t query_class = 0;                    // index into support groups

  const std::string& query() const { return queries.front(); }
};

// Samples c distinct classes, k support clips each, and n_queries queries
// drawn from the remaining clips of one of those classes. Deterministic
// given rng state.
Episode sample_episode(const EpisodePool& pool, std::size_t way, std::size_t shot,
                       Rng& rng, std::size_t n_queries = 1);

// Normalized features by clip id, with an access log for leakage checks.
class FeatureStore {
 public:
  virtual ~FeatureStore() = default;
  virtual const Tensor<float>& get(const std::string& clip_id) = 0;

  const std::set<std::string>& access_log() const { return accessed_; }
  void clear_access_log() { accessed_.clear(); }

 protected:
  void log_access(const std::string& clip_id) { accessed_.insert(clip_id); }

 private:
  std::set<std::string> accessed_;
};

class MemoryFeatureStore : public FeatureStore {
 public:
  void put(const std::string& clip_id, Tensor<float> features) {
    features_[clip_id] = std::move(features);
  }
  const Tensor<float>& get(const std::string& clip_id) override;

 private:
  std::map<std::string, Tensor<float>> features_;
};

// Reads <dir>/<clip_id>.lmel, applies the fitted normalization, caches.
class DiskFeatureStore : public FeatureStore {
 public:
  DiskFeatureStore(std::string dir, NormStats stats)
      : dir_(std::move(dir)), stats_(std::move(stats)) {}
  const Tensor<float>& get(const std::string& clip_id) override;

 private:
  std::string dir_;
  NormStats stats_;
  std::map<std::string, Tensor<float>> cache_;
};

}  // namespace fewsound

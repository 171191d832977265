#include "fewsound/config.hpp"

#include <fstream>

namespace fewsound {

std::string to_string(HeadKind k) {
  switch (k) {
    case HeadKind::siamese: return "siamese";
    case HeadKind::matching: return "matching";
    case HeadKind::prototypical: return "prototypical";
  }
  return "?";
}

std::string to_string(SimKind k) {
  switch (k) {
    case SimKind::pooled: return "pooled";
    case SimKind::second_order: return "second_order";
    case SimKind::attentional: return "attentional";
  }
  return "?";
}

std::string to_string(Distance d) {
  switch (d) {
    case Distance::inner: return "inner";
    case Distance::cosine: return "cosine";
    case Distance::euclidean: return "euclidean";
  }
  return "?";
}

std::string to_string(Pooling p) { return p == Pooling::avg ? "avg" : "max"; }
std::string to_string(Reduce r) { return r == Reduce::mean ? "mean" : "sum"; }

std::string to_string(AttNorm a) {
  switch (a) {
    case AttNorm::softmax: return "softmax";
    case AttNorm::sigmoid: return "sigmoid";
    case AttNorm::none: return "none";
  }
  return "?";
}

HeadKind head_kind_from_string(const std::string& s) {
  if (s == "siamese") return HeadKind::siamese;
  if (s == "matching") return HeadKind::matching;
  if (s == "prototypical") return HeadKind::prototypical;
  throw ConfigError("unknown head kind '" + s + "' (siamese|matching|prototypical)");
}

SimKind sim_kind_from_string(const std::string& s) {
  if (s == "pooled") return SimKind::pooled;
  if (s == "second_order") return SimKind::second_order;
  if (s == "attentional") return SimKind::attentional;
  throw ConfigError("unknown similarity kind '" + s + "' (pooled|second_order|attentional)");
}

Distance distance_from_string(const std::string& s) {
  if (s == "inner") return Distance::inner;
  if (s == "cosine") return Distance::cosine;
  if (s == "euclidean") return Distance::euclidean;
  throw ConfigError("unknown distance '" + s + "' (inner|cosine|euclidean)");
}

Pooling pooling_from_string(const std::string& s) {
  if (s == "avg") return Pooling::avg;
  if (s == "max") return Pooling::max;
  throw ConfigError("unknown pooling '" + s + "' (avg|max)");
}

Reduce reduce_from_string(const std::string& s) {
  if (s == "mean") return Reduce::mean;
  if (s == "sum") return Reduce::sum;
  throw ConfigError("unknown reduction '" + s + "' (mean|sum)");
}

AttNorm att_norm_from_string(const std::string& s) {
  if (s == "softmax") return AttNorm::softmax;
  if (s == "sigmoid") return AttNorm::sigmoid;
  if (s == "none") return AttNorm::none;
  throw ConfigError("unknown attention normalization '" + s + "' (softmax|sigmoid|none)");
}

Distance default_distance(HeadKind k) {
  // matching networks use cosine; prototypical and the siamese surrogate use
  // negative squared Euclidean
  return k == HeadKind::matching ? Distance::cosine : Distance::euclidean;
}

RunConfig default_config() { return RunConfig{}; }

namespace {

template <typename T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  return j.at(key).get<T>();
}

}  // namespace

RunConfig parse_config(const nlohmann::json& j) {
  RunConfig cfg;
  if (j.contains("data")) {
    const auto& d = j.at("data");
    cfg.data.features_dir = get_or<std::string>(d, "features_dir", "");
    cfg.data.manifest = get_or<std::string>(d, "manifest", "");
    cfg.data.norm_stats = get_or<std::string>(d, "norm_stats", "");
  }
  if (j.contains("split")) {
    const auto& s = j.at("split");
    cfg.split.n_train = get_or<std::size_t>(s, "n_train", cfg.split.n_train);
    cfg.split.n_val = get_or<std::size_t>(s, "n_val", cfg.split.n_val);
    cfg.split.n_test = get_or<std::size_t>(s, "n_test", cfg.split.n_test);
    cfg.split.seed = get_or<std::uint64_t>(s, "seed", cfg.split.seed);
  }
  if (j.contains("backbone")) {
    const auto& b = j.at("backbone");
    cfg.backbone.in_bins = get_or<std::size_t>(b, "in_bins", cfg.backbone.in_bins);
    cfg.backbone.in_frames = get_or<std::size_t>(b, "in_frames", cfg.backbone.in_frames);
    cfg.backbone.channels =
        get_or<std::vector<std::size_t>>(b, "channels", cfg.backbone.channels);
    cfg.backbone.use_batchnorm = get_or<bool>(b, "use_batchnorm", cfg.backbone.use_batchnorm);
    cfg.backbone.att_channels =
        get_or<std::size_t>(b, "att_channels", cfg.backbone.att_channels);
    cfg.backbone.att_norm =
        att_norm_from_string(get_or<std::string>(b, "att_norm", "softmax"));
  }
  if (j.contains("head")) {
    const auto& h = j.at("head");
    cfg.head.head = head_kind_from_string(get_or<std::string>(h, "kind", "prototypical"));
    cfg.head.similarity = sim_kind_from_string(get_or<std::string>(h, "similarity", "pooled"));
    cfg.head.distance = h.contains("distance")
                            ? distance_from_string(h.at("distance").get<std::string>())
                            : default_distance(cfg.head.head);
    cfg.head.pooling = pooling_from_string(get_or<std::string>(h, "pooling", "avg"));
    cfg.head.so_reduce = reduce_from_string(get_or<std::string>(h, "so_reduce", "mean"));
    cfg.head.support_reduce =
        reduce_from_string(get_or<std::string>(h, "support_reduce", "sum"));
  } else {
    cfg.head.distance = default_distance(cfg.head.head);
  }
  if (j.contains("schedule")) {
    const auto& s = j.at("schedule");
    cfg.schedule.lr0 = get_or<double>(s, "lr0", cfg.schedule.lr0);
    cfg.schedule.decay_every = get_or<std::size_t>(s, "decay_every", cfg.schedule.decay_every);
    cfg.schedule.decay_factor = get_or<double>(s, "decay_factor", cfg.schedule.decay_factor);
    cfg.schedule.max_epochs = get_or<std::size_t>(s, "max_epochs", cfg.schedule.max_epochs);
    cfg.schedule.weight_decay = get_or<double>(s, "weight_decay", cfg.schedule.weight_decay);
    cfg.schedule.episodes_per_epoch =
        get_or<std::size_t>(s, "episodes_per_epoch", cfg.schedule.episodes_per_epoch);
    cfg.schedule.episode_batch =
        get_or<std::size_t>(s, "episode_batch", cfg.schedule.episode_batch);
    cfg.schedule.way = get_or<std::size_t>(s, "way", cfg.schedule.way);
    cfg.schedule.shot = get_or<std::size_t>(s, "shot", cfg.schedule.shot);
    cfg.schedule.queries_per_episode =
        get_or<std::size_t>(s, "queries_per_episode", cfg.schedule.queries_per_episode);
    cfg.schedule.seed = get_or<std::uint64_t>(s, "seed", cfg.schedule.seed);
    cfg.schedule.val_episodes =
        get_or<std::size_t>(s, "val_episodes", cfg.schedule.val_episodes);
    cfg.schedule.val_way = get_or<std::size_t>(s, "val_way", cfg.schedule.val_way);
  }
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    cfg.eval.way = get_or<std::size_t>(e, "way", cfg.eval.way);
    cfg.eval.shot = get_or<std::size_t>(e, "shot", cfg.eval.shot);
    cfg.eval.episodes = get_or<std::size_t>(e, "episodes", cfg.eval.episodes);
    cfg.eval.seed = get_or<std::uint64_t>(e, "seed", cfg.eval.seed);
    cfg.eval.section = get_or<std::string>(e, "section", cfg.eval.section);
  }

  // The attentional head requires the attention branch; build it exactly then.
  cfg.backbone.attention = cfg.head.attentional();
  cfg.backbone.validate();
  if (cfg.eval.section != "val" && cfg.eval.section != "test") {
    throw ConfigError("eval.section must be 'val' or 'test', got '" + cfg.eval.section + "'");
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config: " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("invalid JSON in " + path + ": " + e.what());
  }
  return parse_config(j);
}

nlohmann::json config_to_json(const RunConfig& cfg) {
  nlohmann::json j;
  j["data"] = {{"features_dir", cfg.data.features_dir},
               {"manifest", cfg.data.manifest},
               {"norm_stats", cfg.data.norm_stats}};
  j["split"] = {{"n_train", cfg.split.n_train},
                {"n_val", cfg.split.n_val},
                {"n_test", cfg.split.n_test},
                {"seed", cfg.split.seed}};
  j["backbone"] = model_section(cfg)["backbone"];
  j["head"] = model_section(cfg)["head"];
  j["schedule"] = {{"lr0", cfg.schedule.lr0},
                   {"decay_every", cfg.schedule.decay_every},
                   {"decay_factor", cfg.schedule.decay_factor},
                   {"max_epochs", cfg.schedule.max_epochs},
                   {"weight_decay", cfg.schedule.weight_decay},
                   {"episodes_per_epoch", cfg.schedule.episodes_per_epoch},
                   {"episode_batch", cfg.schedule.episode_batch},
                   {"way", cfg.schedule.way},
                   {"shot", cfg.schedule.shot},
                   {"queries_per_episode", cfg.schedule.queries_per_episode},
                   {"seed", cfg.schedule.seed},
                   {"val_episodes", cfg.schedule.val_episodes},
                   {"val_way", cfg.schedule.val_way}};
  j["eval"] = {{"way", cfg.eval.way},
               {"shot", cfg.eval.shot},
               {"episodes", cfg.eval.episodes},
               {"seed", cfg.eval.seed},
               {"section", cfg.eval.section}};
  return j;
}

nlohmann::json model_section(const RunConfig& cfg) {
  nlohmann::json j;
  j["backbone"] = {{"in_bins", cfg.backbone.in_bins},
                   {"in_frames", cfg.backbone.in_frames},
                   {"channels", cfg.backbone.channels},
                   {"use_batchnorm", cfg.backbone.use_batchnorm},
                   {"attention", cfg.backbone.attention},
                   {"att_channels", cfg.backbone.att_channels},
                   {"att_norm", to_string(cfg.backbone.att_norm)}};
  j["head"] = {{"kind", to_string(cfg.head.head)},
               {"similarity", to_string(cfg.head.similarity)},
               {"distance", to_string(cfg.head.distance)},
               {"pooling", to_string(cfg.head.pooling)},
               {"so_reduce", to_string(cfg.head.so_reduce)},
               {"support_reduce", to_string(cfg.head.support_reduce)}};
  return j;
}

Digest256 model_digest(const RunConfig& cfg) {
  // nlohmann::json orders object keys, so dump() is canonical.
  return sha256(model_section(cfg).dump());
}

std::string depth_string(const RunConfig& cfg) {
  const std::string base = std::to_string(cfg.backbone.n_blocks());
  return cfg.backbone.attention ? base + "+1" : base;
}

}  // namespace fewsound

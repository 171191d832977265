#pragma once

#include <string>

#include <json.hpp>

#include "fewsound/backbone.hpp"
#include "fewsound/engine.hpp"
#include "fewsound/sha256.hpp"

namespace fewsound {

struct DataCfg {
  std::string features_dir;
  std::string manifest;
  std::string norm_stats;
};

struct SplitCfg {
  std::size_t n_train = 35;
  std::size_t n_val = 5;
  std::size_t n_test = 10;
  std::uint64_t seed = 1;
};

struct EvalCfg {
  std::size_t way = 5;
  std::size_t shot = 1;
  std::size_t episodes = 600;
  std::uint64_t seed = 97;
  std::string section = "test";  // val | test
};

struct RunConfig {
  DataCfg data;
  SplitCfg split;
  BackboneConfig backbone;
  HeadCfg head;
  TrainSchedule schedule;
  EvalCfg eval;
};

// String forms used in config files, reports and the CLI.
std::string to_string(HeadKind k);
std::string to_string(SimKind k);
std::string to_string(Distance d);
std::string to_string(Pooling p);
std::string to_string(Reduce r);
std::string to_string(AttNorm a);
HeadKind head_kind_from_string(const std::string& s);
SimKind sim_kind_from_string(const std::string& s);
Distance distance_from_string(const std::string& s);
Pooling pooling_from_string(const std::string& s);
Reduce reduce_from_string(const std::string& s);
AttNorm att_norm_from_string(const std::string& s);

// Conventional default distance per head when the config omits it.
Distance default_distance(HeadKind k);

RunConfig default_config();
RunConfig parse_config(const nlohmann::json& j);
RunConfig load_config(const std::string& path);
nlohmann::json config_to_json(const RunConfig& cfg);

// The model-defining section (backbone + head); its SHA-256 is embedded in
// checkpoints so evaluation refuses configurations the parameters were not
// trained with.
nlohmann::json model_section(const RunConfig& cfg);
Digest256 model_digest(const RunConfig& cfg);

// "3" or "3+1" when the attention branch is present.
std::string depth_string(const RunConfig& cfg);

}  // namespace fewsound

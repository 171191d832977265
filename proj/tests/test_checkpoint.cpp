#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "fewsound/checkpoint.hpp"
#include "fewsound/config.hpp"
#include "testutil.hpp"

using namespace fewsound;

namespace {

std::string temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "fewsound_ckpt_tests";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

BackboneConfig small_cfg() {
  BackboneConfig cfg;
  cfg.in_bins = 8;
  cfg.in_frames = 12;
  cfg.channels = {3, 5};
  cfg.attention = true;
  cfg.att_channels = 2;
  return cfg;
}

}  // namespace

TEST_CASE("sha256: known vectors") {
  CHECK(to_hex(sha256(std::string(""))) ==
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(to_hex(sha256(std::string("abc"))) ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("checkpoint: save/load round trip is bit exact") {
  Model<float> model(small_cfg(), 77);
  // make running stats non-trivial
  Rng rng(5);
  for (std::size_t i = 0; i < model.n_bn_states(); ++i) {
    for (auto& v : model.bn_state(i).running_mean.data)
      v = static_cast<float>(rng.uniform(-1, 1));
    for (auto& v : model.bn_state(i).running_var.data)
      v = static_cast<float>(rng.uniform(0.5, 2.0));
  }
  const Digest256 digest = sha256(std::string("model-config"));
  const std::string path = temp_path("roundtrip.fsam");
  save_checkpoint(path, model, digest);

  Model<float> loaded(small_cfg(), 999);  // different init
  const Digest256 stored = load_checkpoint(path, loaded, &digest);
  CHECK(stored == digest);
  for (std::size_t i = 0; i < model.n_params(); ++i) {
    CHECK(loaded.param(i).data == model.param(i).data);
  }
  for (std::size_t i = 0; i < model.n_bn_states(); ++i) {
    CHECK(loaded.bn_state(i).running_mean.data == model.bn_state(i).running_mean.data);
    CHECK(loaded.bn_state(i).running_var.data == model.bn_state(i).running_var.data);
    CHECK(loaded.bn_state(i).initialized);
  }
}

TEST_CASE("checkpoint: header bytes are magic, version, digest") {
  Model<float> model(small_cfg(), 1);
  Digest256 digest{};
  for (std::size_t i = 0; i < 32; ++i) digest[i] = static_cast<std::uint8_t>(i);
  const std::string path = temp_path("header.fsam");
  save_checkpoint(path, model, digest);

  std::ifstream f(path, std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
  REQUIRE(bytes.size() > 40);
  CHECK(bytes[0] == 'F');
  CHECK(bytes[1] == 'S');
  CHECK(bytes[2] == 'A');
  CHECK(bytes[3] == 'M');
  CHECK(bytes[4] == 1);  // version u32 little-endian
  CHECK(bytes[5] == 0);
  CHECK(bytes[6] == 0);
  CHECK(bytes[7] == 0);
  for (std::size_t i = 0; i < 32; ++i) CHECK(bytes[8 + i] == i);
  // first record: name length u16 then the name
  const std::size_t name_len = bytes[40] | (bytes[41] << 8);
  const std::string name(bytes.begin() + 42, bytes.begin() + 42 + name_len);
  CHECK(name == "block0.conv.weight");
}

TEST_CASE("checkpoint: bad magic and digest mismatch are refused") {
  const std::string garbage = temp_path("garbage.fsam");
  std::ofstream(garbage) << "not a checkpoint";
  Model<float> model(small_cfg(), 2);
  CHECK_THROWS_AS(load_checkpoint(garbage, model, nullptr), DataError);

  const std::string path = temp_path("digest.fsam");
  const Digest256 trained = sha256(std::string("trained-with"));
  save_checkpoint(path, model, trained);
  const Digest256 other = sha256(std::string("evaluated-with"));
  try {
    load_checkpoint(path, model, &other);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("digest mismatch") != std::string::npos);
  }
  // without an expectation the digest is simply returned
  CHECK(load_checkpoint(path, model, nullptr) == trained);
}

TEST_CASE("checkpoint: wrong architecture is refused") {
  Model<float> model(small_cfg(), 3);
  const std::string path = temp_path("arch.fsam");
  save_checkpoint(path, model, Digest256{});

  BackboneConfig bigger = small_cfg();
  bigger.channels = {3, 7};
  Model<float> other(bigger, 3);
  CHECK_THROWS_AS(load_checkpoint(path, other, nullptr), DataError);
}

TEST_CASE("model digest covers the model section and ignores eval settings") {
  RunConfig a;
  RunConfig b = a;
  b.eval.episodes = 50;
  b.schedule.seed = 12345;
  CHECK(model_digest(a) == model_digest(b));
  RunConfig c = a;
  c.head.distance = Distance::cosine;
  CHECK(model_digest(a) != model_digest(c));
  RunConfig d = a;
  d.backbone.channels = {32, 64};
  CHECK(model_digest(a) != model_digest(d));
}

TEST_CASE("config: JSON round trip preserves the run configuration") {
  RunConfig cfg;
  cfg.head.head = HeadKind::matching;
  cfg.head.similarity = SimKind::attentional;
  cfg.head.distance = Distance::cosine;
  cfg.backbone.channels = {8, 16};
  cfg.backbone.attention = true;
  cfg.schedule.max_epochs = 17;
  cfg.eval.way = 10;
  const RunConfig back = parse_config(config_to_json(cfg));
  CHECK(back.head.head == HeadKind::matching);
  CHECK(back.head.similarity == SimKind::attentional);
  CHECK(back.backbone.attention);
  CHECK(back.backbone.channels == std::vector<std::size_t>{8, 16});
  CHECK(back.schedule.max_epochs == 17);
  CHECK(back.eval.way == 10);
  CHECK(model_digest(back) == model_digest(cfg));
}

TEST_CASE("config: omitted distance defaults per head") {
  nlohmann::json j;
  j["head"] = {{"kind", "matching"}, {"similarity", "pooled"}};
  CHECK(parse_config(j).head.distance == Distance::cosine);
  j["head"]["kind"] = "prototypical";
  CHECK(parse_config(j).head.distance == Distance::euclidean);
  j["head"]["kind"] = "siamese";
  CHECK(parse_config(j).head.distance == Distance::euclidean);
}

TEST_CASE("config: attentional similarity implies the attention branch") {
  nlohmann::json j;
  j["head"] = {{"kind", "prototypical"}, {"similarity", "attentional"}};
  const RunConfig cfg = parse_config(j);
  CHECK(cfg.backbone.attention);
  CHECK(cfg.head.attentional());
  CHECK(depth_string(cfg) == "3+1");
  j["head"]["similarity"] = "pooled";
  CHECK(depth_string(parse_config(j)) == "3");
}

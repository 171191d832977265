#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "fewsound/engine.hpp"
#include "testutil.hpp"

using namespace fewsound;
using testutil::random_tensor;

namespace {

constexpr std::size_t kBins = 8;
constexpr std::size_t kFrames = 20;

// Separable synthetic features: each class drives one bin with a short
// high-energy burst at a random offset, on a noisy background.
Tensor<float> toy_feature(std::size_t class_idx, std::size_t clip_idx, std::uint64_t seed) {
  Rng rng = Rng(seed).derive(class_idx * 7919 + clip_idx);
  Tensor<float> t({kBins, kFrames});
  for (auto& v : t.data) v = static_cast<float>(0.3 * rng.gaussian());
  const std::size_t bin = class_idx % kBins;
  const std::size_t len = 4 + rng.below(4);
  const std::size_t off = rng.below(kFrames - len + 1);
  for (std::size_t f = off; f < off + len; ++f) {
    t.at(bin, f) += 2.0f;
  }
  return t;
}

struct ToyTask {
  std::vector<ManifestRow> manifest;
  MemoryFeatureStore store;
  ClassSplit split;
};

ToyTask make_toy_task(std::size_t n_train, std::size_t n_test, std::size_t per_class,
                      std::uint64_t seed) {
  ToyTask task;
  const std::size_t total = n_train + n_test;
  for (std::size_t c = 0; c < total; ++c) {
    const std::string label = "class" + std::to_string(c);
    const std::string section = c < n_train ? "train" : "test";
    (c < n_train ? task.split.train : task.split.test).push_back(label);
    for (std::size_t i = 0; i < per_class; ++i) {
      const std::string id = "c" + std::to_string(c) + "_" + std::to_string(i);
      task.manifest.push_back({id, label, section});
      task.store.put(id, toy_feature(c, i, seed));
    }
  }
  return task;
}

BackboneConfig tiny_backbone(bool attention) {
  BackboneConfig cfg;
  cfg.in_bins = kBins;
  cfg.in_frames = kFrames;
  cfg.channels = {6};
  cfg.attention = attention;
  cfg.att_channels = 4;
  return cfg;
}

TrainSchedule quick_schedule(std::size_t epochs, std::size_t episodes) {
  TrainSchedule s;
  s.max_epochs = epochs;
  s.episodes_per_epoch = episodes;
  s.episode_batch = 8;
  s.way = 3;
  s.shot = 1;
  s.seed = 11;
  s.val_episodes = 0;
  return s;
}

std::vector<float> flatten_params(Model<float>& m) {
  std::vector<float> out;
  for (std::size_t i = 0; i < m.n_params(); ++i) {
    out.insert(out.end(), m.param(i).data.begin(), m.param(i).data.end());
  }
  for (std::size_t i = 0; i < m.n_bn_states(); ++i) {
    const auto& st = m.bn_state(i);
    out.insert(out.end(), st.running_mean.data.begin(), st.running_mean.data.end());
    out.insert(out.end(), st.running_var.data.begin(), st.running_var.data.end());
  }
  return out;
}

}  // namespace

TEST_CASE("lr schedule: 0.01 divided by 10 every 20 epochs") {
  TrainSchedule s;
  CHECK(lr_at(s, 0) == doctest::Approx(0.01));
  CHECK(lr_at(s, 19) == doctest::Approx(0.01));
  CHECK(lr_at(s, 20) == doctest::Approx(0.001));
  CHECK(lr_at(s, 40) == doctest::Approx(0.0001));
  CHECK(lr_at(s, 59) == doctest::Approx(0.0001));
}

TEST_CASE("episode loss: uniform scores over 5 classes give ln 5") {
  Tape<double> t;
  auto scores = t.constant(Tensor<double>({5}, 0.7));
  const double loss = cross_entropy_logits(scores, 2).val().data[0];
  CHECK(loss == doctest::Approx(std::log(5.0)).epsilon(1e-9));
}

TEST_CASE("episode loss: dominating true score drives loss to zero") {
  Tape<double> t;
  Tensor<double> s({4});
  s.data = {0.0, 50.0, 0.0, 0.0};
  CHECK(cross_entropy_logits(t.constant(s), 1).val().data[0] <= 1e-20);
}

TEST_CASE("episode loss: matches direct float64 -log softmax") {
  Rng rng(5);
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t c = 2 + rng.below(9);
    auto s = random_tensor<double>({c}, rng, -5.0, 5.0);
    const std::size_t y = rng.below(c);
    Tape<double> t;
    const double loss = cross_entropy_logits(t.constant(s), y).val().data[0];
    double mx = s.data[0];
    for (const double v : s.data) mx = std::max(mx, v);
    double denom = 0.0;
    for (const double v : s.data) denom += std::exp(v - mx);
    const double expect = -std::log(std::exp(s.data[y] - mx) / denom);
    CHECK(loss == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("episode loss: gradient equals softmax minus onehot within 1e-6") {
  Rng rng(6);
  auto s = random_tensor<double>({5}, rng, -2.0, 2.0);
  s.requires_grad = true;
  Tape<double> t;
  auto vs = t.leaf_ref(&s, true);
  t.backward(cross_entropy_logits(vs, 3));
  double mx = s.data[0];
  for (const double v : s.data) mx = std::max(mx, v);
  double denom = 0.0;
  for (const double v : s.data) denom += std::exp(v - mx);
  for (std::size_t i = 0; i < 5; ++i) {
    const double soft = std::exp(s.data[i] - mx) / denom;
    CHECK(std::abs(t.grad(vs).data[i] - (soft - (i == 3 ? 1.0 : 0.0))) <= 1e-6);
  }
}

TEST_CASE("episode loss: adding a constant to all scores changes nothing") {
  Rng rng(7);
  auto s = random_tensor<double>({6}, rng, -3.0, 3.0);
  Tensor<double> shifted = s;
  for (auto& v : shifted.data) v += 17.5;
  Tape<double> t;
  const double a = cross_entropy_logits(t.constant(s), 4).val().data[0];
  const double b = cross_entropy_logits(t.constant(shifted), 4).val().data[0];
  CHECK(std::abs(a - b) <= 1e-6);
  CHECK(argmax_index(s) == argmax_index(shifted));
}

TEST_CASE("episode scores: k=1 prototypical and matching coincide") {
  ToyTask task = make_toy_task(4, 0, 6, 21);
  Model<float> model(tiny_backbone(false), 3);
  EpisodePool pool(task.manifest, task.split.train);
  Rng rng(8);
  for (Distance d : {Distance::inner, Distance::euclidean, Distance::cosine}) {
    Episode ep = sample_episode(pool, 3, 1, rng);
    EpisodeBatch<float> batch;
    batch.way = 3;
    batch.shot = 1;
    batch.query_class = ep.query_class;
    for (const auto& g : ep.support) batch.clips.push_back(&task.store.get(g[0]));
    batch.clips.push_back(&task.store.get(ep.query()));

    HeadCfg proto{HeadKind::prototypical, SimKind::pooled, d, Pooling::avg, Reduce::mean,
                  Reduce::sum};
    HeadCfg match = proto;
    match.head = HeadKind::matching;

    Tape<float> t1;
    auto b1 = model.bind(t1, false);
    auto s1 = episode_scores(t1, model, b1, batch, proto, Mode::eval);
    Tape<float> t2;
    auto b2 = model.bind(t2, false);
    auto s2 = episode_scores(t2, model, b2, batch, match, Mode::eval);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(std::abs(s1.val().data[i] - s2.val().data[i]) <= 1e-6f);
    }
  }
}

TEST_CASE("episode scores: identical query and support clip wins with distance 0") {
  ToyTask task = make_toy_task(3, 0, 4, 22);
  // clone one support clip's content under the query id
  task.store.put("query_twin", toy_feature(1, 0, 22));
  Model<float> model(tiny_backbone(false), 4);

  EpisodeBatch<float> batch;
  batch.way = 3;
  batch.shot = 1;
  batch.query_class = 1;
  batch.clips = {&task.store.get("c0_0"), &task.store.get("c1_0"),
                 &task.store.get("c2_0"), &task.store.get("query_twin")};
  HeadCfg head{HeadKind::prototypical, SimKind::pooled, Distance::euclidean, Pooling::avg,
               Reduce::mean, Reduce::sum};
  Tape<float> t;
  auto bind = model.bind(t, false);
  auto scores = episode_scores(t, model, bind, batch, head, Mode::eval);
  CHECK(scores.val().data[1] == 0.0f);
  CHECK(scores.val().data[0] < 0.0f);
  CHECK(scores.val().data[2] < 0.0f);
}

TEST_CASE("episode scores: matches a pairwise enumeration oracle") {
  ToyTask task = make_toy_task(3, 0, 5, 23);
  Model<float> model(tiny_backbone(false), 5);
  HeadCfg head{HeadKind::matching, SimKind::pooled, Distance::inner, Pooling::avg,
               Reduce::mean, Reduce::sum};

  EpisodeBatch<float> batch;
  batch.way = 3;
  batch.shot = 2;
  batch.query_class = 2;
  std::vector<std::string> ids = {"c0_0", "c0_1", "c1_0", "c1_3", "c2_0", "c2_1", "c2_4"};
  for (const auto& id : ids) batch.clips.push_back(&task.store.get(id));

  Tape<float> t;
  auto bind = model.bind(t, false);
  auto scores = episode_scores(t, model, bind, batch, head, Mode::eval);

  // Oracle: per-pair dot of time-averaged embeddings, summed per class.
  auto pooled_embedding = [&](const std::string& id) {
    const Tensor<float> fm = model.embed_one(task.store.get(id), Mode::eval);
    std::vector<double> v(fm.shape[0], 0.0);
    for (std::size_t m = 0; m < fm.shape[0]; ++m) {
      for (std::size_t f = 0; f < fm.shape[1]; ++f) v[m] += fm.at(m, f);
      v[m] /= static_cast<double>(fm.shape[1]);
    }
    return v;
  };
  const auto q = pooled_embedding("c2_4");
  for (std::size_t c = 0; c < 3; ++c) {
    double expect = 0.0;
    for (std::size_t k = 0; k < 2; ++k) {
      const auto s = pooled_embedding(ids[c * 2 + k]);
      for (std::size_t m = 0; m < q.size(); ++m) expect += q[m] * s[m];
    }
    CHECK(scores.val().data[c] == doctest::Approx(expect).epsilon(1e-4));
  }
}

TEST_CASE("train: zero learning rate leaves parameters bit-identical") {
  ToyTask task = make_toy_task(4, 2, 6, 24);
  Model<float> model(tiny_backbone(false), 6);
  const std::vector<float> before = flatten_params(model);
  TrainSchedule sched = quick_schedule(2, 16);
  sched.lr0 = 0.0;
  sched.weight_decay = 0.0;
  HeadCfg head;
  const TrainResult result =
      train(model, sched, task.split, head, task.manifest, task.store, nullptr);
  Model<float> after = result.best;
  // running statistics do move; trainable parameters must not
  for (std::size_t i = 0; i < after.n_params(); ++i) {
    CHECK(after.param(i).data == model.param(i).data);
  }
  (void)before;
}

TEST_CASE("train: same seed and config give bit-identical results") {
  ToyTask task1 = make_toy_task(4, 2, 6, 25);
  ToyTask task2 = make_toy_task(4, 2, 6, 25);
  HeadCfg head;
  TrainSchedule sched = quick_schedule(2, 24);
  TrainResult a = train(Model<float>(tiny_backbone(false), 7), sched, task1.split, head,
                        task1.manifest, task1.store, nullptr);
  TrainResult b = train(Model<float>(tiny_backbone(false), 7), sched, task2.split, head,
                        task2.manifest, task2.store, nullptr);
  CHECK(flatten_params(a.best) == flatten_params(b.best));
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].train_loss == b.history[i].train_loss);
  }
}

TEST_CASE("train: loss trends down on the separable toy task") {
  ToyTask task = make_toy_task(6, 2, 10, 26);
  HeadCfg head;
  TrainSchedule sched = quick_schedule(10, 80);
  sched.lr0 = 0.05;
  std::ostringstream log;
  const TrainResult result = train(Model<float>(tiny_backbone(false), 8), sched,
                                   task.split, head, task.manifest, task.store, &log);
  REQUIRE(result.history.size() == 10);
  auto mean3 = [&](std::size_t from) {
    return (result.history[from].train_loss + result.history[from + 1].train_loss +
            result.history[from + 2].train_loss) /
           3.0;
  };
  CHECK(mean3(7) < mean3(0));  // epoch-averaged trend over the run
  CHECK(log.str().find("train_loss") != std::string::npos);
}

TEST_CASE("train: multi-query episodes are supported and deterministic") {
  ToyTask task1 = make_toy_task(4, 0, 8, 33);
  ToyTask task2 = make_toy_task(4, 0, 8, 33);
  HeadCfg head;
  TrainSchedule sched = quick_schedule(2, 12);
  sched.queries_per_episode = 3;
  TrainResult a = train(Model<float>(tiny_backbone(false), 14), sched, task1.split, head,
                        task1.manifest, task1.store, nullptr);
  TrainResult b = train(Model<float>(tiny_backbone(false), 14), sched, task2.split, head,
                        task2.manifest, task2.store, nullptr);
  CHECK(flatten_params(a.best) == flatten_params(b.best));
  CHECK(std::isfinite(a.history.back().train_loss));
}

TEST_CASE("train: non-finite loss aborts with epoch and seed diagnostics") {
  ToyTask task = make_toy_task(3, 0, 4, 27);
  Tensor<float> bomb({kBins, kFrames}, 1e30f);  // overflows the first conv
  for (std::size_t i = 0; i < 4; ++i) {
    task.store.put("c0_" + std::to_string(i), bomb);
  }
  HeadCfg head;
  TrainSchedule sched = quick_schedule(1, 8);
  try {
    train(Model<float>(tiny_backbone(false), 9), sched, task.split, head, task.manifest,
          task.store, nullptr);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("epoch 0") != std::string::npos);
    CHECK(msg.find("seed") != std::string::npos);
  }
}

TEST_CASE("train: never touches test-class clips (access log)") {
  ToyTask task = make_toy_task(4, 3, 6, 28);
  HeadCfg head;
  TrainSchedule sched = quick_schedule(2, 20);
  sched.val_episodes = 0;
  train(Model<float>(tiny_backbone(false), 10), sched, task.split, head, task.manifest,
        task.store, nullptr);
  std::size_t train_hits = 0;
  for (const auto& row : task.manifest) {
    if (row.split == "test") {
      CHECK(task.store.access_log().count(row.clip_id) == 0);
    } else if (task.store.access_log().count(row.clip_id)) {
      ++train_hits;
    }
  }
  CHECK(train_hits > 0);  // positive control
}

TEST_CASE("evaluate: untrained model scores at chance, deterministically") {
  // Chance control needs label-independent features: a random embedding of
  // separable inputs is still separable, so the task data here is pure noise.
  ToyTask task;
  Rng noise(29);
  for (std::size_t c = 0; c < 8; ++c) {
    const std::string label = "class" + std::to_string(c);
    task.split.test.push_back(label);
    for (std::size_t i = 0; i < 10; ++i) {
      const std::string id = "c" + std::to_string(c) + "_" + std::to_string(i);
      task.manifest.push_back({id, label, "test"});
      Tensor<float> t({kBins, kFrames});
      for (auto& v : t.data) v = static_cast<float>(noise.gaussian());
      task.store.put(id, t);
    }
  }
  Model<float> model(tiny_backbone(false), 11);
  EpisodePool pool(task.manifest, task.split.test);
  HeadCfg head;
  const EvalResult a = evaluate(model, head, pool, task.store, 5, 1, 600, 777);
  const EvalResult b = evaluate(model, head, pool, task.store, 5, 1, 600, 777);
  CHECK(a.accuracy == b.accuracy);  // identical to all digits
  CHECK(std::abs(a.accuracy - 0.2) <= 0.05);
  CHECK(a.ci95 == doctest::Approx(1.96 * std::sqrt(a.accuracy * (1 - a.accuracy) / 600.0)));
  const EvalResult c = evaluate(model, head, pool, task.store, 5, 1, 600, 778);
  CHECK(c.accuracy != a.accuracy);  // different seed, different episodes
}

TEST_CASE("attentional head on a non-attentional model is a config error") {
  ToyTask task = make_toy_task(3, 0, 4, 30);
  Model<float> model(tiny_backbone(false), 12);
  HeadCfg head;
  head.similarity = SimKind::attentional;
  EpisodeBatch<float> batch;
  batch.way = 3;
  batch.shot = 1;
  batch.query_class = 0;
  batch.clips = {&task.store.get("c0_0"), &task.store.get("c1_0"),
                 &task.store.get("c2_0"), &task.store.get("c0_1")};
  Tape<float> t;
  auto bind = model.bind(t, false);
  CHECK_THROWS_AS(episode_scores(t, model, bind, batch, head, Mode::eval), ConfigError);
}

TEST_CASE("attentional episode scores run end to end on all heads") {
  ToyTask task = make_toy_task(4, 0, 5, 31);
  Model<float> model(tiny_backbone(true), 13);
  EpisodePool pool(task.manifest, task.split.train);
  Rng rng(14);
  Episode ep = sample_episode(pool, 3, 2, rng);
  EpisodeBatch<float> batch;
  batch.way = 3;
  batch.shot = 2;
  batch.query_class = ep.query_class;
  for (const auto& g : ep.support)
    for (const auto& id : g) batch.clips.push_back(&task.store.get(id));
  batch.clips.push_back(&task.store.get(ep.query()));

  for (HeadKind kind : {HeadKind::prototypical, HeadKind::matching, HeadKind::siamese}) {
    HeadCfg head;
    head.head = kind;
    head.similarity = SimKind::attentional;
    head.distance = Distance::inner;
    Tape<float> t;
    auto bind = model.bind(t, false);
    auto scores = episode_scores(t, model, bind, batch, head, Mode::eval);
    CHECK(scores.shape() == std::vector<std::size_t>{3});
    for (float v : scores.val().data) CHECK(std::isfinite(v));
  }
}
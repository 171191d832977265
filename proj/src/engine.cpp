#include "fewsound/engine.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

namespace fewsound {

double lr_at(const TrainSchedule& sched, std::size_t epoch) {
  return sched.lr0 / std::pow(sched.decay_factor,
                              static_cast<double>(epoch / sched.decay_every));
}

namespace {

EpisodeBatch<float> fetch_episode(const Episode& ep, FeatureStore& store) {
  EpisodeBatch<float> batch;
  batch.way = ep.way;
  batch.shot = ep.shot;
  batch.n_queries = ep.queries.size();
  batch.query_class = ep.query_class;
  for (const auto& group : ep.support)
    for (const auto& id : group) batch.clips.push_back(&store.get(id));
  for (const auto& id : ep.queries) batch.clips.push_back(&store.get(id));
  return batch;
}

}  // namespace

TrainResult train(Model<float> model, const TrainSchedule& sched, const ClassSplit& split,
                  const HeadCfg& head, const std::vector<ManifestRow>& manifest,
                  FeatureStore& store, std::ostream* log) {
  if (split.train.empty()) throw ConfigError("train: no training classes");
  const EpisodePool train_pool(manifest, split.train);
  const EpisodePool val_pool(manifest, split.val);
  const bool use_val = !val_pool.empty() && sched.val_episodes > 0;

  const Rng root(sched.seed);
  TrainResult result{model, 0, {}};
  double best_acc = -1.0;

  for (std::size_t epoch = 0; epoch < sched.max_epochs; ++epoch) {
    const double lr = lr_at(sched, epoch);
    Rng ep_rng = root.derive(0xe70000 + epoch);

    double loss_sum = 0.0;
    std::size_t done = 0;
    while (done < sched.episodes_per_epoch) {
      const std::size_t batch_n =
          std::min(sched.episode_batch, sched.episodes_per_epoch - done);
      std::vector<EpisodeBatch<float>> episodes;
      episodes.reserve(batch_n);
      for (std::size_t i = 0; i < batch_n; ++i) {
        episodes.push_back(fetch_episode(
            sample_episode(train_pool, sched.way, sched.shot, ep_rng,
                           sched.queries_per_episode),
            store));
      }

      try {
        Tape<float> tape;
        auto bind = model.bind(tape, true);
        auto scores = score_minibatch(tape, model, bind, episodes, head, Mode::train);
        std::vector<Value<float>> losses;
        losses.reserve(scores.size());
        std::size_t flat = 0;
        for (const auto& ep : episodes) {
          for (std::size_t q = 0; q < ep.n_queries; ++q, ++flat) {
            losses.push_back(cross_entropy_logits(scores[flat], ep.query_class));
          }
        }
        Value<float> batch_loss = mean_all(stack_scalars(losses));
        const float loss_value = batch_loss.val().data[0];
        if (!std::isfinite(loss_value)) {
          throw NumericError("non-finite batch loss");
        }
        loss_sum += static_cast<double>(loss_value) * static_cast<double>(batch_n);

        tape.backward(batch_loss);
        const float flr = static_cast<float>(lr);
        const float wd = static_cast<float>(sched.weight_decay);
        for (std::size_t i = 0; i < model.n_params(); ++i) {
          if (!tape.has_grad(bind.params[i])) continue;
          const auto& g = tape.grad(bind.params[i]).data;
          auto& p = model.param(i).data;
          for (std::size_t k = 0; k < p.size(); ++k) {
            p[k] -= flr * (g[k] + wd * p[k]);
          }
        }
      } catch (const NumericError& e) {
        throw NumericError("training aborted at epoch " + std::to_string(epoch) +
                           ", episode " + std::to_string(done) + " (seed " +
                           std::to_string(sched.seed) + "): " + e.what());
      }
      done += batch_n;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = loss_sum / static_cast<double>(sched.episodes_per_epoch);
    if (use_val) {
      const std::size_t vway = std::min(sched.val_way, val_pool.n_classes());
      const EvalResult val =
          evaluate(model, head, val_pool, store, vway, sched.shot, sched.val_episodes,
                   root.derive(0xa10000 + epoch).seed());
      rec.val_accuracy = val.accuracy;
      if (val.accuracy > best_acc) {
        best_acc = val.accuracy;
        result.best = model;
        result.best_epoch = epoch;
      }
    }
    result.history.push_back(rec);
    if (log) {
      std::ostringstream line;
      line << "{\"epoch\":" << rec.epoch << ",\"lr\":" << rec.lr
           << ",\"train_loss\":" << rec.train_loss;
      if (use_val) line << ",\"val_accuracy\":" << rec.val_accuracy;
      line << "}";
      (*log) << line.str() << '\n';
      log->flush();
    }
  }

  if (!use_val) {
    result.best = model;  // no validation: keep the final parameters
    result.best_epoch = sched.max_epochs == 0 ? 0 : sched.max_epochs - 1;
  }
  return result;
}

EvalResult evaluate(Model<float>& model, const HeadCfg& head, const EpisodePool& pool,
                    FeatureStore& store, std::size_t way, std::size_t shot,
                    std::size_t n_episodes, std::uint64_t seed) {
  if (n_episodes == 0) throw ConfigError("evaluate: n_episodes must be positive");
  const Rng root(seed);
  std::size_t correct = 0;
  for (std::size_t e = 0; e < n_episodes; ++e) {
    Rng rng = root.derive(e + 1);
    const Episode ep = sample_episode(pool, way, shot, rng);
    const EpisodeBatch<float> batch = fetch_episode(ep, store);
    Tape<float> tape;
    auto bind = model.bind(tape, false);
    Value<float> scores = episode_scores(tape, model, bind, batch, head, Mode::eval);
    if (argmax_index(scores.val()) == ep.query_class) ++correct;
  }
  EvalResult result;
  result.episodes = n_episodes;
  result.accuracy = static_cast<double>(correct) / static_cast<double>(n_episodes);
  result.ci95 =
      1.96 * std::sqrt(result.accuracy * (1.0 - result.accuracy) /
                       static_cast<double>(n_episodes));
  return result;
}

}  // namespace fewsound

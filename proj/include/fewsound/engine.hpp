#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "fewsound/backbone.hpp"
#include "fewsound/episode.hpp"
#include "fewsound/similarity.hpp"

namespace fewsound {

// Aggregation order distinguishes the heads: prototypical averages support
// representations before the distance, matching and siamese aggregate
// per-support distances after.
enum class HeadKind { siamese, matching, prototypical };
enum class SimKind { pooled, second_order, attentional };

struct HeadCfg {
  HeadKind head = HeadKind::prototypical;
  SimKind similarity = SimKind::pooled;
  Distance distance = Distance::euclidean;
  Pooling pooling = Pooling::avg;
  Reduce so_reduce = Reduce::mean;       // second-order matrix -> scalar
  Reduce support_reduce = Reduce::sum;   // per-class aggregation for matching/siamese

  bool attentional() const { return similarity == SimKind::attentional; }
};

// Clip features of one episode: way*shot supports (grouped by class), then
// n_queries query clips last, all of query_class.
template <typename T>
struct EpisodeBatch {
  std::size_t way = 0;
  std::size_t shot = 0;
  std::size_t n_queries = 1;
  std::size_t query_class = 0;
  std::vector<const Tensor<T>*> clips;
};

namespace detail {

template <typename T>
Value<T> class_score(const std::vector<Value<T>>& reps, Value<T> query_rep,
                     const HeadCfg& head) {
  if (head.head == HeadKind::prototypical) {
    return distance(query_rep, mean_stack(reps), head.distance);
  }
  std::vector<Value<T>> sims;
  sims.reserve(reps.size());
  for (const auto& r : reps) sims.push_back(distance(query_rep, r, head.distance));
  Value<T> total = sims[0];
  for (std::size_t i = 1; i < sims.size(); ++i) total = add(total, sims[i]);
  if (head.support_reduce == Reduce::mean && sims.size() > 1) {
    total = scale(total, T(1) / static_cast<T>(sims.size()));
  }
  return total;
}

}  // namespace detail

// Scores a mini-batch of episodes with one joint forward pass, so batchnorm
// statistics in train mode cover every clip of the mini-batch. Returns one
// score vector [way] per (episode, query) pair, episode-major.
template <typename T>
std::vector<Value<T>> score_minibatch(Tape<T>& tape, Model<T>& model,
                                      const typename Model<T>::Binding& bind,
                                      const std::vector<EpisodeBatch<T>>& episodes,
                                      const HeadCfg& head, Mode mode) {
  if (episodes.empty()) throw ConfigError("score_minibatch: no episodes");
  if (head.attentional() && !model.config().attention) {
    throw ConfigError("score_minibatch: attentional head needs a model with an "
                      "attention branch");
  }

  std::size_t total = 0;
  const auto& first = *episodes[0].clips[0];
  for (const auto& ep : episodes) {
    if (ep.n_queries == 0 || ep.clips.size() != ep.way * ep.shot + ep.n_queries) {
      throw ShapeError("score_minibatch: episode with " + std::to_string(ep.clips.size()) +
                       " clips, expected way*shot+n_queries");
    }
    for (const auto* c : ep.clips) {
      if (c->shape != first.shape) {
        throw ShapeError("score_minibatch: clip shape " + shape_str(c->shape) +
                         " differs from " + shape_str(first.shape) +
                         "; batched episodes need equal-length features");
      }
      ++total;
    }
  }

  Tensor<T> batch({total, 1, first.shape[0], first.shape[1]});
  std::size_t row = 0;
  for (const auto& ep : episodes) {
    for (const auto* c : ep.clips) {
      std::copy(c->data.begin(), c->data.end(),
                batch.data.begin() + row * c->numel());
      ++row;
    }
  }

  Value<T> maps = model.embed_batch(bind, tape.constant(std::move(batch)), mode);
  Value<T> atts;  // invalid unless attentional
  if (head.attentional()) atts = model.attend_batch(bind, maps, mode);

  std::vector<Value<T>> out;
  out.reserve(episodes.size());
  std::size_t base = 0;
  for (const auto& ep : episodes) {
    const std::size_t n = ep.clips.size();

    // Per-clip representation: attentional vector, pooled vector, or the raw
    // feature map for the second-order head.
    std::vector<Value<T>> reps(n);
    for (std::size_t i = 0; i < n; ++i) {
      Value<T> map_i = slice0(maps, base + i);
      switch (head.similarity) {
        case SimKind::attentional:
          reps[i] = matvec(map_i, slice0(atts, base + i));
          break;
        case SimKind::pooled:
          reps[i] = pool(map_i, head.pooling);
          break;
        case SimKind::second_order:
          reps[i] = map_i;
          break;
      }
    }

    for (std::size_t q = 0; q < ep.n_queries; ++q) {
      const Value<T> query_rep = reps[ep.way * ep.shot + q];
      std::vector<Value<T>> scores;
      scores.reserve(ep.way);
      for (std::size_t c = 0; c < ep.way; ++c) {
        std::vector<Value<T>> class_reps(reps.begin() + c * ep.shot,
                                         reps.begin() + (c + 1) * ep.shot);
        if (head.similarity == SimKind::second_order) {
          if (head.head == HeadKind::prototypical) {
            Value<T> proto = mean_stack(class_reps);
            scores.push_back(
                reduce_second_order(sim_second_order(query_rep, proto), head.so_reduce));
          } else {
            Value<T> sum;
            for (std::size_t j = 0; j < class_reps.size(); ++j) {
              Value<T> s = reduce_second_order(sim_second_order(query_rep, class_reps[j]),
                                               head.so_reduce);
              sum = j == 0 ? s : add(sum, s);
            }
            if (head.support_reduce == Reduce::mean && class_reps.size() > 1) {
              sum = scale(sum, T(1) / static_cast<T>(class_reps.size()));
            }
            scores.push_back(sum);
          }
        } else {
          scores.push_back(detail::class_score(class_reps, query_rep, head));
        }
      }
      out.push_back(stack_scalars(scores));
    }
    base += n;
  }
  return out;
}

// Convenience wrapper for a single-query episode.
template <typename T>
Value<T> episode_scores(Tape<T>& tape, Model<T>& model,
                        const typename Model<T>::Binding& bind,
                        const EpisodeBatch<T>& episode, const HeadCfg& head, Mode mode) {
  if (episode.n_queries != 1) {
    throw ConfigError("episode_scores: expects a single-query episode");
  }
  return score_minibatch(tape, model, bind, std::vector<EpisodeBatch<T>>{episode}, head,
                         mode)[0];
}

// SGD with step decay: lr0 / decay_factor^(epoch / decay_every).
struct TrainSchedule {
  double lr0 = 0.01;
  std::size_t decay_every = 20;
  double decay_factor = 10.0;
  std::size_t max_epochs = 60;
  double weight_decay = 1e-4;
  std::size_t episodes_per_epoch = 400;
  std::size_t episode_batch = 16;
  std::size_t way = 5;
  std::size_t shot = 1;
  std::size_t queries_per_episode = 1;  // > 1 reduces gradient variance
  std::uint64_t seed = 1;
  std::size_t val_episodes = 100;  // 0 disables validation
  std::size_t val_way = 5;
};

double lr_at(const TrainSchedule& sched, std::size_t epoch);

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_accuracy = -1.0;  // -1 when validation is disabled
};

struct TrainResult {
  Model<float> best;
  std::size_t best_epoch = 0;
  std::vector<EpochRecord> history;
};

struct EvalResult {
  double accuracy = 0.0;
  double ci95 = 0.0;
  std::size_t episodes = 0;
};

// Episodic training: per epoch, episodes_per_epoch episodes from the train
// classes, processed in mini-batches; SGD with L2 weight decay; after each
// epoch, validation accuracy decides which checkpoint is retained. Training
// never touches clips outside the train (and val) classes; the feature-store
// access log can verify this. A non-finite loss aborts with epoch/seed
// diagnostics. `log` receives one JSON line per epoch when non-null.
TrainResult train(Model<float> model, const TrainSchedule& sched, const ClassSplit& split,
                  const HeadCfg& head, const std::vector<ManifestRow>& manifest,
                  FeatureStore& store, std::ostream* log);

// Mean accuracy over n episodes sampled from the pool with per-episode
// derived seeds; ci95 = 1.96 * sqrt(p(1-p)/n).
EvalResult evaluate(Model<float>& model, const HeadCfg& head, const EpisodePool& pool,
                    FeatureStore& store, std::size_t way, std::size_t shot,
                    std::size_t n_episodes, std::uint64_t seed);

}  // namespace fewsound

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fewsound/ops.hpp"
#include "fewsound/rng.hpp"
#include "fewsound/tensor.hpp"

namespace fewsound {

enum class AttNorm { softmax, sigmoid, none };

// Embedding network: a stack of (3x3 conv -> batchnorm -> ReLU -> 4x4
// maxpool) blocks over a 1-channel log-mel input, plus an optional attention
// branch that scores the time segments of the resulting feature map.
struct BackboneConfig {
  std::size_t in_bins = 128;
  std::size_t in_frames = 160;
  std::vector<std::size_t> channels = {64, 128, 256};
  bool use_batchnorm = true;
  bool attention = false;
  std::size_t att_channels = 256;
  AttNorm att_norm = AttNorm::softmax;

  std::size_t n_blocks() const { return channels.size(); }

  void validate() const {
    if (channels.empty()) throw ConfigError("backbone: needs at least one block");
    for (const auto c : channels)
      if (c == 0) throw ConfigError("backbone: channel counts must be positive");
    if (in_bins == 0) throw ConfigError("backbone: in_bins must be positive");
    if (attention && att_channels == 0)
      throw ConfigError("backbone: att_channels must be positive");
  }
};

// Exact count of trainable scalars for a config, by arithmetic alone.
inline std::size_t param_count(const BackboneConfig& cfg) {
  cfg.validate();
  std::size_t total = 0;
  std::size_t ci = 1;
  for (const std::size_t co : cfg.channels) {
    total += co * ci * 9 + co;  // conv weight + bias
    if (cfg.use_batchnorm) total += 2 * co;
    ci = co;
  }
  if (cfg.attention) {
    total += cfg.att_channels * 9 + cfg.att_channels;  // 3x3 conv, 1 -> C_att
    if (cfg.use_batchnorm) total += 2 * cfg.att_channels;
    total += cfg.att_channels + 1;  // 1x1 projection to a single channel
  }
  return total;
}

template <typename T>
class Model {
 public:
  struct Binding {
    std::vector<Value<T>> params;  // same order as param(i)
  };

  Model(BackboneConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng = Rng(seed).derive(0x6d6f64656cULL);

    std::size_t ci = 1;
    for (std::size_t b = 0; b < cfg_.n_blocks(); ++b) {
      const std::size_t co = cfg_.channels[b];
      const std::string prefix = "block" + std::to_string(b) + ".";
      BlockIdx idx{};
      idx.w = add_conv_weight(prefix + "conv.weight", co, ci, 3, 3, rng);
      idx.b = add_param(prefix + "conv.bias", Tensor<T>({co}));
      if (cfg_.use_batchnorm) {
        idx.gamma = add_param(prefix + "bn.gamma", Tensor<T>({co}, T(1)));
        idx.beta = add_param(prefix + "bn.beta", Tensor<T>({co}));
        idx.bn = add_bn_state(prefix + "bn", co);
      } else {
        idx.gamma = idx.beta = idx.bn = -1;
      }
      blocks_.push_back(idx);
      ci = co;
    }

    if (cfg_.attention) {
      const std::size_t ca = cfg_.att_channels;
      att_.w1 = add_conv_weight("att.conv.weight", ca, 1, 3, 3, rng);
      att_.b1 = add_param("att.conv.bias", Tensor<T>({ca}));
      if (cfg_.use_batchnorm) {
        att_.gamma = add_param("att.bn.gamma", Tensor<T>({ca}, T(1)));
        att_.beta = add_param("att.bn.beta", Tensor<T>({ca}));
        att_.bn = add_bn_state("att.bn", ca);
      } else {
        att_.gamma = att_.beta = att_.bn = -1;
      }
      att_.w2 = add_conv_weight("att.proj.weight", 1, ca, 1, 1, rng);
      att_.b2 = add_param("att.proj.bias", Tensor<T>({1}));
    }
  }

  const BackboneConfig& config() const { return cfg_; }

  std::size_t param_count() const {
    std::size_t total = 0;
    for (const auto& p : params_) total += p.tensor.numel();
    return total;
  }

  std::size_t n_params() const { return params_.size(); }
  const std::string& param_name(std::size_t i) const { return params_[i].name; }
  Tensor<T>& param(std::size_t i) { return params_[i].tensor; }
  const Tensor<T>& param(std::size_t i) const { return params_[i].tensor; }

  std::size_t n_bn_states() const { return bn_states_.size(); }
  BatchNormState<T>& bn_state(std::size_t i) { return bn_states_[i]; }
  const std::string& bn_name(std::size_t i) const { return bn_names_[i]; }

  // Everything a checkpoint carries: trainable parameters plus batchnorm
  // running statistics.
  struct StateEntry {
    std::string name;
    Tensor<T>* tensor;
  };
  std::vector<StateEntry> state_entries() {
    std::vector<StateEntry> out;
    for (auto& p : params_) out.push_back({p.name, &p.tensor});
    for (std::size_t i = 0; i < bn_states_.size(); ++i) {
      out.push_back({bn_names_[i] + ".running_mean", &bn_states_[i].running_mean});
      out.push_back({bn_names_[i] + ".running_var", &bn_states_[i].running_var});
    }
    return out;
  }

  // Marks all batchnorm states initialized; called after loading a checkpoint.
  void mark_bn_initialized() {
    for (auto& st : bn_states_) st.initialized = true;
  }

  Binding bind(Tape<T>& tape, bool with_grad) {
    Binding b;
    b.params.reserve(params_.size());
    for (auto& p : params_) b.params.push_back(tape.leaf_ref(&p.tensor, with_grad));
    return b;
  }

  // Batched embedding: [N,1,H,W] -> feature maps [N,M,T].
  Value<T> embed_batch(const Binding& bind, Value<T> input, Mode mode) {
    const auto& is = input.shape();
    if (is.size() != 4 || is[1] != 1 || is[2] != cfg_.in_bins) {
      throw ShapeError("embed: expected [N,1," + std::to_string(cfg_.in_bins) +
                       ",frames], got " + shape_str(is));
    }
    Value<T> h = input;
    for (const auto& blk : blocks_) {
      h = conv2d(h, bind.params[blk.w], std::optional<Value<T>>(bind.params[blk.b]), 1);
      if (blk.bn >= 0) {
        h = batchnorm(h, bind.params[blk.gamma], bind.params[blk.beta],
                      bn_states_[blk.bn], mode);
      }
      h = relu(h);
      h = maxpool2d(h, 4, 4);
    }
    return mean_axis(h, 2);  // average the residual frequency axis
  }

  // Attention over the time segments of batched feature maps:
  // [N,M,T] -> [N,T], normalized per att_norm.
  Value<T> attend_batch(const Binding& bind, Value<T> maps, Mode mode) {
    if (!cfg_.attention) {
      throw ConfigError("attend: model was built without an attention branch");
    }
    const auto& ms = maps.shape();
    if (ms.size() != 3) {
      throw ShapeError("attend: expected feature maps [N,M,T], got " + shape_str(ms));
    }
    const std::size_t N = ms[0], M = ms[1], Tn = ms[2];
    Value<T> h = reshape(maps, {N, 1, M, Tn});
    h = conv2d(h, bind.params[att_.w1], std::optional<Value<T>>(bind.params[att_.b1]), 1);
    if (att_.bn >= 0) {
      h = batchnorm(h, bind.params[att_.gamma], bind.params[att_.beta],
                    bn_states_[att_.bn], mode);
    }
    h = relu(h);
    h = conv2d(h, bind.params[att_.w2], std::optional<Value<T>>(bind.params[att_.b2]), 0);
    h = reshape(h, {N, M, Tn});
    Value<T> logits = mean_axis(h, 1);  // [N,T]
    switch (cfg_.att_norm) {
      case AttNorm::softmax:
        return softmax(logits);
      case AttNorm::sigmoid:
        return sigmoid(logits);
      case AttNorm::none:
        return logits;
    }
    return logits;
  }

  // Single-clip conveniences (no gradients, fresh tape).
  Tensor<T> embed_one(const Tensor<T>& spec, Mode mode) {
    Tape<T> tape;
    Binding b = bind(tape, false);
    Tensor<T> batch({1, 1, spec.shape[0], spec.shape[1]}, spec.data);
    Value<T> maps = embed_batch(b, tape.constant(std::move(batch)), mode);
    return slice0(maps, 0).val();
  }

  Tensor<T> attend_one(const Tensor<T>& feature_map, Mode mode) {
    Tape<T> tape;
    Binding b = bind(tape, false);
    Tensor<T> batch({1, feature_map.shape[0], feature_map.shape[1]}, feature_map.data);
    Value<T> att = attend_batch(b, tape.constant(std::move(batch)), mode);
    return slice0(att, 0).val();
  }

 private:
  struct NamedParam {
    std::string name;
    Tensor<T> tensor;
  };
  struct BlockIdx {
    int w, b, gamma, beta, bn;
  };
  struct AttIdx {
    int w1 = -1, b1 = -1, gamma = -1, beta = -1, bn = -1, w2 = -1, b2 = -1;
  };

  int add_param(std::string name, Tensor<T> t) {
    t.requires_grad = true;
    params_.push_back({std::move(name), std::move(t)});
    return static_cast<int>(params_.size() - 1);
  }

  int add_conv_weight(std::string name, std::size_t co, std::size_t ci, std::size_t kh,
                      std::size_t kw, Rng& rng) {
    Tensor<T> w({co, ci, kh, kw});
    const double std_dev = std::sqrt(2.0 / static_cast<double>(ci * kh * kw));
    for (auto& v : w.data) v = static_cast<T>(rng.gaussian() * std_dev);
    return add_param(std::move(name), std::move(w));
  }

  int add_bn_state(std::string name, std::size_t channels) {
    bn_states_.push_back(BatchNormState<T>::identity(channels));
    bn_names_.push_back(std::move(name));
    return static_cast<int>(bn_states_.size() - 1);
  }

  BackboneConfig cfg_;
  std::vector<NamedParam> params_;
  std::vector<BatchNormState<T>> bn_states_;
  std::vector<std::string> bn_names_;
  std::vector<BlockIdx> blocks_;
  AttIdx att_{};
};

}  // namespace fewsound

#pragma once

#include "fewsound/ops.hpp"

namespace fewsound {

// All distance kinds return "larger = more similar": inner product, cosine,
// and negative squared Euclidean (zero for identical vectors).
enum class Distance { inner, cosine, euclidean };

enum class Pooling { avg, max };
enum class Reduce { mean, sum };

namespace detail {

template <typename T>
void require_equal_channels(const char* op, const Value<T>& xq, const Value<T>& xj) {
  const auto& qs = xq.shape();
  const auto& js = xj.shape();
  if (qs.size() != 2 || js.size() != 2 || qs[0] != js[0]) {
    throw ShapeError(std::string(op) + ": feature maps must share channels, got " +
                     shape_str(qs) + " vs " + shape_str(js));
  }
}

}  // namespace detail

template <typename T>
Value<T> distance(Value<T> a, Value<T> b, Distance kind) {
  switch (kind) {
    case Distance::inner:
      return dot(a, b);
    case Distance::cosine:
      return cosine_similarity(a, b);
    case Distance::euclidean:
      return neg_sq_euclidean(a, b);
  }
  throw ConfigError("distance: unknown kind");
}

// Aggregates a feature map [M,T] over time into a fixed-length vector [M].
template <typename T>
Value<T> pool(Value<T> x, Pooling mode) {
  if (x.shape().size() != 2) {
    throw ShapeError("pool: expected a feature map [M,T], got " + shape_str(x.shape()));
  }
  return mode == Pooling::avg ? mean_axis(x, 1) : max_axis(x, 1);
}

// dist(pool(X_q), pool(X_j)).
template <typename T>
Value<T> sim_pooled(Value<T> xq, Value<T> xj, Pooling pooling, Distance dist) {
  detail::require_equal_channels("sim_pooled", xq, xj);
  return distance(pool(xq, pooling), pool(xj, pooling), dist);
}

// Segment-by-segment similarity matrix X_q^T X_j in [T_q, T_j].
template <typename T>
Value<T> sim_second_order(Value<T> xq, Value<T> xj) {
  detail::require_equal_channels("sim_second_order", xq, xj);
  return matmul(transpose(xq), xj);
}

// Scalar reduction of the second-order matrix for use inside the episodic
// softmax; mean by default, sum as the alternative.
template <typename T>
Value<T> reduce_second_order(Value<T> m, Reduce mode) {
  return mode == Reduce::mean ? mean_all(m) : sum_all(m);
}

// Attentional similarity, factorized form: dist(X_q A_q, X_j A_j).
// Costs O(M (T_q + T_j)) multiplies.
template <typename T>
Value<T> sim_attentional(Value<T> xq, Value<T> xj, Value<T> aq, Value<T> aj,
                         Distance dist) {
  detail::require_equal_channels("sim_attentional", xq, xj);
  if (aq.shape() != std::vector<std::size_t>{xq.shape()[1]} ||
      aj.shape() != std::vector<std::size_t>{xj.shape()[1]}) {
    throw ShapeError("sim_attentional: attention lengths " + shape_str(aq.shape()) +
                     ", " + shape_str(aj.shape()) + " do not match maps " +
                     shape_str(xq.shape()) + ", " + shape_str(xj.shape()));
  }
  Value<T> vq = matvec(xq, aq);
  Value<T> vj = matvec(xj, aj);
  return distance(vq, vj, dist);
}

// Reference trace form A_q^T (X_q^T X_j) A_j through the explicit
// [T_q, T_j] matrix; O(M T_q T_j) multiplies. Oracle for the factorized path.
template <typename T>
Value<T> sim_attentional_trace(Value<T> xq, Value<T> xj, Value<T> aq, Value<T> aj) {
  detail::require_equal_channels("sim_attentional_trace", xq, xj);
  if (aq.shape() != std::vector<std::size_t>{xq.shape()[1]} ||
      aj.shape() != std::vector<std::size_t>{xj.shape()[1]}) {
    throw ShapeError("sim_attentional_trace: attention lengths " +
                     shape_str(aq.shape()) + ", " + shape_str(aj.shape()) +
                     " do not match maps " + shape_str(xq.shape()) + ", " +
                     shape_str(xj.shape()));
  }
  Value<T> second_order = matmul(transpose(xq), xj);
  return dot(aq, matvec(second_order, aj));
}

}  // namespace fewsound

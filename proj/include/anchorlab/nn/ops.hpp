#pragma once

#include <cstdint>
#include <vector>

#include "anchorlab/nn/graph.hpp"

// Differentiable primitives. All ops raise ConfigError naming both shapes on
// a shape mismatch. Explicitly instantiated for float and double.
namespace anchorlab::nn {

inline constexpr double kLayerNormEps = 1e-5;

// x[..., K] @ w[K, N] -> [..., N]
template <class T>
Var<T> matmul(const Var<T>& x, const Var<T>& w);

// Elementwise with numpy-style broadcasting of either operand.
template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b);

// a * s + c for scalars s, c.
template <class T>
Var<T> scale(const Var<T>& a, double s, double c = 0.0);

// x @ w + b
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b);

// Normalizes the last axis to zero mean / unit variance (no affine).
template <class T>
Var<T> layer_norm(const Var<T>& x);

// Softmax over the last axis.
template <class T>
Var<T> softmax(const Var<T>& x);

// Multi-head scaled dot-product attention, bidirectional.
// q[B, Nq, D], k[B, Nk, D], v[B, Nk, D] -> [B, Nq, D]; D % heads == 0.
template <class T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, int heads);

// Exact (erf) GELU.
template <class T>
Var<T> gelu(const Var<T>& x);

// Row lookup: table[V, D], ids with shape `ids_shape` -> ids_shape + [D].
template <class T>
Var<T> embedding(const Var<T>& table, const std::vector<std::int32_t>& ids, const Shape& ids_shape);

// Sinusoidal embedding of integer levels -> constant [len(levels), dim].
template <class T>
Var<T> sinusoidal_embedding(Graph<T>& g, const std::vector<std::int32_t>& levels, int dim);

// Mean over `axis`, removing it.
template <class T>
Var<T> mean_pool(const Var<T>& x, int axis);

// Pools `axis` (length L >= 1) to exactly `out_len` contiguous-bin averages.
// Bin i covers [floor(i*L/k), ceil((i+1)*L/k)).
template <class T>
Var<T> adaptive_mean_pool(const Var<T>& x, int axis, std::int64_t out_len);

template <class T>
Var<T> concat(const std::vector<Var<T>>& xs, int axis);

template <class T>
Var<T> slice(const Var<T>& x, int axis, std::int64_t start, std::int64_t length);

template <class T>
Var<T> reshape(const Var<T>& x, Shape shape);

template <class T>
Var<T> broadcast_to(const Var<T>& x, const Shape& shape);

// mean((a - b)^2) -> scalar.
template <class T>
Var<T> mse(const Var<T>& a, const Var<T>& b);

template <class T>
Var<T> sum(const Var<T>& x);

}  // namespace anchorlab::nn

#include "anchorlab/nn/ops.hpp"

#include <Eigen/Dense>
#include <unsupported/Eigen/SpecialFunctions>

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>

namespace anchorlab::nn {
namespace {

template <class T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapR = Eigen::Map<MatR<T>>;
template <class T>
using CMapR = Eigen::Map<const MatR<T>>;
template <class T>
using SMapR = Eigen::Map<MatR<T>, 0, Eigen::OuterStride<>>;
template <class T>
using CSMapR = Eigen::Map<const MatR<T>, 0, Eigen::OuterStride<>>;

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw ConfigError(std::string("shape mismatch in ") + op + ": " + shape_str(a) + " vs " + shape_str(b));
}

int norm_axis(int axis, int rank, const char* op) {
  int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank)
    throw ConfigError(std::string("axis ") + std::to_string(axis) + " out of range for rank " + std::to_string(rank) +
                      " in " + op);
  return a;
}

struct Split3 {
  std::int64_t outer = 1, n = 1, inner = 1;
};

Split3 split_at(const Shape& s, int axis) {
  Split3 r;
  for (int i = 0; i < axis; ++i) r.outer *= s[static_cast<std::size_t>(i)];
  r.n = s[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  std::size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    std::int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    std::int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) shape_error(op, a, b);
    out[i] = std::max(da, db);
  }
  return out;
}

bool is_suffix(const Shape& small, const Shape& big) {
  std::size_t k = 0;
  while (k < small.size() && small[k] == 1) ++k;
  std::size_t len = small.size() - k;
  if (len > big.size()) return false;
  return std::equal(small.begin() + static_cast<std::ptrdiff_t>(k), small.end(),
                    big.end() - static_cast<std::ptrdiff_t>(len));
}

// Calls f(i, ia, ib) for every flat output index with the matching operand offsets.
template <class F>
void for_each_broadcast(const Shape& out, const Shape& as, const Shape& bs, F&& f) {
  const std::int64_t n = numel(out);
  const std::int64_t na = numel(as), nb = numel(bs);
  if (as == out && bs == out) {
    for (std::int64_t i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  if (na == n && is_suffix(bs, out)) {
    for (std::int64_t i = 0; i < n; ++i) f(i, i, i % nb);
    return;
  }
  if (nb == n && is_suffix(as, out)) {
    for (std::int64_t i = 0; i < n; ++i) f(i, i % na, i);
    return;
  }
  const std::size_t r = out.size();
  auto strides_for = [&](const Shape& s) {
    std::vector<std::int64_t> st(r, 0);
    std::int64_t acc = 1;
    for (std::size_t k = 0; k < s.size(); ++k) {
      std::size_t dim = s.size() - 1 - k;
      std::size_t od = r - 1 - k;
      st[od] = s[dim] == 1 ? 0 : acc;
      acc *= s[dim];
    }
    return st;
  };
  auto sa = strides_for(as), sb = strides_for(bs);
  std::vector<std::int64_t> idx(r, 0);
  std::int64_t ia = 0, ib = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    f(i, ia, ib);
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out[d]) break;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

template <class T>
T gelu_cdf(T x) {
  return T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <class T>
T gelu_pdf(T x) {
  return std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * std::numbers::pi_v<T>);
}

}  // namespace

template <class T>
Var<T> matmul(const Var<T>& x, const Var<T>& w) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (ws.size() != 2 || xs.empty() || xs.back() != ws[0]) shape_error("matmul", xs, ws);
  const std::int64_t K = ws[0], N = ws[1], M = numel(xs) / K;
  Shape os = xs;
  os.back() = N;
  BasicTensor<T> out = BasicTensor<T>::zeros(os);
  MapR<T>(out.data.data(), M, N).noalias() = CMapR<T>(x.value().data.data(), M, K) * CMapR<T>(w.value().data.data(), K, N);
  const int xi = x.id(), wi = w.id();
  return x.graph().emit(std::move(out), {xi, wi}, [xi, wi, M, K, N](Graph<T>& g, int self) {
    const T* go = g.node(self).grad.data();
    if (g.needs_grad(xi)) {
      MapR<T>(g.grad_of(xi).data(), M, K).noalias() +=
          CMapR<T>(go, M, N) * CMapR<T>(g.value(wi).data.data(), K, N).transpose();
    }
    if (g.needs_grad(wi)) {
      MapR<T>(g.grad_of(wi).data(), K, N).noalias() +=
          CMapR<T>(g.value(xi).data.data(), M, K).transpose() * CMapR<T>(go, M, N);
    }
  });
}

template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (ws.size() != 2 || xs.empty() || xs.back() != ws[0]) shape_error("linear", xs, ws);
  if (b.shape().size() != 1 || b.shape()[0] != ws[1]) shape_error("linear bias", ws, b.shape());
  const std::int64_t K = ws[0], N = ws[1], M = numel(xs) / K;
  Shape os = xs;
  os.back() = N;
  BasicTensor<T> out = BasicTensor<T>::zeros(os);
  MapR<T> om(out.data.data(), M, N);
  om.noalias() = CMapR<T>(x.value().data.data(), M, K) * CMapR<T>(w.value().data.data(), K, N);
  om.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b.value().data.data(), N);
  const int xi = x.id(), wi = w.id(), bi = b.id();
  return x.graph().emit(std::move(out), {xi, wi, bi}, [xi, wi, bi, M, K, N](Graph<T>& g, int self) {
    const T* go = g.node(self).grad.data();
    CMapR<T> gm(go, M, N);
    if (g.needs_grad(xi)) {
      MapR<T>(g.grad_of(xi).data(), M, K).noalias() += gm * CMapR<T>(g.value(wi).data.data(), K, N).transpose();
    }
    if (g.needs_grad(wi)) {
      MapR<T>(g.grad_of(wi).data(), K, N).noalias() += CMapR<T>(g.value(xi).data.data(), M, K).transpose() * gm;
    }
    if (g.needs_grad(bi)) {
      T* gb = g.grad_of(bi).data();
      for (std::int64_t m = 0; m < M; ++m)
        for (std::int64_t n = 0; n < N; ++n) gb[n] += go[m * N + n];
    }
  });
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  Shape os = broadcast_shape(a.shape(), b.shape(), "add");
  BasicTensor<T> out = BasicTensor<T>::zeros(os);
  const T* pa = a.value().data.data();
  const T* pb = b.value().data.data();
  T* po = out.data.data();
  for_each_broadcast(os, a.shape(), b.shape(), [&](std::int64_t i, std::int64_t ia, std::int64_t ib) { po[i] = pa[ia] + pb[ib]; });
  const int ai = a.id(), bi = b.id();
  Shape as = a.shape(), bs = b.shape();
  return a.graph().emit(std::move(out), {ai, bi}, [ai, bi, os, as, bs](Graph<T>& g, int self) {
    const T* go = g.node(self).grad.data();
    if (g.needs_grad(ai)) {
      T* ga = g.grad_of(ai).data();
      for_each_broadcast(os, as, bs, [&](std::int64_t i, std::int64_t ia, std::int64_t) { ga[ia] += go[i]; });
    }
    if (g.needs_grad(bi)) {
      T* gb = g.grad_of(bi).data();
      for_each_broadcast(os, as, bs, [&](std::int64_t i, std::int64_t, std::int64_t ib) { gb[ib] += go[i]; });
    }
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  Shape os = broadcast_shape(a.shape(), b.shape(), "mul");
  BasicTensor<T> out = BasicTensor<T>::zeros(os);
  const T* pa = a.value().data.data();
  const T* pb = b.value().data.data();
  T* po = out.data.data();
  for_each_broadcast(os, a.shape(), b.shape(), [&](std::int64_t i, std::int64_t ia, std::int64_t ib) { po[i] = pa[ia] * pb[ib]; });
  const int ai = a.id(), bi = b.id();
  Shape as = a.shape(), bs = b.shape();
  return a.graph().emit(std::move(out), {ai, bi}, [ai, bi, os, as, bs](Graph<T>& g, int self) {
    const T* go = g.node(self).grad.data();
    const T* va = g.value(ai).data.data();
    const T* vb = g.value(bi).data.data();
    if (g.needs_grad(ai)) {
      T* ga = g.grad_of(ai).data();
      for_each_broadcast(os, as, bs, [&](std::int64_t i, std::int64_t ia, std::int64_t ib) { ga[ia] += go[i] * vb[ib]; });
    }
    if (g.needs_grad(bi)) {
      T* gb = g.grad_of(bi).data();
      for_each_broadcast(os, as, bs, [&](std::int64_t i, std::int64_t ia, std::int64_t ib) { gb[ib] += go[i] * va[ia]; });
    }
  });
}

template <class T>
Var<T> scale(const Var<T>& a, double s, double c) {
  BasicTensor<T> out = a.value();
  const T ts = static_cast<T>(s), tc = static_cast<T>(c);
  for (auto& v : out.data) v = v * ts + tc;
  const int ai = a.id();
  return a.graph().emit(std::move(out), {ai}, [ai, ts](Graph<T>& g, int self) {
    const auto& go = g.node(self).grad;
    auto& ga = g.grad_of(ai);
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * ts;
  });
}

template <class T>
Var<T> layer_norm(const Var<T>& x) {
  const Shape& xs = x.shape();
  if (xs.empty()) throw ConfigError("layer_norm needs rank >= 1, got " + shape_str(xs));
  const std::int64_t D = xs.back(), R = numel(xs) / D;
  BasicTensor<T> out = BasicTensor<T>::zeros(xs);
  auto rstd = std::make_shared<std::vector<T>>(static_cast<std::size_t>(R));
  const T* px = x.value().data.data();
  T* po = out.data.data();
  for (std::int64_t r = 0; r < R; ++r) {
    const T* row = px + r * D;
    T mean = 0;
    for (std::int64_t j = 0; j < D; ++j) mean += row[j];
    mean /= static_cast<T>(D);
    T var = 0;
    for (std::int64_t j = 0; j < D; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<T>(D);
    T rs = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
    (*rstd)[static_cast<std::size_t>(r)] = rs;
    for (std::int64_t j = 0; j < D; ++j) po[r * D + j] = (row[j] - mean) * rs;
  }
  const int xi = x.id();
  return x.graph().emit(std::move(out), {xi}, [xi, rstd, D, R](Graph<T>& g, int self) {
    const T* go = g.node(self).grad.data();
    const T* y = g.value(self).data.data();
    T* gx = g.grad_of(xi).data();
    for (std::int64_t r = 0; r < R; ++r) {
      T mdy = 0, mdyy = 0;
      for (std::int64_t j = 0; j < D; ++j) {
        mdy += go[r * D + j];
        mdyy += go[r * D + j] * y[r * D + j];
      }
      mdy /= static_cast<T>(D);
      mdyy /= static_cast<T>(D);
      T rs = (*rstd)[static_cast<std::size_t>(r)];
      for (std::int64_t j = 0; j < D; ++j) gx[r * D + j] += rs * (go[r * D + j] - mdy - y[r * D + j] * mdyy);
    }
  });
}

template <class T>
Var<T> softmax(const Var<T>& x) {
  const Shape& xs = x.shape();
  if (xs.empty()) throw ConfigError("softmax needs rank >= 1, got " + shape_str(xs));
  const std::int64_t D = xs.back(), R = numel(xs) / D;
  BasicTensor<T> out = x.value();
  for (std::int64_t r = 0; r < R; ++r) {
    T* row = out.data.data() + r * D;
    T mx = *std::max_element(row, row + D);
    T s = 0;
    for (std::int64_t j = 0; j < D; ++j) {
      row[j] = std::exp(row[j] - mx);
      s += row[j];
    }
    for (std::int64_t j = 0; j < D; ++j) row[j] /= s;
  }
  const int xi = x.id();
  return x.graph().emit(std::move(out), {xi}, [xi, D, R](Graph<T>& g, int self) {
    const T* go = g.node(self).grad.data();
    const T* y = g.value(self).data.data();
    T* gx = g.grad_of(xi).data();
    for (std::int64_t r = 0; r < R; ++r) {
      T dot = 0;
      for (std::int64_t j = 0; j < D; ++j) dot += go[r * D + j] * y[r * D + j];
      for (std::int64_t j = 0; j < D; ++j) gx[r * D + j] += y[r * D + j] * (go[r * D + j] - dot);
    }
  });
}

template <class T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, int heads) {
  const Shape& qs = q.shape();
  const Shape& ks = k.shape();
  if (qs.size() != 3 || ks.size() != 3 || qs[0] != ks[0] || qs[2] != ks[2]) shape_error("attention(q,k)", qs, ks);
  if (v.shape() != ks) shape_error("attention(k,v)", ks, v.shape());
  const std::int64_t B = qs[0], Nq = qs[1], Nk = ks[1], D = qs[2];
  if (heads <= 0 || D % heads != 0)
    throw ConfigError("attention: model dim " + std::to_string(D) + " not divisible by heads " + std::to_string(heads));
  const std::int64_t H = heads, dh = D / H;
  const T sc = T(1) / std::sqrt(static_cast<T>(dh));
  auto probs = std::make_shared<std::vector<T>>(static_cast<std::size_t>(B * H * Nq * Nk));
  BasicTensor<T> out = BasicTensor<T>::zeros(qs);
  const T* pq = q.value().data.data();
  const T* pk = k.value().data.data();
  const T* pv = v.value().data.data();
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t h = 0; h < H; ++h) {
      CSMapR<T> Q(pq + b * Nq * D + h * dh, Nq, dh, Eigen::OuterStride<>(D));
      CSMapR<T> K(pk + b * Nk * D + h * dh, Nk, dh, Eigen::OuterStride<>(D));
      CSMapR<T> V(pv + b * Nk * D + h * dh, Nk, dh, Eigen::OuterStride<>(D));
      MapR<T> P(probs->data() + (b * H + h) * Nq * Nk, Nq, Nk);
      P.noalias() = (Q * K.transpose()) * sc;
      // Plain loops: Eigen's vectorized reductions peel by address alignment.
      for (std::int64_t i = 0; i < Nq; ++i) {
        T* r = P.data() + i * Nk;
        T mx = r[0];
        for (std::int64_t j = 1; j < Nk; ++j) mx = std::max(mx, r[j]);
        T z = 0;
        for (std::int64_t j = 0; j < Nk; ++j) {
          r[j] = std::exp(r[j] - mx);
          z += r[j];
        }
        for (std::int64_t j = 0; j < Nk; ++j) r[j] /= z;
      }
      SMapR<T> O(out.data.data() + b * Nq * D + h * dh, Nq, dh, Eigen::OuterStride<>(D));
      O.noalias() = P * V;
    }
  }
  const int qi = q.id(), ki = k.id(), vi = v.id();
  return q.graph().emit(std::move(out), {qi, ki, vi}, [=](Graph<T>& g, int self) {
    const T* go = g.node(self).grad.data();
    const T* vq = g.value(qi).data.data();
    const T* vk = g.value(ki).data.data();
    const T* vv = g.value(vi).data.data();
    T* gq = g.needs_grad(qi) ? g.grad_of(qi).data() : nullptr;
    T* gk = g.needs_grad(ki) ? g.grad_of(ki).data() : nullptr;
    T* gv = g.needs_grad(vi) ? g.grad_of(vi).data() : nullptr;
    MatR<T> dP(Nq, Nk);
    for (std::int64_t b = 0; b < B; ++b) {
      for (std::int64_t h = 0; h < H; ++h) {
        CSMapR<T> dO(go + b * Nq * D + h * dh, Nq, dh, Eigen::OuterStride<>(D));
        CSMapR<T> Q(vq + b * Nq * D + h * dh, Nq, dh, Eigen::OuterStride<>(D));
        CSMapR<T> K(vk + b * Nk * D + h * dh, Nk, dh, Eigen::OuterStride<>(D));
        CSMapR<T> V(vv + b * Nk * D + h * dh, Nk, dh, Eigen::OuterStride<>(D));
        CMapR<T> P(probs->data() + (b * H + h) * Nq * Nk, Nq, Nk);
        if (gv != nullptr) {
          SMapR<T>(gv + b * Nk * D + h * dh, Nk, dh, Eigen::OuterStride<>(D)).noalias() += P.transpose() * dO;
        }
        if (gq == nullptr && gk == nullptr) continue;
        dP.noalias() = dO * V.transpose();
        for (std::int64_t i = 0; i < Nq; ++i) {
          T* d = dP.data() + i * Nk;
          const T* pr = P.data() + i * Nk;
          T dot = 0;
          for (std::int64_t j = 0; j < Nk; ++j) dot += d[j] * pr[j];
          for (std::int64_t j = 0; j < Nk; ++j) d[j] = pr[j] * (d[j] - dot) * sc;
        }
        if (gq != nullptr) {
          SMapR<T>(gq + b * Nq * D + h * dh, Nq, dh, Eigen::OuterStride<>(D)).noalias() += dP * K;
        }
        if (gk != nullptr) {
          SMapR<T>(gk + b * Nk * D + h * dh, Nk, dh, Eigen::OuterStride<>(D)).noalias() += dP.transpose() * Q;
        }
      }
    }
  });
}

using Block16 = Eigen::Array<float, 16, 1>;
constexpr float kInvSqrt2 = 0.70710678118654752f;

// Applies f to 16-wide blocks. The tail is padded so every element takes the
// same packet path; Eigen's scalar fallback rounds differently.
template <class F>
void blockwise(const float* in, float* out, std::size_t n, F f) {
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    const Block16 x = Eigen::Map<const Block16>(in + i);
    Eigen::Map<Block16>(out + i) = f(x);
  }
  if (i < n) {
    Block16 x = Block16::Zero();
    std::copy(in + i, in + n, x.data());
    const Block16 r = f(x);
    std::copy(r.data(), r.data() + (n - i), out + i);
  }
}

void gelu_values(const std::vector<float>& x, std::vector<float>& out) {
  blockwise(x.data(), out.data(), x.size(),
            [](const Block16& v) -> Block16 { return v * 0.5f * (1.0f + (v * kInvSqrt2).erf()); });
}
void gelu_slopes(const std::vector<float>& x, std::vector<float>& out) {
  blockwise(x.data(), out.data(), x.size(), [](const Block16& v) -> Block16 {
    const Block16 cdf = 0.5f * (1.0f + (v * kInvSqrt2).erf());
    const Block16 pdf = (-0.5f * v * v).exp() * (std::numbers::inv_sqrtpi_v<float> * kInvSqrt2);
    return cdf + v * pdf;
  });
}
void gelu_values(const std::vector<double>& x, std::vector<double>& out) {
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * gelu_cdf(x[i]);
}
void gelu_slopes(const std::vector<double>& x, std::vector<double>& out) {
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = gelu_cdf(x[i]) + x[i] * gelu_pdf(x[i]);
}

template <class T>
Var<T> gelu(const Var<T>& x) {
  BasicTensor<T> out = BasicTensor<T>::zeros(x.shape());
  gelu_values(x.value().data, out.data);
  const int xi = x.id();
  return x.graph().emit(std::move(out), {xi}, [xi](Graph<T>& g, int self) {
    const auto& go = g.node(self).grad;
    std::vector<T> slope(go.size());
    gelu_slopes(g.value(xi).data, slope);
    auto& gx = g.grad_of(xi);
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * slope[i];
  });
}

template <class T>
Var<T> embedding(const Var<T>& table, const std::vector<std::int32_t>& ids, const Shape& ids_shape) {
  const Shape& ts = table.shape();
  if (ts.size() != 2) throw ConfigError("embedding table must be rank 2, got " + shape_str(ts));
  if (numel(ids_shape) != static_cast<std::int64_t>(ids.size()))
    throw ConfigError("embedding ids size " + std::to_string(ids.size()) + " vs shape " + shape_str(ids_shape));
  const std::int64_t V = ts[0], D = ts[1];
  for (auto id : ids) {
    if (id < 0 || id >= V)
      throw UsageError("token id " + std::to_string(id) + " out of vocabulary of size " + std::to_string(V));
  }
  Shape os = ids_shape;
  os.push_back(D);
  BasicTensor<T> out = BasicTensor<T>::zeros(os);
  const T* pt = table.value().data.data();
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(pt + ids[i] * D, D, out.data.data() + static_cast<std::int64_t>(i) * D);
  const int ti = table.id();
  return table.graph().emit(std::move(out), {ti}, [ti, ids, D](Graph<T>& g, int self) {
    const T* go = g.node(self).grad.data();
    T* gt = g.grad_of(ti).data();
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::int64_t j = 0; j < D; ++j) gt[ids[i] * D + j] += go[static_cast<std::int64_t>(i) * D + j];
  });
}

template <class T>
Var<T> sinusoidal_embedding(Graph<T>& g, const std::vector<std::int32_t>& levels, int dim) {
  if (dim <= 0 || dim % 2 != 0) throw ConfigError("sinusoidal embedding dim must be even, got " + std::to_string(dim));
  const int half = dim / 2;
  BasicTensor<T> out = BasicTensor<T>::zeros({static_cast<std::int64_t>(levels.size()), dim});
  for (std::size_t i = 0; i < levels.size(); ++i) {
    for (int j = 0; j < half; ++j) {
      double freq = std::exp(-std::log(10000.0) * j / half);
      double a = levels[i] * freq;
      out.data[i * static_cast<std::size_t>(dim) + static_cast<std::size_t>(j)] = static_cast<T>(std::sin(a));
      out.data[i * static_cast<std::size_t>(dim) + static_cast<std::size_t>(half + j)] = static_cast<T>(std::cos(a));
    }
  }
  return g.constant(std::move(out));
}

template <class T>
Var<T> mean_pool(const Var<T>& x, int axis) {
  const Shape& xs = x.shape();
  const int ax = norm_axis(axis, static_cast<int>(xs.size()), "mean_pool");
  const Split3 s = split_at(xs, ax);
  if (s.n < 1) throw ConfigError("mean_pool over empty axis in shape " + shape_str(xs));
  Shape os = xs;
  os.erase(os.begin() + ax);
  BasicTensor<T> out = BasicTensor<T>::zeros(os);
  const T* px = x.value().data.data();
  const T inv = T(1) / static_cast<T>(s.n);
  for (std::int64_t o = 0; o < s.outer; ++o)
    for (std::int64_t i = 0; i < s.n; ++i)
      for (std::int64_t j = 0; j < s.inner; ++j) out.data[o * s.inner + j] += px[(o * s.n + i) * s.inner + j] * inv;
  const int xi = x.id();
  return x.graph().emit(std::move(out), {xi}, [xi, s, inv](Graph<T>& g, int self) {
    const T* go = g.node(self).grad.data();
    T* gx = g.grad_of(xi).data();
    for (std::int64_t o = 0; o < s.outer; ++o)
      for (std::int64_t i = 0; i < s.n; ++i)
        for (std::int64_t j = 0; j < s.inner; ++j) gx[(o * s.n + i) * s.inner + j] += go[o * s.inner + j] * inv;
  });
}

template <class T>
Var<T> adaptive_mean_pool(const Var<T>& x, int axis, std::int64_t out_len) {
  const Shape& xs = x.shape();
  const int ax = norm_axis(axis, static_cast<int>(xs.size()), "adaptive_mean_pool");
  const Split3 s = split_at(xs, ax);
  if (s.n < 1 || out_len < 1)
    throw ConfigError("adaptive_mean_pool of " + shape_str(xs) + " to length " + std::to_string(out_len));
  const std::int64_t L = s.n, k = out_len;
  std::vector<std::int64_t> lo(static_cast<std::size_t>(k)), hi(static_cast<std::size_t>(k));
  for (std::int64_t i = 0; i < k; ++i) {
    lo[static_cast<std::size_t>(i)] = (i * L) / k;
    hi[static_cast<std::size_t>(i)] = ((i + 1) * L + k - 1) / k;
  }
  Shape os = xs;
  os[static_cast<std::size_t>(ax)] = k;
  BasicTensor<T> out = BasicTensor<T>::zeros(os);
  const T* px = x.value().data.data();
  for (std::int64_t o = 0; o < s.outer; ++o) {
    for (std::int64_t b = 0; b < k; ++b) {
      const std::int64_t a0 = lo[static_cast<std::size_t>(b)], a1 = hi[static_cast<std::size_t>(b)];
      const T inv = T(1) / static_cast<T>(a1 - a0);
      T* dst = out.data.data() + (o * k + b) * s.inner;
      for (std::int64_t i = a0; i < a1; ++i)
        for (std::int64_t j = 0; j < s.inner; ++j) dst[j] += px[(o * L + i) * s.inner + j];
      for (std::int64_t j = 0; j < s.inner; ++j) dst[j] *= inv;
    }
  }
  const int xi = x.id();
  return x.graph().emit(std::move(out), {xi}, [xi, s, k, lo, hi](Graph<T>& g, int self) {
    const T* go = g.node(self).grad.data();
    T* gx = g.grad_of(xi).data();
    for (std::int64_t o = 0; o < s.outer; ++o) {
      for (std::int64_t b = 0; b < k; ++b) {
        const std::int64_t a0 = lo[static_cast<std::size_t>(b)], a1 = hi[static_cast<std::size_t>(b)];
        const T inv = T(1) / static_cast<T>(a1 - a0);
        const T* src = go + (o * k + b) * s.inner;
        for (std::int64_t i = a0; i < a1; ++i)
          for (std::int64_t j = 0; j < s.inner; ++j) gx[(o * s.n + i) * s.inner + j] += src[j] * inv;
      }
    }
  });
}

template <class T>
Var<T> concat(const std::vector<Var<T>>& xs, int axis) {
  if (xs.empty()) throw ConfigError("concat of zero tensors");
  const Shape& s0 = xs[0].shape();
  const int ax = norm_axis(axis, static_cast<int>(s0.size()), "concat");
  std::vector<Split3> parts;
  Shape os = s0;
  os[static_cast<std::size_t>(ax)] = 0;
  for (const auto& x : xs) {
    const Shape& s = x.shape();
    if (s.size() != s0.size()) shape_error("concat", s0, s);
    for (std::size_t d = 0; d < s.size(); ++d)
      if (static_cast<int>(d) != ax && s[d] != s0[d]) shape_error("concat", s0, s);
    parts.push_back(split_at(s, ax));
    os[static_cast<std::size_t>(ax)] += s[static_cast<std::size_t>(ax)];
  }
  const Split3 so = split_at(os, ax);
  BasicTensor<T> out = BasicTensor<T>::zeros(os);
  std::vector<int> ids;
  std::int64_t off = 0;
  for (std::size_t p = 0; p < xs.size(); ++p) {
    const T* px = xs[p].value().data.data();
    const std::int64_t chunk = parts[p].n * so.inner;
    for (std::int64_t o = 0; o < so.outer; ++o)
      std::copy_n(px + o * chunk, chunk, out.data.data() + o * so.n * so.inner + off * so.inner);
    off += parts[p].n;
    ids.push_back(xs[p].id());
  }
  return xs[0].graph().emit(std::move(out), ids, [ids, parts, so](Graph<T>& g, int self) {
    const T* go = g.node(self).grad.data();
    std::int64_t off = 0;
    for (std::size_t p = 0; p < ids.size(); ++p) {
      const std::int64_t chunk = parts[p].n * so.inner;
      if (g.needs_grad(ids[p])) {
        T* gx = g.grad_of(ids[p]).data();
        for (std::int64_t o = 0; o < so.outer; ++o) {
          const T* src = go + o * so.n * so.inner + off * so.inner;
          for (std::int64_t j = 0; j < chunk; ++j) gx[o * chunk + j] += src[j];
        }
      }
      off += parts[p].n;
    }
  });
}

template <class T>
Var<T> slice(const Var<T>& x, int axis, std::int64_t start, std::int64_t length) {
  const Shape& xs = x.shape();
  const int ax = norm_axis(axis, static_cast<int>(xs.size()), "slice");
  const Split3 s = split_at(xs, ax);
  if (start < 0 || length < 0 || start + length > s.n)
    throw ConfigError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) + ") out of range for " +
                      shape_str(xs));
  Shape os = xs;
  os[static_cast<std::size_t>(ax)] = length;
  BasicTensor<T> out = BasicTensor<T>::zeros(os);
  const T* px = x.value().data.data();
  for (std::int64_t o = 0; o < s.outer; ++o)
    std::copy_n(px + (o * s.n + start) * s.inner, length * s.inner, out.data.data() + o * length * s.inner);
  const int xi = x.id();
  return x.graph().emit(std::move(out), {xi}, [xi, s, start, length](Graph<T>& g, int self) {
    const T* go = g.node(self).grad.data();
    T* gx = g.grad_of(xi).data();
    for (std::int64_t o = 0; o < s.outer; ++o)
      for (std::int64_t j = 0; j < length * s.inner; ++j) gx[(o * s.n + start) * s.inner + j] += go[o * length * s.inner + j];
  });
}

template <class T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  if (numel(shape) != numel(x.shape())) shape_error("reshape", x.shape(), shape);
  BasicTensor<T> out(std::move(shape), x.value().data);
  const int xi = x.id();
  return x.graph().emit(std::move(out), {xi}, [xi](Graph<T>& g, int self) {
    const auto& go = g.node(self).grad;
    auto& gx = g.grad_of(xi);
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
  });
}

template <class T>
Var<T> broadcast_to(const Var<T>& x, const Shape& shape) {
  Shape os = broadcast_shape(x.shape(), shape, "broadcast_to");
  if (os != shape) shape_error("broadcast_to", x.shape(), shape);
  BasicTensor<T> out = BasicTensor<T>::zeros(os);
  const T* px = x.value().data.data();
  Shape xs = x.shape();
  for_each_broadcast(os, xs, os, [&](std::int64_t i, std::int64_t ia, std::int64_t) { out.data[static_cast<std::size_t>(i)] = px[ia]; });
  const int xi = x.id();
  return x.graph().emit(std::move(out), {xi}, [xi, os, xs](Graph<T>& g, int self) {
    const T* go = g.node(self).grad.data();
    T* gx = g.grad_of(xi).data();
    for_each_broadcast(os, xs, os, [&](std::int64_t i, std::int64_t ia, std::int64_t) { gx[ia] += go[i]; });
  });
}

template <class T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) shape_error("mse", a.shape(), b.shape());
  const auto& va = a.value().data;
  const auto& vb = b.value().data;
  const std::size_t n = va.size();
  if (n == 0) throw ConfigError("mse of empty tensors");
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += (va[i] - vb[i]) * (va[i] - vb[i]);
  const int ai = a.id(), bi = b.id();
  return a.graph().emit(BasicTensor<T>::scalar(acc / static_cast<T>(n)), {ai, bi}, [ai, bi, n](Graph<T>& g, int self) {
    const T go = g.node(self).grad[0];
    const auto& va = g.value(ai).data;
    const auto& vb = g.value(bi).data;
    const T c = T(2) * go / static_cast<T>(n);
    if (g.needs_grad(ai)) {
      auto& ga = g.grad_of(ai);
      for (std::size_t i = 0; i < n; ++i) ga[i] += c * (va[i] - vb[i]);
    }
    if (g.needs_grad(bi)) {
      auto& gb = g.grad_of(bi);
      for (std::size_t i = 0; i < n; ++i) gb[i] -= c * (va[i] - vb[i]);
    }
  });
}

template <class T>
Var<T> sum(const Var<T>& x) {
  T acc = 0;
  for (T v : x.value().data) acc += v;
  const int xi = x.id();
  return x.graph().emit(BasicTensor<T>::scalar(acc), {xi}, [xi](Graph<T>& g, int self) {
    const T go = g.node(self).grad[0];
    for (auto& v : g.grad_of(xi)) v += go;
  });
}

#define ANCHORLAB_INSTANTIATE_OPS(T)                                                                   \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                                                \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                                 \
  template Var<T> add(const Var<T>&, const Var<T>&);                                                   \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                                   \
  template Var<T> scale(const Var<T>&, double, double);                                                \
  template Var<T> layer_norm(const Var<T>&);                                                           \
  template Var<T> softmax(const Var<T>&);                                                              \
  template Var<T> attention(const Var<T>&, const Var<T>&, const Var<T>&, int);                         \
  template Var<T> gelu(const Var<T>&);                                                                 \
  template Var<T> embedding(const Var<T>&, const std::vector<std::int32_t>&, const Shape&);            \
  template Var<T> sinusoidal_embedding(Graph<T>&, const std::vector<std::int32_t>&, int);              \
  template Var<T> mean_pool(const Var<T>&, int);                                                       \
  template Var<T> adaptive_mean_pool(const Var<T>&, int, std::int64_t);                                \
  template Var<T> concat(const std::vector<Var<T>>&, int);                                             \
  template Var<T> slice(const Var<T>&, int, std::int64_t, std::int64_t);                               \
  template Var<T> reshape(const Var<T>&, Shape);                                                       \
  template Var<T> broadcast_to(const Var<T>&, const Shape&);                                           \
  template Var<T> mse(const Var<T>&, const Var<T>&);                                                   \
  template Var<T> sum(const Var<T>&);

ANCHORLAB_INSTANTIATE_OPS(float)
ANCHORLAB_INSTANTIATE_OPS(double)

#undef ANCHORLAB_INSTANTIATE_OPS

}  // namespace anchorlab::nn

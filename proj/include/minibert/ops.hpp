#pragma once

// Differentiable operations used by the encoder and its heads.

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "minibert/errors.hpp"
#include "minibert/rng.hpp"
#include "minibert/tensor.hpp"

namespace minibert::ag {

namespace kernel {

// c[m,n] += a[m,k] * b[k,n]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m,n] += a[m,k] * b[n,k]^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T acc = T(0);
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] += acc;
    }
  }
}

// c[k,n] += a[m,k]^T * b[m,n]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    const T* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      if (av == T(0)) continue;
      T* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace kernel

namespace detail {

template <typename T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

template <typename T>
void require_rank(const BasicTensor<T>& a, std::size_t rank, const char* op) {
  if (a.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(a.shape()));
  }
}

}  // namespace detail

// [m,k] x [k,n] -> [m,n]
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  std::vector<T> out(m * n, T(0));
  kernel::gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  return make_result<T>({m, n}, std::move(out), "matmul", {a.node(), b.node()},
                        [m, k, n](Node<T>& self) {
                          auto& an = *self.inputs[0];
                          auto& bn = *self.inputs[1];
                          if (an.requires_grad)
                            kernel::gemm_nt(self.grad.data(), bn.data.data(), an.ensure_grad().data(), m, n, k);
                          if (bn.requires_grad)
                            kernel::gemm_tn(an.data.data(), self.grad.data(), bn.ensure_grad().data(), m, k, n);
                        });
}

// Batched product over a leading axis: [B,m,k] x [B,k,n] -> [B,m,n], or with
// transpose_b, [B,m,k] x [B,n,k]^T -> [B,m,n].
template <typename T>
BasicTensor<T> batched_matmul(const BasicTensor<T>& a, const BasicTensor<T>& b, bool transpose_b = false) {
  detail::require_rank(a, 3, "batched_matmul");
  detail::require_rank(b, 3, "batched_matmul");
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2);
  const std::size_t n = transpose_b ? b.dim(1) : b.dim(2);
  const std::size_t bk = transpose_b ? b.dim(2) : b.dim(1);
  if (b.dim(0) != batch || bk != k) {
    throw DimensionError("batched_matmul: incompatible " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  std::vector<T> out(batch * m * n, T(0));
  for (std::size_t s = 0; s < batch; ++s) {
    const T* ap = a.data().data() + s * m * k;
    const T* bp = b.data().data() + s * k * n;
    T* cp = out.data() + s * m * n;
    if (transpose_b) kernel::gemm_nt(ap, bp, cp, m, k, n);
    else kernel::gemm_nn(ap, bp, cp, m, k, n);
  }
  return make_result<T>(
      {batch, m, n}, std::move(out), "batched_matmul", {a.node(), b.node()},
      [batch, m, k, n, transpose_b](Node<T>& self) {
        auto& an = *self.inputs[0];
        auto& bn = *self.inputs[1];
        T* ga = an.requires_grad ? an.ensure_grad().data() : nullptr;
        T* gb = bn.requires_grad ? bn.ensure_grad().data() : nullptr;
        for (std::size_t s = 0; s < batch; ++s) {
          const T* gc = self.grad.data() + s * m * n;
          const T* ap = an.data.data() + s * m * k;
          const T* bp = bn.data.data() + s * k * n;
          if (ga) {
            // dA = dC * B^T (B stored [k,n]) or dC * B (B stored [n,k])
            if (transpose_b) kernel::gemm_nn(gc, bp, ga + s * m * k, m, n, k);
            else kernel::gemm_nt(gc, bp, ga + s * m * k, m, n, k);
          }
          if (gb) {
            // dB = A^T dC ([k,n]) or dC^T A ([n,k])
            if (transpose_b) kernel::gemm_tn(gc, ap, gb + s * k * n, m, n, k);
            else kernel::gemm_tn(ap, gc, gb + s * k * n, m, k, n);
          }
        }
      });
}

// x[N,in] * w[in,out] + bias[out]
template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& bias) {
  detail::require_rank(x, 2, "linear");
  detail::require_rank(w, 2, "linear");
  const std::size_t rows = x.dim(0), in = x.dim(1), out_dim = w.dim(1);
  if (w.dim(0) != in || bias.numel() != out_dim) {
    throw DimensionError("linear: " + shape_str(x.shape()) + " x " + shape_str(w.shape()) + " + " +
                         shape_str(bias.shape()));
  }
  std::vector<T> out(rows * out_dim);
  for (std::size_t i = 0; i < rows; ++i)
    std::copy(bias.data().begin(), bias.data().end(), out.begin() + i * out_dim);
  kernel::gemm_nn(x.data().data(), w.data().data(), out.data(), rows, in, out_dim);
  return make_result<T>({rows, out_dim}, std::move(out), "linear", {x.node(), w.node(), bias.node()},
                        [rows, in, out_dim](Node<T>& self) {
                          auto& xn = *self.inputs[0];
                          auto& wn = *self.inputs[1];
                          auto& bn = *self.inputs[2];
                          if (xn.requires_grad)
                            kernel::gemm_nt(self.grad.data(), wn.data.data(), xn.ensure_grad().data(), rows,
                                            out_dim, in);
                          if (wn.requires_grad)
                            kernel::gemm_tn(xn.data.data(), self.grad.data(), wn.ensure_grad().data(), rows, in,
                                            out_dim);
                          if (bn.requires_grad) {
                            auto& g = bn.ensure_grad();
                            for (std::size_t i = 0; i < rows; ++i)
                              for (std::size_t j = 0; j < out_dim; ++j) g[j] += self.grad[i * out_dim + j];
                          }
                        });
}

enum class Elementwise { add, sub, mul };

template <typename T>
BasicTensor<T> elementwise(Elementwise op, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_same_shape(a, b, "elementwise");
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<T> out(ad.size());
  switch (op) {
    case Elementwise::add:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
      break;
    case Elementwise::sub:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] - bd[i];
      break;
    case Elementwise::mul:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
      break;
  }
  const char* name = op == Elementwise::add ? "add" : op == Elementwise::sub ? "sub" : "mul";
  return make_result<T>(a.shape(), std::move(out), name, {a.node(), b.node()}, [op](Node<T>& self) {
    auto& an = *self.inputs[0];
    auto& bn = *self.inputs[1];
    const std::size_t n = self.grad.size();
    if (an.requires_grad) {
      auto& g = an.ensure_grad();
      if (op == Elementwise::mul)
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i] * bn.data[i];
      else
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i];
    }
    if (bn.requires_grad) {
      auto& g = bn.ensure_grad();
      if (op == Elementwise::mul)
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i] * an.data[i];
      else if (op == Elementwise::sub)
        for (std::size_t i = 0; i < n; ++i) g[i] -= self.grad[i];
      else
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return elementwise(Elementwise::add, a, b);
}
template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return elementwise(Elementwise::sub, a, b);
}
template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return elementwise(Elementwise::mul, a, b);
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  return make_result<T>(a.shape(), std::move(out), "scale", {a.node()}, [factor](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

// Softmax along `axis`, stabilised by subtracting the maximum. Entries equal
// to -inf receive probability exactly 0 provided the slice has a finite entry.
template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for " + shape_str(x.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t n = x.dim(axis);
  const auto xd = x.data();
  std::vector<T> out(xd.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, xd[base + j * inner]);
      T total = T(0);
      for (std::size_t j = 0; j < n; ++j) {
        const T e = std::exp(xd[base + j * inner] - mx);
        out[base + j * inner] = e;
        total += e;
      }
      const T inv = T(1) / total;
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] *= inv;
    }
  }
  return make_result<T>(x.shape(), std::move(out), "softmax", {x.node()}, [outer, inner, n](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    const auto& y = self.data;
    const auto& dy = self.grad;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * n * inner + in;
        T dot = T(0);
        for (std::size_t j = 0; j < n; ++j) dot += y[base + j * inner] * dy[base + j * inner];
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t idx = base + j * inner;
          g[idx] += y[idx] * (dy[idx] - dot);
        }
      }
    }
  });
}

// Normalises each row over the last axis with population variance, then
// applies gain and bias of length H.
template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gain, const BasicTensor<T>& bias,
                          T epsilon) {
  if (x.rank() == 0) throw DimensionError("layer_norm: empty shape");
  if (!(epsilon > T(0))) throw ParameterError("layer_norm: epsilon must be positive");
  const std::size_t h = x.shape().back();
  if (gain.numel() != h || bias.numel() != h) {
    throw DimensionError("layer_norm: gain/bias must have " + std::to_string(h) + " entries");
  }
  const std::size_t rows = x.numel() / h;
  const auto xd = x.data();
  const auto gd = gain.data();
  const auto bd = bias.data();
  std::vector<T> out(xd.size());
  std::vector<T> normed(xd.size());
  std::vector<T> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xd.data() + r * h;
    T mean = T(0);
    for (std::size_t j = 0; j < h; ++j) mean += row[j];
    mean /= static_cast<T>(h);
    T var = T(0);
    for (std::size_t j = 0; j < h; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<T>(h);
    const T inv = T(1) / std::sqrt(var + epsilon);
    rstd[r] = inv;
    for (std::size_t j = 0; j < h; ++j) {
      const T nv = (row[j] - mean) * inv;
      normed[r * h + j] = nv;
      out[r * h + j] = nv * gd[j] + bd[j];
    }
  }
  return make_result<T>(
      x.shape(), std::move(out), "layer_norm", {x.node(), gain.node(), bias.node()},
      [rows, h, normed = std::move(normed), rstd = std::move(rstd)](Node<T>& self) {
        auto& xn = *self.inputs[0];
        auto& gn = *self.inputs[1];
        auto& bn = *self.inputs[2];
        const auto& dy = self.grad;
        if (gn.requires_grad) {
          auto& g = gn.ensure_grad();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < h; ++j) g[j] += dy[r * h + j] * normed[r * h + j];
        }
        if (bn.requires_grad) {
          auto& g = bn.ensure_grad();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < h; ++j) g[j] += dy[r * h + j];
        }
        if (xn.requires_grad) {
          auto& g = xn.ensure_grad();
          const auto& gain_v = gn.data;
          for (std::size_t r = 0; r < rows; ++r) {
            T mean_d = T(0), mean_dn = T(0);
            for (std::size_t j = 0; j < h; ++j) {
              const T d = dy[r * h + j] * gain_v[j];
              mean_d += d;
              mean_dn += d * normed[r * h + j];
            }
            mean_d /= static_cast<T>(h);
            mean_dn /= static_cast<T>(h);
            for (std::size_t j = 0; j < h; ++j) {
              const T d = dy[r * h + j] * gain_v[j];
              g[r * h + j] += rstd[r] * (d - mean_d - normed[r * h + j] * mean_dn);
            }
          }
        }
      });
}

// Tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& x) {
  constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T k = T(0.044715);
  const auto xd = x.data();
  std::vector<T> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) {
    const T v = xd[i];
    out[i] = T(0.5) * v * (T(1) + std::tanh(c * (v + k * v * v * v)));
  }
  return make_result<T>(x.shape(), std::move(out), "gelu", {x.node()}, [](Node<T>& self) {
    auto& in = *self.inputs[0];
    auto& g = in.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = in.data[i];
      const T t = std::tanh(c * (v + k * v * v * v));
      const T dt = (T(1) - t * t) * c * (T(1) + T(3) * k * v * v);
      g[i] += self.grad[i] * (T(0.5) * (T(1) + t) + T(0.5) * v * dt);
    }
  });
}

// Row gather: out[i] = table[ids[i]]. Backward scatter-adds into the rows.
template <typename T>
BasicTensor<T> embedding_lookup(const BasicTensor<T>& table, std::span<const std::int32_t> ids) {
  detail::require_rank(table, 2, "embedding_lookup");
  if (ids.empty()) throw DimensionError("embedding_lookup: empty id list");
  const std::size_t rows = table.dim(0), width = table.dim(1);
  std::vector<T> out(ids.size() * width);
  const auto td = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= rows) {
      throw IndexError("embedding_lookup: id " + std::to_string(ids[i]) + " outside [0," +
                       std::to_string(rows) + ")");
    }
    std::copy_n(td.begin() + static_cast<std::size_t>(ids[i]) * width, width, out.begin() + i * width);
  }
  std::vector<std::int32_t> saved(ids.begin(), ids.end());
  return make_result<T>({ids.size(), width}, std::move(out), "embedding_lookup", {table.node()},
                        [width, saved = std::move(saved)](Node<T>& self) {
                          auto& g = self.inputs[0]->ensure_grad();
                          for (std::size_t i = 0; i < saved.size(); ++i) {
                            T* dst = g.data() + static_cast<std::size_t>(saved[i]) * width;
                            const T* src = self.grad.data() + i * width;
                            for (std::size_t j = 0; j < width; ++j) dst[j] += src[j];
                          }
                        });
}

template <typename T>
BasicTensor<T> gather_rows(const BasicTensor<T>& x, std::span<const std::int32_t> rows) {
  return embedding_lookup(x, rows);
}

// Inverted dropout. Identity when not training or p == 0.
template <typename T>
BasicTensor<T> dropout(const BasicTensor<T>& x, double p, bool training, Rng* rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ParameterError("dropout: p must be in [0,1), got " + std::to_string(p));
  if (!training || p == 0.0) return x;
  if (rng == nullptr) throw ContractError("dropout: training mode needs a generator");
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> mask(x.numel());
  std::vector<T> out(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = rng->uniform01() < p ? T(0) : keep_scale;
    out[i] = xd[i] * mask[i];
  }
  return make_result<T>(x.shape(), std::move(out), "dropout", {x.node()}, [mask = std::move(mask)](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
  });
}

// Mean over examples of weight[label] * -log softmax(logits)[label].
template <typename T>
BasicTensor<T> cross_entropy_weighted(const BasicTensor<T>& logits, std::span<const std::int32_t> labels,
                                      std::span<const double> class_weights) {
  detail::require_rank(logits, 2, "cross_entropy_weighted");
  const std::size_t rows = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != rows) {
    throw DimensionError("cross_entropy_weighted: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(rows) + " rows");
  }
  if (class_weights.size() != classes) {
    throw DimensionError("cross_entropy_weighted: need " + std::to_string(classes) + " class weights");
  }
  for (double w : class_weights) {
    if (!(w > 0.0)) throw ParameterError("cross_entropy_weighted: class weights must be positive");
  }
  const auto ld = logits.data();
  std::vector<T> probs(ld.size());
  double total = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw IndexError("cross_entropy_weighted: label " + std::to_string(labels[i]) + " outside [0," +
                       std::to_string(classes) + ")");
    }
    const T* row = ld.data() + i * classes;
    T mx = row[0];
    for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, row[c]);
    T z = T(0);
    for (std::size_t c = 0; c < classes; ++c) {
      probs[i * classes + c] = std::exp(row[c] - mx);
      z += probs[i * classes + c];
    }
    for (std::size_t c = 0; c < classes; ++c) probs[i * classes + c] /= z;
    const T log_p = row[labels[i]] - mx - std::log(z);
    total += class_weights[labels[i]] * -static_cast<double>(log_p);
  }
  const T loss = static_cast<T>(total / static_cast<double>(rows));
  std::vector<std::int32_t> saved_labels(labels.begin(), labels.end());
  std::vector<double> weights(class_weights.begin(), class_weights.end());
  return make_result<T>(
      {1}, {loss}, "cross_entropy_weighted", {logits.node()},
      [rows, classes, probs = std::move(probs), saved_labels = std::move(saved_labels),
       weights = std::move(weights)](Node<T>& self) {
        auto& g = self.inputs[0]->ensure_grad();
        const T upstream = self.grad[0];
        for (std::size_t i = 0; i < rows; ++i) {
          const T w = static_cast<T>(weights[saved_labels[i]] / static_cast<double>(rows)) * upstream;
          for (std::size_t c = 0; c < classes; ++c) {
            const T indicator = static_cast<std::size_t>(saved_labels[i]) == c ? T(1) : T(0);
            g[i * classes + c] += w * (probs[i * classes + c] - indicator);
          }
        }
      });
}

template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, std::span<const std::int32_t> labels) {
  const std::vector<double> unit(logits.rank() == 2 ? logits.dim(1) : 0, 1.0);
  return cross_entropy_weighted(logits, labels, unit);
}

template <typename T>
BasicTensor<T> mse_loss(const BasicTensor<T>& pred, std::span<const double> target) {
  if (pred.numel() != target.size()) {
    throw DimensionError("mse_loss: " + std::to_string(pred.numel()) + " predictions vs " +
                         std::to_string(target.size()) + " targets");
  }
  const auto pd = pred.data();
  double total = 0.0;
  for (std::size_t i = 0; i < pd.size(); ++i) {
    const double r = static_cast<double>(pd[i]) - target[i];
    total += r * r;
  }
  const std::size_t n = pd.size();
  std::vector<double> saved(target.begin(), target.end());
  return make_result<T>({1}, {static_cast<T>(total / static_cast<double>(n))}, "mse_loss", {pred.node()},
                        [n, saved = std::move(saved)](Node<T>& self) {
                          auto& in = *self.inputs[0];
                          auto& g = in.ensure_grad();
                          const T scale_factor = T(2) * self.grad[0] / static_cast<T>(n);
                          for (std::size_t i = 0; i < n; ++i)
                            g[i] += scale_factor * (in.data[i] - static_cast<T>(saved[i]));
                        });
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  T total = T(0);
  for (T v : x.data()) total += v;
  return make_result<T>({1}, {total}, "sum", {x.node()}, [](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
  if (numel_of(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  return make_result<T>(std::move(shape), std::move(out), "reshape", {x.node()}, [](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

// [a,b,c,d] -> [a,c,b,d]; used to move attention heads next to the batch axis.
template <typename T>
BasicTensor<T> swap_axes_12(const BasicTensor<T>& x) {
  detail::require_rank(x, 4, "swap_axes_12");
  const std::size_t a = x.dim(0), b = x.dim(1), c = x.dim(2), d = x.dim(3);
  const auto xd = x.data();
  std::vector<T> out(xd.size());
  for (std::size_t i = 0; i < a; ++i)
    for (std::size_t j = 0; j < b; ++j)
      for (std::size_t k = 0; k < c; ++k)
        std::copy_n(xd.begin() + ((i * b + j) * c + k) * d, d, out.begin() + ((i * c + k) * b + j) * d);
  return make_result<T>({a, c, b, d}, std::move(out), "swap_axes_12", {x.node()}, [a, b, c, d](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < a; ++i)
      for (std::size_t j = 0; j < b; ++j)
        for (std::size_t k = 0; k < c; ++k) {
          const T* src = self.grad.data() + ((i * c + k) * b + j) * d;
          T* dst = g.data() + ((i * b + j) * c + k) * d;
          for (std::size_t e = 0; e < d; ++e) dst[e] += src[e];
        }
  });
}

}  // namespace minibert::ag

namespace minibert {
using Tensor = ag::BasicTensor<float>;
}

#pragma once

// Minimal dense tensor library with reverse-mode automatic differentiation.
// Tensors are row-major 2D values (vectors are 1 x n); a Tape records the
// forward graph and replays it backward once per forward pass. Templated on
// the scalar type: float is the compute precision, double exists for the
// finite-difference verification mode.
//
// A tape is single-threaded. Independent tapes may run concurrently; leaf
// data passed by pointer is only read during construction.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "gaze3d/error.hpp"
#include "gaze3d/gemm.hpp"

namespace gaze3d::ad {

template <typename T>
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // ---- leaves ------------------------------------------------------------

  Var<T> leaf(const T* data, int rows, int cols, bool requires_grad) {
    Node n;
    n.rows = rows;
    n.cols = cols;
    n.val.assign(data, data + static_cast<std::size_t>(rows) * cols);
    n.requires_grad = requires_grad;
    return push(std::move(n));
  }

  Var<T> leaf(const std::vector<T>& data, int rows, int cols, bool requires_grad) {
    if (static_cast<std::size_t>(rows) * cols != data.size())
      throw domain_error("leaf: shape " + shape_str(rows, cols) + " does not match " +
                         std::to_string(data.size()) + " values");
    return leaf(data.data(), rows, cols, requires_grad);
  }

  Var<T> zeros(int rows, int cols) {
    Node n;
    n.rows = rows;
    n.cols = cols;
    n.val.assign(static_cast<std::size_t>(rows) * cols, T(0));
    n.requires_grad = false;
    return push(std::move(n));
  }

  Var<T> scalar(T value, bool requires_grad = false) { return leaf(&value, 1, 1, requires_grad); }

  // ---- elementwise and linear ops ----------------------------------------

  Var<T> add(Var<T> a, Var<T> b) {
    require_same_shape("add", a, b);
    Node n = like(a);
    const auto &va = val(a), &vb = val(b);
    for (std::size_t i = 0; i < n.val.size(); ++i) n.val[i] = va[i] + vb[i];
    n.requires_grad = requires_grad(a) || requires_grad(b);
    Var<T> out = push(std::move(n));
    if (node(out).requires_grad)
      node(out).backward = [this, a, b, out] {
        accumulate(a, grad(out), T(1));
        accumulate(b, grad(out), T(1));
      };
    return out;
  }

  // broadcast a 1 x n row vector over every row of a
  Var<T> add_rowvec(Var<T> a, Var<T> v) {
    if (node(v).rows != 1 || node(v).cols != node(a).cols)
      throw domain_error("add_rowvec: lhs " + shape_str_of(a) + " rhs " + shape_str_of(v));
    Node n = like(a);
    const auto &va = val(a), &vv = val(v);
    const int cols = n.cols;
    for (int r = 0; r < n.rows; ++r)
      for (int c = 0; c < cols; ++c)
        n.val[static_cast<std::size_t>(r) * cols + c] = va[static_cast<std::size_t>(r) * cols + c] + vv[c];
    n.requires_grad = requires_grad(a) || requires_grad(v);
    Var<T> out = push(std::move(n));
    if (node(out).requires_grad)
      node(out).backward = [this, a, v, out] {
        accumulate(a, grad(out), T(1));
        if (requires_grad(v)) {
          auto& gv = grad_ref(v);
          const auto& go = grad(out);
          const int cols = node(v).cols;
          for (int r = 0; r < node(a).rows; ++r)
            for (int c = 0; c < cols; ++c) gv[c] += go[static_cast<std::size_t>(r) * cols + c];
        }
      };
    return out;
  }

  Var<T> mul(Var<T> a, Var<T> b) {
    require_same_shape("mul", a, b);
    Node n = like(a);
    const auto &va = val(a), &vb = val(b);
    for (std::size_t i = 0; i < n.val.size(); ++i) n.val[i] = va[i] * vb[i];
    n.requires_grad = requires_grad(a) || requires_grad(b);
    Var<T> out = push(std::move(n));
    if (node(out).requires_grad)
      node(out).backward = [this, a, b, out] {
        const auto& go = grad(out);
        if (requires_grad(a)) {
          auto& ga = grad_ref(a);
          const auto& vb = val(b);
          for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * vb[i];
        }
        if (requires_grad(b)) {
          auto& gb = grad_ref(b);
          const auto& va = val(a);
          for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += go[i] * va[i];
        }
      };
    return out;
  }

  Var<T> mul_scalar(Var<T> a, T s) {
    Node n = like(a);
    const auto& va = val(a);
    for (std::size_t i = 0; i < n.val.size(); ++i) n.val[i] = va[i] * s;
    n.requires_grad = requires_grad(a);
    Var<T> out = push(std::move(n));
    if (node(out).requires_grad)
      node(out).backward = [this, a, s, out] { accumulate(a, grad(out), s); };
    return out;
  }

  Var<T> matmul(Var<T> a, Var<T> b) {
    const Node &na = node(a), &nb = node(b);
    if (na.cols != nb.rows)
      throw domain_error("matmul: lhs " + shape_str_of(a) + " rhs " + shape_str_of(b));
    Node n;
    n.rows = na.rows;
    n.cols = nb.cols;
    n.val.assign(static_cast<std::size_t>(n.rows) * n.cols, T(0));
    gemm_accumulate(na.rows, nb.cols, na.cols, na.val.data(), nb.val.data(), n.val.data());
    n.requires_grad = na.requires_grad || nb.requires_grad;
    Var<T> out = push(std::move(n));
    if (node(out).requires_grad)
      node(out).backward = [this, a, b, out] {
        const int m = node(a).rows, k = node(a).cols, c = node(b).cols;
        const auto& go = grad(out);
        if (requires_grad(a)) {
          // dA += dC * B^T
          std::vector<T> bt(static_cast<std::size_t>(c) * k);
          const auto& vb = val(b);
          for (int i = 0; i < k; ++i)
            for (int j = 0; j < c; ++j) bt[static_cast<std::size_t>(j) * k + i] = vb[static_cast<std::size_t>(i) * c + j];
          gemm_accumulate(m, k, c, go.data(), bt.data(), grad_ref(a).data());
        }
        if (requires_grad(b)) {
          // dB += A^T * dC
          std::vector<T> at(static_cast<std::size_t>(k) * m);
          const auto& va = val(a);
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < k; ++j) at[static_cast<std::size_t>(j) * m + i] = va[static_cast<std::size_t>(i) * k + j];
          gemm_accumulate(k, c, m, at.data(), go.data(), grad_ref(b).data());
        }
      };
    return out;
  }

  Var<T> transpose(Var<T> a) {
    const Node& na = node(a);
    Node n;
    n.rows = na.cols;
    n.cols = na.rows;
    n.val.resize(na.val.size());
    for (int r = 0; r < na.rows; ++r)
      for (int c = 0; c < na.cols; ++c)
        n.val[static_cast<std::size_t>(c) * na.rows + r] = na.val[static_cast<std::size_t>(r) * na.cols + c];
    n.requires_grad = na.requires_grad;
    Var<T> out = push(std::move(n));
    if (node(out).requires_grad)
      node(out).backward = [this, a, out] {
        auto& ga = grad_ref(a);
        const auto& go = grad(out);
        const int rows = node(a).rows, cols = node(a).cols;
        for (int r = 0; r < rows; ++r)
          for (int c = 0; c < cols; ++c)
            ga[static_cast<std::size_t>(r) * cols + c] += go[static_cast<std::size_t>(c) * rows + r];
      };
    return out;
  }

  Var<T> relu(Var<T> a) {
    Node n = like(a);
    const auto& va = val(a);
    for (std::size_t i = 0; i < n.val.size(); ++i) n.val[i] = va[i] > T(0) ? va[i] : T(0);
    n.requires_grad = requires_grad(a);
    Var<T> out = push(std::move(n));
    if (node(out).requires_grad)
      node(out).backward = [this, a, out] {
        auto& ga = grad_ref(a);
        const auto& go = grad(out);
        const auto& va = val(a);
        for (std::size_t i = 0; i < go.size(); ++i)
          if (va[i] > T(0)) ga[i] += go[i];
      };
    return out;
  }

  // ---- normalization -------------------------------------------------------

  // per-row (x - mean) / sqrt(var + eps); affine terms are a separate op
  Var<T> layer_norm_rows(Var<T> a, T eps = T(1e-5)) {
    const Node& na = node(a);
    Node n = like(a);
    const int cols = na.cols;
    std::vector<T> inv_sigma(na.rows);
    for (int r = 0; r < na.rows; ++r) {
      const T* x = na.val.data() + static_cast<std::size_t>(r) * cols;
      T mean = T(0);
      for (int c = 0; c < cols; ++c) mean += x[c];
      mean /= T(cols);
      T var = T(0);
      for (int c = 0; c < cols; ++c) var += (x[c] - mean) * (x[c] - mean);
      var /= T(cols);
      const T is = T(1) / std::sqrt(var + eps);
      inv_sigma[r] = is;
      T* y = n.val.data() + static_cast<std::size_t>(r) * cols;
      for (int c = 0; c < cols; ++c) y[c] = (x[c] - mean) * is;
    }
    n.requires_grad = requires_grad(a);
    Var<T> out = push(std::move(n));
    if (node(out).requires_grad)
      node(out).backward = [this, a, out, inv_sigma = std::move(inv_sigma)] {
        auto& ga = grad_ref(a);
        const auto& go = grad(out);
        const auto& y = val(out);
        const int rows = node(a).rows, cols = node(a).cols;
        for (int r = 0; r < rows; ++r) {
          const T* gr = go.data() + static_cast<std::size_t>(r) * cols;
          const T* yr = y.data() + static_cast<std::size_t>(r) * cols;
          T* gar = ga.data() + static_cast<std::size_t>(r) * cols;
          T mean_g = T(0), mean_gy = T(0);
          for (int c = 0; c < cols; ++c) {
            mean_g += gr[c];
            mean_gy += gr[c] * yr[c];
          }
          mean_g /= T(cols);
          mean_gy /= T(cols);
          for (int c = 0; c < cols; ++c)
            gar[c] += inv_sigma[r] * (gr[c] - mean_g - yr[c] * mean_gy);
        }
      };
    return out;
  }

  // y_ij = a_ij * gain_j + bias_j
  Var<T> rowwise_affine(Var<T> a, Var<T> gain, Var<T> bias) {
    if (node(gain).rows != 1 || node(gain).cols != node(a).cols || node(bias).rows != 1 ||
        node(bias).cols != node(a).cols)
      throw domain_error("rowwise_affine: operand " + shape_str_of(a) + " gain " +
                         shape_str_of(gain) + " bias " + shape_str_of(bias));
    Node n = like(a);
    const auto &va = val(a), &vg = val(gain), &vb = val(bias);
    const int cols = n.cols;
    for (int r = 0; r < n.rows; ++r)
      for (int c = 0; c < cols; ++c) {
        const std::size_t i = static_cast<std::size_t>(r) * cols + c;
        n.val[i] = va[i] * vg[c] + vb[c];
      }
    n.requires_grad = requires_grad(a) || requires_grad(gain) || requires_grad(bias);
    Var<T> out = push(std::move(n));
    if (node(out).requires_grad)
      node(out).backward = [this, a, gain, bias, out] {
        const auto& go = grad(out);
        const auto& va = val(a);
        const auto& vg = val(gain);
        const int rows = node(a).rows, cols = node(a).cols;
        if (requires_grad(a)) {
          auto& ga = grad_ref(a);
          for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) {
              const std::size_t i = static_cast<std::size_t>(r) * cols + c;
              ga[i] += go[i] * vg[c];
            }
        }
        if (requires_grad(gain)) {
          auto& gg = grad_ref(gain);
          for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) {
              const std::size_t i = static_cast<std::size_t>(r) * cols + c;
              gg[c] += go[i] * va[i];
            }
        }
        if (requires_grad(bias)) {
          auto& gb = grad_ref(bias);
          for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) gb[c] += go[static_cast<std::size_t>(r) * cols + c];
        }
      };
    return out;
  }

  // ---- attention pieces ----------------------------------------------------

  // Row-wise softmax over logits with an optional additive per-column bias
  // (broadcast to every row) and an optional validity mask over columns.
  // Masked columns receive zero weight; a row with no valid column yields
  // all zeros.
  Var<T> softmax_rows(Var<T> logits, std::optional<Var<T>> key_bias,
                      const std::vector<std::uint8_t>* mask) {
    const Node& nl = node(logits);
    if (key_bias && (node(*key_bias).rows != 1 || node(*key_bias).cols != nl.cols))
      throw domain_error("softmax_rows: bias " + shape_str_of(*key_bias) + " for logits " +
                         shape_str_of(logits));
    if (mask && static_cast<int>(mask->size()) != nl.cols)
      throw domain_error("softmax_rows: mask length " + std::to_string(mask->size()) +
                         " for logits " + shape_str_of(logits));
    Node n = like(logits);
    const int cols = nl.cols;
    const std::uint8_t* valid = (mask && !mask->empty()) ? mask->data() : nullptr;
    const T* bias_row = key_bias ? val(*key_bias).data() : nullptr;
    for (int r = 0; r < nl.rows; ++r) {
      const T* x = nl.val.data() + static_cast<std::size_t>(r) * cols;
      T* y = n.val.data() + static_cast<std::size_t>(r) * cols;
      T max_logit = -std::numeric_limits<T>::infinity();
      for (int c = 0; c < cols; ++c) {
        if (valid && !valid[c]) continue;
        const T l = x[c] + (bias_row ? bias_row[c] : T(0));
        if (l > max_logit) max_logit = l;
      }
      if (max_logit == -std::numeric_limits<T>::infinity()) {
        for (int c = 0; c < cols; ++c) y[c] = T(0);
        continue;
      }
      T sum = T(0);
      for (int c = 0; c < cols; ++c) {
        if (valid && !valid[c]) {
          y[c] = T(0);
          continue;
        }
        y[c] = std::exp(x[c] + (bias_row ? bias_row[c] : T(0)) - max_logit);
        sum += y[c];
      }
      for (int c = 0; c < cols; ++c) y[c] /= sum;
    }
    n.requires_grad = requires_grad(logits) || (key_bias && requires_grad(*key_bias));
    Var<T> out = push(std::move(n));
    if (node(out).requires_grad)
      node(out).backward = [this, logits, key_bias, out] {
        const auto& go = grad(out);
        const auto& p = val(out);
        const int rows = node(logits).rows, cols = node(logits).cols;
        // dL/dl_ij = p_ij * (g_ij - sum_c g_ic p_ic); zero where p un-normalized (masked)
        std::vector<T> dl(static_cast<std::size_t>(rows) * cols);
        for (int r = 0; r < rows; ++r) {
          const T* gr = go.data() + static_cast<std::size_t>(r) * cols;
          const T* pr = p.data() + static_cast<std::size_t>(r) * cols;
          T dot = T(0);
          for (int c = 0; c < cols; ++c) dot += gr[c] * pr[c];
          T* dr = dl.data() + static_cast<std::size_t>(r) * cols;
          for (int c = 0; c < cols; ++c) dr[c] = pr[c] * (gr[c] - dot);
        }
        if (requires_grad(logits)) {
          auto& gl = grad_ref(logits);
          for (std::size_t i = 0; i < dl.size(); ++i) gl[i] += dl[i];
        }
        if (key_bias && requires_grad(*key_bias)) {
          auto& gb = grad_ref(*key_bias);
          for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) gb[c] += dl[static_cast<std::size_t>(r) * cols + c];
        }
      };
    return out;
  }

  // ---- shape ops -----------------------------------------------------------

  Var<T> concat_cols(Var<T> a, Var<T> b) {
    const Node &na = node(a), &nb = node(b);
    if (na.rows != nb.rows)
      throw domain_error("concat_cols: lhs " + shape_str_of(a) + " rhs " + shape_str_of(b));
    Node n;
    n.rows = na.rows;
    n.cols = na.cols + nb.cols;
    n.val.resize(static_cast<std::size_t>(n.rows) * n.cols);
    for (int r = 0; r < n.rows; ++r) {
      T* y = n.val.data() + static_cast<std::size_t>(r) * n.cols;
      const T* xa = na.val.data() + static_cast<std::size_t>(r) * na.cols;
      const T* xb = nb.val.data() + static_cast<std::size_t>(r) * nb.cols;
      for (int c = 0; c < na.cols; ++c) y[c] = xa[c];
      for (int c = 0; c < nb.cols; ++c) y[na.cols + c] = xb[c];
    }
    n.requires_grad = na.requires_grad || nb.requires_grad;
    Var<T> out = push(std::move(n));
    if (node(out).requires_grad)
      node(out).backward = [this, a, b, out] {
        const auto& go = grad(out);
        const int rows = node(a).rows, ca = node(a).cols, cb = node(b).cols;
        if (requires_grad(a)) {
          auto& ga = grad_ref(a);
          for (int r = 0; r < rows; ++r)
            for (int c = 0; c < ca; ++c)
              ga[static_cast<std::size_t>(r) * ca + c] += go[static_cast<std::size_t>(r) * (ca + cb) + c];
        }
        if (requires_grad(b)) {
          auto& gb = grad_ref(b);
          for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cb; ++c)
              gb[static_cast<std::size_t>(r) * cb + c] += go[static_cast<std::size_t>(r) * (ca + cb) + ca + c];
        }
      };
    return out;
  }

  Var<T> concat_rows(Var<T> a, Var<T> b) {
    const Node &na = node(a), &nb = node(b);
    if (na.cols != nb.cols)
      throw domain_error("concat_rows: lhs " + shape_str_of(a) + " rhs " + shape_str_of(b));
    Node n;
    n.rows = na.rows + nb.rows;
    n.cols = na.cols;
    n.val = na.val;
    n.val.insert(n.val.end(), nb.val.begin(), nb.val.end());
    n.requires_grad = na.requires_grad || nb.requires_grad;
    Var<T> out = push(std::move(n));
    if (node(out).requires_grad)
      node(out).backward = [this, a, b, out] {
        const auto& go = grad(out);
        const std::size_t na_len = val(a).size();
        if (requires_grad(a)) {
          auto& ga = grad_ref(a);
          for (std::size_t i = 0; i < na_len; ++i) ga[i] += go[i];
        }
        if (requires_grad(b)) {
          auto& gb = grad_ref(b);
          for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += go[na_len + i];
        }
      };
    return out;
  }

  Var<T> slice_cols(Var<T> a, int c0, int c1) {
    const Node& na = node(a);
    if (c0 < 0 || c1 > na.cols || c0 >= c1)
      throw domain_error("slice_cols: [" + std::to_string(c0) + ", " + std::to_string(c1) +
                         ") of " + shape_str_of(a));
    Node n;
    n.rows = na.rows;
    n.cols = c1 - c0;
    n.val.resize(static_cast<std::size_t>(n.rows) * n.cols);
    for (int r = 0; r < n.rows; ++r)
      for (int c = 0; c < n.cols; ++c)
        n.val[static_cast<std::size_t>(r) * n.cols + c] = na.val[static_cast<std::size_t>(r) * na.cols + c0 + c];
    n.requires_grad = na.requires_grad;
    Var<T> out = push(std::move(n));
    if (node(out).requires_grad)
      node(out).backward = [this, a, c0, out] {
        auto& ga = grad_ref(a);
        const auto& go = grad(out);
        const int rows = node(out).rows, cols = node(out).cols, acols = node(a).cols;
        for (int r = 0; r < rows; ++r)
          for (int c = 0; c < cols; ++c)
            ga[static_cast<std::size_t>(r) * acols + c0 + c] += go[static_cast<std::size_t>(r) * cols + c];
      };
    return out;
  }

  Var<T> slice_rows(Var<T> a, int r0, int r1) {
    const Node& na = node(a);
    if (r0 < 0 || r1 > na.rows || r0 >= r1)
      throw domain_error("slice_rows: [" + std::to_string(r0) + ", " + std::to_string(r1) +
                         ") of " + shape_str_of(a));
    Node n;
    n.rows = r1 - r0;
    n.cols = na.cols;
    n.val.assign(na.val.begin() + static_cast<std::size_t>(r0) * na.cols,
                 na.val.begin() + static_cast<std::size_t>(r1) * na.cols);
    n.requires_grad = na.requires_grad;
    Var<T> out = push(std::move(n));
    if (node(out).requires_grad)
      node(out).backward = [this, a, r0, out] {
        auto& ga = grad_ref(a);
        const auto& go = grad(out);
        const std::size_t off = static_cast<std::size_t>(r0) * node(a).cols;
        for (std::size_t i = 0; i < go.size(); ++i) ga[off + i] += go[i];
      };
    return out;
  }

  // ---- reductions and scalar tail -------------------------------------------

  Var<T> mean_all(Var<T> a) {
    const Node& na = node(a);
    T m = T(0);
    for (const T& x : na.val) m += x;
    m /= T(na.val.size());
    Node n;
    n.rows = 1;
    n.cols = 1;
    n.val = {m};
    n.requires_grad = na.requires_grad;
    Var<T> out = push(std::move(n));
    if (node(out).requires_grad)
      node(out).backward = [this, a, out] {
        auto& ga = grad_ref(a);
        const T g = grad(out)[0] / T(ga.size());
        for (T& x : ga) x += g;
      };
    return out;
  }

  Var<T> dot(Var<T> a, Var<T> b) {
    require_same_shape("dot", a, b);
    const auto &va = val(a), &vb = val(b);
    T d = T(0);
    for (std::size_t i = 0; i < va.size(); ++i) d += va[i] * vb[i];
    Node n;
    n.rows = 1;
    n.cols = 1;
    n.val = {d};
    n.requires_grad = requires_grad(a) || requires_grad(b);
    Var<T> out = push(std::move(n));
    if (node(out).requires_grad)
      node(out).backward = [this, a, b, out] {
        const T g = grad(out)[0];
        if (requires_grad(a)) {
          auto& ga = grad_ref(a);
          const auto& vb = val(b);
          for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * vb[i];
        }
        if (requires_grad(b)) {
          auto& gb = grad_ref(b);
          const auto& va = val(a);
          for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g * va[i];
        }
      };
    return out;
  }

  // whole tensor scaled to unit Euclidean norm
  Var<T> l2_normalize(Var<T> a) {
    const auto& va = val(a);
    T norm_sq = T(0);
    for (const T& x : va) norm_sq += x * x;
    const T norm = std::sqrt(norm_sq);
    if (!(norm > T(1e-12))) throw degenerate_error("l2_normalize: near-zero vector");
    Node n = like(a);
    for (std::size_t i = 0; i < n.val.size(); ++i) n.val[i] = va[i] / norm;
    n.requires_grad = requires_grad(a);
    Var<T> out = push(std::move(n));
    if (node(out).requires_grad)
      node(out).backward = [this, a, out, norm] {
        auto& ga = grad_ref(a);
        const auto& go = grad(out);
        const auto& y = val(out);
        T ydotg = T(0);
        for (std::size_t i = 0; i < go.size(); ++i) ydotg += y[i] * go[i];
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += (go[i] - y[i] * ydotg) / norm;
      };
    return out;
  }

  // arccos of clamp(x, -1 + eps, 1 - eps), elementwise. The clamp saturates:
  // outside the window the derivative is zero, at the boundary it is
  // -1/sqrt(2 eps - eps^2).
  Var<T> arccos_clamped(Var<T> a, T eps = T(1e-7)) {
    Node n = like(a);
    const auto& va = val(a);
    const T lo = T(-1) + eps, hi = T(1) - eps;
    for (std::size_t i = 0; i < n.val.size(); ++i) {
      T x = va[i];
      x = x < lo ? lo : (x > hi ? hi : x);
      n.val[i] = std::acos(x);
    }
    n.requires_grad = requires_grad(a);
    Var<T> out = push(std::move(n));
    if (node(out).requires_grad)
      node(out).backward = [this, a, out, lo, hi] {
        auto& ga = grad_ref(a);
        const auto& go = grad(out);
        const auto& va = val(a);
        for (std::size_t i = 0; i < ga.size(); ++i) {
          if (va[i] < lo || va[i] > hi) continue;
          ga[i] += -go[i] / std::sqrt(T(1) - va[i] * va[i]);
        }
      };
    return out;
  }

  // ---- execution -------------------------------------------------------------

  void backward(Var<T> loss) {
    const Node& nl = node(loss);
    if (nl.rows != 1 || nl.cols != 1)
      throw domain_error("backward: loss must be scalar, got " + shape_str_of(loss));
    for (Node& n : nodes_)
      if (n.requires_grad) n.grad.assign(n.val.size(), T(0));
    grad_ref(loss)[0] = T(1);
    for (int i = loss.id; i >= 0; --i)
      if (nodes_[i].requires_grad && nodes_[i].backward) nodes_[i].backward();
  }

  const std::vector<T>& val(Var<T> v) const { return node(v).val; }
  const std::vector<T>& grad(Var<T> v) const {
    const Node& n = node(v);
    if (n.grad.empty()) throw domain_error("grad: no gradient recorded for this node");
    return n.grad;
  }
  int rows(Var<T> v) const { return node(v).rows; }
  int cols(Var<T> v) const { return node(v).cols; }
  bool requires_grad(Var<T> v) const { return node(v).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    int rows = 0, cols = 0;
    std::vector<T> val;
    std::vector<T> grad;
    bool requires_grad = false;
    std::function<void()> backward;
  };

  Node& node(Var<T> v) {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
      throw domain_error("autodiff: variable does not belong to this tape");
    return nodes_[v.id];
  }
  const Node& node(Var<T> v) const {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
      throw domain_error("autodiff: variable does not belong to this tape");
    return nodes_[v.id];
  }

  std::vector<T>& grad_ref(Var<T> v) {
    Node& n = node(v);
    if (n.grad.empty()) n.grad.assign(n.val.size(), T(0));
    return n.grad;
  }

  void accumulate(Var<T> v, const std::vector<T>& g, T scale) {
    if (!requires_grad(v)) return;
    auto& gv = grad_ref(v);
    for (std::size_t i = 0; i < gv.size(); ++i) gv[i] += scale * g[i];
  }

  Node like(Var<T> a) {
    Node n;
    n.rows = node(a).rows;
    n.cols = node(a).cols;
    n.val.resize(node(a).val.size());
    return n;
  }

  Var<T> push(Node&& n) {
    nodes_.push_back(std::move(n));
    return Var<T>{static_cast<int>(nodes_.size()) - 1};
  }

  static std::string shape_str(int r, int c) {
    return std::to_string(r) + "x" + std::to_string(c);
  }
  std::string shape_str_of(Var<T> v) const { return shape_str(node(v).rows, node(v).cols); }

  void require_same_shape(const char* op, Var<T> a, Var<T> b) const {
    if (node(a).rows != node(b).rows || node(a).cols != node(b).cols)
      throw domain_error(std::string(op) + ": lhs " + shape_str_of(a) + " rhs " + shape_str_of(b));
  }

  std::vector<Node> nodes_;
};

}  // namespace gaze3d::ad

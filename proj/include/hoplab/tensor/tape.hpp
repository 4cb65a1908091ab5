#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hoplab/common.hpp"
#include "hoplab/tensor/tensor.hpp"

namespace hoplab::tensor {

template <typename T>
using MatMap =
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap = Eigen::Map<
    const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// Reverse-mode tape over a closed primitive set. Usage: register parameters
// with leaf(), build the graph through the op methods, call backward() on a
// scalar node. Gradients accumulate (+=) into node buffers and, for leaves,
// directly into the registered tensor's grad array; callers zero parameter
// grads between steps. A tape is single-use: build, backward, discard.
template <typename T>
class Tape {
 public:
  using Id = std::uint32_t;

  Id leaf(Tensor<T>* param) {
    Node n;
    n.op = OpKind::kLeaf;
    n.external = param;
    return push(std::move(n));
  }

  // Gathers rows of `table` (an embedding table or any activation matrix).
  // Backward scatter-adds into the used rows only.
  Id gather_rows(Id table, std::vector<std::uint32_t> ids) {
    const Tensor<T>& t = value(table);
    for (std::uint32_t id : ids)
      if (id >= t.rows)
        throw IndexError("gather: row " + std::to_string(id) +
                         " out of range for " + t.shape_str());
    Node n;
    n.op = OpKind::kGather;
    n.inputs = {table};
    n.idx = std::move(ids);
    n.out = Tensor<T>(n.idx.size(), t.cols);
    const T* src = t.val.data();
    for (std::size_t i = 0; i < n.idx.size(); ++i)
      std::copy(src + std::size_t{n.idx[i]} * t.cols,
                src + (std::size_t{n.idx[i]} + 1) * t.cols,
                n.out.val.begin() + i * t.cols);
    return push(std::move(n));
  }

  // y = x W + b (b broadcast over rows; pass kNoBias to skip).
  static constexpr Id kNoBias = std::numeric_limits<Id>::max();
  Id affine(Id x, Id w, Id b = kNoBias) {
    const Tensor<T>& xt = value(x);
    const Tensor<T>& wt = value(w);
    if (xt.cols != wt.rows)
      throw ShapeError("affine: " + xt.shape_str() + " x " + wt.shape_str());
    if (b != kNoBias) {
      const Tensor<T>& bt = value(b);
      if (bt.rows != 1 || bt.cols != wt.cols)
        throw ShapeError("affine bias: " + bt.shape_str() + " for output cols " +
                         std::to_string(wt.cols));
    }
    Node n;
    n.op = OpKind::kAffine;
    n.inputs = b == kNoBias ? std::vector<Id>{x, w} : std::vector<Id>{x, w, b};
    n.out = Tensor<T>(xt.rows, wt.cols);
    MatMap<T>(n.out.val.data(), xt.rows, wt.cols).noalias() =
        cmap(xt) * cmap(wt);
    if (b != kNoBias) {
      const Tensor<T>& bt = value(b);
      MatMap<T>(n.out.val.data(), xt.rows, wt.cols).rowwise() +=
          Eigen::Map<const Eigen::RowVector<T, Eigen::Dynamic>>(bt.val.data(),
                                                                bt.cols);
    }
    return push(std::move(n));
  }

  Id add(Id a, Id b) {
    const Tensor<T>& at = value(a);
    const Tensor<T>& bt = value(b);
    if (at.rows != bt.rows || at.cols != bt.cols)
      throw ShapeError("add: " + at.shape_str() + " vs " + bt.shape_str());
    Node n;
    n.op = OpKind::kAdd;
    n.inputs = {a, b};
    n.out = Tensor<T>(at.rows, at.cols);
    for (std::size_t i = 0; i < n.out.val.size(); ++i)
      n.out.val[i] = at.val[i] + bt.val[i];
    return push(std::move(n));
  }

  // Row-wise layer norm with learned gain/shift (each 1 x cols).
  Id layer_norm(Id x, Id gain, Id shift, T eps) {
    const Tensor<T>& xt = value(x);
    const Tensor<T>& gt = value(gain);
    const Tensor<T>& st = value(shift);
    if (xt.cols == 0) throw ShapeError("layer_norm: empty rows");
    if (gt.rows != 1 || gt.cols != xt.cols || st.rows != 1 ||
        st.cols != xt.cols)
      throw ShapeError("layer_norm affine: gain " + gt.shape_str() +
                       ", shift " + st.shape_str() + " for " + xt.shape_str());
    Node n;
    n.op = OpKind::kLayerNorm;
    n.inputs = {x, gain, shift};
    n.eps = eps;
    n.out = Tensor<T>(xt.rows, xt.cols);
    n.s0.resize(xt.rows * xt.cols);  // xhat
    n.s1.resize(xt.rows);            // inv_std
    const std::size_t D = xt.cols;
    for (std::size_t r = 0; r < xt.rows; ++r) {
      const T* row = xt.val.data() + r * D;
      T mean = T(0);
      for (std::size_t j = 0; j < D; ++j) mean += row[j];
      mean /= T(D);
      T var = T(0);
      for (std::size_t j = 0; j < D; ++j) {
        const T d = row[j] - mean;
        var += d * d;
      }
      var /= T(D);
      const T inv_std = T(1) / std::sqrt(var + eps);
      n.s1[r] = inv_std;
      T* xhat = n.s0.data() + r * D;
      T* out = n.out.val.data() + r * D;
      for (std::size_t j = 0; j < D; ++j) {
        xhat[j] = (row[j] - mean) * inv_std;
        out[j] = gt.val[j] * xhat[j] + st.val[j];
      }
    }
    return push(std::move(n));
  }

  Id gelu(Id x) {
    const Tensor<T>& xt = value(x);
    Node n;
    n.op = OpKind::kGelu;
    n.inputs = {x};
    n.out = Tensor<T>(xt.rows, xt.cols);
    constexpr T kInvSqrt2 = T(0.7071067811865475244L);
    for (std::size_t i = 0; i < xt.val.size(); ++i) {
      const T v = xt.val[i];
      n.out.val[i] = T(0.5) * v * (T(1) + std::erf(v * kInvSqrt2));
    }
    return push(std::move(n));
  }

  // Row-wise softmax.
  Id softmax(Id x) {
    const Tensor<T>& xt = value(x);
    if (xt.cols == 0) throw ShapeError("softmax: empty rows");
    Node n;
    n.op = OpKind::kSoftmax;
    n.inputs = {x};
    n.out = Tensor<T>(xt.rows, xt.cols);
    for (std::size_t r = 0; r < xt.rows; ++r)
      softmax_row(xt.val.data() + r * xt.cols, n.out.val.data() + r * xt.cols,
                  xt.cols);
    return push(std::move(n));
  }

  // Mean negative log-softmax at the target ids (one per logits row).
  Id cross_entropy(Id logits, std::vector<std::uint32_t> targets) {
    const Tensor<T>& lt = value(logits);
    if (targets.size() != lt.rows)
      throw ShapeError("cross_entropy: " + std::to_string(targets.size()) +
                       " targets for " + lt.shape_str());
    for (std::uint32_t t : targets)
      if (t >= lt.cols)
        throw IndexError("cross_entropy: target " + std::to_string(t) +
                         " out of range for " + std::to_string(lt.cols) +
                         " classes");
    Node n;
    n.op = OpKind::kCrossEntropy;
    n.inputs = {logits};
    n.idx = std::move(targets);
    n.out = Tensor<T>(1, 1);
    n.s0.resize(lt.rows * lt.cols);  // softmax probs
    T total = T(0);
    for (std::size_t r = 0; r < lt.rows; ++r) {
      const T* row = lt.val.data() + r * lt.cols;
      T* p = n.s0.data() + r * lt.cols;
      const T lse = softmax_row(row, p, lt.cols);
      total += lse - row[n.idx[r]];
    }
    n.out.val[0] = total / T(lt.rows);
    return push(std::move(n));
  }

  // Fused multi-head causal self-attention over fixed-length sequences.
  // x is (batch * seq_len) x dim with rows sequence-major. Positions attend
  // to themselves and earlier positions only; masked weights are exact zeros.
  Id causal_attention(Id x, std::size_t num_heads, std::size_t seq_len, Id wq,
                      Id bq, Id wk, Id bk, Id wv, Id bv, Id wo, Id bo) {
    const Tensor<T>& xt = value(x);
    const std::size_t D = xt.cols;
    if (num_heads == 0 || D % num_heads != 0)
      throw ConfigError("attention: dim " + std::to_string(D) +
                        " not divisible by " + std::to_string(num_heads) +
                        " heads");
    if (seq_len == 0 || xt.rows % seq_len != 0)
      throw ShapeError("attention: " + std::to_string(xt.rows) +
                       " rows not a multiple of seq_len " +
                       std::to_string(seq_len));
    for (Id w : {wq, wk, wv, wo}) {
      const Tensor<T>& wt = value(w);
      if (wt.rows != D || wt.cols != D)
        throw ShapeError("attention projection " + wt.shape_str() +
                         " for dim " + std::to_string(D));
    }
    const std::size_t B = xt.rows / seq_len;
    const std::size_t dh = D / num_heads;
    const T scale = T(1) / std::sqrt(T(dh));

    Node n;
    n.op = OpKind::kAttention;
    n.inputs = {x, wq, bq, wk, bk, wv, bv, wo, bo};
    n.heads = num_heads;
    n.seq = seq_len;
    n.out = Tensor<T>(xt.rows, D);
    n.s0.resize(xt.rows * D);  // Q
    n.s1.resize(xt.rows * D);  // K
    n.s2.resize(xt.rows * D);  // V
    n.s3.assign(B * num_heads * seq_len * seq_len, T(0));  // probs
    n.s4.resize(xt.rows * D);  // concatenated head outputs

    const auto project = [&](Id w, Id b, aligned_vector<T>& dst) {
      MatMap<T> m(dst.data(), xt.rows, D);
      m.noalias() = cmap(xt) * cmap(value(w));
      const Tensor<T>& bt = value(b);
      m.rowwise() += Eigen::Map<const Eigen::RowVector<T, Eigen::Dynamic>>(
          bt.val.data(), bt.cols);
    };
    project(wq, bq, n.s0);
    project(wk, bk, n.s1);
    project(wv, bv, n.s2);

    ConstMatMap<T> Q(n.s0.data(), xt.rows, D);
    ConstMatMap<T> K(n.s1.data(), xt.rows, D);
    ConstMatMap<T> V(n.s2.data(), xt.rows, D);
    MatMap<T> Cat(n.s4.data(), xt.rows, D);
    std::vector<T> scores(seq_len);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t h = 0; h < num_heads; ++h) {
        T* probs = n.s3.data() + ((b * num_heads + h) * seq_len) * seq_len;
        const auto qb = Q.block(b * seq_len, h * dh, seq_len, dh);
        const auto kb = K.block(b * seq_len, h * dh, seq_len, dh);
        const auto vb = V.block(b * seq_len, h * dh, seq_len, dh);
        auto cb = Cat.block(b * seq_len, h * dh, seq_len, dh);
        for (std::size_t i = 0; i < seq_len; ++i) {
          for (std::size_t j = 0; j <= i; ++j)
            scores[j] = scale * ordered_dot(qb.row(i), kb.row(j));
          softmax_row(scores.data(), probs + i * seq_len, i + 1);
          cb.row(i).setZero();
          for (std::size_t j = 0; j <= i; ++j)
            cb.row(i) += probs[i * seq_len + j] * vb.row(j);
        }
      }
    }

    MatMap<T> out(n.out.val.data(), xt.rows, D);
    out.noalias() = ConstMatMap<T>(n.s4.data(), xt.rows, D) * cmap(value(wo));
    const Tensor<T>& bot = value(bo);
    out.rowwise() += Eigen::Map<const Eigen::RowVector<T, Eigen::Dynamic>>(
        bot.val.data(), bot.cols);
    return push(std::move(n));
  }

  const Tensor<T>& value(Id id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.out;
  }

  // Attention probabilities of an attention node, laid out
  // [batch][head][query position][key position].
  const aligned_vector<T>& attention_probs(Id id) const {
    if (nodes_[id].op != OpKind::kAttention)
      throw ConfigError("node is not an attention node");
    return nodes_[id].s3;
  }

  void backward(Id root) {
    {
      Tensor<T>& r = grad_target(root);
      if (r.size() != 1)
        throw ShapeError("backward root must be scalar, got " + r.shape_str());
      r.grad[0] += T(1);
    }
    for (std::size_t k = nodes_.size(); k-- > 0;) {
      if (Id(k) > root) continue;
      dispatch_backward(Id(k));
    }
  }

  std::size_t num_nodes() const { return nodes_.size(); }

 private:
  enum class OpKind : std::uint8_t {
    kLeaf,
    kGather,
    kAffine,
    kAdd,
    kLayerNorm,
    kGelu,
    kSoftmax,
    kCrossEntropy,
    kAttention,
  };

  struct Node {
    OpKind op;
    std::vector<Id> inputs;
    Tensor<T> out;
    Tensor<T>* external = nullptr;
    std::vector<std::uint32_t> idx;  // gather ids / cross-entropy targets
    std::size_t heads = 0, seq = 0;
    T eps = T(0);
    // Saved activations. layer_norm: s0=xhat, s1=inv_std. cross_entropy:
    // s0=probs. attention: s0=Q, s1=K, s2=V, s3=probs, s4=head concat.
    aligned_vector<T> s0, s1, s2, s3, s4;
  };

  Id push(Node n) {
    nodes_.push_back(std::move(n));
    return Id(nodes_.size() - 1);
  }

  static ConstMatMap<T> cmap(const Tensor<T>& t) {
    return ConstMatMap<T>(t.val.data(), t.rows, t.cols);
  }

  Tensor<T>& grad_target(Id id) {
    Node& n = nodes_[id];
    return n.external ? *n.external : n.out;
  }

  // Fixed-order dot product. Eigen's vectorized reduction varies its
  // summation order with runtime buffer alignment, which breaks bitwise
  // reproducibility across otherwise identical runs.
  template <typename RowA, typename RowB>
  static T ordered_dot(const RowA& a, const RowB& b) {
    T acc = T(0);
    for (Eigen::Index k = 0; k < a.size(); ++k) acc += a(k) * b(k);
    return acc;
  }

  // Writes softmax of row[0..len) into out[0..len) and returns logsumexp.
  static T softmax_row(const T* row, T* out, std::size_t len) {
    T m = row[0];
    for (std::size_t j = 1; j < len; ++j) m = std::max(m, row[j]);
    T sum = T(0);
    for (std::size_t j = 0; j < len; ++j) {
      out[j] = std::exp(row[j] - m);
      sum += out[j];
    }
    const T inv = T(1) / sum;
    for (std::size_t j = 0; j < len; ++j) out[j] *= inv;
    return m + std::log(sum);
  }

  void dispatch_backward(Id id) {
    Node& n = nodes_[id];
    switch (n.op) {
      case OpKind::kLeaf:
        return;
      case OpKind::kGather: {
        const Tensor<T>& gy = grad_target(id);
        Tensor<T>& gx = grad_target(n.inputs[0]);
        for (std::size_t i = 0; i < n.idx.size(); ++i) {
          const T* src = gy.grad.data() + i * gx.cols;
          T* dst = gx.grad.data() + std::size_t{n.idx[i]} * gx.cols;
          for (std::size_t j = 0; j < gx.cols; ++j) dst[j] += src[j];
        }
        return;
      }
      case OpKind::kAffine: {
        const Tensor<T>& gy = grad_target(id);
        Tensor<T>& xt = grad_target(n.inputs[0]);
        Tensor<T>& wt = grad_target(n.inputs[1]);
        ConstMatMap<T> G(gy.grad.data(), gy.rows, gy.cols);
        MatMap<T>(xt.grad.data(), xt.rows, xt.cols).noalias() +=
            G * cmap(wt).transpose();
        MatMap<T>(wt.grad.data(), wt.rows, wt.cols).noalias() +=
            cmap(xt).transpose() * G;
        if (n.inputs.size() == 3) {
          Tensor<T>& bt = grad_target(n.inputs[2]);
          Eigen::Map<Eigen::RowVector<T, Eigen::Dynamic>>(bt.grad.data(),
                                                          bt.cols) +=
              G.colwise().sum();
        }
        return;
      }
      case OpKind::kAdd: {
        const Tensor<T>& gy = grad_target(id);
        Tensor<T>& a = grad_target(n.inputs[0]);
        Tensor<T>& b = grad_target(n.inputs[1]);
        for (std::size_t i = 0; i < gy.grad.size(); ++i) {
          a.grad[i] += gy.grad[i];
          b.grad[i] += gy.grad[i];
        }
        return;
      }
      case OpKind::kLayerNorm: {
        const Tensor<T>& gy = grad_target(id);
        Tensor<T>& xt = grad_target(n.inputs[0]);
        Tensor<T>& gt = grad_target(n.inputs[1]);
        Tensor<T>& st = grad_target(n.inputs[2]);
        const std::size_t D = xt.cols;
        for (std::size_t r = 0; r < xt.rows; ++r) {
          const T* g = gy.grad.data() + r * D;
          const T* xhat = n.s0.data() + r * D;
          const T inv_std = n.s1[r];
          T mean_h = T(0), mean_hx = T(0);
          for (std::size_t j = 0; j < D; ++j) {
            const T h = g[j] * gt.val[j];
            mean_h += h;
            mean_hx += h * xhat[j];
            gt.grad[j] += g[j] * xhat[j];
            st.grad[j] += g[j];
          }
          mean_h /= T(D);
          mean_hx /= T(D);
          T* gx = xt.grad.data() + r * D;
          for (std::size_t j = 0; j < D; ++j) {
            const T h = g[j] * gt.val[j];
            gx[j] += inv_std * (h - mean_h - xhat[j] * mean_hx);
          }
        }
        return;
      }
      case OpKind::kGelu: {
        const Tensor<T>& gy = grad_target(id);
        Tensor<T>& xt = grad_target(n.inputs[0]);
        constexpr T kInvSqrt2 = T(0.7071067811865475244L);
        constexpr T kInvSqrt2Pi = T(0.3989422804014326779L);
        for (std::size_t i = 0; i < xt.val.size(); ++i) {
          const T v = xt.val[i];
          const T cdf = T(0.5) * (T(1) + std::erf(v * kInvSqrt2));
          const T pdf = kInvSqrt2Pi * std::exp(T(-0.5) * v * v);
          xt.grad[i] += gy.grad[i] * (cdf + v * pdf);
        }
        return;
      }
      case OpKind::kSoftmax: {
        const Tensor<T>& gy = grad_target(id);
        Tensor<T>& xt = grad_target(n.inputs[0]);
        const std::size_t C = xt.cols;
        for (std::size_t r = 0; r < xt.rows; ++r) {
          const T* y = n.out.val.data() + r * C;
          const T* g = gy.grad.data() + r * C;
          T dot = T(0);
          for (std::size_t j = 0; j < C; ++j) dot += g[j] * y[j];
          T* gx = xt.grad.data() + r * C;
          for (std::size_t j = 0; j < C; ++j) gx[j] += y[j] * (g[j] - dot);
        }
        return;
      }
      case OpKind::kCrossEntropy: {
        const T g = grad_target(id).grad[0];
        Tensor<T>& lt = grad_target(n.inputs[0]);
        const T inv_n = g / T(lt.rows);
        for (std::size_t r = 0; r < lt.rows; ++r) {
          const T* p = n.s0.data() + r * lt.cols;
          T* gl = lt.grad.data() + r * lt.cols;
          for (std::size_t j = 0; j < lt.cols; ++j) gl[j] += inv_n * p[j];
          gl[n.idx[r]] -= inv_n;
        }
        return;
      }
      case OpKind::kAttention:
        backward_attention(n, grad_target(id));
        return;
    }
  }

  void backward_attention(Node& n, const Tensor<T>& gy) {
    Tensor<T>& xt = grad_target(n.inputs[0]);
    Tensor<T>& wq = grad_target(n.inputs[1]);
    Tensor<T>& bq = grad_target(n.inputs[2]);
    Tensor<T>& wk = grad_target(n.inputs[3]);
    Tensor<T>& bk = grad_target(n.inputs[4]);
    Tensor<T>& wv = grad_target(n.inputs[5]);
    Tensor<T>& bv = grad_target(n.inputs[6]);
    Tensor<T>& wo = grad_target(n.inputs[7]);
    Tensor<T>& bo = grad_target(n.inputs[8]);

    const std::size_t rows = xt.rows;
    const std::size_t D = xt.cols;
    const std::size_t S = n.seq;
    const std::size_t H = n.heads;
    const std::size_t B = rows / S;
    const std::size_t dh = D / H;
    const T scale = T(1) / std::sqrt(T(dh));

    ConstMatMap<T> G(gy.grad.data(), rows, D);
    // Output projection.
    aligned_vector<T> g_cat_buf(rows * D);
    MatMap<T> gCat(g_cat_buf.data(), rows, D);
    gCat.noalias() = G * cmap(wo).transpose();
    MatMap<T>(wo.grad.data(), D, D).noalias() +=
        ConstMatMap<T>(n.s4.data(), rows, D).transpose() * G;
    Eigen::Map<Eigen::RowVector<T, Eigen::Dynamic>>(bo.grad.data(), D) +=
        G.colwise().sum();

    // Per-head attention backward into gQ/gK/gV.
    aligned_vector<T> gq_buf(rows * D, T(0)), gk_buf(rows * D, T(0)),
        gv_buf(rows * D, T(0));
    ConstMatMap<T> Q(n.s0.data(), rows, D);
    ConstMatMap<T> K(n.s1.data(), rows, D);
    ConstMatMap<T> V(n.s2.data(), rows, D);
    MatMap<T> gQ(gq_buf.data(), rows, D);
    MatMap<T> gK(gk_buf.data(), rows, D);
    MatMap<T> gV(gv_buf.data(), rows, D);
    std::vector<T> gprobs(S);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t h = 0; h < H; ++h) {
        const T* probs = n.s3.data() + ((b * H + h) * S) * S;
        const auto qb = Q.block(b * S, h * dh, S, dh);
        const auto kb = K.block(b * S, h * dh, S, dh);
        const auto vb = V.block(b * S, h * dh, S, dh);
        const auto gcb = gCat.block(b * S, h * dh, S, dh);
        auto gqb = gQ.block(b * S, h * dh, S, dh);
        auto gkb = gK.block(b * S, h * dh, S, dh);
        auto gvb = gV.block(b * S, h * dh, S, dh);
        for (std::size_t i = 0; i < S; ++i) {
          const T* p = probs + i * S;
          // d context / d V and d probs.
          T dot = T(0);
          for (std::size_t j = 0; j <= i; ++j) {
            gprobs[j] = ordered_dot(gcb.row(i), vb.row(j));
            gvb.row(j) += p[j] * gcb.row(i);
            dot += gprobs[j] * p[j];
          }
          // Softmax backward, then scores -> Q, K.
          for (std::size_t j = 0; j <= i; ++j) {
            const T gs = p[j] * (gprobs[j] - dot) * scale;
            gqb.row(i) += gs * kb.row(j);
            gkb.row(j) += gs * qb.row(i);
          }
        }
      }
    }

    // Projection backward: P = x W + b for each of Q, K, V.
    const auto back_project = [&](const aligned_vector<T>& gp, Tensor<T>& w,
                                  Tensor<T>& bias) {
      ConstMatMap<T> GP(gp.data(), rows, D);
      MatMap<T>(xt.grad.data(), rows, D).noalias() +=
          GP * cmap(w).transpose();
      MatMap<T>(w.grad.data(), D, D).noalias() += cmap(xt).transpose() * GP;
      Eigen::Map<Eigen::RowVector<T, Eigen::Dynamic>>(bias.grad.data(), D) +=
          GP.colwise().sum();
    };
    back_project(gq_buf, wq, bq);
    back_project(gk_buf, wk, bk);
    back_project(gv_buf, wv, bv);
  }

  std::vector<Node> nodes_;
};

}  // namespace hoplab::tensor

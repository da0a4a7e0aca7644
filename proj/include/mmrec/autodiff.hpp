#ifndef MMREC_AUTODIFF_HPP
#define MMREC_AUTODIFF_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mmrec/kernels.hpp"
#include "mmrec/rng.hpp"
#include "mmrec/tensor.hpp"

namespace mmrec {

// Reverse-mode tape over dense tensors. Templated on the scalar so the
// production float path and the double finite-difference path share one
// implementation.

template <typename T>
struct ParameterT {
  std::string name;
  TensorT<T> value;
  TensorT<T> grad;
  TensorT<T> adam_m;
  TensorT<T> adam_v;

  ParameterT() = default;
  ParameterT(std::string n, TensorT<T> v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape), adam_m(value.shape), adam_v(value.shape) {}

  void zero_grad() { grad.fill(T(0)); }
};

template <typename T>
struct BatchNormStateT {
  ParameterT<T> gamma;
  ParameterT<T> beta;
  TensorT<T> running_mean;
  TensorT<T> running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);

  BatchNormStateT() = default;
  BatchNormStateT(const std::string& name, size_t dim)
      : gamma(name + ".gamma", TensorT<T>({dim})),
        beta(name + ".beta", TensorT<T>({dim})),
        running_mean(TensorT<T>({dim})),
        running_var(TensorT<T>({dim})) {
    gamma.value.fill(T(1));
    running_var.fill(T(1));
  }
};

template <typename T>
class GraphT {
 public:
  using Var = int;

  // ---- leaves ----

  Var input(TensorT<T> v) {
    return add_node(std::move(v), {}, nullptr);
  }

  Var param(ParameterT<T>& p) {
    Var id = add_node(p.value, {}, nullptr);
    mark_binds_param(id);
    ParameterT<T>* pp = &p;
    nodes_[id].backward = [id, pp](GraphT& g) {
      const TensorT<T>& gr = g.nodes_[id].grad;
      for (size_t i = 0; i < gr.numel(); ++i) pp->grad.data[i] += gr.data[i];
    };
    return id;
  }

  // Row gather from an embedding table.
  Var rows(ParameterT<T>& table, std::vector<int> idx) {
    size_t d = table.value.cols();
    TensorT<T> out({idx.size(), d});
    for (size_t r = 0; r < idx.size(); ++r) {
      check_index(idx[r], table.value.rows(), "rows: index out of range");
      std::copy_n(table.value.row_ptr(static_cast<size_t>(idx[r])), d, out.row_ptr(r));
    }
    Var id = add_node(std::move(out), {}, nullptr);
    mark_binds_param(id);
    ParameterT<T>* pp = &table;
    nodes_[id].backward = [id, pp, idx = std::move(idx), d](GraphT& g) {
      const TensorT<T>& gr = g.nodes_[id].grad;
      for (size_t r = 0; r < idx.size(); ++r) {
        T* dst = pp->grad.row_ptr(static_cast<size_t>(idx[r]));
        const T* src = gr.row_ptr(r);
        for (size_t j = 0; j < d; ++j) dst[j] += src[j];
      }
    };
    return id;
  }

  // ---- layers ----

  // y[m x out] = x[m x in] * W[out x in]^T + b
  Var linear(Var x, ParameterT<T>& w, ParameterT<T>* b) {
    const TensorT<T>& xv = value(x);
    size_t m = xv.rows(), in = xv.cols(), out = w.value.rows();
    if (w.value.cols() != in) throw ValidationError("linear: weight shape mismatch for " + w.name);
    if (b && b->value.numel() != out) throw ValidationError("linear: bias shape mismatch for " + b->name);
    TensorT<T> y({m, out});
    kernels::matmul_nt(xv.data.data(), w.value.data.data(), y.data.data(), m, out, in);
    if (b) {
      for (size_t i = 0; i < m; ++i) {
        T* yr = y.row_ptr(i);
        for (size_t j = 0; j < out; ++j) yr[j] += b->value.data[j];
      }
    }
    Var id = add_node(std::move(y), {x}, nullptr);
    mark_binds_param(id);
    ParameterT<T>* pw = &w;
    ParameterT<T>* pb = b;
    nodes_[id].backward = [id, x, pw, pb, m, in, out](GraphT& g) {
      const TensorT<T>& gy = g.nodes_[id].grad;
      const TensorT<T>& xv2 = g.value(x);
      // dW += gy^T * x
      kernels::matmul_tn(gy.data.data(), xv2.data.data(), pw->grad.data.data(), m, in, out, true);
      if (pb) kernels::col_sum(gy.data.data(), pb->grad.data.data(), m, out, true);
      if (g.wants_grad(x)) {
        kernels::matmul_nn(gy.data.data(), pw->value.data.data(), g.grad_of(x).data.data(), m, in, out, true);
      }
    };
    return id;
  }

  Var relu(Var x) {
    TensorT<T> y = value(x);
    for (T& v : y.data) v = v > T(0) ? v : T(0);
    Var id = add_node(std::move(y), {x}, nullptr);
    nodes_[id].backward = [id, x](GraphT& g) {
      if (!g.wants_grad(x)) return;
      const TensorT<T>& gy = g.nodes_[id].grad;
      const TensorT<T>& xv = g.value(x);
      TensorT<T>& gx = g.grad_of(x);
      for (size_t i = 0; i < gy.numel(); ++i)
        if (xv.data[i] > T(0)) gx.data[i] += gy.data[i];
    };
    return id;
  }

  // Train mode normalizes by batch statistics (and updates running stats);
  // eval mode is a per-row affine map from the running statistics.
  Var batchnorm(Var x, BatchNormStateT<T>& bn, bool train_mode) {
    const TensorT<T>& xv = value(x);
    size_t m = xv.rows(), d = xv.cols();
    if (bn.gamma.value.numel() != d) throw ValidationError("batchnorm: feature dim mismatch");
    if (train_mode && m < 2)
      throw ValidationError("batchnorm: train mode needs batch size >= 2 (variance undefined)");

    TensorT<T> y({m, d});
    auto mean = std::make_shared<std::vector<double>>(d, 0.0);
    auto inv_std = std::make_shared<std::vector<double>>(d, 0.0);
    if (train_mode) {
      for (size_t j = 0; j < d; ++j) {
        double s = 0;
        for (size_t i = 0; i < m; ++i) s += static_cast<double>(xv.at(i, j));
        double mu = s / static_cast<double>(m);
        double v = 0;
        for (size_t i = 0; i < m; ++i) {
          double c = static_cast<double>(xv.at(i, j)) - mu;
          v += c * c;
        }
        double var_biased = v / static_cast<double>(m);
        (*mean)[j] = mu;
        (*inv_std)[j] = 1.0 / std::sqrt(var_biased + static_cast<double>(bn.eps));
        double var_unbiased = v / static_cast<double>(m - 1);
        bn.running_mean.data[j] =
            static_cast<T>((1.0 - bn.momentum) * bn.running_mean.data[j] + bn.momentum * mu);
        bn.running_var.data[j] =
            static_cast<T>((1.0 - bn.momentum) * bn.running_var.data[j] + bn.momentum * var_unbiased);
      }
    } else {
      for (size_t j = 0; j < d; ++j) {
        (*mean)[j] = static_cast<double>(bn.running_mean.data[j]);
        (*inv_std)[j] = 1.0 / std::sqrt(static_cast<double>(bn.running_var.data[j]) + static_cast<double>(bn.eps));
      }
    }
    for (size_t i = 0; i < m; ++i)
      for (size_t j = 0; j < d; ++j) {
        double xhat = (static_cast<double>(xv.at(i, j)) - (*mean)[j]) * (*inv_std)[j];
        y.at(i, j) = static_cast<T>(xhat * static_cast<double>(bn.gamma.value.data[j]) +
                                    static_cast<double>(bn.beta.value.data[j]));
      }

    Var id = add_node(std::move(y), {x}, nullptr);
    mark_binds_param(id);
    BatchNormStateT<T>* pbn = &bn;
    nodes_[id].backward = [id, x, pbn, m, d, mean, inv_std, train_mode](GraphT& g) {
      const TensorT<T>& gy = g.nodes_[id].grad;
      const TensorT<T>& xv2 = g.value(x);
      for (size_t j = 0; j < d; ++j) {
        double sum_gy = 0, sum_gy_xhat = 0;
        for (size_t i = 0; i < m; ++i) {
          double xhat = (static_cast<double>(xv2.at(i, j)) - (*mean)[j]) * (*inv_std)[j];
          double gyv = static_cast<double>(gy.at(i, j));
          sum_gy += gyv;
          sum_gy_xhat += gyv * xhat;
        }
        pbn->gamma.grad.data[j] += static_cast<T>(sum_gy_xhat);
        pbn->beta.grad.data[j] += static_cast<T>(sum_gy);
        if (!g.wants_grad(x)) continue;
        TensorT<T>& gx = g.grad_of(x);
        double gamma = static_cast<double>(pbn->gamma.value.data[j]);
        if (train_mode) {
          double mg = sum_gy / static_cast<double>(m);
          double mgx = sum_gy_xhat / static_cast<double>(m);
          for (size_t i = 0; i < m; ++i) {
            double xhat = (static_cast<double>(xv2.at(i, j)) - (*mean)[j]) * (*inv_std)[j];
            double gyv = static_cast<double>(gy.at(i, j));
            gx.at(i, j) += static_cast<T>(gamma * (*inv_std)[j] * (gyv - mg - xhat * mgx));
          }
        } else {
          for (size_t i = 0; i < m; ++i)
            gx.at(i, j) += static_cast<T>(static_cast<double>(gy.at(i, j)) * gamma * (*inv_std)[j]);
        }
      }
    };
    return id;
  }

  // Inverted dropout; identity when rate == 0 or in eval mode.
  Var dropout(Var x, T rate, SeededRng* rng, bool train_mode) {
    if (!train_mode || rate <= T(0)) return x;
    if (rate >= T(1)) throw ValidationError("dropout: rate must be < 1");
    const TensorT<T>& xv = value(x);
    auto mask = std::make_shared<std::vector<T>>(xv.numel());
    T keep = T(1) - rate;
    for (size_t i = 0; i < xv.numel(); ++i)
      (*mask)[i] = (rng->next_double() < static_cast<double>(keep)) ? T(1) / keep : T(0);
    TensorT<T> y = xv;
    for (size_t i = 0; i < y.numel(); ++i) y.data[i] *= (*mask)[i];
    Var id = add_node(std::move(y), {x}, nullptr);
    nodes_[id].backward = [id, x, mask](GraphT& g) {
      if (!g.wants_grad(x)) return;
      const TensorT<T>& gy = g.nodes_[id].grad;
      TensorT<T>& gx = g.grad_of(x);
      for (size_t i = 0; i < gy.numel(); ++i) gx.data[i] += gy.data[i] * (*mask)[i];
    };
    return id;
  }

  // ---- shape & arithmetic ----

  Var add(Var a, Var b) {
    const TensorT<T>& av = value(a);
    const TensorT<T>& bv = value(b);
    if (!av.same_shape(bv)) throw ValidationError("add: shape mismatch");
    TensorT<T> y = av;
    for (size_t i = 0; i < y.numel(); ++i) y.data[i] += bv.data[i];
    Var id = add_node(std::move(y), {a, b}, nullptr);
    nodes_[id].backward = [id, a, b](GraphT& g) {
      const TensorT<T>& gy = g.nodes_[id].grad;
      for (Var v : {a, b}) {
        if (!g.wants_grad(v)) continue;
        TensorT<T>& gv = g.grad_of(v);
        for (size_t i = 0; i < gy.numel(); ++i) gv.data[i] += gy.data[i];
      }
    };
    return id;
  }

  Var scale(Var x, T c) {
    TensorT<T> y = value(x);
    for (T& v : y.data) v *= c;
    Var id = add_node(std::move(y), {x}, nullptr);
    nodes_[id].backward = [id, x, c](GraphT& g) {
      if (!g.wants_grad(x)) return;
      const TensorT<T>& gy = g.nodes_[id].grad;
      TensorT<T>& gx = g.grad_of(x);
      for (size_t i = 0; i < gy.numel(); ++i) gx.data[i] += gy.data[i] * c;
    };
    return id;
  }

  // Elementwise mean of same-shape tensors.
  Var mean_of(const std::vector<Var>& xs) {
    if (xs.empty()) throw ValidationError("mean_of: empty input list");
    TensorT<T> y = value(xs[0]);
    for (size_t s = 1; s < xs.size(); ++s) {
      const TensorT<T>& v = value(xs[s]);
      if (!v.same_shape(y)) throw ValidationError("mean_of: shape mismatch");
      for (size_t i = 0; i < y.numel(); ++i) y.data[i] += v.data[i];
    }
    T inv = T(1) / static_cast<T>(xs.size());
    for (T& v : y.data) v *= inv;
    Var id = add_node(std::move(y), xs, nullptr);
    nodes_[id].backward = [id, xs, inv](GraphT& g) {
      const TensorT<T>& gy = g.nodes_[id].grad;
      for (Var x : xs) {
        if (!g.wants_grad(x)) continue;
        TensorT<T>& gx = g.grad_of(x);
        for (size_t i = 0; i < gy.numel(); ++i) gx.data[i] += gy.data[i] * inv;
      }
    };
    return id;
  }

  Var take_rows(Var x, std::vector<int> idx) {
    const TensorT<T>& xv = value(x);
    size_t d = xv.cols();
    TensorT<T> y({idx.size(), d});
    for (size_t r = 0; r < idx.size(); ++r) {
      check_index(idx[r], xv.rows(), "take_rows: index out of range");
      std::copy_n(xv.row_ptr(static_cast<size_t>(idx[r])), d, y.row_ptr(r));
    }
    Var id = add_node(std::move(y), {x}, nullptr);
    nodes_[id].backward = [id, x, idx = std::move(idx), d](GraphT& g) {
      if (!g.wants_grad(x)) return;
      const TensorT<T>& gy = g.nodes_[id].grad;
      TensorT<T>& gx = g.grad_of(x);
      for (size_t r = 0; r < idx.size(); ++r) {
        T* dst = gx.row_ptr(static_cast<size_t>(idx[r]));
        const T* src = gy.row_ptr(r);
        for (size_t j = 0; j < d; ++j) dst[j] += src[j];
      }
    };
    return id;
  }

  Var concat_rows(const std::vector<Var>& xs) {
    if (xs.empty()) throw ValidationError("concat_rows: empty input list");
    size_t d = value(xs[0]).cols(), m = 0;
    for (Var x : xs) {
      if (value(x).cols() != d) throw ValidationError("concat_rows: column mismatch");
      m += value(x).rows();
    }
    TensorT<T> y({m, d});
    size_t off = 0;
    for (Var x : xs) {
      const TensorT<T>& v = value(x);
      std::copy(v.data.begin(), v.data.end(), y.data.begin() + static_cast<long>(off));
      off += v.numel();
    }
    Var id = add_node(std::move(y), xs, nullptr);
    nodes_[id].backward = [id, xs](GraphT& g) {
      const TensorT<T>& gy = g.nodes_[id].grad;
      size_t off2 = 0;
      for (Var x : xs) {
        size_t n = g.value(x).numel();
        if (g.wants_grad(x)) {
          TensorT<T>& gx = g.grad_of(x);
          for (size_t i = 0; i < n; ++i) gx.data[i] += gy.data[off2 + i];
        }
        off2 += n;
      }
    };
    return id;
  }

  // out[i] = dot(a_i, b_i); shape [m].
  Var rowwise_dot(Var a, Var b) {
    const TensorT<T>& av = value(a);
    const TensorT<T>& bv = value(b);
    if (!av.same_shape(bv)) throw ValidationError("rowwise_dot: shape mismatch");
    size_t m = av.rows(), d = av.cols();
    TensorT<T> y({m});
    kernels::row_dot(av.data.data(), bv.data.data(), y.data.data(), m, d);
    Var id = add_node(std::move(y), {a, b}, nullptr);
    nodes_[id].backward = [id, a, b, m, d](GraphT& g) {
      const TensorT<T>& gy = g.nodes_[id].grad;
      const TensorT<T>& av2 = g.value(a);
      const TensorT<T>& bv2 = g.value(b);
      if (g.wants_grad(a)) {
        TensorT<T>& ga = g.grad_of(a);
        for (size_t i = 0; i < m; ++i)
          for (size_t j = 0; j < d; ++j) ga.at(i, j) += gy.data[i] * bv2.at(i, j);
      }
      if (g.wants_grad(b)) {
        TensorT<T>& gb = g.grad_of(b);
        for (size_t i = 0; i < m; ++i)
          for (size_t j = 0; j < d; ++j) gb.at(i, j) += gy.data[i] * av2.at(i, j);
      }
    };
    return id;
  }

  // logits[m x n] = A[m x d] * B[n x d]^T
  Var matmul_nt(Var a, Var b) {
    const TensorT<T>& av = value(a);
    const TensorT<T>& bv = value(b);
    if (av.cols() != bv.cols()) throw ValidationError("matmul_nt: inner dim mismatch");
    size_t m = av.rows(), n = bv.rows(), d = av.cols();
    TensorT<T> y({m, n});
    kernels::matmul_nt(av.data.data(), bv.data.data(), y.data.data(), m, n, d);
    Var id = add_node(std::move(y), {a, b}, nullptr);
    nodes_[id].backward = [id, a, b, m, n, d](GraphT& g) {
      const TensorT<T>& gy = g.nodes_[id].grad;
      if (g.wants_grad(a))
        kernels::matmul_nn(gy.data.data(), g.value(b).data.data(), g.grad_of(a).data.data(), m, d, n, true);
      if (g.wants_grad(b))
        kernels::matmul_tn(gy.data.data(), g.value(a).data.data(), g.grad_of(b).data.data(), m, d, n, true);
    };
    return id;
  }

  // scores[b][0] = dot(anchor_b, pos_b); scores[b][1+n] = dot(anchor_b, neg_{b*nn+n}).
  Var pair_scores(Var anchors, Var pos, Var negs) {
    const TensorT<T>& av = value(anchors);
    const TensorT<T>& pv = value(pos);
    const TensorT<T>& nv = value(negs);
    size_t bsz = av.rows(), d = av.cols();
    if (!av.same_shape(pv)) throw ValidationError("pair_scores: anchor/pos shape mismatch");
    if (nv.cols() != d || nv.rows() % bsz != 0) throw ValidationError("pair_scores: negative shape mismatch");
    size_t nn = nv.rows() / bsz;
    TensorT<T> y({bsz, 1 + nn});
    for (size_t b = 0; b < bsz; ++b) {
      const T* ab = av.row_ptr(b);
      double s = 0;
      const T* pb = pv.row_ptr(b);
      for (size_t j = 0; j < d; ++j) s += static_cast<double>(ab[j]) * static_cast<double>(pb[j]);
      y.at(b, 0) = static_cast<T>(s);
      for (size_t n = 0; n < nn; ++n) {
        const T* nb = nv.row_ptr(b * nn + n);
        double sn = 0;
        for (size_t j = 0; j < d; ++j) sn += static_cast<double>(ab[j]) * static_cast<double>(nb[j]);
        y.at(b, 1 + n) = static_cast<T>(sn);
      }
    }
    Var id = add_node(std::move(y), {anchors, pos, negs}, nullptr);
    nodes_[id].backward = [id, anchors, pos, negs, bsz, d](GraphT& g) {
      const TensorT<T>& gy = g.nodes_[id].grad;
      const TensorT<T>& av2 = g.value(anchors);
      const TensorT<T>& pv2 = g.value(pos);
      const TensorT<T>& nv2 = g.value(negs);
      size_t nn = nv2.rows() / bsz;
      for (size_t b = 0; b < bsz; ++b) {
        const T* ab = av2.row_ptr(b);
        T g0 = gy.at(b, 0);
        if (g.wants_grad(anchors)) {
          T* ga = g.grad_of(anchors).row_ptr(b);
          const T* pb = pv2.row_ptr(b);
          for (size_t j = 0; j < d; ++j) ga[j] += g0 * pb[j];
          for (size_t n = 0; n < nn; ++n) {
            T gn = gy.at(b, 1 + n);
            const T* nb = nv2.row_ptr(b * nn + n);
            for (size_t j = 0; j < d; ++j) ga[j] += gn * nb[j];
          }
        }
        if (g.wants_grad(pos)) {
          T* gp = g.grad_of(pos).row_ptr(b);
          for (size_t j = 0; j < d; ++j) gp[j] += g0 * ab[j];
        }
        if (g.wants_grad(negs)) {
          for (size_t n = 0; n < nn; ++n) {
            T gn = gy.at(b, 1 + n);
            T* gneg = g.grad_of(negs).row_ptr(b * nn + n);
            for (size_t j = 0; j < d; ++j) gneg[j] += gn * ab[j];
          }
        }
      }
    };
    return id;
  }

  // Pairwise ranking loss: sum_b sum_n softplus(s[b,1+n] - s[b,0]).
  Var bpr_from_scores(Var scores) {
    const TensorT<T>& sv = value(scores);
    if (sv.shape.size() != 2 || sv.cols() < 2) throw ValidationError("bpr_from_scores: need [B x (1+n)] scores");
    size_t bsz = sv.rows(), nn = sv.cols() - 1;
    double total = 0;
    for (size_t b = 0; b < bsz; ++b)
      for (size_t n = 0; n < nn; ++n)
        total += softplus(static_cast<double>(sv.at(b, 1 + n)) - static_cast<double>(sv.at(b, 0)));
    Var id = add_node(TensorT<T>::scalar(static_cast<T>(total)), {scores}, nullptr);
    nodes_[id].backward = [id, scores, bsz, nn](GraphT& g) {
      if (!g.wants_grad(scores)) return;
      T gl = g.nodes_[id].grad.data[0];
      const TensorT<T>& sv2 = g.value(scores);
      TensorT<T>& gs = g.grad_of(scores);
      for (size_t b = 0; b < bsz; ++b) {
        double acc0 = 0;
        for (size_t n = 0; n < nn; ++n) {
          double z = static_cast<double>(sv2.at(b, 1 + n)) - static_cast<double>(sv2.at(b, 0));
          double sig = sigmoid(z);
          gs.at(b, 1 + n) += static_cast<T>(static_cast<double>(gl) * sig);
          acc0 -= sig;
        }
        gs.at(b, 0) += static_cast<T>(static_cast<double>(gl) * acc0);
      }
    };
    return id;
  }

  // Cross-entropy of row-wise softmax at temperature tau against target column:
  // sum_b [ logsumexp(row_b / tau) - s[b, target_b] / tau ].
  // With tau = 1 this is plain softmax cross-entropy; with candidate layouts
  // {positive} ∪ negatives (target 0) or in-batch (target = row) it is InfoNCE.
  Var softmax_xent(Var scores, T tau, std::vector<int> targets) {
    if (tau <= T(0)) throw ValidationError("softmax_xent: temperature must be positive");
    const TensorT<T>& sv = value(scores);
    size_t m = sv.rows(), c = sv.cols();
    if (targets.size() != m) throw ValidationError("softmax_xent: target count mismatch");
    for (int t : targets) check_index(t, c, "softmax_xent: target column out of range");
    double total = 0;
    double invtau = 1.0 / static_cast<double>(tau);
    for (size_t i = 0; i < m; ++i) {
      const T* row = sv.row_ptr(i);
      double mx = -HUGE_VAL;
      for (size_t j = 0; j < c; ++j) mx = std::max(mx, static_cast<double>(row[j]) * invtau);
      double se = 0;
      for (size_t j = 0; j < c; ++j) se += std::exp(static_cast<double>(row[j]) * invtau - mx);
      double lse = mx + std::log(se);
      total += lse - static_cast<double>(row[static_cast<size_t>(targets[i])]) * invtau;
    }
    Var id = add_node(TensorT<T>::scalar(static_cast<T>(total)), {scores}, nullptr);
    nodes_[id].backward = [id, scores, targets = std::move(targets), invtau, m, c](GraphT& g) {
      if (!g.wants_grad(scores)) return;
      T gl = g.nodes_[id].grad.data[0];
      const TensorT<T>& sv2 = g.value(scores);
      TensorT<T>& gs = g.grad_of(scores);
      for (size_t i = 0; i < m; ++i) {
        const T* row = sv2.row_ptr(i);
        double mx = -HUGE_VAL;
        for (size_t j = 0; j < c; ++j) mx = std::max(mx, static_cast<double>(row[j]) * invtau);
        double se = 0;
        for (size_t j = 0; j < c; ++j) se += std::exp(static_cast<double>(row[j]) * invtau - mx);
        for (size_t j = 0; j < c; ++j) {
          double p = std::exp(static_cast<double>(row[j]) * invtau - mx) / se;
          double delta = (static_cast<size_t>(targets[i]) == j) ? 1.0 : 0.0;
          gs.at(i, j) += static_cast<T>(static_cast<double>(gl) * (p - delta) * invtau);
        }
      }
    };
    return id;
  }

  // DeepMF scorer: max(min_score, cosine(a_i, b_i)) per row. Degenerate rows
  // (zero norm) score min_score and pass no gradient.
  Var rowwise_cosine_clamped(Var a, Var b, T min_score) {
    const TensorT<T>& av = value(a);
    const TensorT<T>& bv = value(b);
    if (!av.same_shape(bv)) throw ValidationError("rowwise_cosine_clamped: shape mismatch");
    size_t m = av.rows(), d = av.cols();
    TensorT<T> y({m});
    auto saved = std::make_shared<std::vector<std::array<double, 3>>>(m);  // dot, |a|, |b|
    for (size_t i = 0; i < m; ++i) {
      double dot = 0, na = 0, nb = 0;
      const T* ai = av.row_ptr(i);
      const T* bi = bv.row_ptr(i);
      for (size_t j = 0; j < d; ++j) {
        dot += static_cast<double>(ai[j]) * static_cast<double>(bi[j]);
        na += static_cast<double>(ai[j]) * static_cast<double>(ai[j]);
        nb += static_cast<double>(bi[j]) * static_cast<double>(bi[j]);
      }
      na = std::sqrt(na);
      nb = std::sqrt(nb);
      (*saved)[i] = {dot, na, nb};
      double cosv = (na > 1e-30 && nb > 1e-30) ? dot / (na * nb) : 0.0;
      y.data[i] = std::max(min_score, static_cast<T>(cosv));
    }
    Var id = add_node(std::move(y), {a, b}, nullptr);
    nodes_[id].backward = [id, a, b, min_score, saved, m, d](GraphT& g) {
      const TensorT<T>& gy = g.nodes_[id].grad;
      const TensorT<T>& av2 = g.value(a);
      const TensorT<T>& bv2 = g.value(b);
      for (size_t i = 0; i < m; ++i) {
        auto [dot, na, nb] = (*saved)[i];
        if (na <= 1e-30 || nb <= 1e-30) continue;
        double cosv = dot / (na * nb);
        if (cosv <= static_cast<double>(min_score)) continue;  // clamped region: zero subgradient
        double gv = static_cast<double>(gy.data[i]);
        const T* ai = av2.row_ptr(i);
        const T* bi = bv2.row_ptr(i);
        if (g.wants_grad(a)) {
          T* ga = g.grad_of(a).row_ptr(i);
          for (size_t j = 0; j < d; ++j)
            ga[j] += static_cast<T>(gv * (static_cast<double>(bi[j]) / (na * nb) -
                                          cosv * static_cast<double>(ai[j]) / (na * na)));
        }
        if (g.wants_grad(b)) {
          T* gb = g.grad_of(b).row_ptr(i);
          for (size_t j = 0; j < d; ++j)
            gb[j] += static_cast<T>(gv * (static_cast<double>(ai[j]) / (na * nb) -
                                          cosv * static_cast<double>(bi[j]) / (nb * nb)));
        }
      }
    };
    return id;
  }

  Var reshape(Var x, std::vector<size_t> shape) {
    const TensorT<T>& xv = value(x);
    if (TensorT<T>::numel_of(shape) != xv.numel()) throw ValidationError("reshape: element count mismatch");
    TensorT<T> y(shape, xv.data);
    Var id = add_node(std::move(y), {x}, nullptr);
    nodes_[id].backward = [id, x](GraphT& g) {
      if (!g.wants_grad(x)) return;
      const TensorT<T>& gy = g.nodes_[id].grad;
      TensorT<T>& gx = g.grad_of(x);
      for (size_t i = 0; i < gy.numel(); ++i) gx.data[i] += gy.data[i];
    };
    return id;
  }

  // y[o] = mean over x rows listed in groups[o]; groups may differ in size but
  // must be non-empty.
  Var mean_groups(Var x, std::vector<std::vector<int>> groups) {
    const TensorT<T>& xv = value(x);
    size_t d = xv.cols();
    TensorT<T> y({groups.size(), d});
    for (size_t o = 0; o < groups.size(); ++o) {
      if (groups[o].empty()) throw ValidationError("mean_groups: empty group");
      T* dst = y.row_ptr(o);
      for (int r : groups[o]) {
        check_index(r, xv.rows(), "mean_groups: row index out of range");
        const T* src = xv.row_ptr(static_cast<size_t>(r));
        for (size_t j = 0; j < d; ++j) dst[j] += src[j];
      }
      T inv = T(1) / static_cast<T>(groups[o].size());
      for (size_t j = 0; j < d; ++j) dst[j] *= inv;
    }
    Var id = add_node(std::move(y), {x}, nullptr);
    nodes_[id].backward = [id, x, groups = std::move(groups), d](GraphT& g) {
      if (!g.wants_grad(x)) return;
      const TensorT<T>& gy = g.nodes_[id].grad;
      TensorT<T>& gx = g.grad_of(x);
      for (size_t o = 0; o < groups.size(); ++o) {
        T inv = T(1) / static_cast<T>(groups[o].size());
        const T* src = gy.row_ptr(o);
        for (int r : groups[o]) {
          T* dst = gx.row_ptr(static_cast<size_t>(r));
          for (size_t j = 0; j < d; ++j) dst[j] += src[j] * inv;
        }
      }
    };
    return id;
  }

  Var sum_all(Var x) {
    const TensorT<T>& xv = value(x);
    double s = 0;
    for (T v : xv.data) s += static_cast<double>(v);
    Var id = add_node(TensorT<T>::scalar(static_cast<T>(s)), {x}, nullptr);
    nodes_[id].backward = [id, x](GraphT& g) {
      if (!g.wants_grad(x)) return;
      T gl = g.nodes_[id].grad.data[0];
      TensorT<T>& gx = g.grad_of(x);
      for (size_t i = 0; i < gx.numel(); ++i) gx.data[i] += gl;
    };
    return id;
  }

  Var mean_all(Var x) {
    size_t n = value(x).numel();
    return scale(sum_all(x), T(1) / static_cast<T>(n));
  }

  // ---- access & backward ----

  const TensorT<T>& value(Var v) const { return nodes_[static_cast<size_t>(v)].value; }

  void backward(Var loss) {
    if (nodes_.empty()) throw ValidationError("backward: empty tape");
    if (value(loss).numel() != 1) throw ValidationError("backward: loss must be scalar");
    // reaches_param: some parameter sits in the node's subtree, either bound by
    // the op itself (param/rows/linear/batchnorm) or through an input. Only such
    // nodes need gradient buffers or a backward pass.
    for (Node& n : nodes_) {
      n.reaches_param = n.binds_param;
      for (Var in : n.inputs)
        if (nodes_[static_cast<size_t>(in)].reaches_param) n.reaches_param = true;
      n.grad = n.reaches_param ? TensorT<T>(n.value.shape) : TensorT<T>();
    }
    Node& top = nodes_[static_cast<size_t>(loss)];
    if (!top.reaches_param) return;  // constant graph: nothing to differentiate
    top.grad.data[0] = T(1);
    for (size_t i = nodes_.size(); i-- > 0;) {
      if (nodes_[i].reaches_param && nodes_[i].backward) nodes_[i].backward(*this);
    }
  }

  size_t size() const { return nodes_.size(); }

  static double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
  }
  static double softplus(double x) {
    // log(1 + e^x), stable at both tails
    if (x > 0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
  }

 private:
  struct Node {
    TensorT<T> value;
    TensorT<T> grad;
    std::vector<Var> inputs;
    std::function<void(GraphT&)> backward;
    bool binds_param = false;
    bool reaches_param = false;
  };

  bool wants_grad(Var v) const { return nodes_[static_cast<size_t>(v)].reaches_param; }
  TensorT<T>& grad_of(Var v) { return nodes_[static_cast<size_t>(v)].grad; }

  static void check_index(int i, size_t n, const char* what) {
    if (i < 0 || static_cast<size_t>(i) >= n) throw ValidationError(what);
  }

  Var add_node(TensorT<T> v, std::vector<Var> inputs, std::function<void(GraphT&)> bw) {
    nodes_.push_back(Node{std::move(v), TensorT<T>(), std::move(inputs), std::move(bw), false, false});
    return static_cast<Var>(nodes_.size() - 1);
  }

  void mark_binds_param(Var v) { nodes_[static_cast<size_t>(v)].binds_param = true; }

  std::vector<Node> nodes_;
};

using Graph = GraphT<float>;
using Parameter = ParameterT<float>;
using BatchNormState = BatchNormStateT<float>;

// ---- optimizer ----

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // L2 term added to the gradient before the moments
};

template <typename T>
void adam_step(std::span<ParameterT<T>* const> params, const AdamConfig& cfg, long long t) {
  if (t < 1) throw ValidationError("adam_step: step count must be >= 1");
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (ParameterT<T>* p : params) {
    if (!p->grad.all_finite())
      throw std::runtime_error("adam_step: non-finite gradient in parameter '" + p->name + "'");
    for (size_t i = 0; i < p->value.numel(); ++i) {
      double g = static_cast<double>(p->grad.data[i]) +
                 cfg.weight_decay * static_cast<double>(p->value.data[i]);
      double m = cfg.beta1 * static_cast<double>(p->adam_m.data[i]) + (1.0 - cfg.beta1) * g;
      double v = cfg.beta2 * static_cast<double>(p->adam_v.data[i]) + (1.0 - cfg.beta2) * g * g;
      p->adam_m.data[i] = static_cast<T>(m);
      p->adam_v.data[i] = static_cast<T>(v);
      double mhat = m / bc1;
      double vhat = v / bc2;
      p->value.data[i] =
          static_cast<T>(static_cast<double>(p->value.data[i]) - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
    p->zero_grad();
  }
}

// ---- finite-difference verification ----

// `run` rebuilds the graph, runs backward into the parameters' grads (zeroing
// them first) and returns the loss. Sampling, dropout masks and any other
// stochastic choices inside must be frozen so repeated calls see the same
// function. Checks up to `max_coords` coordinates (all if fewer), central
// differences with step h; returns max over coordinates of
// |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
template <typename T>
double grad_check(const std::function<double()>& run, std::span<ParameterT<T>* const> params, double h,
                  size_t max_coords = 256, uint64_t seed = 0) {
  run();
  std::vector<std::vector<T>> analytic;
  size_t total = 0;
  for (ParameterT<T>* p : params) {
    analytic.push_back(p->grad.data);
    total += p->value.numel();
  }
  std::vector<std::pair<size_t, size_t>> coords;
  if (total <= max_coords) {
    for (size_t pi = 0; pi < params.size(); ++pi)
      for (size_t i = 0; i < params[pi]->value.numel(); ++i) coords.emplace_back(pi, i);
  } else {
    SeededRng rng(seed, "grad-check-coords");
    for (size_t c = 0; c < max_coords; ++c) {
      size_t flat = static_cast<size_t>(rng.uniform(total));
      size_t pi = 0;
      while (flat >= params[pi]->value.numel()) {
        flat -= params[pi]->value.numel();
        ++pi;
      }
      coords.emplace_back(pi, flat);
    }
  }
  double worst = 0;
  for (auto [pi, i] : coords) {
    T& slot = params[pi]->value.data[i];
    T orig = slot;
    slot = static_cast<T>(static_cast<double>(orig) + h);
    double up = run();
    slot = static_cast<T>(static_cast<double>(orig) - h);
    double down = run();
    slot = orig;
    double numeric = (up - down) / (2.0 * h);
    double a = static_cast<double>(analytic[pi][i]);
    double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace mmrec

#endif

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "icvid/errors.hpp"
#include "icvid/tensor.hpp"

namespace icvid {

// Reverse-mode tape. Forward ops compute eagerly (via the Tensor kernels) and
// record a backward closure; node ids are assigned in construction order, so
// ids form a topological order and the backward sweep is a single descending
// pass that visits each op exactly once. One tape per training step; tapes
// are single-threaded by contract.
template <class T>
class Tape {
 public:
  struct Node {
    Tensor<T> val;
    // Accumulates parent gradients given this node's gradient. Empty for
    // leaves.
    std::function<void(Tape&, int)> back;
  };

  int leaf(Tensor<T> v) {
    nodes_.push_back(Node{std::move(v), nullptr});
    return static_cast<int>(nodes_.size()) - 1;
  }

  int record(Tensor<T> v, std::function<void(Tape&, int)> back) {
    nodes_.push_back(Node{std::move(v), std::move(back)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  const Tensor<T>& val(int id) const { return nodes_[static_cast<size_t>(id)].val; }

  // Gradient of the backward root w.r.t. node `id`; zero tensor if the node
  // did not influence the root.
  const Tensor<T>& grad(int id) const {
    if (!backward_done_)
      throw UsageError("grad() requested before backward()");
    return grads_[static_cast<size_t>(id)];
  }

  Tensor<T>& grad_mut(int id) { return grads_[static_cast<size_t>(id)]; }

  void backward(int root) {
    if (backward_done_)
      throw UsageError("backward() called twice on one tape");
    if (val(root).numel() != 1)
      throw UsageError("backward() root must be a scalar");
    backward_done_ = true;
    grads_.clear();
    grads_.reserve(nodes_.size());
    for (const Node& n : nodes_) grads_.emplace_back(n.val.shape());
    grads_[static_cast<size_t>(root)].data()[0] = T(1);
    for (int id = root; id >= 0; --id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      if (n.back) n.back(*this, id);
    }
  }

  size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
  std::vector<Tensor<T>> grads_;
  bool backward_done_ = false;
};

// Lightweight handle: a node id bound to its tape.
template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;
  const Tensor<T>& val() const { return tape->val(id); }
  const Tensor<T>& grad() const { return tape->grad(id); }
};

template <class T>
Var<T> make_leaf(Tape<T>& tape, Tensor<T> v) {
  return Var<T>{&tape, tape.leaf(std::move(v))};
}

namespace ad_detail {
template <class T>
void accum(Tensor<T>& dst, const Tensor<T>& src) {
  for (int64_t i = 0; i < dst.numel(); ++i) dst.data()[i] += src.data()[i];
}
}  // namespace ad_detail

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Tape<T>& tp = *a.tape;
  int ia = a.id, ib = b.id;
  Tensor<T> out = matmul(tp.val(ia), tp.val(ib));
  int id = tp.record(std::move(out), [ia, ib](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad_mut(self);
    ad_detail::accum(t.grad_mut(ia), matmul_nt(g, t.val(ib)));
    ad_detail::accum(t.grad_mut(ib), matmul_tn(t.val(ia), g));
  });
  return Var<T>{&tp, id};
}

// a @ b^T; gradient: da = g @ b, db = g^T @ a.
template <class T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  Tape<T>& tp = *a.tape;
  int ia = a.id, ib = b.id;
  Tensor<T> out = matmul_nt(tp.val(ia), tp.val(ib));
  int id = tp.record(std::move(out), [ia, ib](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad_mut(self);
    ad_detail::accum(t.grad_mut(ia), matmul(g, t.val(ib)));
    ad_detail::accum(t.grad_mut(ib), matmul_tn(g, t.val(ia)));
  });
  return Var<T>{&tp, id};
}

template <class T>
Var<T> transpose2d(Var<T> a) {
  Tape<T>& tp = *a.tape;
  int ia = a.id;
  int id = tp.record(transpose2d(tp.val(ia)), [ia](Tape<T>& t, int self) {
    ad_detail::accum(t.grad_mut(ia), transpose2d(t.grad_mut(self)));
  });
  return Var<T>{&tp, id};
}

template <class T>
Var<T> softmax_last(Var<T> x) {
  Tape<T>& tp = *x.tape;
  int ix = x.id;
  int id = tp.record(softmax_last(tp.val(ix)), [ix](Tape<T>& t, int self) {
    const Tensor<T>& y = t.val(self);
    const Tensor<T>& g = t.grad_mut(self);
    Tensor<T>& gx = t.grad_mut(ix);
    const int64_t cols = y.shape().back();
    const int64_t rows = y.numel() / cols;
    for (int64_t i = 0; i < rows; ++i) {
      const T* yr = y.data() + i * cols;
      const T* gr = g.data() + i * cols;
      T dot = 0;
      for (int64_t j = 0; j < cols; ++j) dot += yr[j] * gr[j];
      T* o = gx.data() + i * cols;
      for (int64_t j = 0; j < cols; ++j) o[j] += yr[j] * (gr[j] - dot);
    }
  });
  return Var<T>{&tp, id};
}

template <class T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps = T(1e-5)) {
  Tape<T>& tp = *x.tape;
  int ix = x.id, ig = gain.id, ib = bias.id;
  int id = tp.record(
      layer_norm(tp.val(ix), tp.val(ig), tp.val(ib), eps),
      [ix, ig, ib, eps](Tape<T>& t, int self) {
        const Tensor<T>& xin = t.val(ix);
        const Tensor<T>& g = t.val(ig);
        const Tensor<T>& gout = t.grad_mut(self);
        const int64_t cols = xin.shape().back();
        const int64_t rows = xin.numel() / cols;
        Tensor<T>& gx = t.grad_mut(ix);
        Tensor<T>& gg = t.grad_mut(ig);
        Tensor<T>& gb = t.grad_mut(ib);
        for (int64_t i = 0; i < rows; ++i) {
          const T* xr = xin.data() + i * cols;
          const T* gr = gout.data() + i * cols;
          T mean = 0;
          for (int64_t j = 0; j < cols; ++j) mean += xr[j];
          mean /= T(cols);
          T var = 0;
          for (int64_t j = 0; j < cols; ++j) {
            const T d = xr[j] - mean;
            var += d * d;
          }
          var /= T(cols);
          const T inv = T(1) / std::sqrt(var + eps);
          // dyhat = g * gain; dx = inv*(dyhat - mean(dyhat) - yhat*mean(dyhat*yhat))
          T m1 = 0, m2 = 0;
          for (int64_t j = 0; j < cols; ++j) {
            const T yhat = (xr[j] - mean) * inv;
            const T dyh = gr[j] * g.data()[j];
            m1 += dyh;
            m2 += dyh * yhat;
          }
          m1 /= T(cols);
          m2 /= T(cols);
          T* gxr = gx.data() + i * cols;
          for (int64_t j = 0; j < cols; ++j) {
            const T yhat = (xr[j] - mean) * inv;
            const T dyh = gr[j] * g.data()[j];
            gxr[j] += inv * (dyh - m1 - yhat * m2);
            gg.data()[j] += gr[j] * yhat;
            gb.data()[j] += gr[j];
          }
        }
      });
  return Var<T>{&tp, id};
}

template <class T>
Var<T> silu(Var<T> x) {
  Tape<T>& tp = *x.tape;
  int ix = x.id;
  int id = tp.record(silu(tp.val(ix)), [ix](Tape<T>& t, int self) {
    const Tensor<T>& xin = t.val(ix);
    const Tensor<T>& g = t.grad_mut(self);
    Tensor<T>& gx = t.grad_mut(ix);
    for (int64_t i = 0; i < xin.numel(); ++i) {
      const T s = sigmoid(xin.data()[i]);
      // d/dx x*sigmoid(x) = sigmoid(x) * (1 + x * (1 - sigmoid(x)))
      gx.data()[i] += g.data()[i] * s * (T(1) + xin.data()[i] * (T(1) - s));
    }
  });
  return Var<T>{&tp, id};
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  Tape<T>& tp = *a.tape;
  int ia = a.id, ib = b.id;
  int id = tp.record(add(tp.val(ia), tp.val(ib)), [ia, ib](Tape<T>& t, int self) {
    ad_detail::accum(t.grad_mut(ia), t.grad_mut(self));
    ad_detail::accum(t.grad_mut(ib), t.grad_mut(self));
  });
  return Var<T>{&tp, id};
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  Tape<T>& tp = *a.tape;
  int ia = a.id, ib = b.id;
  int id = tp.record(sub(tp.val(ia), tp.val(ib)), [ia, ib](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad_mut(self);
    ad_detail::accum(t.grad_mut(ia), g);
    Tensor<T>& gb = t.grad_mut(ib);
    for (int64_t i = 0; i < g.numel(); ++i) gb.data()[i] -= g.data()[i];
  });
  return Var<T>{&tp, id};
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  Tape<T>& tp = *a.tape;
  int ia = a.id, ib = b.id;
  int id = tp.record(mul(tp.val(ia), tp.val(ib)), [ia, ib](Tape<T>& t, int self) {
    ad_detail::accum(t.grad_mut(ia), mul(t.grad_mut(self), t.val(ib)));
    ad_detail::accum(t.grad_mut(ib), mul(t.grad_mut(self), t.val(ia)));
  });
  return Var<T>{&tp, id};
}

template <class T>
Var<T> scale(Var<T> a, T s) {
  Tape<T>& tp = *a.tape;
  int ia = a.id;
  int id = tp.record(scale(tp.val(ia), s), [ia, s](Tape<T>& t, int self) {
    ad_detail::accum(t.grad_mut(ia), scale(t.grad_mut(self), s));
  });
  return Var<T>{&tp, id};
}

template <class T>
Var<T> add_scalar(Var<T> a, T s) {
  Tape<T>& tp = *a.tape;
  int ia = a.id;
  Tensor<T> out = tp.val(ia);
  for (int64_t i = 0; i < out.numel(); ++i) out.data()[i] += s;
  int id = tp.record(std::move(out), [ia](Tape<T>& t, int self) {
    ad_detail::accum(t.grad_mut(ia), t.grad_mut(self));
  });
  return Var<T>{&tp, id};
}

template <class T>
Var<T> add_rowvec(Var<T> x, Var<T> v) {
  Tape<T>& tp = *x.tape;
  int ix = x.id, iv = v.id;
  int id = tp.record(add_rowvec(tp.val(ix), tp.val(iv)),
                     [ix, iv](Tape<T>& t, int self) {
                       const Tensor<T>& g = t.grad_mut(self);
                       ad_detail::accum(t.grad_mut(ix), g);
                       Tensor<T>& gv = t.grad_mut(iv);
                       const int64_t cols = g.shape().back();
                       const int64_t rows = g.numel() / cols;
                       for (int64_t i = 0; i < rows; ++i)
                         for (int64_t j = 0; j < cols; ++j)
                           gv.data()[j] += g.data()[i * cols + j];
                     });
  return Var<T>{&tp, id};
}

template <class T>
Var<T> mul_rowvec(Var<T> x, Var<T> v) {
  Tape<T>& tp = *x.tape;
  int ix = x.id, iv = v.id;
  int id = tp.record(mul_rowvec(tp.val(ix), tp.val(iv)),
                     [ix, iv](Tape<T>& t, int self) {
                       const Tensor<T>& g = t.grad_mut(self);
                       const Tensor<T>& xv = t.val(ix);
                       const Tensor<T>& vv = t.val(iv);
                       Tensor<T>& gx = t.grad_mut(ix);
                       Tensor<T>& gv = t.grad_mut(iv);
                       const int64_t cols = g.shape().back();
                       const int64_t rows = g.numel() / cols;
                       for (int64_t i = 0; i < rows; ++i)
                         for (int64_t j = 0; j < cols; ++j) {
                           gx.data()[i * cols + j] += g.data()[i * cols + j] * vv.data()[j];
                           gv.data()[j] += g.data()[i * cols + j] * xv.data()[i * cols + j];
                         }
                     });
  return Var<T>{&tp, id};
}

// Rotate adjacent column pairs: out[:, 2j] = x[:, 2j]*cos[:, j] - x[:, 2j+1]*sin[:, j]
//                               out[:, 2j+1] = x[:, 2j]*sin[:, j] + x[:, 2j+1]*cos[:, j]
// cos/sin are constant [rows x cols/2] tables (rotary embedding); backward is
// the inverse rotation applied to the output gradient.
template <class T>
Var<T> rotate_pairs(Var<T> x, const Tensor<T>& cos_t, const Tensor<T>& sin_t) {
  Tape<T>& tp = *x.tape;
  int ix = x.id;
  const Tensor<T>& xv = tp.val(ix);
  require_2d(xv, "rotate_pairs");
  const int64_t rows = xv.rows(), cols = xv.cols();
  if (cols % 2 != 0 || cos_t.rows() != rows || cos_t.cols() != cols / 2 ||
      !cos_t.same_shape(sin_t))
    throw ShapeError("rotate_pairs: cos/sin tables must be [rows x cols/2]");
  Tensor<T> out({rows, cols});
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < cols / 2; ++j) {
      const T c = cos_t.at(i, j), s = sin_t.at(i, j);
      const T x0 = xv.at(i, 2 * j), x1 = xv.at(i, 2 * j + 1);
      out.at(i, 2 * j) = x0 * c - x1 * s;
      out.at(i, 2 * j + 1) = x0 * s + x1 * c;
    }
  int id = tp.record(std::move(out), [ix, cos_t, sin_t](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad_mut(self);
    Tensor<T>& gx = t.grad_mut(ix);
    const int64_t rows = g.rows(), cols = g.cols();
    for (int64_t i = 0; i < rows; ++i)
      for (int64_t j = 0; j < cols / 2; ++j) {
        const T c = cos_t.at(i, j), s = sin_t.at(i, j);
        const T g0 = g.at(i, 2 * j), g1 = g.at(i, 2 * j + 1);
        gx.at(i, 2 * j) += g0 * c + g1 * s;
        gx.at(i, 2 * j + 1) += -g0 * s + g1 * c;
      }
  });
  return Var<T>{&tp, id};
}

template <class T>
Var<T> slice_rows(Var<T> x, int64_t r0, int64_t r1) {
  Tape<T>& tp = *x.tape;
  int ix = x.id;
  const Tensor<T>& xv = tp.val(ix);
  require_2d(xv, "slice_rows");
  if (r0 < 0 || r1 > xv.rows() || r0 >= r1)
    throw ShapeError("slice_rows: bad range");
  const int64_t cols = xv.cols();
  Tensor<T> out({r1 - r0, cols});
  std::copy(xv.data() + r0 * cols, xv.data() + r1 * cols, out.data());
  int id = tp.record(std::move(out), [ix, r0, cols](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad_mut(self);
    Tensor<T>& gx = t.grad_mut(ix);
    for (int64_t i = 0; i < g.rows(); ++i)
      for (int64_t j = 0; j < cols; ++j)
        gx.at(r0 + i, j) += g.at(i, j);
  });
  return Var<T>{&tp, id};
}

template <class T>
Var<T> slice_cols(Var<T> x, int64_t c0, int64_t c1) {
  Tape<T>& tp = *x.tape;
  int ix = x.id;
  const Tensor<T>& xv = tp.val(ix);
  require_2d(xv, "slice_cols");
  if (c0 < 0 || c1 > xv.cols() || c0 >= c1)
    throw ShapeError("slice_cols: bad range");
  Tensor<T> out({xv.rows(), c1 - c0});
  for (int64_t i = 0; i < xv.rows(); ++i)
    for (int64_t j = c0; j < c1; ++j) out.at(i, j - c0) = xv.at(i, j);
  int id = tp.record(std::move(out), [ix, c0](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad_mut(self);
    Tensor<T>& gx = t.grad_mut(ix);
    for (int64_t i = 0; i < g.rows(); ++i)
      for (int64_t j = 0; j < g.cols(); ++j) gx.at(i, c0 + j) += g.at(i, j);
  });
  return Var<T>{&tp, id};
}

template <class T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: empty input");
  Tape<T>& tp = *parts[0].tape;
  std::vector<int> ids;
  int64_t rows = 0;
  const int64_t cols = tp.val(parts[0].id).cols();
  for (const Var<T>& p : parts) {
    require_2d(tp.val(p.id), "concat_rows");
    if (tp.val(p.id).cols() != cols)
      throw ShapeError("concat_rows: column mismatch");
    rows += tp.val(p.id).rows();
    ids.push_back(p.id);
  }
  Tensor<T> out({rows, cols});
  int64_t r = 0;
  for (int idp : ids) {
    const Tensor<T>& v = tp.val(idp);
    std::copy(v.data(), v.data() + v.numel(), out.data() + r * cols);
    r += v.rows();
  }
  int id = tp.record(std::move(out), [ids, cols](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad_mut(self);
    int64_t r = 0;
    for (int idp : ids) {
      Tensor<T>& gp = t.grad_mut(idp);
      for (int64_t i = 0; i < gp.rows(); ++i)
        for (int64_t j = 0; j < cols; ++j) gp.at(i, j) += g.at(r + i, j);
      r += gp.rows();
    }
  });
  return Var<T>{&tp, id};
}

template <class T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: empty input");
  Tape<T>& tp = *parts[0].tape;
  std::vector<int> ids;
  const int64_t rows = tp.val(parts[0].id).rows();
  int64_t cols = 0;
  for (const Var<T>& p : parts) {
    require_2d(tp.val(p.id), "concat_cols");
    if (tp.val(p.id).rows() != rows) throw ShapeError("concat_cols: row mismatch");
    cols += tp.val(p.id).cols();
    ids.push_back(p.id);
  }
  Tensor<T> out({rows, cols});
  int64_t c = 0;
  for (int idp : ids) {
    const Tensor<T>& v = tp.val(idp);
    for (int64_t i = 0; i < rows; ++i)
      for (int64_t j = 0; j < v.cols(); ++j) out.at(i, c + j) = v.at(i, j);
    c += v.cols();
  }
  int id = tp.record(std::move(out), [ids](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad_mut(self);
    int64_t c = 0;
    for (int idp : ids) {
      Tensor<T>& gp = t.grad_mut(idp);
      for (int64_t i = 0; i < gp.rows(); ++i)
        for (int64_t j = 0; j < gp.cols(); ++j) gp.at(i, j) += g.at(i, c + j);
      c += gp.cols();
    }
  });
  return Var<T>{&tp, id};
}

// Embedding lookup: out[i, :] = table[ids[i], :]. Backward scatter-adds, so
// unused vocabulary rows keep zero gradient.
template <class T>
Var<T> gather_rows(Var<T> table, const std::vector<int>& ids) {
  Tape<T>& tp = *table.tape;
  int it = table.id;
  const Tensor<T>& tab = tp.val(it);
  require_2d(tab, "gather_rows");
  Tensor<T> out({static_cast<int64_t>(ids.size()), tab.cols()});
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= tab.rows())
      throw ShapeError("gather_rows: index out of range");
    for (int64_t j = 0; j < tab.cols(); ++j)
      out.at(static_cast<int64_t>(i), j) = tab.at(ids[i], j);
  }
  int id = tp.record(std::move(out), [it, ids](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad_mut(self);
    Tensor<T>& gt = t.grad_mut(it);
    for (size_t i = 0; i < ids.size(); ++i)
      for (int64_t j = 0; j < g.cols(); ++j)
        gt.at(ids[i], j) += g.at(static_cast<int64_t>(i), j);
  });
  return Var<T>{&tp, id};
}

// Broadcast a [1 x d] row to [rows x d]; backward sums over rows.
template <class T>
Var<T> broadcast_row(Var<T> v, int64_t rows) {
  Tape<T>& tp = *v.tape;
  int iv = v.id;
  const Tensor<T>& vv = tp.val(iv);
  const int64_t cols = vv.numel();
  Tensor<T> out({rows, cols});
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < cols; ++j) out.at(i, j) = vv.data()[j];
  int id = tp.record(std::move(out), [iv](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad_mut(self);
    Tensor<T>& gv = t.grad_mut(iv);
    for (int64_t i = 0; i < g.rows(); ++i)
      for (int64_t j = 0; j < g.cols(); ++j) gv.data()[j] += g.at(i, j);
  });
  return Var<T>{&tp, id};
}

// Mean over rows -> [1 x d].
template <class T>
Var<T> mean_rows(Var<T> x) {
  Tape<T>& tp = *x.tape;
  int ix = x.id;
  const Tensor<T>& xv = tp.val(ix);
  require_2d(xv, "mean_rows");
  const int64_t rows = xv.rows(), cols = xv.cols();
  Tensor<T> out({1, cols});
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < cols; ++j) out.at(0, j) += xv.at(i, j);
  for (int64_t j = 0; j < cols; ++j) out.at(0, j) /= T(rows);
  int id = tp.record(std::move(out), [ix, rows](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad_mut(self);
    Tensor<T>& gx = t.grad_mut(ix);
    const T inv = T(1) / T(rows);
    for (int64_t i = 0; i < rows; ++i)
      for (int64_t j = 0; j < g.cols(); ++j) gx.at(i, j) += g.at(0, j) * inv;
  });
  return Var<T>{&tp, id};
}

template <class T>
Var<T> mean_all(Var<T> x) {
  Tape<T>& tp = *x.tape;
  int ix = x.id;
  const int64_t n = tp.val(ix).numel();
  Tensor<T> out({1});
  out.data()[0] = mean_all(tp.val(ix));
  int id = tp.record(std::move(out), [ix, n](Tape<T>& t, int self) {
    const T g = t.grad_mut(self).data()[0] / T(n);
    Tensor<T>& gx = t.grad_mut(ix);
    for (int64_t i = 0; i < n; ++i) gx.data()[i] += g;
  });
  return Var<T>{&tp, id};
}

// Mean squared error between two same-shaped vars -> scalar.
template <class T>
Var<T> mse(Var<T> a, Var<T> b) {
  Var<T> d = sub(a, b);
  return mean_all(mul(d, d));
}

}  // namespace icvid

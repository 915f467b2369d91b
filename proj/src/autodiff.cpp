#include "dmwa/autodiff.hpp"

#include <cmath>
#include <memory>

namespace dmwa {

// ---------------------------------------------------------------------------
// Tape

template <typename Scalar>
Var<Scalar> Tape<Scalar>::push(Node node) {
  if (!node.value.allFinite()) {
    throw NumericError("non-finite value produced on the tape at node " +
                       std::to_string(nodes_.size()));
  }
  nodes_.push_back(std::move(node));
  return Var<Scalar>(this, static_cast<int>(nodes_.size()) - 1);
}

template <typename Scalar>
Var<Scalar> Tape<Scalar>::constant(Mat value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

template <typename Scalar>
Var<Scalar> Tape<Scalar>::variable(Mat value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

template <typename Scalar>
Var<Scalar> Tape<Scalar>::record(Mat value, std::vector<int> parents, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  for (int p : parents) n.requires_grad = n.requires_grad || nodes_[p].requires_grad;
  if (n.requires_grad) {
    n.parents = std::move(parents);
    n.backward = std::move(fn);
  }
  return push(std::move(n));
}

template <typename Scalar>
typename Tape<Scalar>::Mat& Tape<Scalar>::grad(int id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    n.has_grad = true;
  }
  return n.grad;
}

template <typename Scalar>
void Tape<Scalar>::backward(const Var<Scalar>& root) {
  if (root.tape() != this) throw Error("backward: root is not on this tape");
  const Mat& rv = value(root.id());
  if (rv.rows() != 1 || rv.cols() != 1) {
    throw RankError("backward: root must be scalar, got " + shape_string(rv));
  }
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad.resize(0, 0);
  }
  last_visits_ = 0;
  if (!nodes_[root.id()].requires_grad) return;
  grad(root.id()).setOnes();
  for (int id = root.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.has_grad || !n.backward) continue;
    n.backward(*this, id);
    ++last_visits_;
  }
}

template <typename Scalar>
typename Tape<Scalar>::Mat Tape<Scalar>::gradient(const Var<Scalar>& v) const {
  const Node& n = nodes_[v.id()];
  if (!n.has_grad) return Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

// ---------------------------------------------------------------------------
// Operations

namespace {

template <typename Scalar>
Tape<Scalar>& same_tape(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.tape() != b.tape()) throw Error("operands live on different tapes");
  return *a.tape();
}

template <typename Scalar>
void require_same_shape(const char* op, const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.value()) + " vs " +
                         shape_string(b.value()));
  }
}

}  // namespace

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  auto& t = same_tape(a, b);
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner extents differ, " + shape_string(a.value()) + " x " +
                         shape_string(b.value()));
  }
  Matrix<Scalar> out;
  out.noalias() = a.value() * b.value();
  const int ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib}, [ia, ib](Tape<Scalar>& tp, int self) {
    const auto& g = tp.grad(self);
    if (tp.requires_grad(ia)) tp.grad(ia).noalias() += g * tp.value(ib).transpose();
    if (tp.requires_grad(ib)) tp.grad(ib).noalias() += tp.value(ia).transpose() * g;
  });
}

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  auto& t = same_tape(a, b);
  require_same_shape("add", a, b);
  const int ia = a.id(), ib = b.id();
  return t.record(a.value() + b.value(), {ia, ib}, [ia, ib](Tape<Scalar>& tp, int self) {
    tp.accumulate(ia, tp.grad(self));
    tp.accumulate(ib, tp.grad(self));
  });
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  auto& t = same_tape(a, b);
  require_same_shape("sub", a, b);
  const int ia = a.id(), ib = b.id();
  return t.record(a.value() - b.value(), {ia, ib}, [ia, ib](Tape<Scalar>& tp, int self) {
    tp.accumulate(ia, tp.grad(self));
    tp.accumulate(ib, -tp.grad(self));
  });
}

template <typename Scalar>
Var<Scalar> hadamard(const Var<Scalar>& a, const Var<Scalar>& b) {
  auto& t = same_tape(a, b);
  require_same_shape("hadamard", a, b);
  const int ia = a.id(), ib = b.id();
  return t.record(a.value().cwiseProduct(b.value()), {ia, ib}, [ia, ib](Tape<Scalar>& tp, int self) {
    const auto& g = tp.grad(self);
    if (tp.requires_grad(ia)) tp.grad(ia) += g.cwiseProduct(tp.value(ib));
    if (tp.requires_grad(ib)) tp.grad(ib) += g.cwiseProduct(tp.value(ia));
  });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar factor) {
  auto& t = *a.tape();
  const int ia = a.id();
  return t.record(a.value() * factor, {ia}, [ia, factor](Tape<Scalar>& tp, int self) {
    tp.accumulate(ia, tp.grad(self) * factor);
  });
}

template <typename Scalar>
Var<Scalar> add_row(const Var<Scalar>& x, const Var<Scalar>& row) {
  auto& t = same_tape(x, row);
  if (row.rows() != 1 || row.cols() != x.cols()) {
    throw DimensionError("add_row: " + shape_string(x.value()) + " + " + shape_string(row.value()));
  }
  Matrix<Scalar> out = x.value();
  out.rowwise() += row.value().row(0);
  const int ix = x.id(), ir = row.id();
  return t.record(std::move(out), {ix, ir}, [ix, ir](Tape<Scalar>& tp, int self) {
    const auto& g = tp.grad(self);
    tp.accumulate(ix, g);
    if (tp.requires_grad(ir)) tp.grad(ir) += g.colwise().sum();
  });
}

template <typename Scalar>
Var<Scalar> add_tiled(const Var<Scalar>& x, const Var<Scalar>& pattern) {
  auto& t = same_tape(x, pattern);
  const Index n = pattern.rows();
  if (pattern.cols() != x.cols() || n == 0 || x.rows() % n != 0) {
    throw DimensionError("add_tiled: " + shape_string(x.value()) + " + tiles of " +
                         shape_string(pattern.value()));
  }
  const Index blocks = x.rows() / n;
  Matrix<Scalar> out = x.value();
  for (Index b = 0; b < blocks; ++b) out.middleRows(b * n, n) += pattern.value();
  const int ix = x.id(), ip = pattern.id();
  return t.record(std::move(out), {ix, ip}, [ix, ip, n, blocks](Tape<Scalar>& tp, int self) {
    const auto& g = tp.grad(self);
    tp.accumulate(ix, g);
    if (tp.requires_grad(ip)) {
      auto& gp = tp.grad(ip);
      for (Index b = 0; b < blocks; ++b) gp += g.middleRows(b * n, n);
    }
  });
}

template <typename Scalar>
Var<Scalar> linear(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias) {
  return add_row(matmul(x, weight), bias);
}

template <typename Scalar>
Var<Scalar> softmax(const Var<Scalar>& x, int axis) {
  auto& t = *x.tape();
  const int ix = x.id();
  return t.record(dmwa::softmax(x.value(), axis), {ix}, [ix, axis](Tape<Scalar>& tp, int self) {
    if (!tp.requires_grad(ix)) return;
    const auto& y = tp.value(self);
    const auto& g = tp.grad(self);
    const Matrix<Scalar> gy = g.cwiseProduct(y);
    if (axis == 1) {
      const Vector<Scalar> dots = gy.rowwise().sum();
      tp.grad(ix) += gy - (y.array().colwise() * dots.array()).matrix();
    } else {
      const RowVector<Scalar> dots = gy.colwise().sum();
      tp.grad(ix) += gy - (y.array().rowwise() * dots.array()).matrix();
    }
  });
}

template <typename Scalar>
Var<Scalar> layer_norm(const Var<Scalar>& x, const Var<Scalar>& gain, const Var<Scalar>& bias) {
  auto& t = same_tape(x, gain);
  const Index d = x.cols();
  if (gain.rows() != 1 || gain.cols() != d || bias.rows() != 1 || bias.cols() != d) {
    throw DimensionError("layer_norm: input " + shape_string(x.value()) + " vs gain " +
                         shape_string(gain.value()) + " / bias " + shape_string(bias.value()));
  }
  const Index n = x.rows();
  auto normalized = std::make_shared<Matrix<Scalar>>(n, d);
  auto inv_std = std::make_shared<Vector<Scalar>>(n);
  const auto& xv = x.value();
  for (Index r = 0; r < n; ++r) {
    const Scalar mean = xv.row(r).sum() / static_cast<Scalar>(d);
    const auto centered = (xv.row(r).array() - mean).eval();
    const Scalar var = centered.square().sum() / static_cast<Scalar>(d);
    (*inv_std)(r) = Scalar(1) / std::sqrt(var + static_cast<Scalar>(kLayerNormEps));
    normalized->row(r) = (centered * (*inv_std)(r)).matrix();
  }
  Matrix<Scalar> out = (normalized->array().rowwise() * gain.value().row(0).array()).matrix();
  out.rowwise() += bias.value().row(0);
  const int ix = x.id(), ig = gain.id(), ib = bias.id();
  return t.record(std::move(out), {ix, ig, ib},
                  [ix, ig, ib, normalized, inv_std, d](Tape<Scalar>& tp, int self) {
                    const auto& g = tp.grad(self);
                    const auto& xhat = *normalized;
                    if (tp.requires_grad(ig)) tp.grad(ig) += g.cwiseProduct(xhat).colwise().sum();
                    if (tp.requires_grad(ib)) tp.grad(ib) += g.colwise().sum();
                    if (!tp.requires_grad(ix)) return;
                    const Matrix<Scalar> dxhat =
                        (g.array().rowwise() * tp.value(ig).row(0).array()).matrix();
                    auto& gx = tp.grad(ix);
                    const Scalar dn = static_cast<Scalar>(d);
                    for (Index r = 0; r < g.rows(); ++r) {
                      const Scalar s1 = dxhat.row(r).sum();
                      const Scalar s2 = dxhat.row(r).dot(xhat.row(r));
                      gx.row(r) += ((*inv_std)(r) / dn) *
                                   (dn * dxhat.row(r).array() - s1 - xhat.row(r).array() * s2).matrix();
                    }
                  });
}

template <typename Scalar>
Var<Scalar> gelu(const Var<Scalar>& x) {
  auto& t = *x.tape();
  const int ix = x.id();
  Matrix<Scalar> out = x.value().unaryExpr([](Scalar v) { return dmwa::gelu(v); });
  return t.record(std::move(out), {ix}, [ix](Tape<Scalar>& tp, int self) {
    if (!tp.requires_grad(ix)) return;
    tp.grad(ix) +=
        tp.grad(self).cwiseProduct(tp.value(ix).unaryExpr([](Scalar v) { return gelu_derivative(v); }));
  });
}

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& x) {
  auto& t = *x.tape();
  const int ix = x.id();
  return t.record(x.value().cwiseMax(Scalar(0)), {ix}, [ix](Tape<Scalar>& tp, int self) {
    if (!tp.requires_grad(ix)) return;
    const auto active = (tp.value(ix).array() > Scalar(0)).template cast<Scalar>();
    tp.grad(ix) += (tp.grad(self).array() * active).matrix();
  });
}

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& x) {
  auto& t = *x.tape();
  const int ix = x.id();
  Matrix<Scalar> out(1, 1);
  out(0, 0) = x.value().sum();
  return t.record(std::move(out), {ix}, [ix](Tape<Scalar>& tp, int self) {
    if (!tp.requires_grad(ix)) return;
    tp.grad(ix).array() += tp.grad(self)(0, 0);
  });
}

template <typename Scalar>
Var<Scalar> weighted_sum(const Var<Scalar>& x, const Vector<Scalar>& weights) {
  auto& t = *x.tape();
  if (x.cols() != 1 || x.rows() != weights.size()) {
    throw DimensionError("weighted_sum: values " + shape_string(x.value()) + " vs weights " +
                         shape_string(weights));
  }
  const int ix = x.id();
  Matrix<Scalar> out(1, 1);
  out(0, 0) = x.value().col(0).dot(weights);
  return t.record(std::move(out), {ix}, [ix, weights](Tape<Scalar>& tp, int self) {
    if (!tp.requires_grad(ix)) return;
    tp.grad(ix).col(0) += weights * tp.grad(self)(0, 0);
  });
}

template <typename Scalar>
Var<Scalar> gather_rows(const Var<Scalar>& x, std::span<const Index> rows) {
  auto& t = *x.tape();
  std::vector<Index> picked(rows.begin(), rows.end());
  Matrix<Scalar> out(static_cast<Index>(picked.size()), x.cols());
  for (std::size_t j = 0; j < picked.size(); ++j) {
    if (picked[j] < 0 || picked[j] >= x.rows()) {
      throw DimensionError("gather_rows: row " + std::to_string(picked[j]) + " out of range for " +
                           shape_string(x.value()));
    }
    out.row(static_cast<Index>(j)) = x.value().row(picked[j]);
  }
  const int ix = x.id();
  return t.record(std::move(out), {ix}, [ix, picked = std::move(picked)](Tape<Scalar>& tp, int self) {
    if (!tp.requires_grad(ix)) return;
    const auto& g = tp.grad(self);
    auto& gx = tp.grad(ix);
    for (std::size_t j = 0; j < picked.size(); ++j) gx.row(picked[j]) += g.row(static_cast<Index>(j));
  });
}

template <typename Scalar>
Var<Scalar> row_distance(const Var<Scalar>& a, const Var<Scalar>& b) {
  auto& t = same_tape(a, b);
  require_same_shape("row_distance", a, b);
  auto diff = std::make_shared<Matrix<Scalar>>(a.value() - b.value());
  Matrix<Scalar> out = diff->rowwise().norm();
  const int ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib}, [ia, ib, diff](Tape<Scalar>& tp, int self) {
    const auto& g = tp.grad(self);
    const auto& dist = tp.value(self);
    Matrix<Scalar> dd(diff->rows(), diff->cols());
    for (Index r = 0; r < diff->rows(); ++r) {
      if (dist(r, 0) > Scalar(0)) {
        dd.row(r) = diff->row(r) * (g(r, 0) / dist(r, 0));
      } else {
        dd.row(r).setZero();
      }
    }
    tp.accumulate(ia, dd);
    tp.accumulate(ib, -dd);
  });
}

template <typename Scalar>
Var<Scalar> prepend_token(const Var<Scalar>& token, const Var<Scalar>& x, Index block) {
  auto& t = same_tape(token, x);
  if (token.rows() != 1 || token.cols() != x.cols() || block <= 0 || x.rows() % block != 0) {
    throw DimensionError("prepend_token: token " + shape_string(token.value()) + ", tokens " +
                         shape_string(x.value()) + ", block " + std::to_string(block));
  }
  const Index blocks = x.rows() / block;
  Matrix<Scalar> out(blocks * (block + 1), x.cols());
  for (Index b = 0; b < blocks; ++b) {
    out.row(b * (block + 1)) = token.value().row(0);
    out.middleRows(b * (block + 1) + 1, block) = x.value().middleRows(b * block, block);
  }
  const int it = token.id(), ix = x.id();
  return t.record(std::move(out), {it, ix}, [it, ix, block, blocks](Tape<Scalar>& tp, int self) {
    const auto& g = tp.grad(self);
    const bool want_t = tp.requires_grad(it), want_x = tp.requires_grad(ix);
    for (Index b = 0; b < blocks; ++b) {
      if (want_t) tp.grad(it) += g.row(b * (block + 1));
      if (want_x) tp.grad(ix).middleRows(b * block, block) += g.middleRows(b * (block + 1) + 1, block);
    }
  });
}

template <typename Scalar>
Var<Scalar> detach(const Var<Scalar>& x) {
  return x.tape()->constant(x.value());
}

template <typename Scalar>
Var<Scalar> multihead_attention(const Var<Scalar>& q, const Var<Scalar>& k, const Var<Scalar>& v,
                                int heads, Index q_block, Index kv_block,
                                std::vector<Matrix<Scalar>>* probabilities) {
  auto& t = same_tape(q, k);
  same_tape(k, v);
  const Index width = q.cols();
  if (heads <= 0 || width % heads != 0) {
    throw DimensionError("multihead_attention: width " + std::to_string(width) +
                         " not divisible by " + std::to_string(heads) + " heads");
  }
  if (k.cols() != width || v.cols() != width) {
    throw DimensionError("multihead_attention: width mismatch q " + shape_string(q.value()) +
                         ", k " + shape_string(k.value()) + ", v " + shape_string(v.value()));
  }
  if (k.rows() != v.rows() || q_block <= 0 || kv_block <= 0 || q.rows() % q_block != 0 ||
      k.rows() % kv_block != 0 || q.rows() / q_block != k.rows() / kv_block) {
    throw DimensionError("multihead_attention: block layout mismatch q " + shape_string(q.value()) +
                         " (block " + std::to_string(q_block) + "), kv " + shape_string(k.value()) +
                         " (block " + std::to_string(kv_block) + ")");
  }
  const Index blocks = q.rows() / q_block;
  const Index head_width = width / heads;
  const Scalar scale_factor = Scalar(1) / std::sqrt(static_cast<Scalar>(head_width));

  auto probs = std::make_shared<std::vector<Matrix<Scalar>>>();
  probs->reserve(static_cast<std::size_t>(blocks * heads));
  Matrix<Scalar> out(q.rows(), width);
  const auto& qv = q.value();
  const auto& kv = k.value();
  const auto& vv = v.value();
  for (Index b = 0; b < blocks; ++b) {
    for (int h = 0; h < heads; ++h) {
      const auto qh = qv.block(b * q_block, h * head_width, q_block, head_width);
      const auto kh = kv.block(b * kv_block, h * head_width, kv_block, head_width);
      const auto vh = vv.block(b * kv_block, h * head_width, kv_block, head_width);
      Matrix<Scalar> logits;
      logits.noalias() = (qh * kh.transpose()) * scale_factor;
      probs->push_back(dmwa::softmax(logits, 1));
      out.block(b * q_block, h * head_width, q_block, head_width).noalias() = probs->back() * vh;
    }
  }
  if (probabilities) *probabilities = *probs;

  const int iq = q.id(), ik = k.id(), iv = v.id();
  return t.record(
      std::move(out), {iq, ik, iv},
      [iq, ik, iv, probs, blocks, heads, q_block, kv_block, head_width, scale_factor](Tape<Scalar>& tp,
                                                                                      int self) {
        const auto& g = tp.grad(self);
        const bool want_q = tp.requires_grad(iq), want_k = tp.requires_grad(ik),
                   want_v = tp.requires_grad(iv);
        const auto& qv = tp.value(iq);
        const auto& kv = tp.value(ik);
        const auto& vv = tp.value(iv);
        Matrix<Scalar> dp, ds;
        for (Index b = 0; b < blocks; ++b) {
          for (int h = 0; h < heads; ++h) {
            const auto& p = (*probs)[static_cast<std::size_t>(b * heads + h)];
            const auto go = g.block(b * q_block, h * head_width, q_block, head_width);
            const auto qh = qv.block(b * q_block, h * head_width, q_block, head_width);
            const auto kh = kv.block(b * kv_block, h * head_width, kv_block, head_width);
            const auto vh = vv.block(b * kv_block, h * head_width, kv_block, head_width);
            if (want_v) {
              tp.grad(iv).block(b * kv_block, h * head_width, kv_block, head_width).noalias() +=
                  p.transpose() * go;
            }
            if (!want_q && !want_k) continue;
            dp.noalias() = go * vh.transpose();
            const Vector<Scalar> dots = dp.cwiseProduct(p).rowwise().sum();
            ds = p.cwiseProduct((dp.colwise() - dots));
            if (want_q) {
              tp.grad(iq).block(b * q_block, h * head_width, q_block, head_width).noalias() +=
                  (ds * kh) * scale_factor;
            }
            if (want_k) {
              tp.grad(ik).block(b * kv_block, h * head_width, kv_block, head_width).noalias() +=
                  (ds.transpose() * qh) * scale_factor;
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Explicit instantiations

#define DMWA_INSTANTIATE(S)                                                                       \
  template class Tape<S>;                                                                         \
  template Var<S> matmul(const Var<S>&, const Var<S>&);                                          \
  template Var<S> add(const Var<S>&, const Var<S>&);                                             \
  template Var<S> sub(const Var<S>&, const Var<S>&);                                             \
  template Var<S> hadamard(const Var<S>&, const Var<S>&);                                        \
  template Var<S> scale(const Var<S>&, S);                                                       \
  template Var<S> add_row(const Var<S>&, const Var<S>&);                                         \
  template Var<S> add_tiled(const Var<S>&, const Var<S>&);                                       \
  template Var<S> linear(const Var<S>&, const Var<S>&, const Var<S>&);                           \
  template Var<S> softmax(const Var<S>&, int);                                                   \
  template Var<S> layer_norm(const Var<S>&, const Var<S>&, const Var<S>&);                       \
  template Var<S> gelu(const Var<S>&);                                                           \
  template Var<S> relu(const Var<S>&);                                                           \
  template Var<S> sum(const Var<S>&);                                                            \
  template Var<S> weighted_sum(const Var<S>&, const Vector<S>&);                                 \
  template Var<S> gather_rows(const Var<S>&, std::span<const Index>);                            \
  template Var<S> row_distance(const Var<S>&, const Var<S>&);                                    \
  template Var<S> prepend_token(const Var<S>&, const Var<S>&, Index);                            \
  template Var<S> detach(const Var<S>&);                                                         \
  template Var<S> multihead_attention(const Var<S>&, const Var<S>&, const Var<S>&, int, Index,   \
                                      Index, std::vector<Matrix<S>>*);

DMWA_INSTANTIATE(float)
DMWA_INSTANTIATE(double)

#undef DMWA_INSTANTIATE

}  // namespace dmwa

#pragma once

#include <functional>
#include <span>
#include <vector>

#include "dmwa/tensor.hpp"

namespace dmwa {

template <typename Scalar>
class Tape;

// Handle to a node on a Tape. Cheap to copy; the tape owns the values.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Tape<Scalar>* tape, int id) : tape_(tape), id_(id) {}

  const Matrix<Scalar>& value() const { return tape_->value(id_); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  int id() const { return id_; }
  Tape<Scalar>* tape() const { return tape_; }
  bool requires_grad() const { return tape_->requires_grad(id_); }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<Scalar>* tape_ = nullptr;
  int id_ = -1;
};

// Append-only record of primitive operations. Nodes are stored in creation
// order, so parents always precede children and a reverse sweep is a valid
// topological order for backward.
template <typename Scalar>
class Tape {
 public:
  using Mat = Matrix<Scalar>;
  // Reads grad(self) and accumulates into the parents' gradients.
  using BackwardFn = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf that does not track gradient.
  Var<Scalar> constant(Mat value);
  // Leaf whose gradient is collected by backward().
  Var<Scalar> variable(Mat value);

  // Records an op. If no parent requires grad the node is stored as a
  // constant and `fn` is dropped.
  Var<Scalar> record(Mat value, std::vector<int> parents, BackwardFn fn);

  const Mat& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }

  // Upstream gradient of a node during backward (zero-initialized on demand).
  Mat& grad(int id);
  bool has_grad(int id) const { return nodes_[id].has_grad; }

  // grad(id) += delta, skipped for nodes that do not require grad.
  template <typename Derived>
  void accumulate(int id, const Eigen::MatrixBase<Derived>& delta) {
    if (!nodes_[id].requires_grad) return;
    grad(id) += delta;
  }

  // Reverse sweep from a scalar root. Throws RankError for a non-scalar root.
  void backward(const Var<Scalar>& root);

  // Gradient collected for `v`; zeros when nothing flowed into it.
  Mat gradient(const Var<Scalar>& v) const;

  std::size_t size() const { return nodes_.size(); }
  // Nodes whose backward function ran during the last backward().
  std::size_t last_backward_visits() const { return last_visits_; }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::vector<int> parents;
    BackwardFn backward;
  };

  Var<Scalar> push(Node node);

  std::vector<Node> nodes_;
  std::size_t last_visits_ = 0;
};

// ---------------------------------------------------------------------------
// Differentiable operations. All operands must live on the same tape.

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b);

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b);

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b);

// Elementwise product.
template <typename Scalar>
Var<Scalar> hadamard(const Var<Scalar>& a, const Var<Scalar>& b);

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar factor);

// x [n x d] + row [1 x d], broadcast over rows.
template <typename Scalar>
Var<Scalar> add_row(const Var<Scalar>& x, const Var<Scalar>& row);

// x [blocks*n x d] + pattern [n x d], pattern repeated for every block.
template <typename Scalar>
Var<Scalar> add_tiled(const Var<Scalar>& x, const Var<Scalar>& pattern);

// x W + b for row-major activations.
template <typename Scalar>
Var<Scalar> linear(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias);

template <typename Scalar>
Var<Scalar> softmax(const Var<Scalar>& x, int axis);

// Per-row layer norm; gain and bias are [1 x d].
template <typename Scalar>
Var<Scalar> layer_norm(const Var<Scalar>& x, const Var<Scalar>& gain, const Var<Scalar>& bias);

template <typename Scalar>
Var<Scalar> gelu(const Var<Scalar>& x);

// max(x, 0) with subgradient 0 at exactly 0.
template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& x);

// Sum of all entries, as a 1x1 node.
template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& x);

// Σ_i w_i x_i for a column x [n x 1] and constant weights.
template <typename Scalar>
Var<Scalar> weighted_sum(const Var<Scalar>& x, const Vector<Scalar>& weights);

// Rows of x selected by `rows` (repeats allowed); backward scatter-adds.
template <typename Scalar>
Var<Scalar> gather_rows(const Var<Scalar>& x, std::span<const Index> rows);

// Column [n x 1] of Euclidean distances between matching rows of a and b.
// The subgradient at zero distance is 0.
template <typename Scalar>
Var<Scalar> row_distance(const Var<Scalar>& a, const Var<Scalar>& b);

// Inserts `token` [1 x d] ahead of every block of `block` rows in x.
// Output has blocks*(block+1) rows.
template <typename Scalar>
Var<Scalar> prepend_token(const Var<Scalar>& token, const Var<Scalar>& x, Index block);

// Copy of the value with no gradient connection.
template <typename Scalar>
Var<Scalar> detach(const Var<Scalar>& x);

// Scaled dot-product attention over independent row blocks.
//
// q holds consecutive blocks of `q_block` rows, k and v consecutive blocks
// of `kv_block` rows; block b of the output attends only to block b of k/v.
// The width is split into `heads` equal slices and each slice uses scale
// 1/sqrt(width/heads). If `probabilities` is non-null it receives, for each
// block and head (block-major), the [q_block x kv_block] attention matrix.
template <typename Scalar>
Var<Scalar> multihead_attention(const Var<Scalar>& q, const Var<Scalar>& k, const Var<Scalar>& v,
                                int heads, Index q_block, Index kv_block,
                                std::vector<Matrix<Scalar>>* probabilities = nullptr);

}  // namespace dmwa

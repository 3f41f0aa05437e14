#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. Every value is a 2-D matrix; scalars are 1x1.

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace demotune::ag {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

struct Node {
  Matrix value;
  Matrix grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void accumulate(const Matrix& g);
};

class Var {
 public:
  Var() = default;
  explicit Var(Matrix value, bool requires_grad = false);

  // Leaf that collects gradients.
  static Var parameter(Matrix value) { return Var(std::move(value), true); }
  static Var scalar(double v);

  bool defined() const { return node_ != nullptr; }
  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  double item() const;

  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool has_grad() const { return node_ && node_->grad.size() > 0; }
  // Zero matrix of the right shape when nothing has flowed in yet.
  Matrix grad() const;
  void zero_grad();

  // Seeds d(self)/d(self) = 1 and propagates through the recorded graph.
  void backward() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  friend Var make_result(Matrix value, std::vector<Var> inputs, std::function<void(Node&)> backward);
  std::shared_ptr<Node> node_;
};

// Builds an op node; the backward closure is dropped when no input needs grad.
Var make_result(Matrix value, std::vector<Var> inputs, std::function<void(Node&)> backward);

Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, double s);
inline Var operator*(double s, const Var& a) { return a * s; }

Var matmul(const Var& a, const Var& b);
// a * b^T without materialising the transpose.
Var matmul_nt(const Var& a, const Var& b);
Var add_row(const Var& a, const Var& row);  // broadcast a 1xC row over every row of a
Var hadamard(const Var& a, const Var& b);
Var gelu(const Var& x);
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);
Var softmax_rows(const Var& x);
Var l2_normalize_rows(const Var& x, double eps = 1e-12);

Var gather_rows(const Var& table, std::span<const int> ids);
// Copy of base where rows at positions are replaced by consecutive rows of values.
Var replace_rows(const Var& base, std::span<const int> positions, const Var& values);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_cols(const Var& x, Index start, Index count);
Var select_row(const Var& x, Index row);
Var select_cols(const Var& x, std::span<const int> cols);

Var sum(const Var& x);
Var mean(std::span<const Var> scalars);
Var row_squared_norms(const Var& x);  // Rx1
// Mean over rows of -log softmax(logits)[row, target[row]], max-subtracted.
Var cross_entropy_rows(const Var& logits, std::span<const int> targets);
Var detach(const Var& x);

}  // namespace demotune::ag

#include "demotune/autograd.hpp"

#include <cmath>
#include <numbers>
#include <string>
#include <unordered_set>
#include <utility>

#include "demotune/error.hpp"

namespace demotune::ag {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw Error(ErrorKind::InvalidArgument, what);
}

// Parent i's node, or nullptr when it does not take gradients.
Node* grad_parent(Node& self, std::size_t i) {
  Node* p = self.parents[i].get();
  return p->requires_grad ? p : nullptr;
}

}  // namespace

void Node::accumulate(const Matrix& g) {
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

Var::Var(Matrix value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Var Var::scalar(double v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return Var(std::move(m));
}

double Var::item() const {
  require(rows() == 1 && cols() == 1, "item() on a non-scalar");
  return value()(0, 0);
}

Matrix Var::grad() const {
  if (has_grad()) return node_->grad;
  return Matrix::Zero(rows(), cols());
}

void Var::zero_grad() {
  if (node_) node_->grad.resize(0, 0);
}

void Var::backward() const {
  require(rows() == 1 && cols() == 1, "backward() needs a scalar root");
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  node_->accumulate(Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn && node->grad.size() > 0) node->backward_fn(*node);
  }
  // Interior grads are scratch; only leaves keep theirs.
  for (Node* node : order) {
    if (node->backward_fn) node->grad.resize(0, 0);
  }
}

Var make_result(Matrix value, std::vector<Var> inputs, std::function<void(Node&)> backward) {
  Var out(std::move(value));
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (needs) {
    out.node_->requires_grad = true;
    out.node_->parents.reserve(inputs.size());
    for (auto& in : inputs) out.node_->parents.push_back(in.node_);
    out.node_->backward_fn = std::move(backward);
  }
  return out;
}

Var operator+(const Var& a, const Var& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  return make_result(a.value() + b.value(), {a, b}, [](Node& self) {
    if (auto* p = grad_parent(self, 0)) p->accumulate(self.grad);
    if (auto* p = grad_parent(self, 1)) p->accumulate(self.grad);
  });
}

Var operator-(const Var& a, const Var& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  return make_result(a.value() - b.value(), {a, b}, [](Node& self) {
    if (auto* p = grad_parent(self, 0)) p->accumulate(self.grad);
    if (auto* p = grad_parent(self, 1)) p->accumulate(-self.grad);
  });
}

Var operator*(const Var& a, double s) {
  return make_result(a.value() * s, {a}, [s](Node& self) {
    if (auto* p = grad_parent(self, 0)) p->accumulate(self.grad * s);
  });
}

Var matmul(const Var& a, const Var& b) {
  require(a.cols() == b.rows(), "matmul: inner dimension mismatch");
  Matrix out = a.value() * b.value();
  return make_result(std::move(out), {a, b}, [](Node& self) {
    const Matrix& av = self.parents[0]->value;
    const Matrix& bv = self.parents[1]->value;
    if (auto* p = grad_parent(self, 0)) p->accumulate(self.grad * bv.transpose());
    if (auto* p = grad_parent(self, 1)) p->accumulate(av.transpose() * self.grad);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  require(a.cols() == b.cols(), "matmul_nt: inner dimension mismatch");
  Matrix out = a.value() * b.value().transpose();
  return make_result(std::move(out), {a, b}, [](Node& self) {
    const Matrix& av = self.parents[0]->value;
    const Matrix& bv = self.parents[1]->value;
    if (auto* p = grad_parent(self, 0)) p->accumulate(self.grad * bv);
    if (auto* p = grad_parent(self, 1)) p->accumulate(self.grad.transpose() * av);
  });
}

Var add_row(const Var& a, const Var& row) {
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row: bias must be 1xC");
  Matrix out = a.value().rowwise() + row.value().row(0);
  return make_result(std::move(out), {a, row}, [](Node& self) {
    if (auto* p = grad_parent(self, 0)) p->accumulate(self.grad);
    if (auto* p = grad_parent(self, 1)) p->accumulate(self.grad.colwise().sum());
  });
}

Var hadamard(const Var& a, const Var& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "hadamard: shape mismatch");
  return make_result(a.value().cwiseProduct(b.value()), {a, b}, [](Node& self) {
    if (auto* p = grad_parent(self, 0)) p->accumulate(self.grad.cwiseProduct(self.parents[1]->value));
    if (auto* p = grad_parent(self, 1)) p->accumulate(self.grad.cwiseProduct(self.parents[0]->value));
  });
}

namespace {
constexpr double kGeluC = 0.044715;
const double kGeluK = std::sqrt(2.0 / std::numbers::pi);
}  // namespace

Var gelu(const Var& x) {
  Matrix out = x.value().unaryExpr([](double v) {
    return 0.5 * v * (1.0 + std::tanh(kGeluK * (v + kGeluC * v * v * v)));
  });
  return make_result(std::move(out), {x}, [](Node& self) {
    auto* p = grad_parent(self, 0);
    if (!p) return;
    Matrix d = p->value.unaryExpr([](double v) {
      const double t = std::tanh(kGeluK * (v + kGeluC * v * v * v));
      return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kGeluK * (1.0 + 3.0 * kGeluC * v * v);
    });
    p->accumulate(self.grad.cwiseProduct(d));
  });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  const Index cols = x.cols();
  require(gain.rows() == 1 && gain.cols() == cols && bias.rows() == 1 && bias.cols() == cols,
          "layer_norm: gain/bias must be 1xC");
  Matrix xhat(x.rows(), cols);
  Eigen::VectorXd inv_std(x.rows());
  for (Index r = 0; r < x.rows(); ++r) {
    const double mu = x.value().row(r).mean();
    const double var = (x.value().row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (x.value().row(r).array() - mu) * inv_std(r);
  }
  Matrix out = (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() + bias.value().row(0).array();
  return make_result(std::move(out), {x, gain, bias}, [xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
    const Matrix& g = self.grad;
    if (auto* p = grad_parent(self, 0)) {
      const auto gain_row = self.parents[1]->value.row(0).array();
      Matrix dx(g.rows(), g.cols());
      for (Index r = 0; r < g.rows(); ++r) {
        Eigen::ArrayXd dxhat = (g.row(r).array() * gain_row).transpose();
        Eigen::ArrayXd xh = xhat.row(r).array().transpose();
        const double m1 = dxhat.mean();
        const double m2 = (dxhat * xh).mean();
        dx.row(r) = ((dxhat - m1 - xh * m2) * inv_std(r)).transpose();
      }
      p->accumulate(dx);
    }
    if (auto* p = grad_parent(self, 1)) p->accumulate(g.cwiseProduct(xhat).colwise().sum());
    if (auto* p = grad_parent(self, 2)) p->accumulate(g.colwise().sum());
  });
}

Var softmax_rows(const Var& x) {
  Matrix out(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const double m = x.value().row(r).maxCoeff();
    out.row(r) = (x.value().row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  return make_result(out, {x}, [y = out](Node& self) {
    auto* p = grad_parent(self, 0);
    if (!p) return;
    Matrix dx(y.rows(), y.cols());
    for (Index r = 0; r < y.rows(); ++r) {
      const double dot = self.grad.row(r).dot(y.row(r));
      dx.row(r) = y.row(r).array() * (self.grad.row(r).array() - dot);
    }
    p->accumulate(dx);
  });
}

Var l2_normalize_rows(const Var& x, double eps) {
  Matrix out(x.rows(), x.cols());
  Eigen::VectorXd norms(x.rows());
  for (Index r = 0; r < x.rows(); ++r) {
    norms(r) = x.value().row(r).norm();
    if (!(norms(r) >= eps)) {
      throw Error(ErrorKind::DegenerateNorm, "row " + std::to_string(r) + " has norm below epsilon");
    }
    out.row(r) = x.value().row(r) / norms(r);
  }
  return make_result(out, {x}, [y = out, norms = std::move(norms)](Node& self) {
    auto* p = grad_parent(self, 0);
    if (!p) return;
    Matrix dx(y.rows(), y.cols());
    for (Index r = 0; r < y.rows(); ++r) {
      const double dot = self.grad.row(r).dot(y.row(r));
      dx.row(r) = (self.grad.row(r) - dot * y.row(r)) / norms(r);
    }
    p->accumulate(dx);
  });
}

Var gather_rows(const Var& table, std::span<const int> ids) {
  Matrix out(static_cast<Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && ids[i] < table.rows(), "gather_rows: id out of range");
    out.row(static_cast<Index>(i)) = table.value().row(ids[i]);
  }
  std::vector<int> idx(ids.begin(), ids.end());
  return make_result(std::move(out), {table}, [idx = std::move(idx)](Node& self) {
    auto* p = grad_parent(self, 0);
    if (!p) return;
    Matrix g = Matrix::Zero(p->value.rows(), p->value.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) g.row(idx[i]) += self.grad.row(static_cast<Index>(i));
    p->accumulate(g);
  });
}

Var replace_rows(const Var& base, std::span<const int> positions, const Var& values) {
  require(static_cast<Index>(positions.size()) == values.rows(), "replace_rows: row count mismatch");
  require(values.cols() == base.cols(), "replace_rows: width mismatch");
  Matrix out = base.value();
  for (std::size_t i = 0; i < positions.size(); ++i) {
    require(positions[i] >= 0 && positions[i] < base.rows(), "replace_rows: position out of range");
    out.row(positions[i]) = values.value().row(static_cast<Index>(i));
  }
  std::vector<int> pos(positions.begin(), positions.end());
  return make_result(std::move(out), {base, values}, [pos = std::move(pos)](Node& self) {
    if (auto* p = grad_parent(self, 0)) {
      Matrix g = self.grad;
      for (int r : pos) g.row(r).setZero();
      p->accumulate(g);
    }
    if (auto* p = grad_parent(self, 1)) {
      Matrix g(static_cast<Index>(pos.size()), self.grad.cols());
      for (std::size_t i = 0; i < pos.size(); ++i) g.row(static_cast<Index>(i)) = self.grad.row(pos[i]);
      p->accumulate(g);
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  Index rows = 0;
  for (const auto& v : parts) {
    require(v.cols() == parts.front().cols(), "concat_rows: width mismatch");
    rows += v.rows();
  }
  Matrix out(rows, parts.front().cols());
  Index at = 0;
  for (const auto& v : parts) {
    out.middleRows(at, v.rows()) = v.value();
    at += v.rows();
  }
  return make_result(std::move(out), {parts.begin(), parts.end()}, [](Node& self) {
    Index at = 0;
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      const Index r = self.parents[i]->value.rows();
      if (auto* p = grad_parent(self, i)) p->accumulate(self.grad.middleRows(at, r));
      at += r;
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  Index cols = 0;
  for (const auto& v : parts) {
    require(v.rows() == parts.front().rows(), "concat_cols: height mismatch");
    cols += v.cols();
  }
  Matrix out(parts.front().rows(), cols);
  Index at = 0;
  for (const auto& v : parts) {
    out.middleCols(at, v.cols()) = v.value();
    at += v.cols();
  }
  return make_result(std::move(out), {parts.begin(), parts.end()}, [](Node& self) {
    Index at = 0;
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      const Index c = self.parents[i]->value.cols();
      if (auto* p = grad_parent(self, i)) p->accumulate(self.grad.middleCols(at, c));
      at += c;
    }
  });
}

Var slice_cols(const Var& x, Index start, Index count) {
  require(start >= 0 && count >= 0 && start + count <= x.cols(), "slice_cols: out of range");
  return make_result(x.value().middleCols(start, count), {x}, [start, count](Node& self) {
    auto* p = grad_parent(self, 0);
    if (!p) return;
    Matrix g = Matrix::Zero(p->value.rows(), p->value.cols());
    g.middleCols(start, count) = self.grad;
    p->accumulate(g);
  });
}

Var select_row(const Var& x, Index row) {
  require(row >= 0 && row < x.rows(), "select_row: out of range");
  return make_result(x.value().row(row), {x}, [row](Node& self) {
    auto* p = grad_parent(self, 0);
    if (!p) return;
    Matrix g = Matrix::Zero(p->value.rows(), p->value.cols());
    g.row(row) = self.grad.row(0);
    p->accumulate(g);
  });
}

Var select_cols(const Var& x, std::span<const int> cols) {
  Matrix out(x.rows(), static_cast<Index>(cols.size()));
  for (std::size_t i = 0; i < cols.size(); ++i) {
    require(cols[i] >= 0 && cols[i] < x.cols(), "select_cols: out of range");
    out.col(static_cast<Index>(i)) = x.value().col(cols[i]);
  }
  std::vector<int> idx(cols.begin(), cols.end());
  return make_result(std::move(out), {x}, [idx = std::move(idx)](Node& self) {
    auto* p = grad_parent(self, 0);
    if (!p) return;
    Matrix g = Matrix::Zero(p->value.rows(), p->value.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) g.col(idx[i]) += self.grad.col(static_cast<Index>(i));
    p->accumulate(g);
  });
}

Var sum(const Var& x) {
  Matrix out(1, 1);
  out(0, 0) = x.value().sum();
  return make_result(std::move(out), {x}, [](Node& self) {
    auto* p = grad_parent(self, 0);
    if (!p) return;
    p->accumulate(Matrix::Constant(p->value.rows(), p->value.cols(), self.grad(0, 0)));
  });
}

Var mean(std::span<const Var> scalars) {
  require(!scalars.empty(), "mean: no inputs");
  double total = 0.0;
  for (const auto& s : scalars) total += s.item();
  const double inv = 1.0 / static_cast<double>(scalars.size());
  return make_result(Matrix::Constant(1, 1, total * inv), {scalars.begin(), scalars.end()}, [inv](Node& self) {
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      if (auto* p = grad_parent(self, i)) p->accumulate(self.grad * inv);
    }
  });
}

Var row_squared_norms(const Var& x) {
  Matrix out = x.value().rowwise().squaredNorm();
  return make_result(std::move(out), {x}, [](Node& self) {
    auto* p = grad_parent(self, 0);
    if (!p) return;
    Matrix g = p->value.array().colwise() * (2.0 * self.grad.col(0).array());
    p->accumulate(g);
  });
}

Var cross_entropy_rows(const Var& logits, std::span<const int> targets) {
  require(static_cast<Index>(targets.size()) == logits.rows(), "cross_entropy_rows: target count mismatch");
  const Index rows = logits.rows();
  Matrix probs(rows, logits.cols());
  double total = 0.0;
  for (Index r = 0; r < rows; ++r) {
    const int t = targets[static_cast<std::size_t>(r)];
    require(t >= 0 && t < logits.cols(), "cross_entropy_rows: target out of range");
    const double m = logits.value().row(r).maxCoeff();
    Eigen::ArrayXd shifted = (logits.value().row(r).array() - m).transpose();
    const double lse = std::log(shifted.exp().sum());
    probs.row(r) = (shifted - lse).exp().transpose();
    total += lse - shifted(t);
  }
  std::vector<int> tgt(targets.begin(), targets.end());
  return make_result(Matrix::Constant(1, 1, total / static_cast<double>(rows)), {logits},
                     [probs = std::move(probs), tgt = std::move(tgt)](Node& self) {
                       auto* p = grad_parent(self, 0);
                       if (!p) return;
                       Matrix g = probs;
                       for (std::size_t r = 0; r < tgt.size(); ++r) g(static_cast<Index>(r), tgt[r]) -= 1.0;
                       g *= self.grad(0, 0) / static_cast<double>(tgt.size());
                       p->accumulate(g);
                     });
}

Var detach(const Var& x) { return Var(x.value()); }

}  // namespace demotune::ag

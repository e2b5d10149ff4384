#pragma once

// Tape-based reverse-mode differentiation over dense double matrices.
//
// Every operation appends a node holding its value and a closure that pushes
// the node's gradient to its parents. Tape::backward() walks the nodes in
// reverse creation order, so gradients are accumulated in a fixed order and
// results are bit-reproducible. Nodes that do not depend on a trainable leaf
// carry no closure and receive no gradient.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include "rev/errors.hpp"
#include "rev/transforms.hpp"

namespace rev::ad {

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool valid() const { return tape != nullptr; }
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Matrix&)>;

  Tape() { nodes_.reserve(512); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value) { return push(std::move(value), false, {}); }
  Var variable(Matrix value) { return push(std::move(value), true, {}); }

  // Appends a node whose closure runs only if some parent needs a gradient.
  Var record(Matrix value, std::initializer_list<Var> parents, BackwardFn fn) {
    bool needs = false;
    for (const Var& p : parents) needs = needs || nodes_[static_cast<std::size_t>(p.id)].requires_grad;
    return push(std::move(value), needs, needs ? std::move(fn) : BackwardFn{});
  }
  Var record(Matrix value, const std::vector<Var>& parents, BackwardFn fn) {
    bool needs = false;
    for (const Var& p : parents) needs = needs || nodes_[static_cast<std::size_t>(p.id)].requires_grad;
    return push(std::move(value), needs, needs ? std::move(fn) : BackwardFn{});
  }

  const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  template <typename Expr>
  void accumulate(int id, const Expr& g) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  // Seeds d(root)/d(root) = 1 for a 1x1 root and propagates.
  void backward(Var root) {
    if (root.tape != this) throw ShapeError("backward: root belongs to another tape");
    Node& r = nodes_[static_cast<std::size_t>(root.id)];
    if (r.value.size() != 1) throw ShapeError("backward: root must be a scalar");
    if (!r.requires_grad) return;
    r.grad = Matrix::Ones(1, 1);
    for (int i = root.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      // Closures only touch parents (smaller ids), so n.grad stays put.
      if (n.backward && n.grad.size() != 0) n.backward(*this, n.grad);
    }
  }

  // Gradient of a node after backward(); zeros if it received none.
  Matrix grad(Var v) const {
    const Node& n = nodes_[static_cast<std::size_t>(v.id)];
    if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var push(Matrix value, bool requires_grad, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), Matrix(), requires_grad, std::move(fn)});
    return Var{this, static_cast<int>(nodes_.size() - 1)};
  }

  std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape->value(id); }

namespace detail {

inline void same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shapes " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     " and " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()) + " differ");
  }
}

}  // namespace detail

inline Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions " + std::to_string(a.cols()) + " and " + std::to_string(b.rows()));
  }
  Tape& t = *a.tape;
  return t.record(a.value() * b.value(), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(a.id)) tp.accumulate(a.id, g * tp.value(b.id).transpose());
    if (tp.requires_grad(b.id)) tp.accumulate(b.id, tp.value(a.id).transpose() * g);
  });
}

inline Var add(Var a, Var b) {
  detail::same_shape(a, b, "add");
  return a.tape->record(a.value() + b.value(), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    tp.accumulate(a.id, g);
    tp.accumulate(b.id, g);
  });
}

inline Var sub(Var a, Var b) {
  detail::same_shape(a, b, "sub");
  return a.tape->record(a.value() - b.value(), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    tp.accumulate(a.id, g);
    tp.accumulate(b.id, -g);
  });
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }

// Elementwise product.
inline Var mul(Var a, Var b) {
  detail::same_shape(a, b, "mul");
  return a.tape->record(a.value().cwiseProduct(b.value()), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(a.id)) tp.accumulate(a.id, g.cwiseProduct(tp.value(b.id)));
    if (tp.requires_grad(b.id)) tp.accumulate(b.id, g.cwiseProduct(tp.value(a.id)));
  });
}

inline Var scale(Var a, double s) {
  return a.tape->record(a.value() * s, {a}, [a, s](Tape& tp, const Matrix& g) { tp.accumulate(a.id, g * s); });
}

// x (n x c) + bias (1 x c) broadcast over rows.
inline Var add_bias(Var x, Var bias) {
  if (bias.rows() != 1 || bias.cols() != x.cols()) throw ShapeError("add_bias: bias must be 1 x " + std::to_string(x.cols()));
  Matrix out = x.value();
  out.rowwise() += bias.value().row(0);
  return x.tape->record(std::move(out), {x, bias}, [x, bias](Tape& tp, const Matrix& g) {
    tp.accumulate(x.id, g);
    if (tp.requires_grad(bias.id)) tp.accumulate(bias.id, g.colwise().sum());
  });
}

inline Var tanh(Var a) {
  Matrix y = a.value().array().tanh().matrix();
  const int self = static_cast<int>(a.tape->size());
  return a.tape->record(std::move(y), {a}, [a, self](Tape& tp, const Matrix& g) {
    const Matrix& y = tp.value(self);
    tp.accumulate(a.id, g.cwiseProduct((1.0 - y.array().square()).matrix()));
  });
}

inline Var relu(Var a) {
  Matrix y = a.value().cwiseMax(0.0);
  return a.tape->record(std::move(y), {a}, [a](Tape& tp, const Matrix& g) {
    tp.accumulate(a.id, (tp.value(a.id).array() > 0.0).select(g.array(), 0.0).matrix());
  });
}

inline Var transpose(Var a) {
  return a.tape->record(a.value().transpose(), {a},
                        [a](Tape& tp, const Matrix& g) { tp.accumulate(a.id, g.transpose()); });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row counts differ");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Eigen::Index c = 0;
  for (const Var& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return parts.front().tape->record(std::move(out), parts, [parts](Tape& tp, const Matrix& g) {
    Eigen::Index c0 = 0;
    for (const Var& p : parts) {
      const Eigen::Index w = tp.value(p.id).cols();
      if (tp.requires_grad(p.id)) tp.accumulate(p.id, g.middleCols(c0, w));
      c0 += w;
    }
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows: column counts differ");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Eigen::Index r = 0;
  for (const Var& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return parts.front().tape->record(std::move(out), parts, [parts](Tape& tp, const Matrix& g) {
    Eigen::Index r0 = 0;
    for (const Var& p : parts) {
      const Eigen::Index h = tp.value(p.id).rows();
      if (tp.requires_grad(p.id)) tp.accumulate(p.id, g.middleRows(r0, h));
      r0 += h;
    }
  });
}

inline Var slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) throw ShapeError("slice_rows: out of range");
  return a.tape->record(a.value().middleRows(start, count), {a}, [a, start, count](Tape& tp, const Matrix& g) {
    Matrix full = Matrix::Zero(tp.value(a.id).rows(), tp.value(a.id).cols());
    full.middleRows(start, count) = g;
    tp.accumulate(a.id, full);
  });
}

inline Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw ShapeError("slice_cols: out of range");
  return a.tape->record(a.value().middleCols(start, count), {a}, [a, start, count](Tape& tp, const Matrix& g) {
    Matrix full = Matrix::Zero(tp.value(a.id).rows(), tp.value(a.id).cols());
    full.middleCols(start, count) = g;
    tp.accumulate(a.id, full);
  });
}

// Stacks `times` copies of a vertically.
inline Var tile_rows(Var a, int times) {
  if (times < 1) throw ShapeError("tile_rows: times must be positive");
  const Eigen::Index h = a.rows();
  Matrix out(h * times, a.cols());
  for (int i = 0; i < times; ++i) out.middleRows(i * h, h) = a.value();
  return a.tape->record(std::move(out), {a}, [a, h, times](Tape& tp, const Matrix& g) {
    Matrix acc = g.middleRows(0, h);
    for (int i = 1; i < times; ++i) acc += g.middleRows(i * h, h);
    tp.accumulate(a.id, acc);
  });
}

// Row-wise softmax.
inline Var softmax_rows(Var a) {
  Matrix y = a.value();
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    const double mx = y.row(r).maxCoeff();
    y.row(r) = (y.row(r).array() - mx).exp().matrix();
    y.row(r) /= y.row(r).sum();
  }
  const int self = static_cast<int>(a.tape->size());
  return a.tape->record(std::move(y), {a}, [a, self](Tape& tp, const Matrix& g) {
    const Matrix& y = tp.value(self);
    Matrix dx = y.cwiseProduct(g);
    const Vector dots = dx.rowwise().sum();
    dx -= y.cwiseProduct(dots.replicate(1, y.cols()));
    tp.accumulate(a.id, dx);
  });
}

// Row-wise layer normalization with gain and bias (both 1 x c).
inline Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5) {
  const Eigen::Index n = x.rows(), c = x.cols();
  if (gain.cols() != c || bias.cols() != c) throw ShapeError("layer_norm: gain/bias width mismatch");
  Matrix xhat(n, c);
  Vector inv_std(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mean = x.value().row(r).mean();
    const auto centered = x.value().row(r).array() - mean;
    const double var = centered.square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (centered * inv_std(r)).matrix();
  }
  Matrix y = xhat.array().rowwise() * gain.value().row(0).array();
  y.rowwise() += bias.value().row(0);
  return x.tape->record(std::move(y), {x, gain, bias},
                        [x, gain, bias, xhat, inv_std](Tape& tp, const Matrix& g) {
                          if (tp.requires_grad(gain.id)) tp.accumulate(gain.id, g.cwiseProduct(xhat).colwise().sum());
                          if (tp.requires_grad(bias.id)) tp.accumulate(bias.id, g.colwise().sum());
                          if (tp.requires_grad(x.id)) {
                            const Eigen::Index c = xhat.cols();
                            Matrix gx = g.array().rowwise() * tp.value(gain.id).row(0).array();
                            Matrix dx(gx.rows(), c);
                            for (Eigen::Index r = 0; r < gx.rows(); ++r) {
                              const double m1 = gx.row(r).mean();
                              const double m2 = gx.row(r).dot(xhat.row(r)) / static_cast<double>(c);
                              dx.row(r) = inv_std(r) * (gx.row(r).array() - m1 - xhat.row(r).array() * m2).matrix();
                            }
                            tp.accumulate(x.id, dx);
                          }
                        });
}

// Applies a fixed linear map to consecutive row blocks of x.
// x holds B blocks of shape (in_rows x in_cols); each block is flattened
// row-major, multiplied by P (out_rows*out_cols x in_rows*in_cols) and
// reshaped row-major to (out_rows x out_cols).
inline Var block_linear(Var x, const Matrix& P, int in_rows, int out_rows, int out_cols) {
  const Eigen::Index in_cols = x.cols();
  if (x.rows() % in_rows != 0) throw ShapeError("block_linear: rows not a multiple of the block height");
  if (P.cols() != in_rows * in_cols || P.rows() != out_rows * out_cols) throw ShapeError("block_linear: operator shape mismatch");
  const Eigen::Index blocks = x.rows() / in_rows;
  auto apply = [](const Matrix& src, const Matrix& op, Eigen::Index nblocks, Eigen::Index src_rows,
                  Eigen::Index src_cols, Eigen::Index dst_rows, Eigen::Index dst_cols) {
    Matrix dst(nblocks * dst_rows, dst_cols);
    Vector v(src_rows * src_cols);
    for (Eigen::Index b = 0; b < nblocks; ++b) {
      for (Eigen::Index r = 0; r < src_rows; ++r)
        for (Eigen::Index c = 0; c < src_cols; ++c) v(r * src_cols + c) = src(b * src_rows + r, c);
      const Vector w = op * v;
      for (Eigen::Index r = 0; r < dst_rows; ++r)
        for (Eigen::Index c = 0; c < dst_cols; ++c) dst(b * dst_rows + r, c) = w(r * dst_cols + c);
    }
    return dst;
  };
  Matrix out = apply(x.value(), P, blocks, in_rows, in_cols, out_rows, out_cols);
  return x.tape->record(std::move(out), {x}, [=](Tape& tp, const Matrix& g) {
    const Matrix Pt = P.transpose();
    tp.accumulate(x.id, apply(g, Pt, blocks, out_rows, out_cols, in_rows, in_cols));
  });
}

// Rank-one field: out[k * T + t, d] = A[k, d] * B[t, d], A is K x D, B is T x D.
inline Var outer_field(Var A, Var B) {
  if (A.cols() != B.cols()) throw ShapeError("outer_field: feature widths differ");
  const Eigen::Index K = A.rows(), T = B.rows(), D = A.cols();
  Matrix out(K * T, D);
  for (Eigen::Index k = 0; k < K; ++k)
    out.middleRows(k * T, T) = B.value().array().rowwise() * A.value().row(k).array();
  return A.tape->record(std::move(out), {A, B}, [A, B, K, T, D](Tape& tp, const Matrix& g) {
    const Matrix& a = tp.value(A.id);
    const Matrix& b = tp.value(B.id);
    if (tp.requires_grad(A.id)) {
      Matrix dA(K, D);
      for (Eigen::Index k = 0; k < K; ++k) dA.row(k) = g.middleRows(k * T, T).cwiseProduct(b).colwise().sum();
      tp.accumulate(A.id, dA);
    }
    if (tp.requires_grad(B.id)) {
      Matrix dB = Matrix::Zero(T, D);
      for (Eigen::Index k = 0; k < K; ++k) dB += (g.middleRows(k * T, T).array().rowwise() * a.row(k).array()).matrix();
      tp.accumulate(B.id, dB);
    }
  });
}

inline Var sum(Var a) {
  Matrix s(1, 1);
  s(0, 0) = a.value().sum();
  return a.tape->record(std::move(s), {a}, [a](Tape& tp, const Matrix& g) {
    tp.accumulate(a.id, Matrix::Constant(tp.value(a.id).rows(), tp.value(a.id).cols(), g(0, 0)));
  });
}

// Frobenius norm; the gradient at exactly zero is taken as zero.
inline Var frobenius_norm(Var a) {
  Matrix s(1, 1);
  s(0, 0) = a.value().norm();
  const double nrm = s(0, 0);
  return a.tape->record(std::move(s), {a}, [a, nrm](Tape& tp, const Matrix& g) {
    if (nrm > 0.0) tp.accumulate(a.id, tp.value(a.id) * (g(0, 0) / nrm));
  });
}

}  // namespace rev::ad

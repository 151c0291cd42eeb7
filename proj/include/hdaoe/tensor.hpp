#pragma once

// Dense matrices, a reverse-mode tape, and the layer/optimizer kernels the
// model is built from. Everything is templated on the scalar type so the same
// graph runs in float32 for training and float64 for gradient checking.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "hdaoe/errors.hpp"
#include "hdaoe/rng.hpp"

namespace hdaoe::tensor {

template <std::floating_point T>
class Matrix {
 public:
  using value_type = T;

  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{0})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::initializer_list<T> values)
      : rows_(rows), cols_(cols), data_(values) {
    if (data_.size() != rows * cols) throw ShapeError("initializer size does not match shape");
  }
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> values)
      : rows_(rows), cols_(cols), data_(std::move(values)) {
    if (data_.size() != rows * cols) throw ShapeError("value count does not match shape");
  }

  static Matrix row_vector(std::span<const T> values) {
    return Matrix(1, values.size(), std::vector<T>(values.begin(), values.end()));
  }

  template <std::floating_point U>
  Matrix<U> cast() const {
    return Matrix<U>(rows_, cols_, std::vector<U>(data_.begin(), data_.end()));
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  T operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Matrix& operator+=(const Matrix& o) {
    if (!same_shape(o)) throw ShapeError("+=: shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

inline std::string shape_str(std::size_t r, std::size_t c) {
  return "(" + std::to_string(r) + "x" + std::to_string(c) + ")";
}

// ---------------------------------------------------------------------------
// Kernels

/// a(n x k) * b(k x m)
template <class T>
Matrix<T> gemm(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols() != b.rows())
    throw ShapeError("matmul: " + shape_str(a.rows(), a.cols()) + " * " +
                     shape_str(b.rows(), b.cols()));
  Matrix<T> out(a.rows(), b.cols());
  const std::size_t k_dim = a.cols(), m = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    T* o = out.data() + i * m;
    const T* ar = a.data() + i * k_dim;
    for (std::size_t k = 0; k < k_dim; ++k) {
      const T av = ar[k];
      if (av == T{0}) continue;
      const T* br = b.data() + k * m;
      for (std::size_t j = 0; j < m; ++j) o[j] += av * br[j];
    }
  }
  return out;
}

/// a(n x k) * b(m x k)^T
template <class T>
Matrix<T> gemm_nt(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols() != b.cols())
    throw ShapeError("matmul_nt: " + shape_str(a.rows(), a.cols()) + " * " +
                     shape_str(b.rows(), b.cols()) + "^T");
  // Transposing b keeps the inner loop contiguous in both operands.
  Matrix<T> bt(b.cols(), b.rows());
  for (std::size_t j = 0; j < b.rows(); ++j)
    for (std::size_t k = 0; k < b.cols(); ++k) bt(k, j) = b(j, k);
  return gemm(a, bt);
}

/// a(k x n)^T * b(k x m)
template <class T>
Matrix<T> gemm_tn(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.rows() != b.rows())
    throw ShapeError("matmul_tn: " + shape_str(a.rows(), a.cols()) + "^T * " +
                     shape_str(b.rows(), b.cols()));
  Matrix<T> out(a.cols(), b.cols());
  const std::size_t n = a.cols(), m = b.cols();
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const T* ar = a.data() + k * n;
    const T* br = b.data() + k * m;
    for (std::size_t i = 0; i < n; ++i) {
      const T av = ar[i];
      if (av == T{0}) continue;
      T* o = out.data() + i * m;
      for (std::size_t j = 0; j < m; ++j) o[j] += av * br[j];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Parameters

template <std::floating_point T>
struct Parameter {
  std::string name;
  Matrix<T> value;
  Matrix<T> grad;
};

/// Ordered, name-addressable parameter blocks with stable addresses.
template <std::floating_point T>
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet&) = default;
  ParameterSet& operator=(const ParameterSet&) = default;

  Parameter<T>& add(std::string name, Matrix<T> init) {
    if (index_.contains(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
    index_.emplace(name, params_.size());
    Matrix<T> grad(init.rows(), init.cols());
    params_.push_back({std::move(name), std::move(init), std::move(grad)});
    return params_.back();
  }

  Parameter<T>* find(std::string_view name) {
    const auto it = index_.find(std::string(name));
    return it == index_.end() ? nullptr : &params_[it->second];
  }
  const Parameter<T>* find(std::string_view name) const {
    const auto it = index_.find(std::string(name));
    return it == index_.end() ? nullptr : &params_[it->second];
  }
  Parameter<T>& at(std::string_view name) {
    if (auto* p = find(name)) return *p;
    throw std::out_of_range("no parameter '" + std::string(name) + "'");
  }
  const Parameter<T>& at(std::string_view name) const {
    if (const auto* p = find(name)) return *p;
    throw std::out_of_range("no parameter '" + std::string(name) + "'");
  }

  std::size_t size() const { return params_.size(); }
  Parameter<T>& operator[](std::size_t i) { return params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return params_[i]; }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad() {
    for (auto& p : params_) p.grad.fill(T{0});
  }

  std::size_t num_scalars() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

 private:
  std::deque<Parameter<T>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Tape

template <std::floating_point T>
class Tape;

template <std::floating_point T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Matrix<T>& value() const { return tape->value(*this); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  /// Value of a 1x1 node.
  T item() const {
    const auto& v = value();
    if (v.size() != 1) throw ShapeError("item() on a non-scalar node");
    return v.values()[0];
  }
};

/// Records a computation graph; backward() walks it in reverse.
template <std::floating_point T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Matrix<T>& out_grad)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var<T> constant(Matrix<T> m, std::string_view label = "constant") {
    nodes_.push_back(Node{std::move(m), {}, {}, nullptr, label, false});
    return {this, nodes_.size() - 1};
  }

  /// Leaf bound to a parameter. Repeated calls reuse the same leaf, so
  /// gradients from every use accumulate into one block.
  Var<T> parameter(Parameter<T>& p) {
    if (const auto it = param_leaf_.find(&p); it != param_leaf_.end()) return {this, it->second};
    nodes_.push_back(Node{{}, {}, {}, &p, p.name, grad_enabled_});
    param_leaf_.emplace(&p, nodes_.size() - 1);
    return {this, nodes_.size() - 1};
  }

  /// Appends an op node. `fn` is only stored when some input needs a gradient.
  Var<T> record(Matrix<T> value, std::initializer_list<Var<T>> inputs, std::string_view op,
                BackwardFn fn) {
    bool needs = false;
    for (const auto& in : inputs) {
      if (in.tape != this) throw std::invalid_argument("op mixes nodes from different tapes");
      needs = needs || nodes_[in.id].requires_grad;
    }
    nodes_.push_back(
        Node{std::move(value), {}, needs ? std::move(fn) : BackwardFn{}, nullptr, op, needs});
    return {this, nodes_.size() - 1};
  }

  const Matrix<T>& value(Var<T> v) const {
    const Node& n = nodes_[v.id];
    return n.param ? n.param->value : n.value;
  }

  bool requires_grad(Var<T> v) const { return nodes_[v.id].requires_grad; }

  /// Gradient buffer of a node, allocated on first use.
  Matrix<T>& grad(Var<T> v) {
    Node& n = nodes_[v.id];
    if (n.grad.empty() && !value(v).empty()) n.grad = Matrix<T>(value(v).rows(), value(v).cols());
    return n.grad;
  }

  void accumulate(Var<T> v, const Matrix<T>& g) {
    if (!requires_grad(v)) return;
    grad(v) += g;
  }

  /// Propagates d(loss)/d(node) to every reachable node and adds the leaf
  /// gradients into the bound Parameter::grad blocks.
  void backward(Var<T> loss) {
    if (value(loss).size() != 1) throw ShapeError("backward() requires a scalar loss");
    if (!requires_grad(loss)) return;
    grad(loss).fill(T{1});
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.backward) n.backward(*this, n.grad);
    }
    for (auto& [param, id] : param_leaf_) {
      const Node& n = nodes_[id];
      if (!n.grad.empty()) param->grad += n.grad;
    }
  }

  /// Label of the first node holding a non-finite value, if any.
  std::optional<std::string> first_non_finite() const {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (!value({const_cast<Tape*>(this), i}).all_finite())
        return std::string(nodes_[i].op) + " (node " + std::to_string(i) + ")";
    }
    return std::nullopt;
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix<T> value;
    Matrix<T> grad;
    BackwardFn backward;
    Parameter<T>* param;
    std::string_view op;
    bool requires_grad;
  };

  bool grad_enabled_;
  std::vector<Node> nodes_;
  std::unordered_map<Parameter<T>*, std::size_t> param_leaf_;
};

// ---------------------------------------------------------------------------
// Differentiable ops

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Tape<T>& t = *a.tape;
  return t.record(gemm(a.value(), b.value()), {a, b}, "matmul",
                  [a, b](Tape<T>& t, const Matrix<T>& g) {
                    if (t.requires_grad(a)) t.accumulate(a, gemm_nt(g, b.value()));
                    if (t.requires_grad(b)) t.accumulate(b, gemm_tn(a.value(), g));
                  });
}

/// a * b^T
template <class T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  Tape<T>& t = *a.tape;
  return t.record(gemm_nt(a.value(), b.value()), {a, b}, "matmul_nt",
                  [a, b](Tape<T>& t, const Matrix<T>& g) {
                    if (t.requires_grad(a)) t.accumulate(a, gemm(g, b.value()));
                    if (t.requires_grad(b)) t.accumulate(b, gemm_tn(g, a.value()));
                  });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (!av.same_shape(bv)) throw ShapeError("add: shape mismatch");
  Matrix<T> out = av;
  out += bv;
  return a.tape->record(std::move(out), {a, b}, "add", [a, b](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

/// x (n x c) + row (1 x c) broadcast over rows.
template <class T>
Var<T> add_row(Var<T> x, Var<T> row) {
  const auto& xv = x.value();
  const auto& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != xv.cols()) throw ShapeError("add_row: shape mismatch");
  Matrix<T> out = xv;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += rv(0, j);
  return x.tape->record(std::move(out), {x, row}, "add_row",
                        [x, row](Tape<T>& t, const Matrix<T>& g) {
                          t.accumulate(x, g);
                          if (t.requires_grad(row)) {
                            Matrix<T> gr(1, g.cols());
                            for (std::size_t i = 0; i < g.rows(); ++i)
                              for (std::size_t j = 0; j < g.cols(); ++j) gr(0, j) += g(i, j);
                            t.accumulate(row, gr);
                          }
                        });
}

template <class T>
Var<T> scale(Var<T> x, T c) {
  Matrix<T> out = x.value();
  for (auto& v : out.values()) v *= c;
  return x.tape->record(std::move(out), {x}, "scale", [x, c](Tape<T>& t, const Matrix<T>& g) {
    Matrix<T> gx = g;
    for (auto& v : gx.values()) v *= c;
    t.accumulate(x, gx);
  });
}

template <class T>
Var<T> hadamard(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (!av.same_shape(bv)) throw ShapeError("hadamard: shape mismatch");
  Matrix<T> out(av.rows(), av.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] = av.values()[i] * bv.values()[i];
  return a.tape->record(std::move(out), {a, b}, "hadamard",
                        [a, b](Tape<T>& t, const Matrix<T>& g) {
                          const auto& av = a.value();
                          const auto& bv = b.value();
                          if (t.requires_grad(a)) {
                            Matrix<T> ga(g.rows(), g.cols());
                            for (std::size_t i = 0; i < g.size(); ++i)
                              ga.values()[i] = g.values()[i] * bv.values()[i];
                            t.accumulate(a, ga);
                          }
                          if (t.requires_grad(b)) {
                            Matrix<T> gb(g.rows(), g.cols());
                            for (std::size_t i = 0; i < g.size(); ++i)
                              gb.values()[i] = g.values()[i] * av.values()[i];
                            t.accumulate(b, gb);
                          }
                        });
}

template <class T>
Var<T> relu(Var<T> x) {
  Matrix<T> out = x.value();
  for (auto& v : out.values()) v = v > T{0} || std::isnan(v) ? v : T{0};
  return x.tape->record(std::move(out), {x}, "relu", [x](Tape<T>& t, const Matrix<T>& g) {
    const auto& xv = x.value();
    Matrix<T> gx(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.size(); ++i)
      gx.values()[i] = xv.values()[i] > T{0} ? g.values()[i] : T{0};
    t.accumulate(x, gx);
  });
}

/// Per-row normalization to zero mean / unit population variance, then
/// gamma * xhat + beta.
template <class T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5)) {
  const auto& xv = x.value();
  const std::size_t n = xv.rows(), c = xv.cols();
  if (c == 0) throw ShapeError("layer_norm: empty row");
  if (gamma.rows() != 1 || gamma.cols() != c || beta.rows() != 1 || beta.cols() != c)
    throw ShapeError("layer_norm: gamma/beta must be 1x" + std::to_string(c));
  Matrix<T> xhat(n, c);
  std::vector<T> rstd(n);
  for (std::size_t i = 0; i < n; ++i) {
    T mean{0};
    for (std::size_t j = 0; j < c; ++j) mean += xv(i, j);
    mean /= static_cast<T>(c);
    T var{0};
    for (std::size_t j = 0; j < c; ++j) var += (xv(i, j) - mean) * (xv(i, j) - mean);
    var /= static_cast<T>(c);
    rstd[i] = T{1} / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) xhat(i, j) = (xv(i, j) - mean) * rstd[i];
  }
  Matrix<T> out(n, c);
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out(i, j) = gv(0, j) * xhat(i, j) + bv(0, j);
  return x.tape->record(
      std::move(out), {x, gamma, beta}, "layer_norm",
      [x, gamma, beta, xhat = std::move(xhat), rstd = std::move(rstd)](Tape<T>& t,
                                                                       const Matrix<T>& g) {
        const std::size_t n = g.rows(), c = g.cols();
        const auto& gv = gamma.value();
        if (t.requires_grad(gamma) || t.requires_grad(beta)) {
          Matrix<T> gg(1, c), gb(1, c);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j) {
              gg(0, j) += g(i, j) * xhat(i, j);
              gb(0, j) += g(i, j);
            }
          t.accumulate(gamma, gg);
          t.accumulate(beta, gb);
        }
        if (t.requires_grad(x)) {
          Matrix<T> gx(n, c);
          for (std::size_t i = 0; i < n; ++i) {
            T mean_d{0}, mean_dx{0};
            for (std::size_t j = 0; j < c; ++j) {
              const T d = g(i, j) * gv(0, j);
              mean_d += d;
              mean_dx += d * xhat(i, j);
            }
            mean_d /= static_cast<T>(c);
            mean_dx /= static_cast<T>(c);
            for (std::size_t j = 0; j < c; ++j) {
              const T d = g(i, j) * gv(0, j);
              gx(i, j) = rstd[i] * (d - mean_d - xhat(i, j) * mean_dx);
            }
          }
          t.accumulate(x, gx);
        }
      });
}

/// Inverted dropout: kept entries are scaled by 1/(1-rate).
template <class T>
Var<T> dropout(Var<T> x, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout rate must be in [0,1)");
  if (rate == 0.0) return x;
  const auto& xv = x.value();
  Matrix<T> mask(xv.rows(), xv.cols());
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  for (auto& m : mask.values()) m = rng.uniform() >= rate ? keep_scale : T{0};
  Var<T> m = x.tape->constant(std::move(mask), "dropout_mask");
  return hadamard(x, m);
}

template <class T>
Var<T> concat_cols(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rows() != bv.rows()) throw ShapeError("concat_cols: row mismatch");
  const std::size_t ca = av.cols(), cb = bv.cols();
  Matrix<T> out(av.rows(), ca + cb);
  for (std::size_t i = 0; i < av.rows(); ++i) {
    std::copy(av.row(i).begin(), av.row(i).end(), out.row(i).begin());
    std::copy(bv.row(i).begin(), bv.row(i).end(), out.row(i).begin() + ca);
  }
  return a.tape->record(std::move(out), {a, b}, "concat_cols",
                        [a, b, ca, cb](Tape<T>& t, const Matrix<T>& g) {
                          if (t.requires_grad(a)) {
                            Matrix<T> ga(g.rows(), ca);
                            for (std::size_t i = 0; i < g.rows(); ++i)
                              for (std::size_t j = 0; j < ca; ++j) ga(i, j) = g(i, j);
                            t.accumulate(a, ga);
                          }
                          if (t.requires_grad(b)) {
                            Matrix<T> gb(g.rows(), cb);
                            for (std::size_t i = 0; i < g.rows(); ++i)
                              for (std::size_t j = 0; j < cb; ++j) gb(i, j) = g(i, ca + j);
                            t.accumulate(b, gb);
                          }
                        });
}

template <class T>
Var<T> concat_rows(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.cols() != bv.cols()) throw ShapeError("concat_rows: column mismatch");
  const std::size_t ra = av.rows(), rb = bv.rows(), c = av.cols();
  std::vector<T> data(av.values().begin(), av.values().end());
  data.insert(data.end(), bv.values().begin(), bv.values().end());
  return a.tape->record(Matrix<T>(ra + rb, c, std::move(data)), {a, b}, "concat_rows",
                        [a, b, ra, rb, c](Tape<T>& t, const Matrix<T>& g) {
                          const T* gp = g.data();
                          if (t.requires_grad(a))
                            t.accumulate(a, Matrix<T>(ra, c, std::vector<T>(gp, gp + ra * c)));
                          if (t.requires_grad(b))
                            t.accumulate(b, Matrix<T>(rb, c, std::vector<T>(gp + ra * c,
                                                                           gp + (ra + rb) * c)));
                        });
}

/// Row lookup; backward scatter-adds into the source rows.
template <class T>
Var<T> gather_rows(Var<T> x, std::vector<std::size_t> indices) {
  const auto& xv = x.value();
  Matrix<T> out(indices.size(), xv.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= xv.rows()) throw std::out_of_range("gather_rows: index out of range");
    std::copy(xv.row(indices[i]).begin(), xv.row(indices[i]).end(), out.row(i).begin());
  }
  return x.tape->record(std::move(out), {x}, "gather_rows",
                        [x, indices = std::move(indices)](Tape<T>& t, const Matrix<T>& g) {
                          Matrix<T> gx(x.rows(), x.cols());
                          for (std::size_t i = 0; i < indices.size(); ++i)
                            for (std::size_t j = 0; j < g.cols(); ++j)
                              gx(indices[i], j) += g(i, j);
                          t.accumulate(x, gx);
                        });
}

/// Unit-L2 rows; all-zero rows stay zero and pass no gradient. Non-finite rows propagate.
template <class T>
Var<T> l2_normalize_rows(Var<T> x) {
  const auto& xv = x.value();
  Matrix<T> out(xv.rows(), xv.cols());
  std::vector<T> norms(xv.rows());
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    T sq{0};
    for (T v : xv.row(i)) sq += v * v;
    norms[i] = std::sqrt(sq);
    if (norms[i] != T{0})
      for (std::size_t j = 0; j < xv.cols(); ++j) out(i, j) = xv(i, j) / norms[i];
  }
  Matrix<T> y = out;
  return x.tape->record(
      std::move(out), {x}, "l2_normalize",
      [x, y = std::move(y), norms = std::move(norms)](Tape<T>& t, const Matrix<T>& g) {
        Matrix<T> gx(g.rows(), g.cols());
        for (std::size_t i = 0; i < g.rows(); ++i) {
          if (norms[i] == T{0}) continue;
          T dot{0};
          for (std::size_t j = 0; j < g.cols(); ++j) dot += y(i, j) * g(i, j);
          for (std::size_t j = 0; j < g.cols(); ++j)
            gx(i, j) = (g(i, j) - y(i, j) * dot) / norms[i];
        }
        t.accumulate(x, gx);
      });
}

template <class T>
Var<T> softmax_rows(Var<T> x) {
  const auto& xv = x.value();
  Matrix<T> out(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    const auto r = xv.row(i);
    const T mx = *std::max_element(r.begin(), r.end());
    T sum{0};
    for (std::size_t j = 0; j < r.size(); ++j) sum += (out(i, j) = std::exp(r[j] - mx));
    for (std::size_t j = 0; j < r.size(); ++j) out(i, j) /= sum;
  }
  Matrix<T> y = out;
  return x.tape->record(std::move(out), {x}, "softmax",
                        [x, y = std::move(y)](Tape<T>& t, const Matrix<T>& g) {
                          Matrix<T> gx(g.rows(), g.cols());
                          for (std::size_t i = 0; i < g.rows(); ++i) {
                            T dot{0};
                            for (std::size_t j = 0; j < g.cols(); ++j) dot += y(i, j) * g(i, j);
                            for (std::size_t j = 0; j < g.cols(); ++j)
                              gx(i, j) = y(i, j) * (g(i, j) - dot);
                          }
                          t.accumulate(x, gx);
                        });
}

/// Row-wise cosine similarity matrix (n x d) vs (k x d) -> (n x k).
template <class T>
Var<T> cosine_matrix(Var<T> f, Var<T> w) {
  return matmul_nt(l2_normalize_rows(f), l2_normalize_rows(w));
}

/// Mean over rows of -log softmax(logits_i)[target_i]; returns a 1x1 node.
template <class T>
Var<T> cross_entropy(Var<T> logits, std::vector<std::size_t> targets) {
  const auto& z = logits.value();
  if (targets.size() != z.rows()) throw ShapeError("cross_entropy: target count mismatch");
  if (z.rows() == 0) throw std::invalid_argument("cross_entropy: empty batch");
  if (z.cols() == 0) throw std::invalid_argument("cross_entropy: no classes");
  Matrix<T> prob(z.rows(), z.cols());
  T total{0};
  for (std::size_t i = 0; i < z.rows(); ++i) {
    if (targets[i] >= z.cols()) throw std::out_of_range("cross_entropy: target out of range");
    const auto r = z.row(i);
    const T mx = *std::max_element(r.begin(), r.end());
    T sum{0};
    for (std::size_t j = 0; j < r.size(); ++j) sum += (prob(i, j) = std::exp(r[j] - mx));
    for (std::size_t j = 0; j < r.size(); ++j) prob(i, j) /= sum;
    total += -(r[targets[i]] - mx - std::log(sum));
  }
  const T inv_n = T{1} / static_cast<T>(z.rows());
  return logits.tape->record(
      Matrix<T>(1, 1, {total * inv_n}), {logits}, "cross_entropy",
      [logits, prob = std::move(prob), targets = std::move(targets), inv_n](Tape<T>& t,
                                                                           const Matrix<T>& g) {
        Matrix<T> gz = prob;
        for (std::size_t i = 0; i < gz.rows(); ++i) gz(i, targets[i]) -= T{1};
        const T s = g(0, 0) * inv_n;
        for (auto& v : gz.values()) v *= s;
        t.accumulate(logits, gz);
      });
}

template <class T>
Var<T> sum(Var<T> x) {
  T s{0};
  for (T v : x.value().values()) s += v;
  return x.tape->record(Matrix<T>(1, 1, {s}), {x}, "sum", [x](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(x, Matrix<T>(x.rows(), x.cols(), g(0, 0)));
  });
}

// ---------------------------------------------------------------------------
// Eager helpers

template <class T>
Matrix<T> l2_normalize(const Matrix<T>& x) {
  Tape<T> tape(false);
  return l2_normalize_rows(tape.constant(x)).value();
}

template <class T>
Matrix<T> layer_norm(const Matrix<T>& x, const Matrix<T>& gamma, const Matrix<T>& beta,
                     T eps = T(1e-5)) {
  Tape<T> tape(false);
  return layer_norm(tape.constant(x), tape.constant(gamma), tape.constant(beta), eps).value();
}

template <class T>
Matrix<T> softmax(const Matrix<T>& x) {
  Tape<T> tape(false);
  return softmax_rows(tape.constant(x)).value();
}

/// cos(f, w); 0 when either vector is zero.
template <class T>
T cosine(std::span<const T> f, std::span<const T> w) {
  if (f.size() != w.size()) throw ShapeError("cosine: width mismatch");
  T dot{0}, ff{0}, ww{0};
  for (std::size_t i = 0; i < f.size(); ++i) {
    dot += f[i] * w[i];
    ff += f[i] * f[i];
    ww += w[i] * w[i];
  }
  if (ff == T{0} || ww == T{0}) return T{0};
  return std::clamp(dot / (std::sqrt(ff) * std::sqrt(ww)), T{-1}, T{1});
}

/// -log softmax(scores / tau)[target]
template <class T>
T xent_over_classes(std::span<const T> scores, std::size_t target, T tau) {
  if (scores.empty()) throw std::invalid_argument("xent_over_classes: no classes");
  if (target >= scores.size()) throw std::out_of_range("xent_over_classes: target out of range");
  if (!(tau > T{0})) throw std::invalid_argument("xent_over_classes: tau must be positive");
  T mx = scores[0] / tau;
  for (T s : scores) mx = std::max(mx, s / tau);
  T sum{0};
  for (T s : scores) sum += std::exp(s / tau - mx);
  return std::max(T{0}, -(scores[target] / tau - mx - std::log(sum)));
}

// ---------------------------------------------------------------------------
// MLP

enum class Activation { kRelu, kNone };

struct MlpSpec {
  std::vector<std::size_t> layer_dims;  // input, hidden..., output
  bool use_layer_norm = false;
  double dropout_rate = 0.0;
  std::vector<Activation> activations;  // one per layer

  std::size_t num_layers() const { return layer_dims.empty() ? 0 : layer_dims.size() - 1; }
  std::size_t input_dim() const { return layer_dims.front(); }
  std::size_t output_dim() const { return layer_dims.back(); }

  /// `layers` linear maps; hidden layers get ReLU (plus layer norm and
  /// dropout when enabled), the output layer is linear.
  static MlpSpec standard(std::size_t in, std::size_t hidden, std::size_t out, std::size_t layers,
                          bool layer_norm, double dropout) {
    MlpSpec s;
    if (layers == 0) return s;
    s.layer_dims.push_back(in);
    for (std::size_t i = 1; i < layers; ++i) s.layer_dims.push_back(hidden);
    s.layer_dims.push_back(out);
    s.use_layer_norm = layer_norm;
    s.dropout_rate = dropout;
    s.activations.assign(layers, Activation::kRelu);
    if (layers > 0) s.activations.back() = Activation::kNone;
    return s;
  }

  void validate() const {
    if (num_layers() < 1) throw std::invalid_argument("MlpSpec needs at least one layer");
    if (activations.size() != num_layers())
      throw std::invalid_argument("MlpSpec needs one activation per layer");
    for (auto d : layer_dims)
      if (d == 0) throw std::invalid_argument("MlpSpec layer widths must be positive");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
      throw std::invalid_argument("MlpSpec dropout rate must be in [0,1)");
  }
};

/// Parameters live in a ParameterSet as "<name>.<layer>.{weight,bias,ln_gamma,ln_beta}".
/// Weights are stored (in x out) so that forward is x * W + b.
template <std::floating_point T>
class Mlp {
 public:
  Mlp() = default;

  Mlp(std::string name, MlpSpec spec, ParameterSet<T>& params, Rng& init)
      : name_(std::move(name)), spec_(std::move(spec)) {
    spec_.validate();
    for (std::size_t l = 0; l < spec_.num_layers(); ++l) {
      const std::size_t in = spec_.layer_dims[l], out = spec_.layer_dims[l + 1];
      const std::string prefix = name_ + "." + std::to_string(l);
      const double bound = 1.0 / std::sqrt(static_cast<double>(in));
      Matrix<T> w(in, out), b(1, out);
      for (auto& v : w.values()) v = static_cast<T>(init.uniform(-bound, bound));
      for (auto& v : b.values()) v = static_cast<T>(init.uniform(-bound, bound));
      params.add(prefix + ".weight", std::move(w));
      params.add(prefix + ".bias", std::move(b));
      if (has_norm(l)) {
        params.add(prefix + ".ln_gamma", Matrix<T>(1, out, T{1}));
        params.add(prefix + ".ln_beta", Matrix<T>(1, out, T{0}));
      }
    }
  }

  const std::string& name() const { return name_; }
  const MlpSpec& spec() const { return spec_; }

  /// Dropout runs only when `training` and the rate is positive; `rng` may be
  /// null otherwise.
  Var<T> forward(ParameterSet<T>& params, Var<T> x, bool training, Rng* rng) const {
    if (x.cols() != spec_.input_dim())
      throw ShapeError(name_ + ": input width " + std::to_string(x.cols()) + ", expected " +
                       std::to_string(spec_.input_dim()));
    Tape<T>& t = *x.tape;
    Var<T> h = x;
    for (std::size_t l = 0; l < spec_.num_layers(); ++l) {
      const std::string prefix = name_ + "." + std::to_string(l);
      h = add_row(matmul(h, t.parameter(params.at(prefix + ".weight"))),
                  t.parameter(params.at(prefix + ".bias")));
      const bool hidden = l + 1 < spec_.num_layers();
      if (has_norm(l))
        h = layer_norm(h, t.parameter(params.at(prefix + ".ln_gamma")),
                       t.parameter(params.at(prefix + ".ln_beta")));
      if (spec_.activations[l] == Activation::kRelu) h = relu(h);
      if (hidden && training && spec_.dropout_rate > 0.0) {
        if (rng == nullptr) throw std::invalid_argument(name_ + ": dropout needs an rng");
        h = dropout(h, spec_.dropout_rate, *rng);
      }
    }
    return h;
  }

 private:
  bool has_norm(std::size_t l) const {
    return spec_.use_layer_norm && l + 1 < spec_.num_layers();
  }

  std::string name_;
  MlpSpec spec_;
};

// ---------------------------------------------------------------------------
// Adam

template <std::floating_point T>
struct AdamState {
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<Matrix<T>> first_moment;
  std::vector<Matrix<T>> second_moment;

  void init_for(const ParameterSet<T>& params) {
    first_moment.clear();
    second_moment.clear();
    for (const auto& p : params) {
      first_moment.emplace_back(p.value.rows(), p.value.cols());
      second_moment.emplace_back(p.value.rows(), p.value.cols());
    }
  }
};

/// One bias-corrected Adam update using the gradients stored in `params`.
template <class T>
void adam_step(ParameterSet<T>& params, AdamState<T>& state, double lr) {
  if (!(lr > 0.0)) throw std::invalid_argument("adam_step: lr must be positive");
  if (state.first_moment.empty() && params.size() > 0) state.init_for(params);
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size())
    throw ShapeError("adam_step: optimizer state does not match parameters");
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  const double inv_c1 = 1.0 / c1, inv_c2 = 1.0 / c2;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    if (!m.same_shape(p.value) || !v.same_shape(p.value) || !p.grad.same_shape(p.value))
      throw ShapeError("adam_step: shape mismatch for '" + p.name + "'");
    auto pv = p.value.values();
    const auto g = p.grad.values();
    auto mv = m.values();
    auto vv = v.values();
    for (std::size_t k = 0; k < pv.size(); ++k) {
      const double gk = g[k];
      const double mk = state.beta1 * mv[k] + (1.0 - state.beta1) * gk;
      const double vk = state.beta2 * vv[k] + (1.0 - state.beta2) * gk * gk;
      mv[k] = static_cast<T>(mk);
      vv[k] = static_cast<T>(vk);
      const double update = lr * (mk * inv_c1) / (std::sqrt(vk * inv_c2) + state.eps);
      pv[k] = static_cast<T>(static_cast<double>(pv[k]) - update);
    }
  }
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking

struct BlockGradError {
  std::string name;
  double relative_error = 0.0;
  double autodiff_norm = 0.0;
  double finite_diff_norm = 0.0;
};

struct GradCheckReport {
  std::vector<BlockGradError> blocks;
  double tolerance = 0.0;

  double max_relative_error() const {
    double m = 0.0;
    for (const auto& b : blocks) m = std::max(m, b.relative_error);
    return m;
  }
  bool passed() const { return max_relative_error() < tolerance; }
};

/// Compares reverse-mode gradients against central differences for each
/// parameter block: |g_ad - g_fd| / max(|g_ad|, |g_fd|, eps). The closure must
/// be deterministic and build its graph on the tape it is given.
template <class T, class Closure>
GradCheckReport grad_check(Closure&& loss_fn, ParameterSet<T>& params, double tolerance,
                           double step = std::is_same_v<T, float> ? 1e-2 : 1e-5) {
  params.zero_grad();
  {
    Tape<T> tape;
    Var<T> loss = loss_fn(tape);
    tape.backward(loss);
  }
  const auto eval = [&]() {
    Tape<T> tape(false);
    return static_cast<double>(loss_fn(tape).item());
  };
  GradCheckReport report;
  report.tolerance = tolerance;
  for (auto& p : params) {
    double diff_sq = 0.0, ad_sq = 0.0, fd_sq = 0.0;
    auto values = p.value.values();
    const auto grads = p.grad.values();
    for (std::size_t k = 0; k < values.size(); ++k) {
      const T saved = values[k];
      values[k] = static_cast<T>(saved + step);
      const double up = eval();
      values[k] = static_cast<T>(saved - step);
      const double down = eval();
      values[k] = saved;
      const double h2 = static_cast<double>(static_cast<T>(saved + step)) -
                        static_cast<double>(static_cast<T>(saved - step));
      const double fd = (up - down) / h2;
      const double ad = grads[k];
      diff_sq += (ad - fd) * (ad - fd);
      ad_sq += ad * ad;
      fd_sq += fd * fd;
    }
    const double denom = std::max({std::sqrt(ad_sq), std::sqrt(fd_sq), 1e-12});
    report.blocks.push_back({p.name, std::sqrt(diff_sq) / denom, std::sqrt(ad_sq), std::sqrt(fd_sq)});
  }
  return report;
}

/// Reverse-mode gradients of `params` (any precision) against central
/// differences of a reference objective over `ref_params`, a block-for-block
/// copy that is typically double precision. The reference values are reset to
/// the checked values first.
template <class T, class R, class Closure, class RefClosure>
GradCheckReport grad_check_against(Closure&& loss_fn, ParameterSet<T>& params,
                                   RefClosure&& ref_fn, ParameterSet<R>& ref_params,
                                   double tolerance, double step = 1e-5) {
  if (params.size() != ref_params.size())
    throw ShapeError("grad_check_against: parameter sets differ in size");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name != ref_params[i].name ||
        params[i].value.rows() != ref_params[i].value.rows() ||
        params[i].value.cols() != ref_params[i].value.cols())
      throw ShapeError("grad_check_against: block mismatch at '" + params[i].name + "'");
    for (std::size_t k = 0; k < params[i].value.size(); ++k)
      ref_params[i].value.values()[k] = static_cast<R>(params[i].value.values()[k]);
  }
  params.zero_grad();
  {
    Tape<T> tape;
    Var<T> loss = loss_fn(tape);
    tape.backward(loss);
  }
  const auto eval = [&]() {
    Tape<R> tape(false);
    return static_cast<double>(ref_fn(tape).item());
  };
  GradCheckReport report;
  report.tolerance = tolerance;
  for (std::size_t i = 0; i < params.size(); ++i) {
    double diff_sq = 0.0, ad_sq = 0.0, fd_sq = 0.0;
    auto values = ref_params[i].value.values();
    const auto grads = params[i].grad.values();
    for (std::size_t k = 0; k < values.size(); ++k) {
      const R saved = values[k];
      values[k] = static_cast<R>(saved + step);
      const double up = eval();
      values[k] = static_cast<R>(saved - step);
      const double down = eval();
      values[k] = saved;
      const double fd = (up - down) / (2.0 * step);
      const double ad = grads[k];
      diff_sq += (ad - fd) * (ad - fd);
      ad_sq += ad * ad;
      fd_sq += fd * fd;
    }
    const double denom = std::max({std::sqrt(ad_sq), std::sqrt(fd_sq), 1e-12});
    report.blocks.push_back(
        {params[i].name, std::sqrt(diff_sq) / denom, std::sqrt(ad_sq), std::sqrt(fd_sq)});
  }
  return report;
}

}  // namespace hdaoe::tensor

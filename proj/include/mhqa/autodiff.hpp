#pragma once

// Reverse-mode differentiation over dense double tensors.
//
// A Tape records every operation executed through the free functions below in
// execution order; backward() walks the record in exact reverse and
// accumulates gradients into the Parameters that fed the computation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mhqa/tensor.hpp"

namespace mhqa {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  Parameter(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape) {}

  void zero_grad() { std::fill(grad.values.begin(), grad.values.end(), 0.0); }
};

/// Owns parameters with stable addresses, looked up by name.
class ParameterSet {
 public:
  Parameter& add(std::string name, Tensor init) {
    if (index_.contains(name)) {
      throw std::invalid_argument("duplicate parameter name: " + name);
    }
    index_.emplace(name, params_.size());
    return params_.emplace_back(std::move(name), std::move(init));
  }

  Parameter* find(std::string_view name) {
    auto it = index_.find(std::string(name));
    return it == index_.end() ? nullptr : &params_[it->second];
  }
  const Parameter* find(std::string_view name) const {
    auto it = index_.find(std::string(name));
    return it == index_.end() ? nullptr : &params_[it->second];
  }

  Parameter& at(std::string_view name) {
    Parameter* p = find(name);
    if (!p) throw std::out_of_range("unknown parameter: " + std::string(name));
    return *p;
  }

  std::deque<Parameter>& all() { return params_; }
  const std::deque<Parameter>& all() const { return params_; }

  std::vector<Parameter*> trainable() {
    std::vector<Parameter*> out;
    for (auto& p : params_) {
      if (p.trainable) out.push_back(&p);
    }
    return out;
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  std::size_t size() const { return params_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

 private:
  std::deque<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

enum class Op : std::uint8_t {
  Constant,
  Param,
  MatMul,
  Affine,
  Add,
  Sub,
  Mul,
  Scale,
  Sigmoid,
  Tanh,
  Log,
  Softmax,
  Concat,
  Slice,
  SumN,
  Dot,
  Pick,
  IndexSum,
  SumAll,
  SumSquares,
  Dropout,
  Row,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::Constant: return "constant";
    case Op::Param: return "param";
    case Op::MatMul: return "matmul";
    case Op::Affine: return "affine";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Scale: return "scale";
    case Op::Sigmoid: return "sigmoid";
    case Op::Tanh: return "tanh";
    case Op::Log: return "log";
    case Op::Softmax: return "softmax";
    case Op::Concat: return "concat";
    case Op::Slice: return "slice";
    case Op::SumN: return "sum_n";
    case Op::Dot: return "dot";
    case Op::Pick: return "pick";
    case Op::IndexSum: return "index_sum";
    case Op::SumAll: return "sum";
    case Op::SumSquares: return "sum_squares";
    case Op::Dropout: return "dropout";
    case Op::Row: return "row";
  }
  return "?";
}

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }
  std::size_t size() const { return value().size(); }
  double item() const;
  double operator[](std::size_t i) const { return value()[i]; }

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

namespace detail {

struct Node {
  Op op = Op::Constant;
  Tensor value;
  std::vector<double> grad;
  std::vector<std::size_t> inputs;
  Parameter* param = nullptr;
  std::vector<double> aux;                  // dropout mask
  std::vector<std::size_t> index;           // slice offset, pick index, group ids
  double scalar = 0.0;                      // scale factor
  bool requires_grad = false;
};

inline double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {
    nodes_.reserve(8192);
  }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Tensor t) {
    detail::Node n;
    n.op = Op::Constant;
    n.value = std::move(t);
    return push(std::move(n), "constant");
  }

  /// Leaf for a parameter. Repeated calls on one tape return the same node.
  Var param(Parameter& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) {
      return Var(this, it->second);
    }
    detail::Node n;
    n.op = Op::Param;
    n.value = p.value;
    n.param = &p;
    n.requires_grad = grad_enabled_ && p.trainable;
    Var v = push(std::move(n), "param");
    param_nodes_.emplace(&p, v.id());
    return v;
  }

  const detail::Node& node(std::size_t id) const { return nodes_[id]; }

  bool requires_grad(const Var& v) const { return nodes_[v.id()].requires_grad; }

  /// Gradient of the last backward() target w.r.t. a recorded value.
  const std::vector<double>& grad(const Var& v) const { return nodes_[v.id()].grad; }

  Var record(Op op, Tensor value, std::vector<std::size_t> inputs) {
    detail::Node n;
    n.op = op;
    n.value = std::move(value);
    n.inputs = std::move(inputs);
    return record(std::move(n));
  }

  Var record(detail::Node n) {
    if (grad_enabled_) {
      for (std::size_t in : n.inputs) {
        if (nodes_[in].requires_grad) {
          n.requires_grad = true;
          break;
        }
      }
    }
    const char* name = op_name(n.op);
    return push(std::move(n), name);
  }

  void backward(const Var& loss) {
    if (!grad_enabled_) throw std::logic_error("backward called on a tape without gradient recording");
    if (consumed_) throw std::logic_error("backward called twice on a consumed tape");
    if (loss.tape() != this) throw std::logic_error("backward target belongs to another tape");
    if (loss.size() != 1) {
      throw ShapeError("backward target must be a scalar, got " + shape_string(loss.shape()));
    }
    consumed_ = true;
    for (auto& n : nodes_) {
      if (n.requires_grad) n.grad.assign(n.value.size(), 0.0);
    }
    if (!nodes_[loss.id()].requires_grad) return;
    nodes_[loss.id()].grad[0] = 1.0;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      if (nodes_[i].requires_grad) propagate(nodes_[i]);
    }
  }

 private:
  Var push(detail::Node n, const char* what) {
    if (!n.value.all_finite()) {
      throw NumericError(std::string("non-finite output in ") + what);
    }
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  std::vector<double>* grad_of(std::size_t id) {
    auto& n = nodes_[id];
    return n.requires_grad ? &n.grad : nullptr;
  }

  void propagate(detail::Node& n);

  std::vector<detail::Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
  bool grad_enabled_;
  bool consumed_ = false;
};

inline const Tensor& Var::value() const { return tape_->node(id_).value; }

inline double Var::item() const {
  if (size() != 1) throw ShapeError("item() on non-scalar " + shape_string(shape()));
  return value()[0];
}

inline void Tape::propagate(detail::Node& n) {
  const std::vector<double>& g = n.grad;
  const auto in = [&](std::size_t k) -> const Tensor& { return nodes_[n.inputs[k]].value; };
  switch (n.op) {
    case Op::Constant:
      break;
    case Op::Param: {
      auto& pg = n.param->grad.values;
      for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
      break;
    }
    case Op::MatMul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      const std::size_t m = a.shape[0], k = a.shape[1];
      const std::size_t cols = b.rank() == 1 ? 1 : b.shape[1];
      if (cols == 1) {
        if (auto* ga = grad_of(n.inputs[0])) {
          for (std::size_t i = 0; i < m; ++i) {
            const double gi = g[i];
            double* row = ga->data() + i * k;
            for (std::size_t j = 0; j < k; ++j) row[j] += gi * b.values[j];
          }
        }
        if (auto* gb = grad_of(n.inputs[1])) {
          for (std::size_t i = 0; i < m; ++i) {
            const double gi = g[i];
            const double* row = a.values.data() + i * k;
            for (std::size_t j = 0; j < k; ++j) (*gb)[j] += row[j] * gi;
          }
        }
        break;
      }
      if (auto* ga = grad_of(n.inputs[0])) {
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < k; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < cols; ++c) s += g[i * cols + c] * b.values[j * cols + c];
            (*ga)[i * k + j] += s;
          }
      }
      if (auto* gb = grad_of(n.inputs[1])) {
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < k; ++j) {
            const double aij = a.values[i * k + j];
            for (std::size_t c = 0; c < cols; ++c) (*gb)[j * cols + c] += aij * g[i * cols + c];
          }
      }
      break;
    }
    case Op::Affine: {
      const Tensor& w = in(0);
      const Tensor& x = in(1);
      const std::size_t m = w.shape[0], k = w.shape[1];
      if (auto* gw = grad_of(n.inputs[0])) {
        for (std::size_t i = 0; i < m; ++i) {
          const double gi = g[i];
          if (gi == 0.0) continue;
          double* row = gw->data() + i * k;
          for (std::size_t j = 0; j < k; ++j) row[j] += gi * x.values[j];
        }
      }
      if (auto* gx = grad_of(n.inputs[1])) {
        for (std::size_t i = 0; i < m; ++i) {
          const double gi = g[i];
          const double* row = w.values.data() + i * k;
          for (std::size_t j = 0; j < k; ++j) (*gx)[j] += row[j] * gi;
        }
      }
      if (auto* gb = grad_of(n.inputs[2])) {
        for (std::size_t i = 0; i < m; ++i) (*gb)[i] += g[i];
      }
      break;
    }
    case Op::Add:
    case Op::Sub: {
      const double sign = n.op == Op::Add ? 1.0 : -1.0;
      if (auto* ga = grad_of(n.inputs[0]))
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
      if (auto* gb = grad_of(n.inputs[1]))
        for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += sign * g[i];
      break;
    }
    case Op::Mul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (auto* ga = grad_of(n.inputs[0]))
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * b.values[i];
      if (auto* gb = grad_of(n.inputs[1]))
        for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * a.values[i];
      break;
    }
    case Op::Scale: {
      if (auto* ga = grad_of(n.inputs[0]))
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += n.scalar * g[i];
      break;
    }
    case Op::Sigmoid: {
      if (auto* ga = grad_of(n.inputs[0]))
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double y = n.value.values[i];
          (*ga)[i] += g[i] * y * (1.0 - y);
        }
      break;
    }
    case Op::Tanh: {
      if (auto* ga = grad_of(n.inputs[0]))
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double y = n.value.values[i];
          (*ga)[i] += g[i] * (1.0 - y * y);
        }
      break;
    }
    case Op::Log: {
      const Tensor& a = in(0);
      if (auto* ga = grad_of(n.inputs[0]))
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] / a.values[i];
      break;
    }
    case Op::Softmax: {
      if (auto* ga = grad_of(n.inputs[0])) {
        double dot = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * n.value.values[i];
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += n.value.values[i] * (g[i] - dot);
      }
      break;
    }
    case Op::Concat: {
      std::size_t offset = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const std::size_t len = nodes_[n.inputs[k]].value.size();
        if (auto* ga = grad_of(n.inputs[k]))
          for (std::size_t i = 0; i < len; ++i) (*ga)[i] += g[offset + i];
        offset += len;
      }
      break;
    }
    case Op::Slice: {
      if (auto* ga = grad_of(n.inputs[0])) {
        const std::size_t offset = n.index[0];
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[offset + i] += g[i];
      }
      break;
    }
    case Op::SumN: {
      for (std::size_t input : n.inputs)
        if (auto* ga = grad_of(input))
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
      break;
    }
    case Op::Dot: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (auto* ga = grad_of(n.inputs[0]))
        for (std::size_t i = 0; i < a.size(); ++i) (*ga)[i] += g[0] * b.values[i];
      if (auto* gb = grad_of(n.inputs[1]))
        for (std::size_t i = 0; i < b.size(); ++i) (*gb)[i] += g[0] * a.values[i];
      break;
    }
    case Op::Pick: {
      if (auto* ga = grad_of(n.inputs[0])) (*ga)[n.index[0]] += g[0];
      break;
    }
    case Op::IndexSum: {
      // index[i] is the output slot fed by input element i (or SIZE_MAX for none).
      if (auto* ga = grad_of(n.inputs[0]))
        for (std::size_t i = 0; i < n.index.size(); ++i)
          if (n.index[i] != SIZE_MAX) (*ga)[i] += g[n.index[i]];
      break;
    }
    case Op::SumAll: {
      if (auto* ga = grad_of(n.inputs[0]))
        for (double& v : *ga) v += g[0];
      break;
    }
    case Op::SumSquares: {
      const Tensor& a = in(0);
      if (auto* ga = grad_of(n.inputs[0]))
        for (std::size_t i = 0; i < a.size(); ++i) (*ga)[i] += 2.0 * a.values[i] * g[0];
      break;
    }
    case Op::Dropout: {
      if (auto* ga = grad_of(n.inputs[0]))
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * n.aux[i];
      break;
    }
    case Op::Row: {
      if (auto* ga = grad_of(n.inputs[0])) {
        const std::size_t offset = n.index[0] * g.size();
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[offset + i] += g[i];
      }
      break;
    }
  }
}

// ---------------------------------------------------------------------------
// Forward operations.

namespace detail {

inline Tape& same_tape(const Var& a, const Var& b) {
  if (!a.valid() || a.tape() != b.tape()) throw std::logic_error("operands live on different tapes");
  return *a.tape();
}

inline void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

template <typename F>
Var unary(const Var& a, Op op, F f) {
  Tensor out(a.shape());
  const auto& x = a.value().values;
  for (std::size_t i = 0; i < x.size(); ++i) out.values[i] = f(x[i]);
  return a.tape()->record(op, std::move(out), {a.id()});
}

}  // namespace detail

/// Matrix product; a is m x k, b is k x n or a length-k vector.
inline Var matmul(const Var& a, const Var& b) {
  Tape& tape = detail::same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() < 1 || bv.rank() > 2 || av.shape[1] != bv.shape[0]) {
    throw ShapeError("matmul: shape mismatch " + shape_string(av.shape) + " vs " +
                     shape_string(bv.shape));
  }
  const std::size_t m = av.shape[0], k = av.shape[1];
  const std::size_t cols = bv.rank() == 1 ? 1 : bv.shape[1];
  Tensor out(bv.rank() == 1 ? Shape{m} : Shape{m, cols});
  if (cols == 1) {
    for (std::size_t i = 0; i < m; ++i) {
      const double* row = av.values.data() + i * k;
      double s = 0.0;
      for (std::size_t j = 0; j < k; ++j) s += row[j] * bv.values[j];
      out.values[i] = s;
    }
    return tape.record(Op::MatMul, std::move(out), {a.id(), b.id()});
  }
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      const double aij = av.values[i * k + j];
      for (std::size_t c = 0; c < cols; ++c) out.values[i * cols + c] += aij * bv.values[j * cols + c];
    }
  return tape.record(Op::MatMul, std::move(out), {a.id(), b.id()});
}

/// w x + b for matrix w (m x k), vector x (k), vector b (m).
inline Var affine(const Var& w, const Var& x, const Var& b) {
  Tape& tape = detail::same_tape(w, x);
  detail::same_tape(w, b);
  const Tensor& wv = w.value();
  const Tensor& xv = x.value();
  const Tensor& bv = b.value();
  if (wv.rank() != 2 || xv.rank() != 1 || bv.rank() != 1 || wv.shape[1] != xv.shape[0] ||
      wv.shape[0] != bv.shape[0]) {
    throw ShapeError("affine: shape mismatch W" + shape_string(wv.shape) + " x" +
                     shape_string(xv.shape) + " b" + shape_string(bv.shape));
  }
  const std::size_t m = wv.shape[0], k = wv.shape[1];
  Tensor out(Shape{m});
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = wv.values.data() + i * k;
    double s = bv.values[i];
    for (std::size_t j = 0; j < k; ++j) s += row[j] * xv.values[j];
    out.values[i] = s;
  }
  return tape.record(Op::Affine, std::move(out), {w.id(), x.id(), b.id()});
}

inline Var add(const Var& a, const Var& b) {
  Tape& tape = detail::same_tape(a, b);
  detail::require_same_shape(a, b, "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.values[i] += b.value().values[i];
  return tape.record(Op::Add, std::move(out), {a.id(), b.id()});
}

inline Var sub(const Var& a, const Var& b) {
  Tape& tape = detail::same_tape(a, b);
  detail::require_same_shape(a, b, "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.values[i] -= b.value().values[i];
  return tape.record(Op::Sub, std::move(out), {a.id(), b.id()});
}

/// Elementwise product.
inline Var mul(const Var& a, const Var& b) {
  Tape& tape = detail::same_tape(a, b);
  detail::require_same_shape(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.values[i] *= b.value().values[i];
  return tape.record(Op::Mul, std::move(out), {a.id(), b.id()});
}

inline Var scale(const Var& a, double factor) {
  detail::Node n;
  n.op = Op::Scale;
  n.value = a.value();
  for (double& v : n.value.values) v *= factor;
  n.inputs = {a.id()};
  n.scalar = factor;
  return a.tape()->record(std::move(n));
}

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }

inline Var sigmoid(const Var& a) { return detail::unary(a, Op::Sigmoid, detail::stable_sigmoid); }
inline Var tanh(const Var& a) {
  return detail::unary(a, Op::Tanh, [](double x) { return std::tanh(x); });
}
inline Var log(const Var& a) {
  return detail::unary(a, Op::Log, [](double x) { return std::log(x); });
}

/// Softmax over a vector, computed with max subtraction.
inline Var softmax(const Var& a) {
  const Tensor& x = a.value();
  if (x.rank() != 1 || x.size() == 0) throw ShapeError("softmax expects a nonempty vector, got " + shape_string(x.shape));
  const double mx = *std::max_element(x.values.begin(), x.values.end());
  Tensor out(x.shape);
  double z = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out.values[i] = std::exp(x.values[i] - mx);
    z += out.values[i];
  }
  for (double& v : out.values) v /= z;
  return a.tape()->record(Op::Softmax, std::move(out), {a.id()});
}

/// Concatenation of vectors.
inline Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat of zero parts");
  Tape* tape = parts.front().tape();
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.tape() != tape) throw std::logic_error("operands live on different tapes");
    if (p.value().rank() != 1) throw ShapeError("concat expects vectors, got " + shape_string(p.shape()));
    total += p.size();
  }
  Tensor out(Shape{total});
  std::vector<std::size_t> inputs;
  inputs.reserve(parts.size());
  std::size_t offset = 0;
  for (const Var& p : parts) {
    std::copy(p.value().values.begin(), p.value().values.end(), out.values.begin() + offset);
    offset += p.size();
    inputs.push_back(p.id());
  }
  return tape->record(Op::Concat, std::move(out), std::move(inputs));
}

inline Var concat(std::initializer_list<Var> parts) {
  return concat(std::span<const Var>(parts.begin(), parts.size()));
}

inline Var slice(const Var& a, std::size_t offset, std::size_t length) {
  if (a.value().rank() != 1 || offset + length > a.size()) {
    throw ShapeError("slice [" + std::to_string(offset) + ", +" + std::to_string(length) +
                     ") out of range for " + shape_string(a.shape()));
  }
  detail::Node n;
  n.op = Op::Slice;
  n.value = Tensor(Shape{length});
  std::copy_n(a.value().values.begin() + static_cast<std::ptrdiff_t>(offset), length, n.value.values.begin());
  n.inputs = {a.id()};
  n.index = {offset};
  return a.tape()->record(std::move(n));
}

/// Sum of equally shaped values.
inline Var sum_n(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("sum_n of zero parts");
  Tape* tape = parts.front().tape();
  Tensor out = parts.front().value();
  std::vector<std::size_t> inputs{parts.front().id()};
  for (std::size_t k = 1; k < parts.size(); ++k) {
    if (parts[k].tape() != tape) throw std::logic_error("operands live on different tapes");
    detail::require_same_shape(parts.front(), parts[k], "sum_n");
    for (std::size_t i = 0; i < out.size(); ++i) out.values[i] += parts[k].value().values[i];
    inputs.push_back(parts[k].id());
  }
  return tape->record(Op::SumN, std::move(out), std::move(inputs));
}

inline Var dot(const Var& a, const Var& b) {
  Tape& tape = detail::same_tape(a, b);
  detail::require_same_shape(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.value().values[i] * b.value().values[i];
  return tape.record(Op::Dot, Tensor::scalar(s), {a.id(), b.id()});
}

/// Element i of a vector as a scalar.
inline Var pick(const Var& a, std::size_t i) {
  if (i >= a.size()) throw ShapeError("pick index " + std::to_string(i) + " out of range for " + shape_string(a.shape()));
  detail::Node n;
  n.op = Op::Pick;
  n.value = Tensor::scalar(a.value().values[i]);
  n.inputs = {a.id()};
  n.index = {i};
  return a.tape()->record(std::move(n));
}

/// out[g] = sum of a[i] over all i with slot[i] == g. Entries with slot SIZE_MAX are dropped.
inline Var index_sum(const Var& a, std::span<const std::size_t> slot, std::size_t groups) {
  if (slot.size() != a.size()) {
    throw ShapeError("index_sum: " + std::to_string(slot.size()) + " slots for " + shape_string(a.shape()));
  }
  detail::Node n;
  n.op = Op::IndexSum;
  n.value = Tensor(Shape{groups});
  for (std::size_t i = 0; i < slot.size(); ++i) {
    if (slot[i] == SIZE_MAX) continue;
    if (slot[i] >= groups) throw ShapeError("index_sum: slot out of range");
    n.value.values[slot[i]] += a.value().values[i];
  }
  n.inputs = {a.id()};
  n.index.assign(slot.begin(), slot.end());
  return a.tape()->record(std::move(n));
}

/// Row r of a matrix as a vector.
inline Var row(const Var& m, std::size_t r) {
  const Tensor& mv = m.value();
  if (mv.rank() != 2 || r >= mv.shape[0]) {
    throw ShapeError("row " + std::to_string(r) + " out of range for " + shape_string(mv.shape));
  }
  detail::Node n;
  n.op = Op::Row;
  const std::size_t width = mv.shape[1];
  n.value = Tensor(Shape{width});
  std::copy_n(mv.values.begin() + static_cast<std::ptrdiff_t>(r * width), width, n.value.values.begin());
  n.inputs = {m.id()};
  n.index = {r};
  return m.tape()->record(std::move(n));
}

inline Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().values) s += v;
  return a.tape()->record(Op::SumAll, Tensor::scalar(s), {a.id()});
}

inline Var sum_squares(const Var& a) {
  return a.tape()->record(Op::SumSquares, Tensor::scalar(a.value().squared_norm()), {a.id()});
}

/// Inverted dropout: kept entries are scaled by 1/(1-rate). Rate 0 is the identity.
inline Var dropout(const Var& a, double rate, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout rate must be in [0,1)");
  if (rate == 0.0) return a;
  detail::Node n;
  n.op = Op::Dropout;
  n.value = a.value();
  n.aux.resize(n.value.size());
  std::bernoulli_distribution keep(1.0 - rate);
  const double kept = 1.0 / (1.0 - rate);
  for (std::size_t i = 0; i < n.value.size(); ++i) {
    n.aux[i] = keep(rng) ? kept : 0.0;
    n.value.values[i] *= n.aux[i];
  }
  n.inputs = {a.id()};
  return a.tape()->record(std::move(n));
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking.

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates = 0;
};

enum class Difference {
  Central,     // (f(x+h) - f(x-h)) / 2h
  Richardson,  // (4 D(h/2) - D(h)) / 3 over central differences D; error O(h^4)
};

/// Compares backward() against finite differences for every coordinate of
/// every parameter in `params`. `fn` must build the same scalar on any tape.
/// Richardson extrapolation permits a larger step, which keeps round-off in
/// the loss from swamping coordinates whose gradient is below ~1e-7.
inline GradCheckResult grad_check(const std::function<Var(Tape&)>& fn,
                                  std::span<Parameter* const> params, double eps = 1e-5,
                                  Difference method = Difference::Central) {
  const auto evaluate = [&]() {
    Tape tape(false);
    return fn(tape).item();
  };
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape(true);
    Var loss = fn(tape);
    tape.backward(loss);
  }
  const double base = evaluate();
  if (evaluate() != base) {
    throw std::logic_error("grad_check: function is not deterministic");
  }

  GradCheckResult result;
  for (Parameter* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double saved = p->value.values[i];
      const auto central = [&](double h) {
        p->value.values[i] = saved + h;
        const double up = evaluate();
        p->value.values[i] = saved - h;
        const double down = evaluate();
        p->value.values[i] = saved;
        return (up - down) / (2.0 * h);
      };
      const double numeric =
          method == Difference::Central ? central(eps) : (4.0 * central(eps / 2.0) - central(eps)) / 3.0;
      const double analytic = p->grad.values[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      const double err = std::abs(analytic - numeric) / denom;
      ++result.coordinates;
      if (err > result.max_relative_error) {
        result.max_relative_error = err;
        result.worst_parameter = p->name;
        result.worst_index = i;
        result.worst_analytic = analytic;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace mhqa

#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "modrobe/tensor.hpp"

namespace modrobe {

enum class Kernel {
  leaf,
  stop_gradient,
  matmul,
  transpose,
  add,
  sub,
  mul,
  scale,
  add_rowwise,
  mul_rowwise,
  sum_all,
  mean_all,
  block_mean_rows,
  reshape,
  exp,
  log,
  tanh,
  relu,
  sigmoid,
  softplus,
  softmax_rows,
  log_softmax_rows,
  l2_normalize_rows,
  standardize_rows,
  concat_rows,
  slice_rows,
  gather_rows,
  take_per_row,
};

inline const char* kernel_name(Kernel k) {
  switch (k) {
    case Kernel::leaf: return "leaf";
    case Kernel::stop_gradient: return "stop_gradient";
    case Kernel::matmul: return "matmul";
    case Kernel::transpose: return "transpose";
    case Kernel::add: return "add";
    case Kernel::sub: return "sub";
    case Kernel::mul: return "mul";
    case Kernel::scale: return "scale";
    case Kernel::add_rowwise: return "add_rowwise";
    case Kernel::mul_rowwise: return "mul_rowwise";
    case Kernel::sum_all: return "sum_all";
    case Kernel::mean_all: return "mean_all";
    case Kernel::block_mean_rows: return "block_mean_rows";
    case Kernel::reshape: return "reshape";
    case Kernel::exp: return "exp";
    case Kernel::log: return "log";
    case Kernel::tanh: return "tanh";
    case Kernel::relu: return "relu";
    case Kernel::sigmoid: return "sigmoid";
    case Kernel::softplus: return "softplus";
    case Kernel::softmax_rows: return "softmax_rows";
    case Kernel::log_softmax_rows: return "log_softmax_rows";
    case Kernel::l2_normalize_rows: return "l2_normalize_rows";
    case Kernel::standardize_rows: return "standardize_rows";
    case Kernel::concat_rows: return "concat_rows";
    case Kernel::slice_rows: return "slice_rows";
    case Kernel::gather_rows: return "gather_rows";
    case Kernel::take_per_row: return "take_per_row";
  }
  return "?";
}

using NodeId = std::size_t;

/// Eager-forward tape. Every kernel call computes its value immediately,
/// records a node, and verifies the result is finite. backward() walks the
/// tape once in reverse id order, so gradient accumulation order is a pure
/// function of construction order — bitwise reproducible.
///
/// Single-owner, single-threaded; one graph per training step.
template <typename T>
class Graph {
 public:
  struct Node {
    Kernel kernel;
    std::vector<NodeId> inputs;
    Tensor<T> value;
    bool requires_grad = false;
    // kernel attributes (used by the few kernels that need one)
    T alpha{};
    std::size_t block = 0;
    std::size_t begin = 0;
    std::vector<std::size_t> indices;
    Shape target_shape;
    std::string name;  // leaves only
  };

  // ---- construction -------------------------------------------------------

  NodeId leaf(Tensor<T> value, bool trainable = false, std::string name = "") {
    Node n;
    n.kernel = Kernel::leaf;
    n.value = std::move(value);
    n.requires_grad = trainable;
    n.name = std::move(name);
    if (!n.value.all_finite())
      throw std::runtime_error("non-finite values in leaf '" + n.name + "'");
    nodes_.push_back(std::move(n));
    if (trainable) trainable_leaves_.push_back(nodes_.size() - 1);
    return nodes_.size() - 1;
  }

  NodeId constant(Tensor<T> value) { return leaf(std::move(value), false); }

  NodeId scalar_const(T v) { return constant(Tensor<T>::scalar(v)); }

  NodeId stop_gradient(NodeId x) {
    Node n;
    n.kernel = Kernel::stop_gradient;
    n.inputs = {x};
    n.value = val(x);
    n.requires_grad = false;  // the whole point
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  NodeId matmul(NodeId a, NodeId b) {
    const Tensor<T>&A = val(a), &B = val(b);
    require(A.rank() == 2 && B.rank() == 2 && A.cols() == B.rows(),
            Kernel::matmul, {a, b});
    Tensor<T> out({A.rows(), B.cols()});
    matmul_into(out, A, B, false, false);
    return push(Kernel::matmul, {a, b}, std::move(out));
  }

  NodeId transpose(NodeId x) {
    const Tensor<T>& X = val(x);
    require(X.rank() == 2, Kernel::transpose, {x});
    Tensor<T> out({X.cols(), X.rows()});
    for (std::size_t i = 0; i < X.rows(); ++i)
      for (std::size_t j = 0; j < X.cols(); ++j) out.at(j, i) = X.at(i, j);
    return push(Kernel::transpose, {x}, std::move(out));
  }

  NodeId add(NodeId a, NodeId b) { return binary(Kernel::add, a, b); }
  NodeId sub(NodeId a, NodeId b) { return binary(Kernel::sub, a, b); }
  NodeId mul(NodeId a, NodeId b) { return binary(Kernel::mul, a, b); }

  NodeId scale(NodeId x, T alpha) {
    Tensor<T> out = val(x);
    for (auto& v : out.data()) v *= alpha;
    NodeId id = push(Kernel::scale, {x}, std::move(out));
    nodes_[id].alpha = alpha;
    return id;
  }

  /// Y[i,j] = X[i,j] + b[j]; the only broadcasting in the framework.
  NodeId add_rowwise(NodeId x, NodeId bias) {
    const Tensor<T>&X = val(x), &B = val(bias);
    require(X.rank() == 2 && B.rank() == 1 && B.size() == X.cols(),
            Kernel::add_rowwise, {x, bias});
    Tensor<T> out = X;
    for (std::size_t i = 0; i < X.rows(); ++i)
      for (std::size_t j = 0; j < X.cols(); ++j) out.at(i, j) += B[j];
    return push(Kernel::add_rowwise, {x, bias}, std::move(out));
  }

  /// Y[i,j] = X[i,j] * s[j]; per-column scaling (frozen batch-norm et al).
  NodeId mul_rowwise(NodeId x, NodeId s) {
    const Tensor<T>&X = val(x), &S = val(s);
    require(X.rank() == 2 && S.rank() == 1 && S.size() == X.cols(),
            Kernel::mul_rowwise, {x, s});
    Tensor<T> out = X;
    for (std::size_t i = 0; i < X.rows(); ++i)
      for (std::size_t j = 0; j < X.cols(); ++j) out.at(i, j) *= S[j];
    return push(Kernel::mul_rowwise, {x, s}, std::move(out));
  }

  NodeId sum_all(NodeId x) {
    T acc{0};
    for (const T& v : val(x).data()) acc += v;
    return push(Kernel::sum_all, {x}, Tensor<T>::scalar(acc));
  }

  NodeId mean_all(NodeId x) {
    const Tensor<T>& X = val(x);
    require(X.size() > 0, Kernel::mean_all, {x});
    T acc{0};
    for (const T& v : X.data()) acc += v;
    return push(Kernel::mean_all, {x},
                Tensor<T>::scalar(acc / static_cast<T>(X.size())));
  }

  /// Mean over consecutive groups of `block` rows; (n*block) x c -> n x c.
  /// This is the token pooling primitive for batched encoding.
  NodeId block_mean_rows(NodeId x, std::size_t block) {
    const Tensor<T>& X = val(x);
    require(X.rank() == 2 && block > 0 && X.rows() % block == 0,
            Kernel::block_mean_rows, {x});
    std::size_t n = X.rows() / block, c = X.cols();
    Tensor<T> out({n, c});
    for (std::size_t g = 0; g < n; ++g)
      for (std::size_t r = 0; r < block; ++r)
        for (std::size_t j = 0; j < c; ++j)
          out.at(g, j) += X.at(g * block + r, j);
    for (auto& v : out.data()) v /= static_cast<T>(block);
    NodeId id = push(Kernel::block_mean_rows, {x}, std::move(out));
    nodes_[id].block = block;
    return id;
  }

  NodeId reshape(NodeId x, Shape target) {
    const Tensor<T>& X = val(x);
    require(shape_numel(target) == X.size(), Kernel::reshape, {x});
    Tensor<T> out(target, {X.data().begin(), X.data().end()});
    NodeId id = push(Kernel::reshape, {x}, std::move(out));
    nodes_[id].target_shape = std::move(target);
    return id;
  }

  NodeId exp(NodeId x) {
    return unary(Kernel::exp, x, [](T v) { return std::exp(v); });
  }
  NodeId log(NodeId x) {
    return unary(Kernel::log, x, [](T v) { return std::log(v); });
  }
  NodeId tanh(NodeId x) {
    return unary(Kernel::tanh, x, [](T v) { return std::tanh(v); });
  }
  NodeId relu(NodeId x) {
    return unary(Kernel::relu, x, [](T v) { return v > T{0} ? v : T{0}; });
  }
  NodeId sigmoid(NodeId x) {
    return unary(Kernel::sigmoid, x, [](T v) {
      // split on sign so exp never overflows
      if (v >= T{0}) return T{1} / (T{1} + std::exp(-v));
      T e = std::exp(v);
      return e / (T{1} + e);
    });
  }
  NodeId softplus(NodeId x) {
    return unary(Kernel::softplus, x, [](T v) {
      T m = v > T{0} ? v : T{0};
      return m + std::log1p(std::exp(-std::abs(v)));
    });
  }

  NodeId softmax_rows(NodeId x) {
    const Tensor<T>& X = val(x);
    require(X.rank() == 2 && X.cols() > 0, Kernel::softmax_rows, {x});
    Tensor<T> out = X;
    for (std::size_t i = 0; i < X.rows(); ++i) {
      T mx = X.at(i, 0);
      for (std::size_t j = 1; j < X.cols(); ++j) mx = std::max(mx, X.at(i, j));
      T sum{0};
      for (std::size_t j = 0; j < X.cols(); ++j) {
        out.at(i, j) = std::exp(X.at(i, j) - mx);
        sum += out.at(i, j);
      }
      for (std::size_t j = 0; j < X.cols(); ++j) out.at(i, j) /= sum;
    }
    return push(Kernel::softmax_rows, {x}, std::move(out));
  }

  NodeId log_softmax_rows(NodeId x) {
    const Tensor<T>& X = val(x);
    require(X.rank() == 2 && X.cols() > 0, Kernel::log_softmax_rows, {x});
    Tensor<T> out = X;
    for (std::size_t i = 0; i < X.rows(); ++i) {
      T mx = X.at(i, 0);
      for (std::size_t j = 1; j < X.cols(); ++j) mx = std::max(mx, X.at(i, j));
      T sum{0};
      for (std::size_t j = 0; j < X.cols(); ++j)
        sum += std::exp(X.at(i, j) - mx);
      T lse = mx + std::log(sum);
      for (std::size_t j = 0; j < X.cols(); ++j) out.at(i, j) = X.at(i, j) - lse;
    }
    return push(Kernel::log_softmax_rows, {x}, std::move(out));
  }

  /// Row-wise x / ||x||. A zero row has no direction and is rejected rather
  /// than fudged with an epsilon; this keeps clean cases (3-4-5) exact.
  NodeId l2_normalize_rows(NodeId x) {
    const Tensor<T>& X = val(x);
    require(X.rank() == 2, Kernel::l2_normalize_rows, {x});
    Tensor<T> out = X;
    for (std::size_t i = 0; i < X.rows(); ++i) {
      T sq{0};
      for (std::size_t j = 0; j < X.cols(); ++j) sq += X.at(i, j) * X.at(i, j);
      if (sq == T{0})
        throw std::runtime_error("l2_normalize_rows: zero row " +
                                 std::to_string(i));
      T inv = T{1} / std::sqrt(sq);
      for (std::size_t j = 0; j < X.cols(); ++j) out.at(i, j) *= inv;
    }
    return push(Kernel::l2_normalize_rows, {x}, std::move(out));
  }

  /// Row-wise (x - mean) / sqrt(var + eps), population variance.
  NodeId standardize_rows(NodeId x, T eps = T{1e-5}) {
    const Tensor<T>& X = val(x);
    require(X.rank() == 2 && X.cols() > 0, Kernel::standardize_rows, {x});
    Tensor<T> out = X;
    std::size_t c = X.cols();
    for (std::size_t i = 0; i < X.rows(); ++i) {
      T mean{0};
      for (std::size_t j = 0; j < c; ++j) mean += X.at(i, j);
      mean /= static_cast<T>(c);
      T var{0};
      for (std::size_t j = 0; j < c; ++j) {
        T d = X.at(i, j) - mean;
        var += d * d;
      }
      var /= static_cast<T>(c);
      T inv = T{1} / std::sqrt(var + eps);
      for (std::size_t j = 0; j < c; ++j) out.at(i, j) = (X.at(i, j) - mean) * inv;
    }
    NodeId id = push(Kernel::standardize_rows, {x}, std::move(out));
    nodes_[id].alpha = eps;
    return id;
  }

  NodeId concat_rows(const std::vector<NodeId>& xs) {
    if (xs.empty())
      throw std::invalid_argument("concat_rows: no inputs");
    require(val(xs[0]).rank() == 2, Kernel::concat_rows, xs);
    std::size_t cols = val(xs[0]).cols(), rows = 0;
    for (NodeId x : xs) {
      require(val(x).rank() == 2 && val(x).cols() == cols, Kernel::concat_rows,
              xs);
      rows += val(x).rows();
    }
    Tensor<T> out({rows, cols});
    std::size_t r = 0;
    for (NodeId x : xs) {
      const Tensor<T>& X = val(x);
      for (std::size_t i = 0; i < X.rows(); ++i, ++r)
        for (std::size_t j = 0; j < cols; ++j) out.at(r, j) = X.at(i, j);
    }
    return push(Kernel::concat_rows, xs, std::move(out));
  }

  NodeId slice_rows(NodeId x, std::size_t begin, std::size_t count) {
    const Tensor<T>& X = val(x);
    require(X.rank() == 2 && begin + count <= X.rows(), Kernel::slice_rows, {x});
    Tensor<T> out({count, X.cols()});
    for (std::size_t i = 0; i < count; ++i)
      for (std::size_t j = 0; j < X.cols(); ++j)
        out.at(i, j) = X.at(begin + i, j);
    NodeId id = push(Kernel::slice_rows, {x}, std::move(out));
    nodes_[id].begin = begin;
    return id;
  }

  /// Y[k,:] = X[indices[k],:]; duplicate indices allowed (grads accumulate).
  NodeId gather_rows(NodeId x, std::vector<std::size_t> indices) {
    const Tensor<T>& X = val(x);
    require(X.rank() == 2, Kernel::gather_rows, {x});
    for (std::size_t idx : indices)
      if (idx >= X.rows())
        throw std::invalid_argument("gather_rows: index " +
                                    std::to_string(idx) + " out of range for " +
                                    shape_str(X.shape()));
    Tensor<T> out({indices.size(), X.cols()});
    for (std::size_t k = 0; k < indices.size(); ++k)
      for (std::size_t j = 0; j < X.cols(); ++j)
        out.at(k, j) = X.at(indices[k], j);
    NodeId id = push(Kernel::gather_rows, {x}, std::move(out));
    nodes_[id].indices = std::move(indices);
    return id;
  }

  /// y[i] = X[i, indices[i]]; picks one entry per row (label look-up).
  NodeId take_per_row(NodeId x, std::vector<std::size_t> indices) {
    const Tensor<T>& X = val(x);
    require(X.rank() == 2 && indices.size() == X.rows(), Kernel::take_per_row,
            {x});
    for (std::size_t idx : indices)
      if (idx >= X.cols())
        throw std::invalid_argument("take_per_row: index " +
                                    std::to_string(idx) + " out of range for " +
                                    shape_str(X.shape()));
    Tensor<T> out({indices.size()});
    for (std::size_t i = 0; i < indices.size(); ++i)
      out[i] = X.at(i, indices[i]);
    NodeId id = push(Kernel::take_per_row, {x}, std::move(out));
    nodes_[id].indices = std::move(indices);
    return id;
  }

  // ---- access -------------------------------------------------------------

  std::size_t size() const { return nodes_.size(); }
  const Node& node(NodeId id) const { return nodes_.at(id); }
  const Tensor<T>& value(NodeId id) const { return nodes_.at(id).value; }

  /// Gradient of the last backward()'s loss w.r.t. node `id`. Zero tensor if
  /// nothing flowed there.
  Tensor<T> grad(NodeId id) const {
    if (id < grads_.size() && grads_[id].size() > 0 &&
        grads_[id].shape() == nodes_[id].value.shape())
      return grads_[id];
    return Tensor<T>::zeros(nodes_.at(id).value.shape());
  }

  /// Gradients of all named trainable leaves; unreachable ones are zero.
  std::map<std::string, Tensor<T>> param_grads() const {
    std::map<std::string, Tensor<T>> out;
    for (NodeId id : trainable_leaves_)
      out[nodes_[id].name] = grad(id);
    return out;
  }

  // ---- backward -----------------------------------------------------------

  void backward(NodeId loss) {
    if (!nodes_.at(loss).value.is_scalar())
      throw std::invalid_argument("backward: loss must be a scalar, got " +
                                  shape_str(nodes_[loss].value.shape()));
    grads_.assign(nodes_.size(), Tensor<T>{});
    // materialize zeros for trainable leaves so unreachable params report 0
    for (NodeId id : trainable_leaves_)
      grads_[id] = Tensor<T>::zeros(nodes_[id].value.shape());
    accum(loss, Tensor<T>::scalar(T{1}));
    for (std::size_t i = loss + 1; i-- > 0;) {
      if (grads_[i].size() == 0 || grads_[i].shape() != nodes_[i].value.shape())
        continue;  // nothing flowed here
      step_backward(i);
    }
  }

 private:
  std::vector<Node> nodes_;
  std::vector<Tensor<T>> grads_;
  std::vector<NodeId> trainable_leaves_;

  const Tensor<T>& val(NodeId id) const { return nodes_.at(id).value; }

  void require(bool ok, Kernel k, const std::vector<NodeId>& inputs) const {
    if (ok) return;
    std::string msg = std::string(kernel_name(k)) + ": invalid input shapes";
    for (NodeId id : inputs) msg += " " + shape_str(val(id).shape());
    throw std::invalid_argument(msg);
  }

  NodeId push(Kernel k, std::vector<NodeId> inputs, Tensor<T> value) {
    if (!value.all_finite())
      throw std::runtime_error(std::string("numeric overflow in kernel '") +
                               kernel_name(k) + "'");
    Node n;
    n.kernel = k;
    n.inputs = std::move(inputs);
    n.value = std::move(value);
    for (NodeId in : n.inputs)
      n.requires_grad = n.requires_grad || nodes_[in].requires_grad;
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  NodeId binary(Kernel k, NodeId a, NodeId b) {
    const Tensor<T>&A = val(a), &B = val(b);
    require(A.same_shape(B), k, {a, b});
    Tensor<T> out = A;
    auto bd = B.data();
    auto od = out.data();
    switch (k) {
      case Kernel::add:
        for (std::size_t i = 0; i < od.size(); ++i) od[i] += bd[i];
        break;
      case Kernel::sub:
        for (std::size_t i = 0; i < od.size(); ++i) od[i] -= bd[i];
        break;
      case Kernel::mul:
        for (std::size_t i = 0; i < od.size(); ++i) od[i] *= bd[i];
        break;
      default:
        throw std::logic_error("binary: bad kernel");
    }
    return push(k, {a, b}, std::move(out));
  }

  template <typename F>
  NodeId unary(Kernel k, NodeId x, F f) {
    Tensor<T> out = val(x);
    for (auto& v : out.data()) v = f(v);
    return push(k, {x}, std::move(out));
  }

  static void matmul_into(Tensor<T>& out, const Tensor<T>& A, const Tensor<T>& B,
                          bool ta, bool tb) {
    // out += op(A) @ op(B), where op transposes on demand; out starts zeroed
    std::size_t m = ta ? A.cols() : A.rows();
    std::size_t p = ta ? A.rows() : A.cols();
    std::size_t n = tb ? B.rows() : B.cols();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t k = 0; k < p; ++k) {
        T a = ta ? A.at(k, i) : A.at(i, k);
        if (a == T{0}) continue;
        for (std::size_t j = 0; j < n; ++j)
          out.at(i, j) += a * (tb ? B.at(j, k) : B.at(k, j));
      }
  }

  void accum(NodeId id, const Tensor<T>& g) {
    if (!nodes_[id].requires_grad) return;
    if (grads_[id].size() == 0 || grads_[id].shape() != nodes_[id].value.shape())
      grads_[id] = Tensor<T>::zeros(nodes_[id].value.shape());
    auto dst = grads_[id].data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }

  void step_backward(NodeId id) {
    const Node& n = nodes_[id];
    const Tensor<T>& g = grads_[id];
    switch (n.kernel) {
      case Kernel::leaf:
      case Kernel::stop_gradient:
        return;  // leaves hold their grad; stop_gradient blocks by design
      case Kernel::matmul: {
        const Tensor<T>&A = val(n.inputs[0]), &B = val(n.inputs[1]);
        if (nodes_[n.inputs[0]].requires_grad) {
          Tensor<T> da({A.rows(), A.cols()});
          matmul_into(da, g, B, false, true);  // dA = G @ B^T
          accum(n.inputs[0], da);
        }
        if (nodes_[n.inputs[1]].requires_grad) {
          Tensor<T> db({B.rows(), B.cols()});
          matmul_into(db, A, g, true, false);  // dB = A^T @ G
          accum(n.inputs[1], db);
        }
        return;
      }
      case Kernel::transpose: {
        const Tensor<T>& X = val(n.inputs[0]);
        Tensor<T> dx({X.rows(), X.cols()});
        for (std::size_t i = 0; i < X.rows(); ++i)
          for (std::size_t j = 0; j < X.cols(); ++j) dx.at(i, j) = g.at(j, i);
        accum(n.inputs[0], dx);
        return;
      }
      case Kernel::add:
        accum(n.inputs[0], g);
        accum(n.inputs[1], g);
        return;
      case Kernel::sub: {
        accum(n.inputs[0], g);
        if (nodes_[n.inputs[1]].requires_grad) {
          Tensor<T> neg = g;
          for (auto& v : neg.data()) v = -v;
          accum(n.inputs[1], neg);
        }
        return;
      }
      case Kernel::mul: {
        const Tensor<T>&A = val(n.inputs[0]), &B = val(n.inputs[1]);
        if (nodes_[n.inputs[0]].requires_grad) {
          Tensor<T> da = g;
          auto d = da.data();
          auto b = B.data();
          for (std::size_t i = 0; i < d.size(); ++i) d[i] *= b[i];
          accum(n.inputs[0], da);
        }
        if (nodes_[n.inputs[1]].requires_grad) {
          Tensor<T> db = g;
          auto d = db.data();
          auto a = A.data();
          for (std::size_t i = 0; i < d.size(); ++i) d[i] *= a[i];
          accum(n.inputs[1], db);
        }
        return;
      }
      case Kernel::scale: {
        Tensor<T> dx = g;
        for (auto& v : dx.data()) v *= n.alpha;
        accum(n.inputs[0], dx);
        return;
      }
      case Kernel::add_rowwise: {
        accum(n.inputs[0], g);
        if (nodes_[n.inputs[1]].requires_grad) {
          Tensor<T> db({g.cols()});
          for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) db[j] += g.at(i, j);
          accum(n.inputs[1], db);
        }
        return;
      }
      case Kernel::mul_rowwise: {
        const Tensor<T>&X = val(n.inputs[0]), &S = val(n.inputs[1]);
        if (nodes_[n.inputs[0]].requires_grad) {
          Tensor<T> dx = g;
          for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) dx.at(i, j) *= S[j];
          accum(n.inputs[0], dx);
        }
        if (nodes_[n.inputs[1]].requires_grad) {
          Tensor<T> ds({g.cols()});
          for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j)
              ds[j] += g.at(i, j) * X.at(i, j);
          accum(n.inputs[1], ds);
        }
        return;
      }
      case Kernel::sum_all: {
        const Tensor<T>& X = val(n.inputs[0]);
        accum(n.inputs[0], Tensor<T>::full(X.shape(), g[0]));
        return;
      }
      case Kernel::mean_all: {
        const Tensor<T>& X = val(n.inputs[0]);
        accum(n.inputs[0],
              Tensor<T>::full(X.shape(), g[0] / static_cast<T>(X.size())));
        return;
      }
      case Kernel::block_mean_rows: {
        const Tensor<T>& X = val(n.inputs[0]);
        Tensor<T> dx({X.rows(), X.cols()});
        T inv = T{1} / static_cast<T>(n.block);
        for (std::size_t g_row = 0; g_row < g.rows(); ++g_row)
          for (std::size_t r = 0; r < n.block; ++r)
            for (std::size_t j = 0; j < g.cols(); ++j)
              dx.at(g_row * n.block + r, j) = g.at(g_row, j) * inv;
        accum(n.inputs[0], dx);
        return;
      }
      case Kernel::reshape: {
        const Tensor<T>& X = val(n.inputs[0]);
        Tensor<T> dx(X.shape(), {g.data().begin(), g.data().end()});
        accum(n.inputs[0], dx);
        return;
      }
      case Kernel::exp: {
        Tensor<T> dx = g;
        auto d = dx.data();
        auto y = n.value.data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] *= y[i];
        accum(n.inputs[0], dx);
        return;
      }
      case Kernel::log: {
        const Tensor<T>& X = val(n.inputs[0]);
        Tensor<T> dx = g;
        auto d = dx.data();
        auto x = X.data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] /= x[i];
        accum(n.inputs[0], dx);
        return;
      }
      case Kernel::tanh: {
        Tensor<T> dx = g;
        auto d = dx.data();
        auto y = n.value.data();
        for (std::size_t i = 0; i < d.size(); ++i)
          d[i] *= (T{1} - y[i] * y[i]);
        accum(n.inputs[0], dx);
        return;
      }
      case Kernel::relu: {
        const Tensor<T>& X = val(n.inputs[0]);
        Tensor<T> dx = g;
        auto d = dx.data();
        auto x = X.data();
        for (std::size_t i = 0; i < d.size(); ++i)
          if (x[i] <= T{0}) d[i] = T{0};
        accum(n.inputs[0], dx);
        return;
      }
      case Kernel::sigmoid: {
        Tensor<T> dx = g;
        auto d = dx.data();
        auto y = n.value.data();
        for (std::size_t i = 0; i < d.size(); ++i)
          d[i] *= y[i] * (T{1} - y[i]);
        accum(n.inputs[0], dx);
        return;
      }
      case Kernel::softplus: {
        const Tensor<T>& X = val(n.inputs[0]);
        Tensor<T> dx = g;
        auto d = dx.data();
        auto x = X.data();
        for (std::size_t i = 0; i < d.size(); ++i) {
          T v = x[i];
          T s = v >= T{0} ? T{1} / (T{1} + std::exp(-v))
                          : std::exp(v) / (T{1} + std::exp(v));
          d[i] *= s;
        }
        accum(n.inputs[0], dx);
        return;
      }
      case Kernel::softmax_rows: {
        const Tensor<T>& Y = n.value;
        Tensor<T> dx({Y.rows(), Y.cols()});
        for (std::size_t i = 0; i < Y.rows(); ++i) {
          T dot{0};
          for (std::size_t j = 0; j < Y.cols(); ++j)
            dot += g.at(i, j) * Y.at(i, j);
          for (std::size_t j = 0; j < Y.cols(); ++j)
            dx.at(i, j) = Y.at(i, j) * (g.at(i, j) - dot);
        }
        accum(n.inputs[0], dx);
        return;
      }
      case Kernel::log_softmax_rows: {
        const Tensor<T>& Y = n.value;  // log-probabilities
        Tensor<T> dx({Y.rows(), Y.cols()});
        for (std::size_t i = 0; i < Y.rows(); ++i) {
          T gsum{0};
          for (std::size_t j = 0; j < Y.cols(); ++j) gsum += g.at(i, j);
          for (std::size_t j = 0; j < Y.cols(); ++j)
            dx.at(i, j) = g.at(i, j) - std::exp(Y.at(i, j)) * gsum;
        }
        accum(n.inputs[0], dx);
        return;
      }
      case Kernel::l2_normalize_rows: {
        const Tensor<T>& X = val(n.inputs[0]);
        const Tensor<T>& Y = n.value;
        Tensor<T> dx({X.rows(), X.cols()});
        for (std::size_t i = 0; i < X.rows(); ++i) {
          T sq{0};
          for (std::size_t j = 0; j < X.cols(); ++j)
            sq += X.at(i, j) * X.at(i, j);
          T inv = T{1} / std::sqrt(sq);
          T dot{0};
          for (std::size_t j = 0; j < X.cols(); ++j)
            dot += g.at(i, j) * Y.at(i, j);
          for (std::size_t j = 0; j < X.cols(); ++j)
            dx.at(i, j) = (g.at(i, j) - Y.at(i, j) * dot) * inv;
        }
        accum(n.inputs[0], dx);
        return;
      }
      case Kernel::standardize_rows: {
        const Tensor<T>& X = val(n.inputs[0]);
        const Tensor<T>& Y = n.value;
        T eps = n.alpha;
        std::size_t c = X.cols();
        Tensor<T> dx({X.rows(), c});
        for (std::size_t i = 0; i < X.rows(); ++i) {
          T mean{0};
          for (std::size_t j = 0; j < c; ++j) mean += X.at(i, j);
          mean /= static_cast<T>(c);
          T var{0};
          for (std::size_t j = 0; j < c; ++j) {
            T d = X.at(i, j) - mean;
            var += d * d;
          }
          var /= static_cast<T>(c);
          T inv = T{1} / std::sqrt(var + eps);
          T gmean{0}, gymean{0};
          for (std::size_t j = 0; j < c; ++j) {
            gmean += g.at(i, j);
            gymean += g.at(i, j) * Y.at(i, j);
          }
          gmean /= static_cast<T>(c);
          gymean /= static_cast<T>(c);
          for (std::size_t j = 0; j < c; ++j)
            dx.at(i, j) = inv * (g.at(i, j) - gmean - Y.at(i, j) * gymean);
        }
        accum(n.inputs[0], dx);
        return;
      }
      case Kernel::concat_rows: {
        std::size_t r = 0;
        for (NodeId in : n.inputs) {
          const Tensor<T>& X = val(in);
          if (nodes_[in].requires_grad) {
            Tensor<T> dx({X.rows(), X.cols()});
            for (std::size_t i = 0; i < X.rows(); ++i)
              for (std::size_t j = 0; j < X.cols(); ++j)
                dx.at(i, j) = g.at(r + i, j);
            accum(in, dx);
          }
          r += X.rows();
        }
        return;
      }
      case Kernel::slice_rows: {
        const Tensor<T>& X = val(n.inputs[0]);
        Tensor<T> dx({X.rows(), X.cols()});
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < g.cols(); ++j)
            dx.at(n.begin + i, j) = g.at(i, j);
        accum(n.inputs[0], dx);
        return;
      }
      case Kernel::gather_rows: {
        const Tensor<T>& X = val(n.inputs[0]);
        Tensor<T> dx({X.rows(), X.cols()});
        for (std::size_t k = 0; k < n.indices.size(); ++k)
          for (std::size_t j = 0; j < X.cols(); ++j)
            dx.at(n.indices[k], j) += g.at(k, j);
        accum(n.inputs[0], dx);
        return;
      }
      case Kernel::take_per_row: {
        const Tensor<T>& X = val(n.inputs[0]);
        Tensor<T> dx({X.rows(), X.cols()});
        for (std::size_t i = 0; i < n.indices.size(); ++i)
          dx.at(i, n.indices[i]) += g[i];
        accum(n.inputs[0], dx);
        return;
      }
    }
    throw std::logic_error("step_backward: unhandled kernel");
  }
};

}  // namespace modrobe

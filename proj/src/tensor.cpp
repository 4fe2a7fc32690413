#include "rvi/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "rvi/error.hpp"

namespace rvi {

namespace detail {

using NodePtr = std::shared_ptr<Node>;
using BackwardFn = std::function<void(Node& self)>;

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool frozen = false;
  std::vector<NodePtr> parents;
  BackwardFn backward;

  bool tracks() const { return requires_grad && !frozen; }
  bool leaf() const { return !backward; }

  std::vector<double>& grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

using detail::Node;
using detail::NodePtr;

namespace {

thread_local bool t_grad_enabled = true;

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

}  // namespace

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// Builds op outputs and wires them into the graph when any input tracks
// gradients and recording is enabled.
class OpBuilder {
 public:
  static const NodePtr& node(const Tensor& t) { return t.node_; }

  static Tensor make(Shape shape, std::vector<double> value, std::vector<NodePtr> inputs,
                     detail::BackwardFn fn) {
    auto out = std::make_shared<Node>();
    out->shape = std::move(shape);
    out->value = std::move(value);
    const bool any = std::any_of(inputs.begin(), inputs.end(),
                                 [](const NodePtr& p) { return p->tracks(); });
    if (t_grad_enabled && any) {
      out->requires_grad = true;
      out->parents = std::move(inputs);
      out->backward = std::move(fn);
    }
    return Tensor(std::move(out));
  }
};

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor() : Tensor(Shape{}, {0.0}) {}

Tensor::Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : node_(std::make_shared<Node>()) {
  if (element_count(shape) != values.size()) {
    throw DimensionError("tensor shape " + shape_string(shape) + " holds " +
                         std::to_string(element_count(shape)) + " elements, got " +
                         std::to_string(values.size()));
  }
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = element_count(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{}, {value}, requires_grad);
}

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  Shape shape{values.size()};
  return Tensor(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows,
                      bool requires_grad) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> values;
  values.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged matrix literal");
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor(Shape{r, c}, std::move(values), requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::numel() const { return node_->value.size(); }

std::size_t Tensor::rows() const {
  if (rank() != 2) throw DimensionError("expected a matrix, got shape " + shape_string(shape()));
  return shape()[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw DimensionError("expected a matrix, got shape " + shape_string(shape()));
  return shape()[1];
}

std::span<const double> Tensor::values() const { return node_->value; }
std::span<double> Tensor::data() { return node_->value; }

double Tensor::item() const {
  if (numel() != 1) {
    throw DimensionError("item() needs a single element, shape is " + shape_string(shape()));
  }
  return node_->value[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  if (row >= rows() || col >= cols()) throw IndexError("matrix index out of range");
  return node_->value[row * cols() + col];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
void Tensor::set_requires_grad(bool on) {
  if (!is_leaf()) throw ContractError("requires_grad can only be changed on leaves");
  node_->requires_grad = on;
}
bool Tensor::frozen() const { return node_->frozen; }
void Tensor::set_frozen(bool on) { node_->frozen = on; }
bool Tensor::tracks_grad() const { return node_->tracks(); }
bool Tensor::is_leaf() const { return node_->leaf(); }

bool Tensor::has_grad() const { return node_->grad.size() == node_->value.size() && numel() > 0; }
std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw ContractError("tensor has no gradient");
  return node_->grad;
}
std::span<double> Tensor::mutable_grad() { return node_->grad_buffer(); }
void Tensor::zero_grad() {
  auto g = node_->grad_buffer();
  std::fill(g.begin(), g.end(), 0.0);
}
void Tensor::clear_grad() {
  node_->grad.clear();
  node_->grad.shrink_to_fit();
}

Tensor Tensor::detach() const { return Tensor(shape(), node_->value, false); }

void Tensor::backward(bool retain_graph) const {
  if (numel() != 1) {
    throw ContractError("backward() needs a scalar root, shape is " + shape_string(shape()));
  }
  if (!node_->tracks()) return;

  // Post-order DFS over the tracked subgraph gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->tracks() && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (!n->leaf()) n->grad.clear();
  }
  node_->grad_buffer()[0] += 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->leaf()) continue;
    if (n->grad.size() == n->value.size()) n->backward(*n);
    n->grad.clear();
    n->grad.shrink_to_fit();
  }

  if (!retain_graph) {
    for (Node* n : order) {
      if (!n->leaf()) {
        n->parents.clear();
        n->backward = nullptr;
        n->requires_grad = false;
      }
    }
  }
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

// ---------------------------------------------------------------------------
// Elementwise

namespace {

double sign_of(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

const char* unary_name(UnaryOp op) {
  switch (op) {
    case UnaryOp::kExp: return "exp";
    case UnaryOp::kLog: return "log";
    case UnaryOp::kRelu: return "relu";
    case UnaryOp::kSquare: return "square";
    case UnaryOp::kAbs: return "abs";
    case UnaryOp::kSqrt: return "sqrt";
    case UnaryOp::kNeg: return "neg";
  }
  return "?";
}

}  // namespace

Tensor elementwise(UnaryOp op, const Tensor& t) {
  const auto& in = OpBuilder::node(t);
  const auto& x = in->value;
  std::vector<double> y(x.size());

  if (op == UnaryOp::kLog || op == UnaryOp::kSqrt) {
    for (double v : x) {
      if (v < 0.0) {
        throw DomainError(std::string(unary_name(op)) + " of negative value " + std::to_string(v));
      }
    }
  }
  switch (op) {
    case UnaryOp::kExp: std::transform(x.begin(), x.end(), y.begin(), [](double v) { return std::exp(v); }); break;
    case UnaryOp::kLog: std::transform(x.begin(), x.end(), y.begin(), [](double v) { return std::log(v); }); break;
    case UnaryOp::kRelu: std::transform(x.begin(), x.end(), y.begin(), [](double v) { return v > 0.0 ? v : 0.0; }); break;
    case UnaryOp::kSquare: std::transform(x.begin(), x.end(), y.begin(), [](double v) { return v * v; }); break;
    case UnaryOp::kAbs: std::transform(x.begin(), x.end(), y.begin(), [](double v) { return std::fabs(v); }); break;
    case UnaryOp::kSqrt: std::transform(x.begin(), x.end(), y.begin(), [](double v) { return std::sqrt(v); }); break;
    case UnaryOp::kNeg: std::transform(x.begin(), x.end(), y.begin(), [](double v) { return -v; }); break;
  }

  auto fn = [op](Node& self) {
    Node& p = *self.parents[0];
    auto& g = p.grad_buffer();
    const auto& x = p.value;
    const auto& y = self.value;
    const auto& gy = self.grad;
    const std::size_t n = x.size();
    switch (op) {
      case UnaryOp::kExp: for (std::size_t i = 0; i < n; ++i) g[i] += gy[i] * y[i]; break;
      case UnaryOp::kLog: for (std::size_t i = 0; i < n; ++i) g[i] += gy[i] / x[i]; break;
      case UnaryOp::kRelu: for (std::size_t i = 0; i < n; ++i) g[i] += x[i] > 0.0 ? gy[i] : 0.0; break;
      case UnaryOp::kSquare: for (std::size_t i = 0; i < n; ++i) g[i] += 2.0 * x[i] * gy[i]; break;
      case UnaryOp::kAbs: for (std::size_t i = 0; i < n; ++i) g[i] += sign_of(x[i]) * gy[i]; break;
      case UnaryOp::kSqrt: for (std::size_t i = 0; i < n; ++i) g[i] += 0.5 * gy[i] / y[i]; break;
      case UnaryOp::kNeg: for (std::size_t i = 0; i < n; ++i) g[i] -= gy[i]; break;
    }
  };
  return OpBuilder::make(t.shape(), std::move(y), {in}, fn);
}

Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b) {
  const auto& na = OpBuilder::node(a);
  const auto& nb = OpBuilder::node(b);
  const std::size_t sa = na->value.size();
  const std::size_t sb = nb->value.size();

  Shape out_shape;
  if (a.shape() == b.shape()) {
    out_shape = a.shape();
  } else if (sb == 1) {
    out_shape = a.shape();
  } else if (sa == 1) {
    out_shape = b.shape();
  } else {
    throw DimensionError("incompatible shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
  }
  const std::size_t n = element_count(out_shape);
  // Stride 0 broadcasts a single element.
  const std::size_t ia = (sa == n && a.shape() == out_shape) ? 1 : 0;
  const std::size_t ib = (sb == n && b.shape() == out_shape) ? 1 : 0;

  const auto& x = na->value;
  const auto& z = nb->value;
  std::vector<double> y(n);
  switch (op) {
    case BinaryOp::kAdd: for (std::size_t i = 0; i < n; ++i) y[i] = x[i * ia] + z[i * ib]; break;
    case BinaryOp::kSub: for (std::size_t i = 0; i < n; ++i) y[i] = x[i * ia] - z[i * ib]; break;
    case BinaryOp::kMul: for (std::size_t i = 0; i < n; ++i) y[i] = x[i * ia] * z[i * ib]; break;
  }

  auto fn = [op, ia, ib](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const auto& gy = self.grad;
    const std::size_t n = gy.size();
    if (pa.tracks()) {
      auto& g = pa.grad_buffer();
      switch (op) {
        case BinaryOp::kAdd:
        case BinaryOp::kSub: for (std::size_t i = 0; i < n; ++i) g[i * ia] += gy[i]; break;
        case BinaryOp::kMul: for (std::size_t i = 0; i < n; ++i) g[i * ia] += gy[i] * pb.value[i * ib]; break;
      }
    }
    if (pb.tracks()) {
      auto& g = pb.grad_buffer();
      switch (op) {
        case BinaryOp::kAdd: for (std::size_t i = 0; i < n; ++i) g[i * ib] += gy[i]; break;
        case BinaryOp::kSub: for (std::size_t i = 0; i < n; ++i) g[i * ib] -= gy[i]; break;
        case BinaryOp::kMul: for (std::size_t i = 0; i < n; ++i) g[i * ib] += gy[i] * pa.value[i * ia]; break;
      }
    }
  };
  return OpBuilder::make(std::move(out_shape), std::move(y), {na, nb}, fn);
}

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::kAdd, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::kSub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::kMul, a, b); }
Tensor scale(const Tensor& t, double factor) { return mul(t, Tensor::scalar(factor)); }
Tensor exp(const Tensor& t) { return elementwise(UnaryOp::kExp, t); }
Tensor log(const Tensor& t) { return elementwise(UnaryOp::kLog, t); }
Tensor relu(const Tensor& t) { return elementwise(UnaryOp::kRelu, t); }
Tensor square(const Tensor& t) { return elementwise(UnaryOp::kSquare, t); }
Tensor abs(const Tensor& t) { return elementwise(UnaryOp::kAbs, t); }
Tensor sqrt(const Tensor& t) { return elementwise(UnaryOp::kSqrt, t); }
Tensor neg(const Tensor& t) { return elementwise(UnaryOp::kNeg, t); }

// ---------------------------------------------------------------------------
// Matrix product

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw DimensionError("matmul shape mismatch: " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  const auto m = static_cast<Eigen::Index>(a.shape()[0]);
  const auto k = static_cast<Eigen::Index>(a.shape()[1]);
  const auto n = static_cast<Eigen::Index>(b.shape()[1]);
  const auto& na = OpBuilder::node(a);
  const auto& nb = OpBuilder::node(b);

  std::vector<double> y(static_cast<std::size_t>(m * n), 0.0);
  if (m > 0 && n > 0 && k > 0) {
    MutMap(y.data(), m, n).noalias() = ConstMap(na->value.data(), m, k) * ConstMap(nb->value.data(), k, n);
  }

  auto fn = [m, k, n](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (m == 0 || n == 0 || k == 0) {
      if (pa.tracks()) pa.grad_buffer();
      if (pb.tracks()) pb.grad_buffer();
      return;
    }
    ConstMap g(self.grad.data(), m, n);
    if (pa.tracks()) {
      MutMap(pa.grad_buffer().data(), m, k).noalias() += g * ConstMap(pb.value.data(), k, n).transpose();
    }
    if (pb.tracks()) {
      MutMap(pb.grad_buffer().data(), k, n).noalias() += ConstMap(pa.value.data(), m, k).transpose() * g;
    }
  };
  return OpBuilder::make(Shape{a.shape()[0], b.shape()[1]}, std::move(y), {na, nb}, fn);
}

// ---------------------------------------------------------------------------
// Reductions

Tensor reduce(ReduceOp op, const Tensor& t, std::span<const std::size_t> axes) {
  const Shape& in_shape = t.shape();
  const std::size_t rank = in_shape.size();
  std::vector<bool> reduced(rank, axes.empty());
  for (auto ax : axes) {
    if (ax >= rank) {
      throw DimensionError("reduction axis " + std::to_string(ax) + " invalid for shape " +
                           shape_string(in_shape));
    }
    reduced[ax] = true;
  }

  Shape out_shape;
  for (std::size_t d = 0; d < rank; ++d) {
    if (!reduced[d]) out_shape.push_back(in_shape[d]);
  }

  // Map every input element to its output slot.
  const std::size_t n = t.numel();
  std::vector<std::size_t> target(n, 0);
  {
    std::vector<std::size_t> out_stride(rank, 0);
    std::size_t s = 1;
    for (std::size_t d = rank; d-- > 0;) {
      if (!reduced[d]) {
        out_stride[d] = s;
        s *= in_shape[d];
      }
    }
    std::vector<std::size_t> idx(rank, 0);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t o = 0;
      for (std::size_t d = 0; d < rank; ++d) o += idx[d] * out_stride[d];
      target[i] = o;
      for (std::size_t d = rank; d-- > 0;) {
        if (++idx[d] < in_shape[d]) break;
        idx[d] = 0;
      }
    }
  }

  const std::size_t m = element_count(out_shape);
  const double denom = m ? static_cast<double>(n) / static_cast<double>(m) : 1.0;
  const double factor = op == ReduceOp::kMean ? 1.0 / denom : 1.0;

  const auto& in = OpBuilder::node(t);
  std::vector<double> y(m, 0.0);
  for (std::size_t i = 0; i < n; ++i) y[target[i]] += in->value[i];
  if (op == ReduceOp::kMean) {
    for (auto& v : y) v *= factor;
  }

  auto fn = [target = std::move(target), factor](Node& self) {
    Node& p = *self.parents[0];
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[target[i]] * factor;
  };
  return OpBuilder::make(std::move(out_shape), std::move(y), {in}, std::move(fn));
}

Tensor sum(const Tensor& t, std::span<const std::size_t> axes) { return reduce(ReduceOp::kSum, t, axes); }
Tensor mean(const Tensor& t, std::span<const std::size_t> axes) { return reduce(ReduceOp::kMean, t, axes); }

// ---------------------------------------------------------------------------
// Row selection and broadcasting

Tensor gather_rows(const Tensor& t, std::span<const std::size_t> indices) {
  const std::size_t k = t.rows();
  const std::size_t w = t.cols();
  for (auto i : indices) {
    if (i >= k) {
      throw IndexError("row index " + std::to_string(i) + " out of range for " +
                       std::to_string(k) + " rows");
    }
  }
  const auto& in = OpBuilder::node(t);
  std::vector<double> y(indices.size() * w);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    std::copy_n(in->value.begin() + static_cast<std::ptrdiff_t>(indices[r] * w), w,
                y.begin() + static_cast<std::ptrdiff_t>(r * w));
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  auto fn = [idx = std::move(idx), w](Node& self) {
    Node& p = *self.parents[0];
    auto& g = p.grad_buffer();
    for (std::size_t r = 0; r < idx.size(); ++r) {
      double* dst = g.data() + idx[r] * w;
      const double* src = self.grad.data() + r * w;
      for (std::size_t c = 0; c < w; ++c) dst[c] += src[c];
    }
  };
  return OpBuilder::make(Shape{indices.size(), w}, std::move(y), {in}, std::move(fn));
}

Tensor broadcast_rows(const Tensor& row, std::size_t count) {
  if (row.rank() != 2 || row.shape()[0] != 1) {
    throw DimensionError("broadcast_rows expects a 1xn tensor, got " + shape_string(row.shape()));
  }
  const std::size_t w = row.shape()[1];
  const auto& in = OpBuilder::node(row);
  std::vector<double> y(count * w);
  for (std::size_t r = 0; r < count; ++r) {
    std::copy(in->value.begin(), in->value.end(), y.begin() + static_cast<std::ptrdiff_t>(r * w));
  }
  auto fn = [count, w](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < count; ++r) {
      for (std::size_t c = 0; c < w; ++c) g[c] += self.grad[r * w + c];
    }
  };
  return OpBuilder::make(Shape{count, w}, std::move(y), {in}, fn);
}

// ---------------------------------------------------------------------------
// Fused softmax cross-entropy

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  const std::size_t b = logits.rows();
  const std::size_t c = logits.cols();
  if (labels.size() != b) {
    throw DimensionError("cross-entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(b) + " rows");
  }
  if (b == 0) throw DimensionError("cross-entropy over an empty batch");
  const auto& in = OpBuilder::node(logits);
  std::vector<double> probs(b * c);
  double total = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    const int label = labels[r];
    if (label < 0 || static_cast<std::size_t>(label) >= c) {
      throw IndexError("label " + std::to_string(label) + " outside [0, " + std::to_string(c) + ")");
    }
    const double* z = in->value.data() + r * c;
    const double top = *std::max_element(z, z + c);
    double norm = 0.0;
    for (std::size_t j = 0; j < c; ++j) norm += std::exp(z[j] - top);
    const double log_norm = top + std::log(norm);
    for (std::size_t j = 0; j < c; ++j) probs[r * c + j] = std::exp(z[j] - log_norm);
    total += log_norm - z[label];
  }
  std::vector<int> lab(labels.begin(), labels.end());
  auto fn = [probs = std::move(probs), lab = std::move(lab), b, c](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    const double scale = self.grad[0] / static_cast<double>(b);
    for (std::size_t r = 0; r < b; ++r) {
      for (std::size_t j = 0; j < c; ++j) {
        const double target = static_cast<int>(j) == lab[r] ? 1.0 : 0.0;
        g[r * c + j] += scale * (probs[r * c + j] - target);
      }
    }
  };
  return OpBuilder::make(Shape{}, {total / static_cast<double>(b)}, {in}, std::move(fn));
}

std::uint64_t value_checksum(std::span<const double> values) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  const auto* bytes = reinterpret_cast<const unsigned char*>(values.data());
  for (std::size_t i = 0; i < values.size() * sizeof(double); ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace rvi

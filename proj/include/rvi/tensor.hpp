#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace rvi {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {
struct Node;
}

// Dense row-major float64 array that may participate in a reverse-mode
// differentiation graph. Tensor is a cheap handle: copies share the same
// storage and graph node.
//
// The graph is built implicitly while ops run (unless a NoGradGuard is
// active) and is released by backward() unless retain_graph is requested.
class Tensor {
 public:
  // 0-d constant zero.
  Tensor();
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                       bool requires_grad = false);

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  // Extents of a rank-2 tensor; DimensionError otherwise.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const;
  // Writable view of the value buffer. Intended for leaves (initialisers,
  // optimisers, test hooks); writing into an interior node does not
  // invalidate gradients already computed from it.
  std::span<double> data();
  double item() const;
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  // A frozen tensor is treated as a constant by every op and must not be
  // handed to an optimiser.
  bool frozen() const;
  void set_frozen(bool on);
  // True when ops on this tensor will record gradient edges.
  bool tracks_grad() const;
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();
  void clear_grad();

  // Populates grad on every requires_grad leaf reachable from this scalar.
  // Leaf gradients accumulate across calls.
  void backward(bool retain_graph = false) const;

  // Value copy with no graph history.
  Tensor detach() const;

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node);
  std::shared_ptr<detail::Node> node_;

  friend class OpBuilder;
};

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

enum class UnaryOp { kExp, kLog, kRelu, kSquare, kAbs, kSqrt, kNeg };
enum class BinaryOp { kAdd, kSub, kMul };
enum class ReduceOp { kSum, kMean };

// Elementwise ops. Binary operands must have equal shapes, or one of them
// must hold a single element which is broadcast against the other.
Tensor elementwise(UnaryOp op, const Tensor& t);
Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& t, double factor);
Tensor exp(const Tensor& t);
Tensor log(const Tensor& t);
Tensor relu(const Tensor& t);
Tensor square(const Tensor& t);
Tensor abs(const Tensor& t);
Tensor sqrt(const Tensor& t);
Tensor neg(const Tensor& t);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator-(const Tensor& t) { return neg(t); }

Tensor matmul(const Tensor& a, const Tensor& b);

// Reduces over the listed axes, dropping them. An empty axis list reduces
// every axis and yields a 0-d tensor.
Tensor reduce(ReduceOp op, const Tensor& t, std::span<const std::size_t> axes = {});
Tensor sum(const Tensor& t, std::span<const std::size_t> axes = {});
Tensor mean(const Tensor& t, std::span<const std::size_t> axes = {});

// Rows of a rank-2 tensor in the given order. Backward scatter-adds into the
// selected rows only.
Tensor gather_rows(const Tensor& t, std::span<const std::size_t> indices);

// Repeats a 1×n tensor into count×n; backward sums over the repeats.
Tensor broadcast_rows(const Tensor& row, std::size_t count);

// Mean over rows of -log softmax(logits)[label]. Fused for numerical
// stability.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

// FNV-1a over the raw value bytes; equal iff bit-identical (up to collisions).
std::uint64_t value_checksum(std::span<const double> values);
inline std::uint64_t value_checksum(const Tensor& t) { return value_checksum(t.values()); }

}  // namespace rvi

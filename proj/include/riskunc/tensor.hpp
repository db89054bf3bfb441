#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace riskunc {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

// One vertex of the define-by-run graph. Non-leaf nodes carry the local
// gradient rule that scatters their own grad into their parents' grads.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until the first accumulation
  bool requires_grad = false;
  bool consumed = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<double>& grad_buffer();
};

}  // namespace detail

/// Dense row-major array of doubles with reverse-mode gradient support.
///
/// A Tensor is a cheap handle: copies alias the same storage. Use clone()
/// for an independent deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  /// 2-D tensor from nested rows; every row must have the same length.
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                       bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;

  std::span<const double> data() const;
  // Mutable access is meant for leaves (parameters, optimizer updates);
  // mutating a value that a recorded op depends on invalidates its gradient.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  /// Gradient buffer; all zeros when nothing has been accumulated yet.
  std::vector<double> grad() const;
  void zero_grad();

  bool is_leaf() const;
  /// Deep copy of the value as a new leaf with the same requires_grad flag.
  Tensor clone() const;
  /// Same value, no history, no gradient.
  Tensor detach() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Topologically ordered record of the operations reachable from a root.
class Tape {
 public:
  explicit Tape(const Tensor& root);

  std::span<const std::shared_ptr<detail::Node>> nodes() const { return order_; }
  std::size_t size() const { return order_.size(); }

  /// Runs the local gradient rules in reverse order, seeding a scalar root
  /// with 1 when it has no gradient yet. A tape can be replayed at most once;
  /// afterwards the graph's intermediate history is released.
  void backward();

 private:
  std::vector<std::shared_ptr<detail::Node>> order_;
  bool done_ = false;
};

/// Populates grad on every requires_grad tensor reachable from loss.
/// Throws ShapeError if loss is not a scalar.
void backward(const Tensor& loss);

/// Whether new ops record history on the current thread.
bool grad_enabled();

/// Disables history recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace riskunc

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace dabf {

using Shape = std::vector<int>;

long long shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// One node of a reverse-mode differentiation graph. Holds the forward
/// value, the (lazily sized) gradient buffer and the closure that pushes
/// gradient contributions to its parents.
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;  // sized during backward; empty until then

  // Graph bookkeeping. `id` is the global creation rank; backward walks
  // nodes in descending id (a valid reverse topological order) and sums
  // fan-out contributions in ascending consumer id.
  long long id = -1;
  std::string op;  // empty for leaves
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void(TensorImpl&)> backward_fn;
  std::vector<std::pair<long long, std::vector<double>>> pending;
  bool backward_done = false;

  long long numel() const { return shape_numel(shape); }
  bool is_leaf() const { return parents.empty(); }
};

/// Value-semantic handle to a graph node. Data is written once at
/// construction; only leaves may be rewritten between graphs (optimizer
/// updates). Gradients accumulate across backward calls until zero_grad.
class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
  long long numel() const { return impl_->numel(); }
  bool requires_grad() const { return impl_->requires_grad; }
  bool is_leaf() const { return impl_->is_leaf(); }
  const std::string& op() const { return impl_->op; }

  const std::vector<double>& data() const { return impl_->data; }
  double item() const;
  double at(std::initializer_list<int> idx) const;

  /// Gradient of the last backward pass; zeros if this leaf never
  /// received one (disconnected graphs are not an error).
  std::vector<double> grad() const;
  void zero_grad();

  /// Mutable access for optimizer updates. Rejected on non-leaf nodes:
  /// graph node values are immutable once created.
  std::vector<double>& leaf_data();

  std::shared_ptr<TensorImpl> impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Populates gradient buffers of every reachable requires_grad node.
/// `loss` must be scalar (numel 1). A second call on the same root
/// without building a new graph is rejected.
void backward(const Tensor& loss);

/// Builds a graph node. Drops parents and the backward closure when no
/// parent needs gradients, so inference-only graphs carry no tape.
Tensor make_node(Shape shape, std::vector<double> data, const char* op,
                 std::vector<Tensor> parents,
                 std::function<void(TensorImpl&)> backward_fn);

/// Appends a gradient contribution for `parent` coming from consumer
/// node `consumer_id`. No-op when the parent does not need gradients.
void push_grad(const std::shared_ptr<TensorImpl>& parent, long long consumer_id,
               std::vector<double> contribution);

/// Tracks the smallest margin to a non-smooth point (ReLU kink, clamp
/// edge, max tie, interpolation cell boundary) seen during a forward
/// pass. The gradient-check harness re-rolls sample points whose margin
/// is too small for central differences.
struct KinkMonitor {
  bool enabled = false;
  double min_margin = 1e300;

  void reset() { min_margin = 1e300; }
  static KinkMonitor& instance();
};

inline void kink_note(double margin) {
  KinkMonitor& m = KinkMonitor::instance();
  if (m.enabled && margin < m.min_margin) m.min_margin = margin;
}

}  // namespace dabf

#include "dabf/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "dabf/rng.hpp"

namespace dabf {

namespace {
std::atomic<long long> g_next_id{0};
}  // namespace

long long shape_numel(const Shape& shape) {
  long long n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

KinkMonitor& KinkMonitor::instance() {
  thread_local KinkMonitor m;
  return m;
}

static void validate_shape(const Shape& shape) {
  for (size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] <= 0) {
      std::ostringstream os;
      os << "tensor shape dimension " << i << " must be positive, got " << shape[i];
      throw std::invalid_argument(os.str());
    }
  }
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  validate_shape(shape);
  if (shape_numel(shape) != static_cast<long long>(data.size())) {
    std::ostringstream os;
    os << "tensor data length " << data.size() << " does not match shape "
       << shape_str(shape) << " (" << shape_numel(shape) << " elements)";
    throw std::invalid_argument(os.str());
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  impl->id = g_next_id.fetch_add(1);
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(static_cast<size_t>(n), value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from(Shape{}, std::vector<double>{value}, requires_grad);
}

double Tensor::item() const {
  if (numel() != 1) {
    throw std::invalid_argument("item(): tensor has " + std::to_string(numel()) +
                                " elements, expected 1");
  }
  return impl_->data[0];
}

double Tensor::at(std::initializer_list<int> idx) const {
  const Shape& s = impl_->shape;
  if (idx.size() != s.size()) throw std::invalid_argument("at(): rank mismatch");
  long long flat = 0;
  size_t i = 0;
  for (int v : idx) {
    flat = flat * s[i] + v;
    ++i;
  }
  return impl_->data[static_cast<size_t>(flat)];
}

std::vector<double> Tensor::grad() const {
  if (impl_->grad.empty()) return std::vector<double>(static_cast<size_t>(numel()), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() { impl_->grad.clear(); }

std::vector<double>& Tensor::leaf_data() {
  if (!impl_->is_leaf()) {
    throw std::logic_error("leaf_data(): node '" + impl_->op +
                           "' is part of a graph; graph values are immutable");
  }
  return impl_->data;
}

Tensor make_node(Shape shape, std::vector<double> data, const char* op,
                 std::vector<Tensor> parents,
                 std::function<void(TensorImpl&)> backward_fn) {
  bool rg = false;
  for (const Tensor& p : parents) rg = rg || p.requires_grad();
  Tensor out = Tensor::from(std::move(shape), std::move(data), rg);
  if (rg) {
    out.impl()->op = op;
    out.impl()->parents.reserve(parents.size());
    for (Tensor& p : parents) out.impl()->parents.push_back(p.impl());
    out.impl()->backward_fn = std::move(backward_fn);
  }
  return out;
}

void push_grad(const std::shared_ptr<TensorImpl>& parent, long long consumer_id,
               std::vector<double> contribution) {
  if (!parent->requires_grad) return;
  parent->pending.emplace_back(consumer_id, std::move(contribution));
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw std::invalid_argument("backward: undefined tensor");
  if (loss.numel() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                shape_str(loss.shape()));
  }
  auto root = loss.impl();
  if (root->backward_done) {
    throw std::logic_error("backward: already ran on this graph; rebuild it or reset");
  }
  root->backward_done = true;
  if (!root->requires_grad) return;  // disconnected from every leaf

  // Reachable requires_grad nodes, then descending creation id. Creation
  // order is a topological order, so this is a valid reverse traversal.
  std::vector<TensorImpl*> nodes;
  std::unordered_set<TensorImpl*> seen;
  std::vector<TensorImpl*> stack{root.get()};
  seen.insert(root.get());
  while (!stack.empty()) {
    TensorImpl* n = stack.back();
    stack.pop_back();
    nodes.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(nodes.begin(), nodes.end(),
            [](const TensorImpl* a, const TensorImpl* b) { return a->id > b->id; });

  for (TensorImpl* n : nodes) {
    if (n->grad.empty()) n->grad.assign(static_cast<size_t>(n->numel()), 0.0);
    if (n == root.get()) {
      n->grad[0] += 1.0;
    }
    // Fan-out contributions accumulate in consumer creation order.
    std::stable_sort(n->pending.begin(), n->pending.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    for (auto& [cid, contrib] : n->pending) {
      (void)cid;
      for (size_t i = 0; i < contrib.size(); ++i) n->grad[i] += contrib[i];
    }
    n->pending.clear();
    n->pending.shrink_to_fit();
    if (n->backward_fn) n->backward_fn(*n);
  }
}

double Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u1 = 0.0;
  do {
    u1 = uniform();
  } while (u1 <= 1e-300);
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double theta = 6.283185307179586476925286766559 * u2;
  have_spare_ = true;
  spare_ = r * std::sin(theta);
  return r * std::cos(theta);
}

}  // namespace dabf

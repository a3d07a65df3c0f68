#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "dabf/ops.hpp"

namespace dabf {

namespace {

struct BroadcastPlan {
  Shape out_shape;
  std::vector<long long> a_stride;  // per out dim; 0 where broadcast
  std::vector<long long> b_stride;
  long long numel = 1;
  int rank = 0;
};

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  BroadcastPlan p;
  p.rank = static_cast<int>(std::max(a.size(), b.size()));
  p.out_shape.assign(static_cast<size_t>(p.rank), 1);
  for (int d = 0; d < p.rank; ++d) {
    int ad = d - (p.rank - static_cast<int>(a.size()));
    int bd = d - (p.rank - static_cast<int>(b.size()));
    int av = ad >= 0 ? a[static_cast<size_t>(ad)] : 1;
    int bv = bd >= 0 ? b[static_cast<size_t>(bd)] : 1;
    if (av != bv && av != 1 && bv != 1) {
      std::ostringstream os;
      os << op << ": shapes " << shape_str(a) << " and " << shape_str(b)
         << " differ at broadcast dimension " << d << " (" << av << " vs " << bv << ")";
      throw std::invalid_argument(os.str());
    }
    p.out_shape[static_cast<size_t>(d)] = std::max(av, bv);
  }
  auto strides_for = [&](const Shape& s) {
    std::vector<long long> native(s.size());
    long long acc = 1;
    for (int d = static_cast<int>(s.size()) - 1; d >= 0; --d) {
      native[static_cast<size_t>(d)] = acc;
      acc *= s[static_cast<size_t>(d)];
    }
    std::vector<long long> out(static_cast<size_t>(p.rank), 0);
    for (int d = 0; d < p.rank; ++d) {
      int sd = d - (p.rank - static_cast<int>(s.size()));
      if (sd >= 0 && s[static_cast<size_t>(sd)] != 1) out[static_cast<size_t>(d)] = native[static_cast<size_t>(sd)];
    }
    return out;
  };
  p.a_stride = strides_for(a);
  p.b_stride = strides_for(b);
  p.numel = shape_numel(p.out_shape);
  return p;
}

// Precomputed flat index maps out -> a and out -> b. Sizes here are desk
// scale; clarity over cleverness.
void broadcast_indices(const BroadcastPlan& p, std::vector<long long>& ai,
                       std::vector<long long>& bi) {
  ai.resize(static_cast<size_t>(p.numel));
  bi.resize(static_cast<size_t>(p.numel));
  std::vector<int> idx(static_cast<size_t>(p.rank), 0);
  long long a = 0, b = 0;
  for (long long o = 0; o < p.numel; ++o) {
    ai[static_cast<size_t>(o)] = a;
    bi[static_cast<size_t>(o)] = b;
    for (int d = p.rank - 1; d >= 0; --d) {
      size_t du = static_cast<size_t>(d);
      ++idx[du];
      a += p.a_stride[du];
      b += p.b_stride[du];
      if (idx[du] < p.out_shape[du]) break;
      a -= p.a_stride[du] * p.out_shape[du];
      b -= p.b_stride[du] * p.out_shape[du];
      idx[du] = 0;
    }
  }
}

using BinFn = double (*)(double, double);

Tensor binary_elementwise(const Tensor& a, const Tensor& b, const char* op, BinFn f,
                          BinFn dfda, BinFn dfdb, BinFn kink = nullptr) {
  BroadcastPlan p = plan_broadcast(a.shape(), b.shape(), op);
  std::vector<long long> ai, bi;
  broadcast_indices(p, ai, bi);
  const auto& av = a.data();
  const auto& bv = b.data();
  std::vector<double> out(static_cast<size_t>(p.numel));
  const bool monitor = KinkMonitor::instance().enabled && kink != nullptr;
  for (long long o = 0; o < p.numel; ++o) {
    double x = av[static_cast<size_t>(ai[static_cast<size_t>(o)])];
    double y = bv[static_cast<size_t>(bi[static_cast<size_t>(o)])];
    out[static_cast<size_t>(o)] = f(x, y);
    if (monitor) kink_note(kink(x, y));
  }
  auto a_impl = a.impl();
  auto b_impl = b.impl();
  return make_node(
      p.out_shape, std::move(out), op, {a, b},
      [a_impl, b_impl, ai = std::move(ai), bi = std::move(bi), dfda, dfdb](TensorImpl& self) {
        const auto& g = self.grad;
        if (a_impl->requires_grad) {
          std::vector<double> ga(a_impl->data.size(), 0.0);
          for (size_t o = 0; o < g.size(); ++o) {
            size_t ia = static_cast<size_t>(ai[o]);
            ga[ia] += g[o] * dfda(a_impl->data[ia], b_impl->data[static_cast<size_t>(bi[o])]);
          }
          push_grad(a_impl, self.id, std::move(ga));
        }
        if (b_impl->requires_grad) {
          std::vector<double> gb(b_impl->data.size(), 0.0);
          for (size_t o = 0; o < g.size(); ++o) {
            size_t ib = static_cast<size_t>(bi[o]);
            gb[ib] += g[o] * dfdb(a_impl->data[static_cast<size_t>(ai[o])], b_impl->data[ib]);
          }
          push_grad(b_impl, self.id, std::move(gb));
        }
      });
}

using UnFn = double (*)(double);

Tensor unary_elementwise(const Tensor& x, const char* op, UnFn f, UnFn dfdx,
                         UnFn kink = nullptr) {
  const auto& xv = x.data();
  std::vector<double> out(xv.size());
  const bool monitor = KinkMonitor::instance().enabled && kink != nullptr;
  for (size_t i = 0; i < xv.size(); ++i) {
    out[i] = f(xv[i]);
    if (monitor) kink_note(kink(xv[i]));
  }
  auto x_impl = x.impl();
  return make_node(x.shape(), std::move(out), op, {x}, [x_impl, dfdx](TensorImpl& self) {
    std::vector<double> gx(x_impl->data.size());
    for (size_t i = 0; i < gx.size(); ++i) gx[i] = self.grad[i] * dfdx(x_impl->data[i]);
    push_grad(x_impl, self.id, std::move(gx));
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); },
      [](double, double y) { return std::abs(y); });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "maximum", [](double x, double y) { return x >= y ? x : y; },
      [](double x, double y) { return x >= y ? 1.0 : 0.0; },
      [](double x, double y) { return x >= y ? 0.0 : 1.0; },
      [](double x, double y) { return std::abs(x - y); });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "minimum", [](double x, double y) { return x <= y ? x : y; },
      [](double x, double y) { return x <= y ? 1.0 : 0.0; },
      [](double x, double y) { return x <= y ? 0.0 : 1.0; },
      [](double x, double y) { return std::abs(x - y); });
}

Tensor add_scalar(const Tensor& a, double c) { return add(a, Tensor::scalar(c)); }
Tensor mul_scalar(const Tensor& a, double c) { return mul(a, Tensor::scalar(c)); }

Tensor neg(const Tensor& a) {
  return unary_elementwise(
      a, "neg", [](double x) { return -x; }, [](double) { return -1.0; });
}

Tensor relu(const Tensor& x) {
  return unary_elementwise(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v) { return v > 0.0 ? 1.0 : 0.0; }, [](double v) { return std::abs(v); });
}

Tensor sigmoid(const Tensor& x) {
  return unary_elementwise(
      x, "sigmoid", [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double v) {
        double s = 1.0 / (1.0 + std::exp(-v));
        return s * (1.0 - s);
      });
}

Tensor hard_sigmoid(const Tensor& x) {
  return unary_elementwise(
      x, "hard_sigmoid",
      [](double v) { return std::min(1.0, std::max(0.0, v / 6.0 + 0.5)); },
      [](double v) { return (v > -3.0 && v < 3.0) ? 1.0 / 6.0 : 0.0; },
      [](double v) { return std::min(std::abs(v - 3.0), std::abs(v + 3.0)); });
}

Tensor exp_t(const Tensor& x) {
  return unary_elementwise(
      x, "exp", [](double v) { return std::exp(v); }, [](double v) { return std::exp(v); });
}

Tensor sqrt_t(const Tensor& x) {
  return unary_elementwise(
      x, "sqrt", [](double v) { return std::sqrt(v); },
      [](double v) { return 0.5 / std::sqrt(v); }, [](double v) { return std::abs(v); });
}

Tensor atan_t(const Tensor& x) {
  return unary_elementwise(
      x, "atan", [](double v) { return std::atan(v); },
      [](double v) { return 1.0 / (1.0 + v * v); });
}

Tensor abs_t(const Tensor& x) {
  return unary_elementwise(
      x, "abs", [](double v) { return std::abs(v); },
      [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); },
      [](double v) { return std::abs(v); });
}

Tensor square(const Tensor& x) {
  return unary_elementwise(
      x, "square", [](double v) { return v * v; }, [](double v) { return 2.0 * v; });
}

Tensor softplus(const Tensor& x) {
  return unary_elementwise(
      x, "softplus",
      [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); },
      [](double v) { return 1.0 / (1.0 + std::exp(-v)); });
}

namespace {

Tensor reduce_impl(const Tensor& x, const std::set<int>& axes, bool mean, const char* op) {
  const Shape& s = x.shape();
  if (axes.empty()) throw std::invalid_argument(std::string(op) + ": empty axis set");
  for (int a : axes) {
    if (a < 0 || a >= x.rank()) {
      throw std::invalid_argument(std::string(op) + ": axis " + std::to_string(a) +
                                  " out of range for shape " + shape_str(s));
    }
  }
  Shape out_shape;
  for (int d = 0; d < x.rank(); ++d) {
    if (!axes.count(d)) out_shape.push_back(s[static_cast<size_t>(d)]);
  }
  long long out_n = shape_numel(out_shape);
  long long reduced = x.numel() / out_n;

  // out flat index per input flat index, row-major walk
  std::vector<long long> omap(static_cast<size_t>(x.numel()));
  std::vector<int> idx(static_cast<size_t>(x.rank()), 0);
  std::vector<long long> out_stride(static_cast<size_t>(x.rank()), 0);
  {
    long long acc = 1;
    for (int d = x.rank() - 1; d >= 0; --d) {
      if (!axes.count(d)) {
        out_stride[static_cast<size_t>(d)] = acc;
        acc *= s[static_cast<size_t>(d)];
      }
    }
  }
  long long o = 0;
  for (long long i = 0; i < x.numel(); ++i) {
    omap[static_cast<size_t>(i)] = o;
    for (int d = x.rank() - 1; d >= 0; --d) {
      size_t du = static_cast<size_t>(d);
      ++idx[du];
      o += out_stride[du];
      if (idx[du] < s[du]) break;
      o -= out_stride[du] * s[du];
      idx[du] = 0;
    }
  }

  std::vector<double> out(static_cast<size_t>(out_n), 0.0);
  const auto& xv = x.data();
  for (long long i = 0; i < x.numel(); ++i) out[static_cast<size_t>(omap[static_cast<size_t>(i)])] += xv[static_cast<size_t>(i)];
  double scale = mean ? 1.0 / static_cast<double>(reduced) : 1.0;
  if (mean) {
    for (double& v : out) v *= scale;
  }
  auto x_impl = x.impl();
  return make_node(out_shape, std::move(out), op, {x},
                   [x_impl, omap = std::move(omap), scale](TensorImpl& self) {
                     std::vector<double> gx(x_impl->data.size());
                     for (size_t i = 0; i < gx.size(); ++i) {
                       gx[i] = self.grad[static_cast<size_t>(omap[i])] * scale;
                     }
                     push_grad(x_impl, self.id, std::move(gx));
                   });
}

}  // namespace

Tensor reduce_mean(const Tensor& x, const std::set<int>& axes) {
  return reduce_impl(x, axes, true, "reduce_mean");
}

Tensor reduce_sum(const Tensor& x, const std::set<int>& axes) {
  return reduce_impl(x, axes, false, "reduce_sum");
}

Tensor sum_all(const Tensor& x) {
  std::set<int> axes;
  for (int d = 0; d < x.rank(); ++d) axes.insert(d);
  if (axes.empty()) return x;  // already scalar
  return reduce_sum(x, axes);
}

Tensor mean_all(const Tensor& x) {
  std::set<int> axes;
  for (int d = 0; d < x.rank(); ++d) axes.insert(d);
  if (axes.empty()) return x;
  return reduce_mean(x, axes);
}

Tensor reshape(const Tensor& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.numel()) {
    throw std::invalid_argument("reshape: cannot view " + shape_str(x.shape()) + " as " +
                                shape_str(new_shape));
  }
  auto x_impl = x.impl();
  return make_node(std::move(new_shape), x.data(), "reshape", {x}, [x_impl](TensorImpl& self) {
    push_grad(x_impl, self.id, self.grad);
  });
}

Tensor transpose2d(const Tensor& x) {
  if (x.rank() != 2) throw std::invalid_argument("transpose2d: expected rank 2, got " + shape_str(x.shape()));
  int m = x.dim(0), n = x.dim(1);
  std::vector<double> out(static_cast<size_t>(x.numel()));
  const auto& xv = x.data();
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) out[static_cast<size_t>(j) * m + i] = xv[static_cast<size_t>(i) * n + j];
  }
  auto x_impl = x.impl();
  return make_node(Shape{n, m}, std::move(out), "transpose2d", {x}, [x_impl, m, n](TensorImpl& self) {
    std::vector<double> gx(x_impl->data.size());
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) gx[static_cast<size_t>(i) * n + j] = self.grad[static_cast<size_t>(j) * m + i];
    }
    push_grad(x_impl, self.id, std::move(gx));
  });
}

Tensor stack0(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw std::invalid_argument("stack0: no tensors");
  const Shape& s0 = xs[0].shape();
  for (const Tensor& t : xs) {
    if (t.shape() != s0) {
      throw std::invalid_argument("stack0: shape " + shape_str(t.shape()) + " differs from " +
                                  shape_str(s0));
    }
  }
  long long per = xs[0].numel();
  Shape out_shape;
  out_shape.push_back(static_cast<int>(xs.size()));
  out_shape.insert(out_shape.end(), s0.begin(), s0.end());
  std::vector<double> out;
  out.reserve(static_cast<size_t>(per) * xs.size());
  for (const Tensor& t : xs) out.insert(out.end(), t.data().begin(), t.data().end());

  std::vector<std::shared_ptr<TensorImpl>> impls;
  for (const Tensor& t : xs) impls.push_back(t.impl());
  return make_node(out_shape, std::move(out), "stack0", xs, [impls, per](TensorImpl& self) {
    for (size_t i = 0; i < impls.size(); ++i) {
      if (!impls[i]->requires_grad) continue;
      std::vector<double> g(self.grad.begin() + static_cast<long long>(i) * per,
                            self.grad.begin() + static_cast<long long>(i + 1) * per);
      push_grad(impls[i], self.id, std::move(g));
    }
  });
}

Tensor concat0(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat0: no tensors");
  Shape rest(xs[0].shape().begin() + 1, xs[0].shape().end());
  int total0 = 0;
  for (const Tensor& t : xs) {
    Shape r(t.shape().begin() + 1, t.shape().end());
    if (r != rest) {
      throw std::invalid_argument("concat0: trailing shape " + shape_str(t.shape()) +
                                  " incompatible with " + shape_str(xs[0].shape()));
    }
    total0 += t.dim(0);
  }
  Shape out_shape = xs[0].shape();
  out_shape[0] = total0;
  std::vector<double> out;
  out.reserve(static_cast<size_t>(shape_numel(out_shape)));
  for (const Tensor& t : xs) out.insert(out.end(), t.data().begin(), t.data().end());
  std::vector<std::shared_ptr<TensorImpl>> impls;
  std::vector<long long> sizes;
  for (const Tensor& t : xs) {
    impls.push_back(t.impl());
    sizes.push_back(t.numel());
  }
  return make_node(out_shape, std::move(out), "concat0", xs, [impls, sizes](TensorImpl& self) {
    long long off = 0;
    for (size_t i = 0; i < impls.size(); ++i) {
      if (impls[i]->requires_grad) {
        std::vector<double> g(self.grad.begin() + off, self.grad.begin() + off + sizes[i]);
        push_grad(impls[i], self.id, std::move(g));
      }
      off += sizes[i];
    }
  });
}

Tensor index_select0(const Tensor& x, int i) {
  if (x.rank() < 1 || i < 0 || i >= x.dim(0)) {
    throw std::invalid_argument("index_select0: index " + std::to_string(i) +
                                " out of range for shape " + shape_str(x.shape()));
  }
  Shape out_shape(x.shape().begin() + 1, x.shape().end());
  long long per = shape_numel(out_shape);
  std::vector<double> out(x.data().begin() + i * per, x.data().begin() + (i + 1) * per);
  auto x_impl = x.impl();
  return make_node(out_shape, std::move(out), "index_select0", {x}, [x_impl, i, per](TensorImpl& self) {
    std::vector<double> gx(x_impl->data.size(), 0.0);
    for (long long k = 0; k < per; ++k) gx[static_cast<size_t>(i * per + k)] = self.grad[static_cast<size_t>(k)];
    push_grad(x_impl, self.id, std::move(gx));
  });
}

Tensor slice1d(const Tensor& x, int offset, int len) {
  if (x.rank() != 1 || offset < 0 || len <= 0 || offset + len > x.dim(0)) {
    throw std::invalid_argument("slice1d: range [" + std::to_string(offset) + "," +
                                std::to_string(offset + len) + ") invalid for shape " +
                                shape_str(x.shape()));
  }
  std::vector<double> out(x.data().begin() + offset, x.data().begin() + offset + len);
  auto x_impl = x.impl();
  return make_node(Shape{len}, std::move(out), "slice1d", {x}, [x_impl, offset, len](TensorImpl& self) {
    std::vector<double> gx(x_impl->data.size(), 0.0);
    for (int k = 0; k < len; ++k) gx[static_cast<size_t>(offset + k)] = self.grad[static_cast<size_t>(k)];
    push_grad(x_impl, self.id, std::move(gx));
  });
}

Tensor index_flat(const Tensor& x, long long flat) {
  if (flat < 0 || flat >= x.numel()) {
    throw std::invalid_argument("index_flat: index " + std::to_string(flat) +
                                " out of range for shape " + shape_str(x.shape()));
  }
  std::vector<double> out{x.data()[static_cast<size_t>(flat)]};
  auto x_impl = x.impl();
  return make_node(Shape{}, std::move(out), "index_flat", {x}, [x_impl, flat](TensorImpl& self) {
    std::vector<double> gx(x_impl->data.size(), 0.0);
    gx[static_cast<size_t>(flat)] = self.grad[0];
    push_grad(x_impl, self.id, std::move(gx));
  });
}

Tensor bce_with_logits(const Tensor& logits, const std::vector<double>& targets) {
  if (static_cast<long long>(targets.size()) != logits.numel()) {
    throw std::invalid_argument("bce_with_logits: target count " + std::to_string(targets.size()) +
                                " does not match logits " + shape_str(logits.shape()));
  }
  const auto& xv = logits.data();
  std::vector<double> out(xv.size());
  for (size_t i = 0; i < xv.size(); ++i) {
    double x = xv[i];
    out[i] = std::max(x, 0.0) - x * targets[i] + std::log1p(std::exp(-std::abs(x)));
  }
  auto impl = logits.impl();
  return make_node(logits.shape(), std::move(out), "bce_with_logits", {logits},
                   [impl, targets](TensorImpl& self) {
                     std::vector<double> gx(impl->data.size());
                     for (size_t i = 0; i < gx.size(); ++i) {
                       double s = 1.0 / (1.0 + std::exp(-impl->data[i]));
                       gx[i] = self.grad[i] * (s - targets[i]);
                     }
                     push_grad(impl, self.id, std::move(gx));
                   });
}

Tensor detach(const Tensor& x) { return Tensor::from(x.shape(), x.data(), false); }

}  // namespace dabf

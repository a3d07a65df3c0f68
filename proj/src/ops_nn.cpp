#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "dabf/ops.hpp"

namespace dabf {

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride,
              int padding) {
  if (input.rank() != 4) {
    throw std::invalid_argument("conv2d: input must be N×C×H×W, got " + shape_str(input.shape()));
  }
  if (weight.rank() != 4 || weight.dim(2) != weight.dim(3)) {
    throw std::invalid_argument("conv2d: weight must be O×I×K×K, got " + shape_str(weight.shape()));
  }
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int oc = weight.dim(0), ic = weight.dim(1), k = weight.dim(2);
  if (ic != c) {
    std::ostringstream os;
    os << "conv2d: input channel dimension " << c << " does not match weight input channels "
       << ic;
    throw std::invalid_argument(os.str());
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != oc)) {
    std::ostringstream os;
    os << "conv2d: bias dimension " << shape_str(bias.shape()) << " does not match output channels "
       << oc;
    throw std::invalid_argument(os.str());
  }
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  const int oh = (h + 2 * padding - k) / stride + 1;
  const int ow = (w + 2 * padding - k) / stride + 1;
  if (h + 2 * padding < k || w + 2 * padding < k) {
    std::ostringstream os;
    os << "conv2d: spatial dimensions " << h << "x" << w << " with padding " << padding
       << " admit no placement of kernel " << k;
    throw std::invalid_argument(os.str());
  }

  const auto& in = input.data();
  const auto& wv = weight.data();
  std::vector<double> out(static_cast<size_t>(n) * oc * oh * ow, 0.0);
  auto in_at = [&](int ni, int ci, int y, int x) {
    return in[((static_cast<size_t>(ni) * c + ci) * h + y) * w + x];
  };
  for (int ni = 0; ni < n; ++ni) {
    for (int o = 0; o < oc; ++o) {
      double b = bias.defined() ? bias.data()[static_cast<size_t>(o)] : 0.0;
      for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
          double acc = b;
          for (int i = 0; i < c; ++i) {
            for (int ky = 0; ky < k; ++ky) {
              int iy = y * stride + ky - padding;
              if (iy < 0 || iy >= h) continue;
              const double* wrow = &wv[((static_cast<size_t>(o) * c + i) * k + ky) * k];
              for (int kx = 0; kx < k; ++kx) {
                int ix = x * stride + kx - padding;
                if (ix < 0 || ix >= w) continue;
                acc += in_at(ni, i, iy, ix) * wrow[kx];
              }
            }
          }
          out[((static_cast<size_t>(ni) * oc + o) * oh + y) * ow + x] = acc;
        }
      }
    }
  }

  auto in_impl = input.impl();
  auto w_impl = weight.impl();
  auto b_impl = bias.defined() ? bias.impl() : nullptr;
  std::vector<Tensor> parents{input, weight};
  if (bias.defined()) parents.push_back(bias);
  return make_node(
      Shape{n, oc, oh, ow}, std::move(out), "conv2d", std::move(parents),
      [in_impl, w_impl, b_impl, n, c, h, w, oc, k, oh, ow, stride, padding](TensorImpl& self) {
        const auto& g = self.grad;
        const auto& in = in_impl->data;
        const auto& wv = w_impl->data;
        std::vector<double> gin, gw, gb;
        if (in_impl->requires_grad) gin.assign(in.size(), 0.0);
        if (w_impl->requires_grad) gw.assign(wv.size(), 0.0);
        if (b_impl && b_impl->requires_grad) gb.assign(static_cast<size_t>(oc), 0.0);
        for (int ni = 0; ni < n; ++ni) {
          for (int o = 0; o < oc; ++o) {
            for (int y = 0; y < oh; ++y) {
              for (int x = 0; x < ow; ++x) {
                double go = g[((static_cast<size_t>(ni) * oc + o) * oh + y) * ow + x];
                if (go == 0.0) continue;
                if (!gb.empty()) gb[static_cast<size_t>(o)] += go;
                for (int i = 0; i < c; ++i) {
                  for (int ky = 0; ky < k; ++ky) {
                    int iy = y * stride + ky - padding;
                    if (iy < 0 || iy >= h) continue;
                    for (int kx = 0; kx < k; ++kx) {
                      int ix = x * stride + kx - padding;
                      if (ix < 0 || ix >= w) continue;
                      size_t ii = ((static_cast<size_t>(ni) * c + i) * h + iy) * w + ix;
                      size_t wi = ((static_cast<size_t>(o) * c + i) * k + ky) * k + kx;
                      if (!gin.empty()) gin[ii] += go * wv[wi];
                      if (!gw.empty()) gw[wi] += go * in[ii];
                    }
                  }
                }
              }
            }
          }
        }
        if (!gin.empty()) push_grad(in_impl, self.id, std::move(gin));
        if (!gw.empty()) push_grad(w_impl, self.id, std::move(gw));
        if (b_impl && !gb.empty()) push_grad(b_impl, self.id, std::move(gb));
      });
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  if (input.rank() != 2 || weight.rank() != 2) {
    throw std::invalid_argument("linear: expected input N×D and weight D×E, got " +
                                shape_str(input.shape()) + " and " + shape_str(weight.shape()));
  }
  const int n = input.dim(0), d = input.dim(1), e = weight.dim(1);
  if (weight.dim(0) != d) {
    std::ostringstream os;
    os << "linear: inner dimension mismatch, input has " << d << " features but weight expects "
       << weight.dim(0);
    throw std::invalid_argument(os.str());
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != e)) {
    throw std::invalid_argument("linear: bias shape " + shape_str(bias.shape()) +
                                " does not match output width " + std::to_string(e));
  }
  const auto& in = input.data();
  const auto& wv = weight.data();
  std::vector<double> out(static_cast<size_t>(n) * e);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < e; ++j) {
      double acc = bias.defined() ? bias.data()[static_cast<size_t>(j)] : 0.0;
      for (int q = 0; q < d; ++q) acc += in[static_cast<size_t>(i) * d + q] * wv[static_cast<size_t>(q) * e + j];
      out[static_cast<size_t>(i) * e + j] = acc;
    }
  }
  auto in_impl = input.impl();
  auto w_impl = weight.impl();
  auto b_impl = bias.defined() ? bias.impl() : nullptr;
  std::vector<Tensor> parents{input, weight};
  if (bias.defined()) parents.push_back(bias);
  return make_node(Shape{n, e}, std::move(out), "linear", std::move(parents),
                   [in_impl, w_impl, b_impl, n, d, e](TensorImpl& self) {
                     const auto& g = self.grad;
                     if (in_impl->requires_grad) {
                       std::vector<double> gin(in_impl->data.size(), 0.0);
                       for (int i = 0; i < n; ++i) {
                         for (int j = 0; j < e; ++j) {
                           double go = g[static_cast<size_t>(i) * e + j];
                           for (int q = 0; q < d; ++q) {
                             gin[static_cast<size_t>(i) * d + q] += go * w_impl->data[static_cast<size_t>(q) * e + j];
                           }
                         }
                       }
                       push_grad(in_impl, self.id, std::move(gin));
                     }
                     if (w_impl->requires_grad) {
                       std::vector<double> gw(w_impl->data.size(), 0.0);
                       for (int i = 0; i < n; ++i) {
                         for (int j = 0; j < e; ++j) {
                           double go = g[static_cast<size_t>(i) * e + j];
                           for (int q = 0; q < d; ++q) {
                             gw[static_cast<size_t>(q) * e + j] += go * in_impl->data[static_cast<size_t>(i) * d + q];
                           }
                         }
                       }
                       push_grad(w_impl, self.id, std::move(gw));
                     }
                     if (b_impl && b_impl->requires_grad) {
                       std::vector<double> gb(static_cast<size_t>(e), 0.0);
                       for (int i = 0; i < n; ++i) {
                         for (int j = 0; j < e; ++j) gb[static_cast<size_t>(j)] += g[static_cast<size_t>(i) * e + j];
                       }
                       push_grad(b_impl, self.id, std::move(gb));
                     }
                   });
}

Tensor maxpool2d(const Tensor& input, int k, int stride, int padding) {
  if (input.rank() != 3) {
    throw std::invalid_argument("maxpool2d: input must be C×H×W, got " + shape_str(input.shape()));
  }
  const int c = input.dim(0), h = input.dim(1), w = input.dim(2);
  const int oh = (h + 2 * padding - k) / stride + 1;
  const int ow = (w + 2 * padding - k) / stride + 1;
  if (oh < 1 || ow < 1) throw std::invalid_argument("maxpool2d: window larger than padded input");
  const auto& in = input.data();
  std::vector<double> out(static_cast<size_t>(c) * oh * ow);
  std::vector<long long> argmax(out.size());
  const bool monitor = KinkMonitor::instance().enabled;
  for (int ci = 0; ci < c; ++ci) {
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        double best = -1e300, second = -1e300;
        long long best_i = -1;
        for (int ky = 0; ky < k; ++ky) {
          int iy = y * stride + ky - padding;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < k; ++kx) {
            int ix = x * stride + kx - padding;
            if (ix < 0 || ix >= w) continue;
            long long ii = (static_cast<long long>(ci) * h + iy) * w + ix;
            double v = in[static_cast<size_t>(ii)];
            if (v > best) {  // strict: first max wins
              second = best;
              best = v;
              best_i = ii;
            } else if (v > second) {
              second = v;
            }
          }
        }
        if (monitor && second > -1e300) kink_note(best - second);
        size_t oi = (static_cast<size_t>(ci) * oh + y) * ow + x;
        out[oi] = best;
        argmax[oi] = best_i;
      }
    }
  }
  auto in_impl = input.impl();
  return make_node(Shape{c, oh, ow}, std::move(out), "maxpool2d", {input},
                   [in_impl, argmax = std::move(argmax)](TensorImpl& self) {
                     std::vector<double> gin(in_impl->data.size(), 0.0);
                     for (size_t i = 0; i < argmax.size(); ++i) {
                       gin[static_cast<size_t>(argmax[i])] += self.grad[i];
                     }
                     push_grad(in_impl, self.id, std::move(gin));
                   });
}

Tensor bilinear_sample(const Tensor& input, const Tensor& points) {
  if (input.rank() != 3) {
    throw std::invalid_argument("bilinear_sample: input must be C×H×W, got " +
                                shape_str(input.shape()));
  }
  if (points.rank() != 2 || points.dim(1) != 2) {
    throw std::invalid_argument("bilinear_sample: points must be P×2, got " +
                                shape_str(points.shape()));
  }
  const int c = input.dim(0), h = input.dim(1), w = input.dim(2);
  const int pn = points.dim(0);
  const auto& in = input.data();
  const auto& pv = points.data();
  auto value = [&](int ci, long long y, long long x) -> double {
    if (y < 0 || y >= h || x < 0 || x >= w) return 0.0;
    return in[(static_cast<size_t>(ci) * h + y) * w + x];
  };
  std::vector<double> out(static_cast<size_t>(c) * pn);
  const bool monitor = KinkMonitor::instance().enabled;
  for (int p = 0; p < pn; ++p) {
    double y = pv[static_cast<size_t>(p) * 2];
    double x = pv[static_cast<size_t>(p) * 2 + 1];
    long long y0 = static_cast<long long>(std::floor(y));
    long long x0 = static_cast<long long>(std::floor(x));
    double wy = y - static_cast<double>(y0);
    double wx = x - static_cast<double>(x0);
    if (monitor && points.requires_grad()) {
      // gradient w.r.t. coordinates is only piecewise smooth across cells
      kink_note(std::min({wy, 1.0 - wy, wx, 1.0 - wx}));
    }
    for (int ci = 0; ci < c; ++ci) {
      double v00 = value(ci, y0, x0), v01 = value(ci, y0, x0 + 1);
      double v10 = value(ci, y0 + 1, x0), v11 = value(ci, y0 + 1, x0 + 1);
      out[static_cast<size_t>(ci) * pn + p] = (1 - wy) * ((1 - wx) * v00 + wx * v01) +
                                              wy * ((1 - wx) * v10 + wx * v11);
    }
  }
  auto in_impl = input.impl();
  auto pt_impl = points.impl();
  return make_node(
      Shape{c, pn}, std::move(out), "bilinear_sample", {input, points},
      [in_impl, pt_impl, c, h, w, pn](TensorImpl& self) {
        const auto& g = self.grad;
        const auto& in = in_impl->data;
        const auto& pv = pt_impl->data;
        auto value = [&](int ci, long long y, long long x) -> double {
          if (y < 0 || y >= h || x < 0 || x >= w) return 0.0;
          return in[(static_cast<size_t>(ci) * h + y) * w + x];
        };
        std::vector<double> gin, gpt;
        if (in_impl->requires_grad) gin.assign(in.size(), 0.0);
        if (pt_impl->requires_grad) gpt.assign(pv.size(), 0.0);
        for (int p = 0; p < pn; ++p) {
          double y = pv[static_cast<size_t>(p) * 2];
          double x = pv[static_cast<size_t>(p) * 2 + 1];
          long long y0 = static_cast<long long>(std::floor(y));
          long long x0 = static_cast<long long>(std::floor(x));
          double wy = y - static_cast<double>(y0);
          double wx = x - static_cast<double>(x0);
          for (int ci = 0; ci < c; ++ci) {
            double go = g[static_cast<size_t>(ci) * pn + p];
            if (go == 0.0) continue;
            if (!gin.empty()) {
              auto scatter = [&](long long yy, long long xx, double weight) {
                if (yy < 0 || yy >= h || xx < 0 || xx >= w) return;
                gin[(static_cast<size_t>(ci) * h + yy) * w + xx] += go * weight;
              };
              scatter(y0, x0, (1 - wy) * (1 - wx));
              scatter(y0, x0 + 1, (1 - wy) * wx);
              scatter(y0 + 1, x0, wy * (1 - wx));
              scatter(y0 + 1, x0 + 1, wy * wx);
            }
            if (!gpt.empty()) {
              double v00 = value(ci, y0, x0), v01 = value(ci, y0, x0 + 1);
              double v10 = value(ci, y0 + 1, x0), v11 = value(ci, y0 + 1, x0 + 1);
              double ddy = (1 - wx) * (v10 - v00) + wx * (v11 - v01);
              double ddx = (1 - wy) * (v01 - v00) + wy * (v11 - v10);
              gpt[static_cast<size_t>(p) * 2] += go * ddy;
              gpt[static_cast<size_t>(p) * 2 + 1] += go * ddx;
            }
          }
        }
        if (!gin.empty()) push_grad(in_impl, self.id, std::move(gin));
        if (!gpt.empty()) push_grad(pt_impl, self.id, std::move(gpt));
      });
}

Tensor resize_up2(const Tensor& chw) {
  if (chw.rank() != 3) throw std::invalid_argument("resize_up2: input must be C×H×W");
  const int c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  const auto& in = chw.data();
  std::vector<double> out(static_cast<size_t>(c) * 4 * h * w);
  for (int ci = 0; ci < c; ++ci) {
    for (int y = 0; y < 2 * h; ++y) {
      for (int x = 0; x < 2 * w; ++x) {
        out[(static_cast<size_t>(ci) * 2 * h + y) * 2 * w + x] =
            in[(static_cast<size_t>(ci) * h + y / 2) * w + x / 2];
      }
    }
  }
  auto impl = chw.impl();
  return make_node(Shape{c, 2 * h, 2 * w}, std::move(out), "resize_up2", {chw},
                   [impl, c, h, w](TensorImpl& self) {
                     std::vector<double> gin(impl->data.size(), 0.0);
                     for (int ci = 0; ci < c; ++ci) {
                       for (int y = 0; y < 2 * h; ++y) {
                         for (int x = 0; x < 2 * w; ++x) {
                           gin[(static_cast<size_t>(ci) * h + y / 2) * w + x / 2] +=
                               self.grad[(static_cast<size_t>(ci) * 2 * h + y) * 2 * w + x];
                         }
                       }
                     }
                     push_grad(impl, self.id, std::move(gin));
                   });
}

Tensor resize_down2(const Tensor& chw) {
  if (chw.rank() != 3) throw std::invalid_argument("resize_down2: input must be C×H×W");
  const int c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  if (h % 2 != 0 || w % 2 != 0) {
    throw std::invalid_argument("resize_down2: dimensions must be even, got " +
                                shape_str(chw.shape()));
  }
  const int oh = h / 2, ow = w / 2;
  const auto& in = chw.data();
  std::vector<double> out(static_cast<size_t>(c) * oh * ow);
  for (int ci = 0; ci < c; ++ci) {
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        out[(static_cast<size_t>(ci) * oh + y) * ow + x] =
            in[(static_cast<size_t>(ci) * h + 2 * y) * w + 2 * x];
      }
    }
  }
  auto impl = chw.impl();
  return make_node(Shape{c, oh, ow}, std::move(out), "resize_down2", {chw},
                   [impl, c, h, w, oh, ow](TensorImpl& self) {
                     std::vector<double> gin(impl->data.size(), 0.0);
                     for (int ci = 0; ci < c; ++ci) {
                       for (int y = 0; y < oh; ++y) {
                         for (int x = 0; x < ow; ++x) {
                           gin[(static_cast<size_t>(ci) * h + 2 * y) * w + 2 * x] =
                               self.grad[(static_cast<size_t>(ci) * oh + y) * ow + x];
                         }
                       }
                     }
                     push_grad(impl, self.id, std::move(gin));
                   });
}

Tensor resize_to(const Tensor& chw, int out_h, int out_w) {
  if (chw.rank() != 3) throw std::invalid_argument("resize_to: input must be C×H×W");
  Tensor cur = chw;
  int h = chw.dim(1), w = chw.dim(2);
  if (h == out_h && w == out_w) return cur;
  if (out_h > h) {
    if (out_h % h != 0 || out_w % w != 0 || out_h / h != out_w / w) {
      throw std::invalid_argument("resize_to: " + shape_str(chw.shape()) + " -> " +
                                  std::to_string(out_h) + "x" + std::to_string(out_w) +
                                  " is not a uniform power-of-two upscale");
    }
    while (h < out_h) {
      cur = resize_up2(cur);
      h *= 2;
      w *= 2;
    }
  } else {
    if (h % out_h != 0 || w % out_w != 0 || h / out_h != w / out_w) {
      throw std::invalid_argument("resize_to: " + shape_str(chw.shape()) + " -> " +
                                  std::to_string(out_h) + "x" + std::to_string(out_w) +
                                  " is not a uniform power-of-two downscale");
    }
    while (h > out_h) {
      cur = resize_down2(cur);
      h /= 2;
      w /= 2;
    }
  }
  if (h != out_h || w != out_w) {
    throw std::invalid_argument("resize_to: factor between " + shape_str(chw.shape()) + " and " +
                                std::to_string(out_h) + "x" + std::to_string(out_w) +
                                " is not a power of two");
  }
  return cur;
}

Tensor fused_weighted_sum(const std::vector<Tensor>& inputs, const Tensor& weights, double eps) {
  if (inputs.size() < 2) {
    throw std::invalid_argument("fused_weighted_sum: fusion nodes need at least 2 inputs, got " +
                                std::to_string(inputs.size()));
  }
  if (weights.rank() != 1 || weights.dim(0) != static_cast<int>(inputs.size())) {
    throw std::invalid_argument("fused_weighted_sum: weight shape " + shape_str(weights.shape()) +
                                " does not match " + std::to_string(inputs.size()) + " inputs");
  }
  const Shape& s = inputs[0].shape();
  for (const Tensor& t : inputs) {
    if (t.shape() != s) {
      throw std::invalid_argument("fused_weighted_sum: input shape " + shape_str(t.shape()) +
                                  " differs from " + shape_str(s));
    }
  }
  const size_t n = inputs.size();
  const size_t m = static_cast<size_t>(inputs[0].numel());
  std::vector<double> r(n), coeff(n);
  double total = 0.0;
  const bool monitor = KinkMonitor::instance().enabled;
  for (size_t i = 0; i < n; ++i) {
    double wv = weights.data()[i];
    if (monitor) kink_note(std::abs(wv));
    r[i] = wv > 0.0 ? wv : 0.0;
    total += r[i];
  }
  const double denom = eps + total;
  for (size_t i = 0; i < n; ++i) coeff[i] = r[i] / denom;

  std::vector<double> out(m, 0.0);
  for (size_t i = 0; i < n; ++i) {
    const auto& iv = inputs[i].data();
    for (size_t j = 0; j < m; ++j) out[j] += coeff[i] * iv[j];
  }

  std::vector<std::shared_ptr<TensorImpl>> impls;
  for (const Tensor& t : inputs) impls.push_back(t.impl());
  auto w_impl = weights.impl();
  std::vector<Tensor> parents = inputs;
  parents.push_back(weights);
  return make_node(
      s, std::move(out), "fused_weighted_sum", std::move(parents),
      [impls, w_impl, coeff, r, denom, n, m](TensorImpl& self) {
        const auto& g = self.grad;
        for (size_t i = 0; i < n; ++i) {
          if (!impls[i]->requires_grad) continue;
          std::vector<double> gi(m);
          for (size_t j = 0; j < m; ++j) gi[j] = g[j] * coeff[i];
          push_grad(impls[i], self.id, std::move(gi));
        }
        if (w_impl->requires_grad) {
          // dO/dr_i = (I_i - O_preconv... here O itself) scaled by quotient rule
          std::vector<double> gw(n, 0.0);
          for (size_t i = 0; i < n; ++i) {
            if (w_impl->data[i] <= 0.0) continue;  // relu subgradient
            double acc = 0.0;
            const auto& ii = impls[i]->data;
            for (size_t j = 0; j < m; ++j) {
              // d out_j / d r_i = I_i_j / denom - sum_k r_k I_k_j / denom^2
              double weighted = 0.0;
              for (size_t q = 0; q < n; ++q) weighted += r[q] * impls[q]->data[j];
              acc += g[j] * (ii[j] / denom - weighted / (denom * denom));
            }
            gw[i] = acc;
          }
          push_grad(w_impl, self.id, std::move(gw));
        }
      });
}

}  // namespace dabf

#include "mevo/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace mevo::ag {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ColMat = Eigen::MatrixXd;

Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  for (const auto& p : parents) {
    n->parents.push_back(p.node());
    if (p.requires_grad()) n->requires_grad = true;
  }
  if (n->requires_grad) n->backprop = std::move(backprop);
  return Var(std::move(n));
}

void accumulate(const NodePtr& p, const Tensor& g) {
  if (!p->requires_grad) return;
  p->ensure_grad();
  double* dst = p->grad.data();
  const double* src = g.data();
  const std::int64_t n = g.size();
  for (std::int64_t i = 0; i < n; ++i) dst[i] += src[i];
}

}  // namespace

void backward(const Var& loss) {
  if (!loss.defined()) throw std::invalid_argument("backward: undefined loss");
  if (loss.value().size() != 1) throw std::invalid_argument("backward: loss must be scalar");
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS over the requires_grad subgraph.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  struct Item {
    Node* node;
    std::size_t next_parent;
  };
  std::vector<Item> stack;
  stack.push_back({loss.node().get(), 0});
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    Item& top = stack.back();
    if (top.next_parent < top.node->parents.size()) {
      Node* p = top.node->parents[top.next_parent++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(top.node);
      stack.pop_back();
    }
  }

  for (Node* n : order) n->ensure_grad();
  loss.node()->grad.fill(0.0);
  loss.node()->grad[0] = 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop) n->backprop(*n);
  }
}

// ---------------- elementwise ----------------

Var add(const Var& a, const Var& b) {
  check_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  const double* pb = b.value().data();
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] += pb[i];
  return make_node(std::move(out), {a, b}, [a, b](Node& n) {
    accumulate(a.node(), n.grad);
    accumulate(b.node(), n.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  const double* pb = b.value().data();
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] -= pb[i];
  return make_node(std::move(out), {a, b}, [a, b](Node& n) {
    accumulate(a.node(), n.grad);
    if (b.requires_grad()) {
      b.node()->ensure_grad();
      double* dst = b.node()->grad.data();
      for (std::int64_t i = 0; i < n.grad.size(); ++i) dst[i] -= n.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  const double* pb = b.value().data();
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= pb[i];
  return make_node(std::move(out), {a, b}, [a, b](Node& n) {
    if (a.requires_grad()) {
      a.node()->ensure_grad();
      double* dst = a.node()->grad.data();
      const double* pb = b.value().data();
      for (std::int64_t i = 0; i < n.grad.size(); ++i) dst[i] += n.grad[i] * pb[i];
    }
    if (b.requires_grad()) {
      b.node()->ensure_grad();
      double* dst = b.node()->grad.data();
      const double* pa = a.value().data();
      for (std::int64_t i = 0; i < n.grad.size(); ++i) dst[i] += n.grad[i] * pa[i];
    }
  });
}

Var scale(const Var& a, double c) {
  Tensor out = a.value();
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= c;
  return make_node(std::move(out), {a}, [a, c](Node& n) {
    if (!a.requires_grad()) return;
    a.node()->ensure_grad();
    double* dst = a.node()->grad.data();
    for (std::int64_t i = 0; i < n.grad.size(); ++i) dst[i] += c * n.grad[i];
  });
}

Var add_scalar(const Var& a, double c) {
  Tensor out = a.value();
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] += c;
  return make_node(std::move(out), {a}, [a](Node& n) { accumulate(a.node(), n.grad); });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var abs(const Var& a) {
  Tensor out = a.value();
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = std::fabs(out[i]);
  return make_node(std::move(out), {a}, [a](Node& n) {
    if (!a.requires_grad()) return;
    a.node()->ensure_grad();
    double* dst = a.node()->grad.data();
    const double* pa = a.value().data();
    for (std::int64_t i = 0; i < n.grad.size(); ++i) {
      const double s = pa[i] > 0 ? 1.0 : (pa[i] < 0 ? -1.0 : 0.0);
      dst[i] += s * n.grad[i];
    }
  });
}

Var elu(const Var& a) {
  Tensor out = a.value();
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = out[i] > 0 ? out[i] : std::expm1(out[i]);
  return make_node(std::move(out), {a}, [a](Node& n) {
    if (!a.requires_grad()) return;
    a.node()->ensure_grad();
    double* dst = a.node()->grad.data();
    const double* pa = a.value().data();
    for (std::int64_t i = 0; i < n.grad.size(); ++i) {
      const double d = pa[i] > 0 ? 1.0 : std::exp(pa[i]);
      dst[i] += d * n.grad[i];
    }
  });
}

Var sigmoid(const Var& a) {
  Tensor out = a.value();
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
  Tensor cached = out;
  return make_node(std::move(out), {a}, [a, cached](Node& n) {
    if (!a.requires_grad()) return;
    a.node()->ensure_grad();
    double* dst = a.node()->grad.data();
    const double* s = cached.data();
    for (std::int64_t i = 0; i < n.grad.size(); ++i) dst[i] += s[i] * (1.0 - s[i]) * n.grad[i];
  });
}

Var logit_clamped(const Var& a, double eps) {
  if (eps <= 0.0 || eps >= 0.5) throw std::invalid_argument("logit_clamped: eps must be in (0, 0.5)");
  Tensor out = a.value();
  for (std::int64_t i = 0; i < out.size(); ++i) {
    const double x = std::clamp(out[i], eps, 1.0 - eps);
    out[i] = std::log(x / (1.0 - x));
  }
  return make_node(std::move(out), {a}, [a, eps](Node& n) {
    if (!a.requires_grad()) return;
    a.node()->ensure_grad();
    double* dst = a.node()->grad.data();
    const double* pa = a.value().data();
    for (std::int64_t i = 0; i < n.grad.size(); ++i) {
      if (pa[i] <= eps || pa[i] >= 1.0 - eps) continue;  // clamped: flat
      dst[i] += n.grad[i] / (pa[i] * (1.0 - pa[i]));
    }
  });
}

// ---------------- reductions ----------------

Var sum(const Var& a) {
  Tensor out = Tensor::scalar(a.value().sum());
  return make_node(std::move(out), {a}, [a](Node& n) {
    if (!a.requires_grad()) return;
    a.node()->ensure_grad();
    double* dst = a.node()->grad.data();
    const double g = n.grad[0];
    for (std::int64_t i = 0; i < a.value().size(); ++i) dst[i] += g;
  });
}

Var mean(const Var& a) {
  if (a.value().size() == 0) throw std::invalid_argument("mean: empty tensor");
  const double inv = 1.0 / static_cast<double>(a.value().size());
  Tensor out = Tensor::scalar(a.value().sum() * inv);
  return make_node(std::move(out), {a}, [a, inv](Node& n) {
    if (!a.requires_grad()) return;
    a.node()->ensure_grad();
    double* dst = a.node()->grad.data();
    const double g = n.grad[0] * inv;
    for (std::int64_t i = 0; i < a.value().size(); ++i) dst[i] += g;
  });
}

// ---------------- channel / shape ops ----------------

Var concat_channels(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_channels: no inputs");
  const int h = xs[0].value().dim(1), w = xs[0].value().dim(2);
  int ctotal = 0;
  for (const auto& x : xs) {
    if (x.value().rank() != 3 || x.value().dim(1) != h || x.value().dim(2) != w)
      throw std::invalid_argument("concat_channels: spatial dims mismatch");
    ctotal += x.value().dim(0);
  }
  Tensor out({ctotal, h, w});
  std::int64_t off = 0;
  for (const auto& x : xs) {
    const std::int64_t n = x.value().size();
    std::copy(x.value().data(), x.value().data() + n, out.data() + off);
    off += n;
  }
  std::vector<Var> parents = xs;
  return make_node(std::move(out), parents, [xs](Node& n) {
    std::int64_t off = 0;
    for (const auto& x : xs) {
      const std::int64_t cnt = x.value().size();
      if (x.requires_grad()) {
        x.node()->ensure_grad();
        double* dst = x.node()->grad.data();
        const double* src = n.grad.data() + off;
        for (std::int64_t i = 0; i < cnt; ++i) dst[i] += src[i];
      }
      off += cnt;
    }
  });
}

Var slice_channels(const Var& x, int start, int count) {
  const Tensor& v = x.value();
  if (v.rank() != 3) throw std::invalid_argument("slice_channels: expected [C,H,W]");
  if (start < 0 || count < 1 || start + count > v.dim(0))
    throw std::invalid_argument("slice_channels: range out of bounds");
  const std::int64_t hw = static_cast<std::int64_t>(v.dim(1)) * v.dim(2);
  Tensor out({count, v.dim(1), v.dim(2)});
  std::copy(v.data() + start * hw, v.data() + (start + count) * hw, out.data());
  return make_node(std::move(out), {x}, [x, start, hw](Node& n) {
    if (!x.requires_grad()) return;
    x.node()->ensure_grad();
    double* dst = x.node()->grad.data() + start * hw;
    for (std::int64_t i = 0; i < n.grad.size(); ++i) dst[i] += n.grad[i];
  });
}

Var softmax_channels(const Var& x) {
  const Tensor& v = x.value();
  if (v.rank() != 3) throw std::invalid_argument("softmax_channels: expected [C,H,W]");
  const int c = v.dim(0), h = v.dim(1), w = v.dim(2);
  const std::int64_t hw = static_cast<std::int64_t>(h) * w;
  Tensor out(v.shape());
  for (std::int64_t p = 0; p < hw; ++p) {
    double mx = -1e300;
    for (int i = 0; i < c; ++i) mx = std::max(mx, v[i * hw + p]);
    double s = 0.0;
    for (int i = 0; i < c; ++i) {
      const double e = std::exp(v[i * hw + p] - mx);
      out[i * hw + p] = e;
      s += e;
    }
    const double inv = 1.0 / s;
    for (int i = 0; i < c; ++i) out[i * hw + p] *= inv;
  }
  Tensor cached = out;
  return make_node(std::move(out), {x}, [x, cached, c, hw](Node& n) {
    if (!x.requires_grad()) return;
    x.node()->ensure_grad();
    double* dst = x.node()->grad.data();
    const double* y = cached.data();
    const double* g = n.grad.data();
    for (std::int64_t p = 0; p < hw; ++p) {
      double dot = 0.0;
      for (int i = 0; i < c; ++i) dot += g[i * hw + p] * y[i * hw + p];
      for (int i = 0; i < c; ++i) dst[i * hw + p] += y[i * hw + p] * (g[i * hw + p] - dot);
    }
  });
}

Var spatial_softmax(const Var& x) {
  const Tensor& v = x.value();
  if (v.rank() != 3) throw std::invalid_argument("spatial_softmax: expected [C,H,W]");
  const int c = v.dim(0);
  const std::int64_t hw = static_cast<std::int64_t>(v.dim(1)) * v.dim(2);
  Tensor out(v.shape());
  for (int i = 0; i < c; ++i) {
    const double* src = v.data() + i * hw;
    double* o = out.data() + i * hw;
    double mx = -1e300;
    for (std::int64_t p = 0; p < hw; ++p) mx = std::max(mx, src[p]);
    double s = 0.0;
    for (std::int64_t p = 0; p < hw; ++p) {
      o[p] = std::exp(src[p] - mx);
      s += o[p];
    }
    const double inv = 1.0 / s;
    for (std::int64_t p = 0; p < hw; ++p) o[p] *= inv;
  }
  Tensor cached = out;
  return make_node(std::move(out), {x}, [x, cached, c, hw](Node& n) {
    if (!x.requires_grad()) return;
    x.node()->ensure_grad();
    double* dst = x.node()->grad.data();
    const double* y = cached.data();
    const double* g = n.grad.data();
    for (int i = 0; i < c; ++i) {
      const std::int64_t off = i * hw;
      double dot = 0.0;
      for (std::int64_t p = 0; p < hw; ++p) dot += g[off + p] * y[off + p];
      for (std::int64_t p = 0; p < hw; ++p) dst[off + p] += y[off + p] * (g[off + p] - dot);
    }
  });
}

Var broadcast_mul(const Var& mask, const Var& x) {
  const Tensor& m = mask.value();
  const Tensor& v = x.value();
  if (m.rank() != 3 || m.dim(0) != 1) throw std::invalid_argument("broadcast_mul: mask must be [1,H,W]");
  if (v.rank() != 3 || v.dim(1) != m.dim(1) || v.dim(2) != m.dim(2))
    throw std::invalid_argument("broadcast_mul: spatial dims mismatch");
  const int c = v.dim(0);
  const std::int64_t hw = static_cast<std::int64_t>(v.dim(1)) * v.dim(2);
  Tensor out(v.shape());
  for (int i = 0; i < c; ++i)
    for (std::int64_t p = 0; p < hw; ++p) out[i * hw + p] = v[i * hw + p] * m[p];
  return make_node(std::move(out), {mask, x}, [mask, x, c, hw](Node& n) {
    const double* g = n.grad.data();
    if (mask.requires_grad()) {
      mask.node()->ensure_grad();
      double* dm = mask.node()->grad.data();
      const double* v = x.value().data();
      for (int i = 0; i < c; ++i)
        for (std::int64_t p = 0; p < hw; ++p) dm[p] += g[i * hw + p] * v[i * hw + p];
    }
    if (x.requires_grad()) {
      x.node()->ensure_grad();
      double* dv = x.node()->grad.data();
      const double* m = mask.value().data();
      for (int i = 0; i < c; ++i)
        for (std::int64_t p = 0; p < hw; ++p) dv[i * hw + p] += g[i * hw + p] * m[p];
    }
  });
}

// ---------------- convolution ----------------

namespace {

struct ConvDims {
  int ci, hi, wi, co, kh, kw, ho, wo;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int pad) {
  if (x.rank() != 3) throw std::invalid_argument("conv2d: input must be [C,H,W]");
  if (w.rank() != 4) throw std::invalid_argument("conv2d: weight must be [Co,Ci,kh,kw]");
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  ConvDims d;
  d.ci = x.dim(0);
  d.hi = x.dim(1);
  d.wi = x.dim(2);
  d.co = w.dim(0);
  d.kh = w.dim(2);
  d.kw = w.dim(3);
  if (w.dim(1) != d.ci) throw std::invalid_argument("conv2d: channel mismatch between input and weight");
  d.ho = (d.hi + 2 * pad - d.kh) / stride + 1;
  d.wo = (d.wi + 2 * pad - d.kw) / stride + 1;
  if (d.ho < 1 || d.wo < 1) throw std::invalid_argument("conv2d: output would be empty");
  return d;
}

void im2col(const Tensor& x, const ConvDims& d, int stride, int pad, ColMat& col) {
  col.resize(d.ci * d.kh * d.kw, static_cast<Eigen::Index>(d.ho) * d.wo);
  for (int oy = 0; oy < d.ho; ++oy) {
    for (int ox = 0; ox < d.wo; ++ox) {
      const Eigen::Index cidx = static_cast<Eigen::Index>(oy) * d.wo + ox;
      double* dst = col.col(cidx).data();
      int r = 0;
      for (int ci = 0; ci < d.ci; ++ci) {
        for (int ky = 0; ky < d.kh; ++ky) {
          const int iy = oy * stride - pad + ky;
          for (int kx = 0; kx < d.kw; ++kx, ++r) {
            const int ix = ox * stride - pad + kx;
            dst[r] = (iy >= 0 && iy < d.hi && ix >= 0 && ix < d.wi) ? x.at(ci, iy, ix) : 0.0;
          }
        }
      }
    }
  }
}

void col2im_accumulate(const ColMat& col, const ConvDims& d, int stride, int pad, Tensor& gx) {
  for (int oy = 0; oy < d.ho; ++oy) {
    for (int ox = 0; ox < d.wo; ++ox) {
      const Eigen::Index cidx = static_cast<Eigen::Index>(oy) * d.wo + ox;
      const double* src = col.col(cidx).data();
      int r = 0;
      for (int ci = 0; ci < d.ci; ++ci) {
        for (int ky = 0; ky < d.kh; ++ky) {
          const int iy = oy * stride - pad + ky;
          for (int kx = 0; kx < d.kw; ++kx, ++r) {
            const int ix = ox * stride - pad + kx;
            if (iy >= 0 && iy < d.hi && ix >= 0 && ix < d.wi) gx.at(ci, iy, ix) += src[r];
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  const ConvDims d = conv_dims(x.value(), w.value(), stride, pad);
  if (b.value().rank() != 1 || b.value().dim(0) != d.co)
    throw std::invalid_argument("conv2d: bias must be [Co]");

  ColMat col;
  im2col(x.value(), d, stride, pad, col);
  Tensor out({d.co, d.ho, d.wo});
  {
    Eigen::Map<const RowMat> wmat(w.value().data(), d.co, static_cast<Eigen::Index>(d.ci) * d.kh * d.kw);
    Eigen::Map<RowMat> ymat(out.data(), d.co, static_cast<Eigen::Index>(d.ho) * d.wo);
    ymat.noalias() = wmat * col;
    for (int co = 0; co < d.co; ++co) ymat.row(co).array() += b.value()[co];
  }

  return make_node(std::move(out), {x, w, b}, [x, w, b, d, stride, pad](Node& n) {
    Eigen::Map<const RowMat> gy(n.grad.data(), d.co, static_cast<Eigen::Index>(d.ho) * d.wo);
    if (w.requires_grad() || x.requires_grad()) {
      ColMat col;
      im2col(x.value(), d, stride, pad, col);
      if (w.requires_grad()) {
        w.node()->ensure_grad();
        Eigen::Map<RowMat> gw(w.node()->grad.data(), d.co, static_cast<Eigen::Index>(d.ci) * d.kh * d.kw);
        gw.noalias() += gy * col.transpose();
      }
      if (x.requires_grad()) {
        Eigen::Map<const RowMat> wmat(w.value().data(), d.co, static_cast<Eigen::Index>(d.ci) * d.kh * d.kw);
        ColMat gcol = wmat.transpose() * gy;
        x.node()->ensure_grad();
        col2im_accumulate(gcol, d, stride, pad, x.node()->grad);
      }
    }
    if (b.requires_grad()) {
      b.node()->ensure_grad();
      for (int co = 0; co < d.co; ++co) b.node()->grad[co] += gy.row(co).sum();
    }
  });
}

Var avg_pool2(const Var& x) {
  const Tensor& v = x.value();
  if (v.rank() != 3) throw std::invalid_argument("avg_pool2: expected [C,H,W]");
  const int c = v.dim(0), hi = v.dim(1), wi = v.dim(2);
  const int ho = hi / 2, wo = wi / 2;
  if (ho < 1 || wo < 1) throw std::invalid_argument("avg_pool2: input too small");
  Tensor out({c, ho, wo});
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < ho; ++y)
      for (int xx = 0; xx < wo; ++xx)
        out.at(ci, y, xx) = 0.25 * (v.at(ci, 2 * y, 2 * xx) + v.at(ci, 2 * y, 2 * xx + 1) +
                                    v.at(ci, 2 * y + 1, 2 * xx) + v.at(ci, 2 * y + 1, 2 * xx + 1));
  return make_node(std::move(out), {x}, [x, c, ho, wo](Node& n) {
    if (!x.requires_grad()) return;
    x.node()->ensure_grad();
    Tensor& gx = x.node()->grad;
    for (int ci = 0; ci < c; ++ci)
      for (int y = 0; y < ho; ++y)
        for (int xx = 0; xx < wo; ++xx) {
          const double g = 0.25 * n.grad.at(ci, y, xx);
          gx.at(ci, 2 * y, 2 * xx) += g;
          gx.at(ci, 2 * y, 2 * xx + 1) += g;
          gx.at(ci, 2 * y + 1, 2 * xx) += g;
          gx.at(ci, 2 * y + 1, 2 * xx + 1) += g;
        }
  });
}

// ---------------- bilinear sampling ----------------

namespace {

inline double grid_coord(int idx, int n) { return n > 1 ? -1.0 + 2.0 * idx / (n - 1) : 0.0; }

struct Sample {
  int x0, x1, y0, y1;
  double wx, wy;
  bool clamped_x, clamped_y;
};

// px/py are pixel-space sample positions. They are computed directly in
// pixel space (not via normalized coordinates) so that a zero flow lands
// exactly on integer pixels and the identity warp is bit-exact.
inline Sample locate(double px, double py, int hi, int wi) {
  Sample s;
  s.clamped_x = px < 0.0 || px > wi - 1;
  s.clamped_y = py < 0.0 || py > hi - 1;
  px = std::clamp(px, 0.0, static_cast<double>(wi - 1));
  py = std::clamp(py, 0.0, static_cast<double>(hi - 1));
  s.x0 = static_cast<int>(std::floor(px));
  s.y0 = static_cast<int>(std::floor(py));
  if (s.x0 > wi - 1) s.x0 = wi - 1;
  if (s.y0 > hi - 1) s.y0 = hi - 1;
  s.x1 = std::min(s.x0 + 1, wi - 1);
  s.y1 = std::min(s.y0 + 1, hi - 1);
  s.wx = px - s.x0;
  s.wy = py - s.y0;
  return s;
}

}  // namespace

Var grid_sample(const Var& x, const Var& flow) {
  const Tensor& v = x.value();
  const Tensor& f = flow.value();
  if (v.rank() != 3) throw std::invalid_argument("grid_sample: input must be [C,H,W]");
  if (f.rank() != 3 || f.dim(0) != 2) throw std::invalid_argument("grid_sample: flow must be [2,H,W]");
  if (!f.all_finite()) throw std::invalid_argument("grid_sample: non-finite field values");
  const int c = v.dim(0), hi = v.dim(1), wi = v.dim(2);
  const int ho = f.dim(1), wo = f.dim(2);

  const double sx = 0.5 * (wi - 1), sy = 0.5 * (hi - 1);
  Tensor out({c, ho, wo});
  for (int oy = 0; oy < ho; ++oy) {
    const double by = ho > 1 ? static_cast<double>(oy) * (hi - 1) / (ho - 1) : sy;
    for (int ox = 0; ox < wo; ++ox) {
      const double bx = wo > 1 ? static_cast<double>(ox) * (wi - 1) / (wo - 1) : sx;
      const Sample s = locate(bx + f.at(0, oy, ox) * sx, by + f.at(1, oy, ox) * sy, hi, wi);
      for (int ci = 0; ci < c; ++ci) {
        const double v00 = v.at(ci, s.y0, s.x0), v01 = v.at(ci, s.y0, s.x1);
        const double v10 = v.at(ci, s.y1, s.x0), v11 = v.at(ci, s.y1, s.x1);
        out.at(ci, oy, ox) =
            (1 - s.wy) * ((1 - s.wx) * v00 + s.wx * v01) + s.wy * ((1 - s.wx) * v10 + s.wx * v11);
      }
    }
  }

  return make_node(std::move(out), {x, flow}, [x, flow, c, hi, wi, ho, wo](Node& n) {
    const Tensor& v = x.value();
    const Tensor& f = flow.value();
    const bool need_gx = x.requires_grad();
    const bool need_gf = flow.requires_grad();
    if (need_gx) x.node()->ensure_grad();
    if (need_gf) flow.node()->ensure_grad();
    const double sx = 0.5 * (wi - 1), sy = 0.5 * (hi - 1);
    for (int oy = 0; oy < ho; ++oy) {
      const double by = ho > 1 ? static_cast<double>(oy) * (hi - 1) / (ho - 1) : sy;
      for (int ox = 0; ox < wo; ++ox) {
        const double bx = wo > 1 ? static_cast<double>(ox) * (wi - 1) / (wo - 1) : sx;
        const Sample s = locate(bx + f.at(0, oy, ox) * sx, by + f.at(1, oy, ox) * sy, hi, wi);
        double dpx = 0.0, dpy = 0.0;
        for (int ci = 0; ci < c; ++ci) {
          const double g = n.grad.at(ci, oy, ox);
          if (g == 0.0) continue;
          const double v00 = v.at(ci, s.y0, s.x0), v01 = v.at(ci, s.y0, s.x1);
          const double v10 = v.at(ci, s.y1, s.x0), v11 = v.at(ci, s.y1, s.x1);
          if (need_gx) {
            Tensor& gxv = x.node()->grad;
            gxv.at(ci, s.y0, s.x0) += g * (1 - s.wy) * (1 - s.wx);
            gxv.at(ci, s.y0, s.x1) += g * (1 - s.wy) * s.wx;
            gxv.at(ci, s.y1, s.x0) += g * s.wy * (1 - s.wx);
            gxv.at(ci, s.y1, s.x1) += g * s.wy * s.wx;
          }
          if (need_gf) {
            dpx += g * ((1 - s.wy) * (v01 - v00) + s.wy * (v11 - v10));
            dpy += g * ((1 - s.wx) * (v10 - v00) + s.wx * (v11 - v01));
          }
        }
        if (need_gf) {
          Tensor& gf = flow.node()->grad;
          if (!s.clamped_x) gf.at(0, oy, ox) += dpx * 0.5 * (wi - 1);
          if (!s.clamped_y) gf.at(1, oy, ox) += dpy * 0.5 * (hi - 1);
        }
      }
    }
  });
}

Var resize_bilinear(const Var& x, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw std::invalid_argument("resize_bilinear: invalid output size");
  if (x.value().rank() == 3 && x.value().dim(1) == out_h && x.value().dim(2) == out_w) return x;
  return grid_sample(x, constant(Tensor({2, out_h, out_w})));
}

// ---------------- soft-argmax & Gaussian heatmaps ----------------

Var soft_argmax(const Var& heatmap) {
  const Tensor& h = heatmap.value();
  if (h.rank() != 3) throw std::invalid_argument("soft_argmax: expected [K,H,W]");
  const int k = h.dim(0), hh = h.dim(1), ww = h.dim(2);
  const std::int64_t hw = static_cast<std::int64_t>(hh) * ww;
  for (int i = 0; i < k; ++i) {
    double s = 0.0;
    for (std::int64_t p = 0; p < hw; ++p) s += h[i * hw + p];
    if (std::fabs(s - 1.0) > 1e-4)
      throw std::invalid_argument("soft_argmax: heatmap channel " + std::to_string(i) +
                                  " is not normalized (sum = " + std::to_string(s) + ")");
  }
  Tensor out({k, 2});
  for (int i = 0; i < k; ++i) {
    double ex = 0.0, ey = 0.0;
    for (int y = 0; y < hh; ++y) {
      const double gy = grid_coord(y, hh);
      for (int x = 0; x < ww; ++x) {
        const double w = h[i * hw + static_cast<std::int64_t>(y) * ww + x];
        ex += grid_coord(x, ww) * w;
        ey += gy * w;
      }
    }
    out.at(i, 0) = ex;
    out.at(i, 1) = ey;
  }
  return make_node(std::move(out), {heatmap}, [heatmap, k, hh, ww, hw](Node& n) {
    if (!heatmap.requires_grad()) return;
    heatmap.node()->ensure_grad();
    Tensor& gh = heatmap.node()->grad;
    for (int i = 0; i < k; ++i) {
      const double gkx = n.grad.at(i, 0), gky = n.grad.at(i, 1);
      for (int y = 0; y < hh; ++y) {
        const double gy = grid_coord(y, hh);
        for (int x = 0; x < ww; ++x)
          gh[i * hw + static_cast<std::int64_t>(y) * ww + x] += gkx * grid_coord(x, ww) + gky * gy;
      }
    }
  });
}

Var gaussian_heatmap(const Var& kps, double sigma, int height, int width) {
  if (sigma <= 0.0) throw std::invalid_argument("gaussian_heatmap: sigma must be positive");
  const Tensor& p = kps.value();
  if (p.rank() != 2 || p.dim(1) != 2) throw std::invalid_argument("gaussian_heatmap: keypoints must be [K,2]");
  const int k = p.dim(0);
  const std::int64_t hw = static_cast<std::int64_t>(height) * width;
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);

  Tensor raw({k, height, width});
  Tensor out({k, height, width});
  std::vector<double> sums(static_cast<std::size_t>(k), 0.0);
  for (int i = 0; i < k; ++i) {
    const double kx = p.at(i, 0), ky = p.at(i, 1);
    double s = 0.0;
    for (int y = 0; y < height; ++y) {
      const double dy = grid_coord(y, height) - ky;
      for (int x = 0; x < width; ++x) {
        const double dx = grid_coord(x, width) - kx;
        const double g = std::exp(-(dx * dx + dy * dy) * inv2s2);
        raw.at(i, y, x) = g;
        s += g;
      }
    }
    sums[static_cast<std::size_t>(i)] = s;
    const double inv = 1.0 / s;
    for (std::int64_t q = 0; q < hw; ++q) out[i * hw + q] = raw[i * hw + q] * inv;
  }

  return make_node(std::move(out), {kps},
                   [kps, raw, sums, k, height, width, hw, inv2s2](Node& n) {
    if (!kps.requires_grad()) return;
    kps.node()->ensure_grad();
    const Tensor& p = kps.value();
    for (int i = 0; i < k; ++i) {
      const double kx = p.at(i, 0), ky = p.at(i, 1);
      const double s = sums[static_cast<std::size_t>(i)];
      // h = g/S with dg/dkx = g*(x-kx)/sigma^2; assemble the quotient-rule
      // pieces in two passes over the map.
      double dot_gh = 0.0;       // sum_x gout(x) * g(x)
      double ax = 0.0, ay = 0.0; // sum_x gout(x) * dg(x)/dk
      double sx = 0.0, sy = 0.0; // sum_x dg(x)/dk
      for (int y = 0; y < height; ++y) {
        const double dy = grid_coord(y, height) - ky;
        for (int x = 0; x < width; ++x) {
          const double dx = grid_coord(x, width) - kx;
          const double g = raw.at(i, y, x);
          const double go = n.grad.at(i, y, x);
          const double ddx = g * dx * 2.0 * inv2s2;  // dg/dkx
          const double ddy = g * dy * 2.0 * inv2s2;  // dg/dky
          dot_gh += go * g;
          ax += go * ddx;
          ay += go * ddy;
          sx += ddx;
          sy += ddy;
        }
      }
      kps.node()->grad.at(i, 0) += ax / s - dot_gh * sx / (s * s);
      kps.node()->grad.at(i, 1) += ay / s - dot_gh * sy / (s * s);
    }
  });
}

}  // namespace mevo::ag

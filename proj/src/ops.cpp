#include "deeplgr/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

namespace deeplgr::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

template <class Fn>
void maybe_record(const Tensor& out, std::vector<Tensor> inputs, Fn&& fn) {
  GradientTape* tape = active_tape();
  if (tape == nullptr) return;
  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (!any) return;
  tape->record(out, inputs, std::forward<Fn>(fn));
}

std::span<double> gbuf(const Tensor& t) { return grad_buffer(t.storage()); }

void require_rank(const Tensor& t, std::size_t r, const char* op) {
  if (t.rank() != r) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                     shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

struct ConvGeom {
  std::size_t B, H, W, Cin, kh, kw, Cout, OH, OW, pad_h, pad_w;
  std::size_t patch() const { return kh * kw * Cin; }
  std::size_t rows() const { return B * OH * OW; }
};

struct ScratchDelete {
  void operator()(double* p) const { ::operator delete(p, AlignedAllocator<double>::kAlign); }
};

// Uninitialized, aligned like tensor storage.
std::unique_ptr<double, ScratchDelete> scratch(std::size_t n) {
  return std::unique_ptr<double, ScratchDelete>(
      static_cast<double*>(::operator new(n * sizeof(double), AlignedAllocator<double>::kAlign)));
}

void im2col(const ConvGeom& g, const double* x, double* cols) {
  const std::size_t patch = g.patch();
  for (std::size_t b = 0; b < g.B; ++b) {
    for (std::size_t oy = 0; oy < g.OH; ++oy) {
      for (std::size_t ox = 0; ox < g.OW; ++ox) {
        double* row = cols + ((b * g.OH + oy) * g.OW + ox) * patch;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          const auto iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(g.pad_h);
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            const auto ix = static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(g.pad_w);
            double* dst = row + (ky * g.kw + kx) * g.Cin;
            if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(g.H) ||
                ix >= static_cast<std::ptrdiff_t>(g.W)) {
              std::fill(dst, dst + g.Cin, 0.0);
            } else {
              const double* src =
                  x + ((b * g.H + static_cast<std::size_t>(iy)) * g.W + static_cast<std::size_t>(ix)) * g.Cin;
              std::copy(src, src + g.Cin, dst);
            }
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeom& g, const double* cols, double* dx) {
  const std::size_t patch = g.patch();
  for (std::size_t b = 0; b < g.B; ++b) {
    for (std::size_t oy = 0; oy < g.OH; ++oy) {
      for (std::size_t ox = 0; ox < g.OW; ++ox) {
        const double* row = cols + ((b * g.OH + oy) * g.OW + ox) * patch;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          const auto iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(g.pad_h);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.H)) continue;
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            const auto ix = static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(g.pad_w);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.W)) continue;
            const double* src = row + (ky * g.kw + kx) * g.Cin;
            double* dst =
                dx + ((b * g.H + static_cast<std::size_t>(iy)) * g.W + static_cast<std::size_t>(ix)) * g.Cin;
            for (std::size_t c = 0; c < g.Cin; ++c) dst[c] += src[c];
          }
        }
      }
    }
  }
}

// Adaptive pooling bin bounds along one axis.
std::size_t bin_lo(std::size_t i, std::size_t in, std::size_t out) { return (i * in) / out; }
std::size_t bin_hi(std::size_t i, std::size_t in, std::size_t out) { return ((i + 1) * in) / out; }

}  // namespace

// ---------------------------------------------------------------------------
// elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  auto o = out.storage()->data.data();
  for (std::size_t i = 0; i < a.numel(); ++i) o[i] = a[i] + b[i];
  maybe_record(out, {a, b}, [a, b](std::span<const double> g) {
    if (a.requires_grad()) {
      auto ga = gbuf(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto gb = gbuf(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  auto o = out.storage()->data.data();
  for (std::size_t i = 0; i < a.numel(); ++i) o[i] = a[i] - b[i];
  maybe_record(out, {a, b}, [a, b](std::span<const double> g) {
    if (a.requires_grad()) {
      auto ga = gbuf(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto gb = gbuf(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  auto o = out.storage()->data.data();
  for (std::size_t i = 0; i < a.numel(); ++i) o[i] = a[i] * b[i];
  maybe_record(out, {a, b}, [a, b](std::span<const double> g) {
    if (a.requires_grad()) {
      auto ga = gbuf(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
    }
    if (b.requires_grad()) {
      auto gb = gbuf(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
    }
  });
  return out;
}

Tensor scale(const Tensor& x, double c) {
  Tensor out(x.shape());
  auto o = out.storage()->data.data();
  for (std::size_t i = 0; i < x.numel(); ++i) o[i] = x[i] * c;
  maybe_record(out, {x}, [x, c](std::span<const double> g) {
    auto gx = gbuf(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * c;
  });
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out(x.shape());
  auto o = out.storage()->data.data();
  for (std::size_t i = 0; i < x.numel(); ++i) o[i] = x[i] > 0.0 ? x[i] : 0.0;
  maybe_record(out, {x}, [x](std::span<const double> g) {
    auto gx = gbuf(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > 0.0) gx[i] += g[i];
    }
  });
  return out;
}

Tensor sigmoid(const Tensor& x) {
  Tensor out(x.shape());
  auto& o = out.storage()->data;
  for (std::size_t i = 0; i < x.numel(); ++i) o[i] = sigmoid_scalar(x[i]);
  maybe_record(out, {x}, [x, out](std::span<const double> g) {
    auto gx = gbuf(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = out[i];
      gx[i] += g[i] * s * (1.0 - s);
    }
  });
  return out;
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  Tensor out = Tensor::scalar(acc);
  maybe_record(out, {x}, [x](std::span<const double> g) {
    auto gx = gbuf(x);
    for (double& v : gx) v += g[0];
  });
  return out;
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Tensor out(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()));
  maybe_record(out, {x}, [x](std::span<const double> g) {
    auto gx = gbuf(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
  return out;
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  const std::size_t r = x.rank();
  if (axes.size() != r) throw ShapeError("permute: axis count does not match rank");
  std::vector<bool> seen(r, false);
  for (auto a : axes) {
    if (a >= r || seen[a]) throw ShapeError("permute: axes are not a permutation");
    seen[a] = true;
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = x.dim(axes[i]);
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * x.dim(i);
  // source offset for each output element, computed once and reused by backward
  auto src_index = std::make_shared<std::vector<std::size_t>>(x.numel());
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t flat = 0; flat < x.numel(); ++flat) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < r; ++i) off += idx[i] * in_strides[axes[i]];
    (*src_index)[flat] = off;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  Tensor out(out_shape);
  auto& o = out.storage()->data;
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[(*src_index)[i]];
  maybe_record(out, {x}, [x, src_index](std::span<const double> g) {
    auto gx = gbuf(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[(*src_index)[i]] += g[i];
  });
  return out;
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape& s0 = parts.front().shape();
  if (s0.empty()) throw ShapeError("concat_channels: scalar input");
  const std::size_t lead = parts.front().numel() / s0.back();
  std::size_t total_c = 0;
  for (const auto& p : parts) {
    if (p.rank() != s0.size() || !std::equal(s0.begin(), s0.end() - 1, p.shape().begin())) {
      throw ShapeError("concat_channels: leading dims differ: " + shape_str(s0) + " vs " +
                       shape_str(p.shape()));
    }
    total_c += p.shape().back();
  }
  Shape out_shape = s0;
  out_shape.back() = total_c;
  Tensor out(out_shape);
  auto& o = out.storage()->data;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t c = p.shape().back();
    for (std::size_t i = 0; i < lead; ++i) {
      std::copy_n(p.data().begin() + static_cast<std::ptrdiff_t>(i * c), c,
                  o.begin() + static_cast<std::ptrdiff_t>(i * total_c + offset));
    }
    offset += c;
  }
  maybe_record(out, parts, [parts, lead, total_c](std::span<const double> g) {
    std::size_t off = 0;
    for (const auto& p : parts) {
      const std::size_t c = p.shape().back();
      if (p.requires_grad()) {
        auto gp = gbuf(p);
        for (std::size_t i = 0; i < lead; ++i) {
          for (std::size_t k = 0; k < c; ++k) gp[i * c + k] += g[i * total_c + off + k];
        }
      }
      off += c;
    }
  });
  return out;
}

Tensor mae_loss(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "mae_loss");
  const double n = static_cast<double>(pred.numel());
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.numel(); ++i) acc += std::abs(pred[i] - target[i]);
  Tensor out = Tensor::scalar(acc / n);
  maybe_record(out, {pred, target}, [pred, target, n](std::span<const double> g) {
    auto sign = [&](std::size_t i) {
      const double r = pred[i] - target[i];
      return r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0);
    };
    if (pred.requires_grad()) {
      auto gp = gbuf(pred);
      for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[0] * sign(i) / n;
    }
    if (target.requires_grad()) {
      auto gt = gbuf(target);
      for (std::size_t i = 0; i < gt.size(); ++i) gt[i] -= g[0] * sign(i) / n;
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: inner dims differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto n = static_cast<Eigen::Index>(b.dim(1));
  Tensor out(Shape{a.dim(0), b.dim(1)});
  MatMap(out.storage()->data.data(), m, n).noalias() =
      ConstMatMap(a.data().data(), m, k) * ConstMatMap(b.data().data(), k, n);
  maybe_record(out, {a, b}, [a, b, m, k, n](std::span<const double> g) {
    ConstMatMap G(g.data(), m, n);
    if (a.requires_grad()) {
      MatMap(gbuf(a).data(), m, k).noalias() += G * ConstMatMap(b.data().data(), k, n).transpose();
    }
    if (b.requires_grad()) {
      MatMap(gbuf(b).data(), k, n).noalias() += ConstMatMap(a.data().data(), m, k).transpose() * G;
    }
  });
  return out;
}

Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank(x, 2, "dense");
  require_rank(w, 2, "dense");
  require_rank(b, 1, "dense");
  if (x.dim(1) != w.dim(0)) {
    throw ShapeError("dense: input features " + std::to_string(x.dim(1)) + " vs weight " +
                     shape_str(w.shape()));
  }
  if (b.dim(0) != w.dim(1)) throw ShapeError("dense: bias length does not match output features");
  const auto B = static_cast<Eigen::Index>(x.dim(0));
  const auto fin = static_cast<Eigen::Index>(x.dim(1));
  const auto fout = static_cast<Eigen::Index>(w.dim(1));
  Tensor out(Shape{x.dim(0), w.dim(1)});
  MatMap O(out.storage()->data.data(), B, fout);
  O.noalias() = ConstMatMap(x.data().data(), B, fin) * ConstMatMap(w.data().data(), fin, fout);
  Eigen::Map<const Eigen::RowVectorXd> bias(b.data().data(), fout);
  O.rowwise() += bias;
  maybe_record(out, {x, w, b}, [x, w, b, B, fin, fout](std::span<const double> g) {
    ConstMatMap G(g.data(), B, fout);
    if (x.requires_grad()) {
      MatMap(gbuf(x).data(), B, fin).noalias() += G * ConstMatMap(w.data().data(), fin, fout).transpose();
    }
    if (w.requires_grad()) {
      MatMap(gbuf(w).data(), fin, fout).noalias() += ConstMatMap(x.data().data(), B, fin).transpose() * G;
    }
    if (b.requires_grad()) {
      Eigen::Map<Eigen::RowVectorXd>(gbuf(b).data(), fout) += G.colwise().sum();
    }
  });
  return out;
}

Tensor region_contract(const Tensor& u, const Tensor& q) {
  require_rank(u, 4, "region_contract");
  require_rank(q, 2, "region_contract");
  const std::size_t B = u.dim(0), R = u.dim(1), D = u.dim(2), C = u.dim(3);
  if (q.dim(0) != R || q.dim(1) != C) {
    throw ShapeError("region_contract: " + shape_str(u.shape()) + " vs " + shape_str(q.shape()));
  }
  Tensor out(Shape{B, R, D});
  auto& o = out.storage()->data;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t r = 0; r < R; ++r) {
      const double* qr = q.data().data() + r * C;
      for (std::size_t d = 0; d < D; ++d) {
        const double* ur = u.data().data() + ((b * R + r) * D + d) * C;
        double acc = 0.0;
        for (std::size_t c = 0; c < C; ++c) acc += ur[c] * qr[c];
        o[(b * R + r) * D + d] = acc;
      }
    }
  }
  maybe_record(out, {u, q}, [u, q, B, R, D, C](std::span<const double> g) {
    if (u.requires_grad()) {
      auto gu = gbuf(u);
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t r = 0; r < R; ++r)
          for (std::size_t d = 0; d < D; ++d) {
            const double gv = g[(b * R + r) * D + d];
            double* dst = gu.data() + ((b * R + r) * D + d) * C;
            for (std::size_t c = 0; c < C; ++c) dst[c] += gv * q[r * C + c];
          }
    }
    if (q.requires_grad()) {
      auto gq = gbuf(q);
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t r = 0; r < R; ++r)
          for (std::size_t d = 0; d < D; ++d) {
            const double gv = g[(b * R + r) * D + d];
            const double* src = u.data().data() + ((b * R + r) * D + d) * C;
            for (std::size_t c = 0; c < C; ++c) gq[r * C + c] += gv * src[c];
          }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// spatial

Tensor conv2d(const Tensor& x, const Tensor& kernel, const std::optional<Tensor>& bias, Padding padding) {
  require_rank(x, 4, "conv2d");
  require_rank(kernel, 4, "conv2d kernel");
  ConvGeom g{};
  g.B = x.dim(0);
  g.H = x.dim(1);
  g.W = x.dim(2);
  g.Cin = x.dim(3);
  g.kh = kernel.dim(0);
  g.kw = kernel.dim(1);
  g.Cout = kernel.dim(3);
  if (kernel.dim(2) != g.Cin) {
    throw ShapeError("conv2d: input has " + std::to_string(g.Cin) + " channels but kernel " +
                     shape_str(kernel.shape()) + " expects " + std::to_string(kernel.dim(2)));
  }
  if (g.kh % 2 == 0 || g.kw % 2 == 0) throw ShapeError("conv2d: kernel sizes must be odd");
  if (bias && (bias->rank() != 1 || bias->dim(0) != g.Cout)) {
    throw ShapeError("conv2d: bias must have shape [" + std::to_string(g.Cout) + "]");
  }
  if (padding == Padding::same) {
    g.pad_h = (g.kh - 1) / 2;
    g.pad_w = (g.kw - 1) / 2;
    g.OH = g.H;
    g.OW = g.W;
  } else {
    if (g.kh > g.H || g.kw > g.W) throw ShapeError("conv2d: kernel larger than input for valid padding");
    g.pad_h = g.pad_w = 0;
    g.OH = g.H - g.kh + 1;
    g.OW = g.W - g.kw + 1;
  }
  const bool pointwise = g.kh == 1 && g.kw == 1;
  const auto rows = static_cast<Eigen::Index>(g.rows());
  const auto patch = static_cast<Eigen::Index>(g.patch());
  const auto cout = static_cast<Eigen::Index>(g.Cout);

  Tensor out(Shape{g.B, g.OH, g.OW, g.Cout});
  MatMap O(out.storage()->data.data(), rows, cout);
  ConstMatMap K(kernel.data().data(), patch, cout);
  if (pointwise) {
    O.noalias() = ConstMatMap(x.data().data(), rows, patch) * K;
  } else {
    const auto cols = scratch(g.rows() * g.patch());
    im2col(g, x.data().data(), cols.get());
    O.noalias() = ConstMatMap(cols.get(), rows, patch) * K;
  }
  if (bias) O.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias->data().data(), cout);

  std::vector<Tensor> inputs{x, kernel};
  if (bias) inputs.push_back(*bias);
  maybe_record(out, inputs, [x, kernel, bias, g, pointwise, rows, patch, cout](std::span<const double> gout) {
    ConstMatMap G(gout.data(), rows, cout);
    ConstMatMap K(kernel.data().data(), patch, cout);
    if (pointwise) {
      if (kernel.requires_grad()) {
        MatMap(gbuf(kernel).data(), patch, cout).noalias() +=
            ConstMatMap(x.data().data(), rows, patch).transpose() * G;
      }
      if (x.requires_grad()) MatMap(gbuf(x).data(), rows, patch).noalias() += G * K.transpose();
    } else {
      if (kernel.requires_grad()) {
        const auto cols = scratch(g.rows() * g.patch());
        im2col(g, x.data().data(), cols.get());
        MatMap(gbuf(kernel).data(), patch, cout).noalias() +=
            ConstMatMap(cols.get(), rows, patch).transpose() * G;
      }
      if (x.requires_grad()) {
        RowMat dcols(rows, patch);
        dcols.noalias() = G * K.transpose();
        col2im_add(g, dcols.data(), gbuf(x).data());
      }
    }
    if (bias && bias->requires_grad()) {
      Eigen::Map<Eigen::RowVectorXd>(gbuf(*bias).data(), cout) += G.colwise().sum();
    }
  });
  return out;
}

Tensor avg_pool(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  require_rank(x, 4, "avg_pool");
  const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  if (out_h == 0 || out_w == 0) throw ShapeError("avg_pool: output dims must be positive");
  if (out_h > H || out_w > W) {
    throw ShapeError("avg_pool: output " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                     " exceeds input " + shape_str(x.shape()));
  }
  Tensor out(Shape{B, out_h, out_w, C});
  auto& o = out.storage()->data;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < out_h; ++i)
      for (std::size_t j = 0; j < out_w; ++j) {
        const std::size_t y0 = bin_lo(i, H, out_h), y1 = bin_hi(i, H, out_h);
        const std::size_t x0 = bin_lo(j, W, out_w), x1 = bin_hi(j, W, out_w);
        const double inv = 1.0 / static_cast<double>((y1 - y0) * (x1 - x0));
        double* dst = o.data() + ((b * out_h + i) * out_w + j) * C;
        for (std::size_t c = 0; c < C; ++c) {
          double acc = 0.0;
          for (std::size_t y = y0; y < y1; ++y)
            for (std::size_t xx = x0; xx < x1; ++xx) acc += x[((b * H + y) * W + xx) * C + c];
          dst[c] = acc * inv;
        }
      }
  maybe_record(out, {x}, [x, B, H, W, C, out_h, out_w](std::span<const double> g) {
    auto gx = gbuf(x);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < out_h; ++i)
        for (std::size_t j = 0; j < out_w; ++j) {
          const std::size_t y0 = bin_lo(i, H, out_h), y1 = bin_hi(i, H, out_h);
          const std::size_t x0 = bin_lo(j, W, out_w), x1 = bin_hi(j, W, out_w);
          const double inv = 1.0 / static_cast<double>((y1 - y0) * (x1 - x0));
          const double* src = g.data() + ((b * out_h + i) * out_w + j) * C;
          for (std::size_t y = y0; y < y1; ++y)
            for (std::size_t xx = x0; xx < x1; ++xx) {
              double* dst = gx.data() + ((b * H + y) * W + xx) * C;
              for (std::size_t c = 0; c < C; ++c) dst[c] += src[c] * inv;
            }
        }
  });
  return out;
}

Tensor global_avg_pool(const Tensor& x) { return avg_pool(x, 1, 1); }

Tensor pixel_shuffle(const Tensor& x, std::size_t rh, std::size_t rw) {
  require_rank(x, 4, "pixel_shuffle");
  if (rh == 0 || rw == 0) throw ShapeError("pixel_shuffle: factors must be positive");
  const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), Cin = x.dim(3);
  if (Cin % (rh * rw) != 0) {
    throw ShapeError("pixel_shuffle: " + std::to_string(Cin) + " channels not divisible by " +
                     std::to_string(rh * rw));
  }
  const std::size_t C = Cin / (rh * rw);
  const std::size_t OH = H * rh, OW = W * rw;
  Tensor out(Shape{B, OH, OW, C});
  auto& o = out.storage()->data;
  auto src_of = [=](std::size_t b, std::size_t oy, std::size_t ox, std::size_t c) {
    const std::size_t y = oy / rh, dy = oy % rh, xx = ox / rw, dx = ox % rw;
    return ((b * H + y) * W + xx) * Cin + c * rh * rw + dy * rw + dx;
  };
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t oy = 0; oy < OH; ++oy)
      for (std::size_t ox = 0; ox < OW; ++ox)
        for (std::size_t c = 0; c < C; ++c) o[((b * OH + oy) * OW + ox) * C + c] = x[src_of(b, oy, ox, c)];
  maybe_record(out, {x}, [x, B, OH, OW, C, src_of](std::span<const double> g) {
    auto gx = gbuf(x);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t oy = 0; oy < OH; ++oy)
        for (std::size_t ox = 0; ox < OW; ++ox)
          for (std::size_t c = 0; c < C; ++c) gx[src_of(b, oy, ox, c)] += g[((b * OH + oy) * OW + ox) * C + c];
  });
  return out;
}

Tensor pixel_unshuffle(const Tensor& x, std::size_t rh, std::size_t rw) {
  require_rank(x, 4, "pixel_unshuffle");
  const std::size_t B = x.dim(0), OH = x.dim(1), OW = x.dim(2), C = x.dim(3);
  if (rh == 0 || rw == 0 || OH % rh != 0 || OW % rw != 0) {
    throw ShapeError("pixel_unshuffle: spatial dims not divisible by factors");
  }
  const std::size_t H = OH / rh, W = OW / rw, Cin = C * rh * rw;
  Tensor out(Shape{B, H, W, Cin});
  auto& o = out.storage()->data;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t oy = 0; oy < OH; ++oy)
      for (std::size_t ox = 0; ox < OW; ++ox)
        for (std::size_t c = 0; c < C; ++c) {
          const std::size_t y = oy / rh, dy = oy % rh, xx = ox / rw, dx = ox % rw;
          o[((b * H + y) * W + xx) * Cin + c * rh * rw + dy * rw + dx] = x[((b * OH + oy) * OW + ox) * C + c];
        }
  return out;
}

Tensor upsample_nearest(const Tensor& x, std::size_t fh, std::size_t fw) {
  require_rank(x, 4, "upsample_nearest");
  if (fh == 0 || fw == 0) throw ShapeError("upsample_nearest: factors must be positive");
  const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  const std::size_t OH = H * fh, OW = W * fw;
  Tensor out(Shape{B, OH, OW, C});
  auto& o = out.storage()->data;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t oy = 0; oy < OH; ++oy)
      for (std::size_t ox = 0; ox < OW; ++ox) {
        const double* src = x.data().data() + ((b * H + oy / fh) * W + ox / fw) * C;
        std::copy(src, src + C, o.data() + ((b * OH + oy) * OW + ox) * C);
      }
  maybe_record(out, {x}, [x, B, H, W, C, OH, OW, fh, fw](std::span<const double> g) {
    auto gx = gbuf(x);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t oy = 0; oy < OH; ++oy)
        for (std::size_t ox = 0; ox < OW; ++ox) {
          double* dst = gx.data() + ((b * H + oy / fh) * W + ox / fw) * C;
          const double* src = g.data() + ((b * OH + oy) * OW + ox) * C;
          for (std::size_t c = 0; c < C; ++c) dst[c] += src[c];
        }
  });
  return out;
}

Tensor upsample_bilinear(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  require_rank(x, 4, "upsample_bilinear");
  if (out_h == 0 || out_w == 0) throw ShapeError("upsample_bilinear: output dims must be positive");
  const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  struct Tap {
    std::size_t lo, hi;
    double w_hi;
  };
  auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> t(out);
    for (std::size_t i = 0; i < out; ++i) {
      const double src = out > 1 ? static_cast<double>(i) * static_cast<double>(in - 1) / static_cast<double>(out - 1) : 0.0;
      const auto lo = std::min(static_cast<std::size_t>(std::floor(src)), in - 1);
      const std::size_t hi = std::min(lo + 1, in - 1);
      t[i] = Tap{lo, hi, src - static_cast<double>(lo)};
    }
    return t;
  };
  auto ty = std::make_shared<std::vector<Tap>>(taps(H, out_h));
  auto tx = std::make_shared<std::vector<Tap>>(taps(W, out_w));
  Tensor out(Shape{B, out_h, out_w, C});
  auto& o = out.storage()->data;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < out_h; ++i)
      for (std::size_t j = 0; j < out_w; ++j) {
        const Tap& a = (*ty)[i];
        const Tap& e = (*tx)[j];
        const double w00 = (1 - a.w_hi) * (1 - e.w_hi), w01 = (1 - a.w_hi) * e.w_hi;
        const double w10 = a.w_hi * (1 - e.w_hi), w11 = a.w_hi * e.w_hi;
        for (std::size_t c = 0; c < C; ++c) {
          auto at = [&](std::size_t y, std::size_t xx) { return x[((b * H + y) * W + xx) * C + c]; };
          o[((b * out_h + i) * out_w + j) * C + c] =
              w00 * at(a.lo, e.lo) + w01 * at(a.lo, e.hi) + w10 * at(a.hi, e.lo) + w11 * at(a.hi, e.hi);
        }
      }
  maybe_record(out, {x}, [x, B, H, W, C, out_h, out_w, ty, tx](std::span<const double> g) {
    auto gx = gbuf(x);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < out_h; ++i)
        for (std::size_t j = 0; j < out_w; ++j) {
          const Tap& a = (*ty)[i];
          const Tap& e = (*tx)[j];
          const double w00 = (1 - a.w_hi) * (1 - e.w_hi), w01 = (1 - a.w_hi) * e.w_hi;
          const double w10 = a.w_hi * (1 - e.w_hi), w11 = a.w_hi * e.w_hi;
          for (std::size_t c = 0; c < C; ++c) {
            const double gv = g[((b * out_h + i) * out_w + j) * C + c];
            auto at = [&](std::size_t y, std::size_t xx) -> double& { return gx[((b * H + y) * W + xx) * C + c]; };
            at(a.lo, e.lo) += w00 * gv;
            at(a.lo, e.hi) += w01 * gv;
            at(a.hi, e.lo) += w10 * gv;
            at(a.hi, e.hi) += w11 * gv;
          }
        }
  });
  return out;
}

Tensor channel_scale(const Tensor& x, const Tensor& a) {
  require_rank(x, 4, "channel_scale");
  require_rank(a, 2, "channel_scale");
  const std::size_t B = x.dim(0), HW = x.dim(1) * x.dim(2), C = x.dim(3);
  if (a.dim(0) != B || a.dim(1) != C) {
    throw ShapeError("channel_scale: " + shape_str(x.shape()) + " vs " + shape_str(a.shape()));
  }
  Tensor out(x.shape());
  auto& o = out.storage()->data;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t p = 0; p < HW; ++p)
      for (std::size_t c = 0; c < C; ++c) o[(b * HW + p) * C + c] = x[(b * HW + p) * C + c] * a[b * C + c];
  maybe_record(out, {x, a}, [x, a, B, HW, C](std::span<const double> g) {
    if (x.requires_grad()) {
      auto gx = gbuf(x);
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t p = 0; p < HW; ++p)
          for (std::size_t c = 0; c < C; ++c) gx[(b * HW + p) * C + c] += g[(b * HW + p) * C + c] * a[b * C + c];
    }
    if (a.requires_grad()) {
      auto ga = gbuf(a);
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t p = 0; p < HW; ++p)
          for (std::size_t c = 0; c < C; ++c) ga[b * C + c] += g[(b * HW + p) * C + c] * x[(b * HW + p) * C + c];
    }
  });
  return out;
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                  BnMode mode) {
  require_rank(x, 4, "batch_norm");
  const std::size_t C = x.dim(3);
  const std::size_t n = x.numel() / C;
  if (gamma.numel() != C || beta.numel() != C || state.running_mean.size() != C ||
      state.running_var.size() != C) {
    throw ShapeError("batch_norm: parameter length does not match " + std::to_string(C) + " channels");
  }
  auto mu = std::make_shared<std::vector<double>>(C, 0.0);
  auto inv_std = std::make_shared<std::vector<double>>(C, 0.0);
  if (mode == BnMode::train) {
    std::vector<double> var(C, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < C; ++c) (*mu)[c] += x[i * C + c];
    for (auto& m : *mu) m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < C; ++c) {
        const double d = x[i * C + c] - (*mu)[c];
        var[c] += d * d;
      }
    for (std::size_t c = 0; c < C; ++c) {
      var[c] /= static_cast<double>(n);
      (*inv_std)[c] = 1.0 / std::sqrt(var[c] + state.eps);
      const double unbiased = n > 1 ? var[c] * static_cast<double>(n) / static_cast<double>(n - 1) : var[c];
      state.running_mean[c] = state.momentum * state.running_mean[c] + (1.0 - state.momentum) * (*mu)[c];
      state.running_var[c] = state.momentum * state.running_var[c] + (1.0 - state.momentum) * unbiased;
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      (*mu)[c] = state.running_mean[c];
      (*inv_std)[c] = 1.0 / std::sqrt(state.running_var[c] + state.eps);
    }
  }
  Tensor out(x.shape());
  auto& o = out.storage()->data;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < C; ++c) {
      const double xhat = (x[i * C + c] - (*mu)[c]) * (*inv_std)[c];
      o[i * C + c] = gamma[c] * xhat + beta[c];
    }
  const bool train = mode == BnMode::train;
  maybe_record(out, {x, gamma, beta}, [x, gamma, beta, mu, inv_std, n, C, train](std::span<const double> g) {
    std::vector<double> sum_g(C, 0.0), sum_g_xhat(C, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < C; ++c) {
        const double xhat = (x[i * C + c] - (*mu)[c]) * (*inv_std)[c];
        sum_g[c] += g[i * C + c];
        sum_g_xhat[c] += g[i * C + c] * xhat;
      }
    if (gamma.requires_grad()) {
      auto gg = gbuf(gamma);
      for (std::size_t c = 0; c < C; ++c) gg[c] += sum_g_xhat[c];
    }
    if (beta.requires_grad()) {
      auto gb = gbuf(beta);
      for (std::size_t c = 0; c < C; ++c) gb[c] += sum_g[c];
    }
    if (x.requires_grad()) {
      auto gx = gbuf(x);
      const double nn = static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < C; ++c) {
          const double k = gamma[c] * (*inv_std)[c];
          if (train) {
            const double xhat = (x[i * C + c] - (*mu)[c]) * (*inv_std)[c];
            gx[i * C + c] += k * (g[i * C + c] - sum_g[c] / nn - xhat * sum_g_xhat[c] / nn);
          } else {
            gx[i * C + c] += k * g[i * C + c];
          }
        }
    }
  });
  return out;
}

}  // namespace deeplgr::ops

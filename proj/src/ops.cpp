#include "mcse/ops.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <utility>

#include "mcse/fft.hpp"

namespace mcse::ad {

namespace {

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMat>;
using ConstRowMap = Eigen::Map<const RowMat>;
using ColMat = Eigen::MatrixXd;
using RowArr =
    Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowArrMap = Eigen::Map<RowArr>;
using ConstRowArrMap = Eigen::Map<const RowArr>;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape(), errc::shape_mismatch,
          std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
              " vs " + shape_to_string(b.shape()));
}

/// Splits a shape around `axis` into (outer, extent, inner) products.
struct AxisSplit {
  Index outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  require(axis < shape.size(), errc::invalid_argument, "axis out of range");
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

Tensor add(Graph& g, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = Tensor::from_values(a.shape(), a.values() + b.values());
  return g.record("add", out, {a, b}, [a, b, out]() mutable {
    if (a.requires_grad()) a.grad() += out.grad();
    if (b.requires_grad()) b.grad() += out.grad();
  });
}

Tensor sub(Graph& g, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = Tensor::from_values(a.shape(), a.values() - b.values());
  return g.record("sub", out, {a, b}, [a, b, out]() mutable {
    if (a.requires_grad()) a.grad() += out.grad();
    if (b.requires_grad()) b.grad() -= out.grad();
  });
}

Tensor mul(Graph& g, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = Tensor::from_values(a.shape(), a.values() * b.values());
  return g.record("mul", out, {a, b}, [a, b, out]() mutable {
    if (a.requires_grad()) a.grad() += out.grad() * b.values();
    if (b.requires_grad()) b.grad() += out.grad() * a.values();
  });
}

Tensor affine(Graph& g, const Tensor& x, double scale, double shift) {
  Tensor out = Tensor::from_values(x.shape(), scale * x.values() + shift);
  return g.record("affine", out, {x}, [x, out, scale]() mutable {
    if (x.requires_grad()) x.grad() += scale * out.grad();
  });
}

Tensor scale(Graph& g, const Tensor& x, double factor) {
  return affine(g, x, factor, 0.0);
}

Tensor abs(Graph& g, const Tensor& x) {
  Tensor out = Tensor::from_values(x.shape(), x.values().abs());
  return g.record("abs", out, {x}, [x, out]() mutable {
    if (x.requires_grad()) x.grad() += out.grad() * x.values().sign();
  });
}

Tensor square(Graph& g, const Tensor& x) {
  Tensor out = Tensor::from_values(x.shape(), x.values().square());
  return g.record("square", out, {x}, [x, out]() mutable {
    if (x.requires_grad()) x.grad() += out.grad() * 2.0 * x.values();
  });
}

Tensor sqrt(Graph& g, const Tensor& x) {
  Tensor out = Tensor::from_values(x.shape(), x.values().sqrt());
  return g.record("sqrt", out, {x}, [x, out]() mutable {
    if (x.requires_grad()) x.grad() += out.grad() * 0.5 / out.values();
  });
}

Tensor mean(Graph& g, const Tensor& x) {
  const double inv = 1.0 / static_cast<double>(x.size());
  Tensor out = Tensor::scalar(x.values().sum() * inv);
  return g.record("mean", out, {x}, [x, out, inv]() mutable {
    if (x.requires_grad()) x.grad() += out.grad()[0] * inv;
  });
}

Tensor sum(Graph& g, const Tensor& x) {
  Tensor out = Tensor::scalar(x.values().sum());
  return g.record("sum", out, {x}, [x, out]() mutable {
    if (x.requires_grad()) x.grad() += out.grad()[0];
  });
}

Tensor l2_norm(Graph& g, const Tensor& x) {
  const double norm = std::sqrt(x.values().square().sum());
  Tensor out = Tensor::scalar(norm);
  return g.record("l2_norm", out, {x}, [x, out, norm]() mutable {
    if (x.requires_grad() && norm > 0.0)
      x.grad() += out.grad()[0] / norm * x.values();
  });
}

Tensor selu(Graph& g, const Tensor& x) {
  const auto& v = x.values();
  // Branchless split: the positive part contributes lambda*v, the negative
  // part lambda*alpha*(exp(v)-1); each term vanishes on the other side.
  Eigen::ArrayXd y = kSeluLambda * v.max(0.0) +
                     (kSeluLambda * kSeluAlpha) * (v.min(0.0).exp() - 1.0);
  Tensor out = Tensor::from_values(x.shape(), std::move(y));
  return g.record("selu", out, {x}, [x, out]() mutable {
    if (!x.requires_grad()) return;
    // Derivative at exactly 0 uses the left-branch value lambda*alpha; on
    // the negative side lambda*alpha*exp(v) equals y + lambda*alpha.
    const Eigen::ArrayXd positive = (x.values() > 0.0).cast<double>();
    x.grad() += out.grad() *
                (positive * kSeluLambda +
                 (1.0 - positive) * (out.values() + kSeluLambda * kSeluAlpha));
  });
}

Tensor leaky_relu(Graph& g, const Tensor& x, double slope) {
  const auto& v = x.values();
  Tensor out = Tensor::from_values(x.shape(), v.max(0.0) + slope * v.min(0.0));
  return g.record("leaky_relu", out, {x}, [x, out, slope]() mutable {
    if (!x.requires_grad()) return;
    const Eigen::ArrayXd positive = (x.values() > 0.0).cast<double>();
    x.grad() += out.grad() * (positive + (1.0 - positive) * slope);
  });
}

Tensor softmax(Graph& g, const Tensor& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis);
  Eigen::ArrayXd y(x.size());
  const auto& v = x.values();
  for (Index o = 0; o < s.outer; ++o) {
    for (Index i = 0; i < s.inner; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (Index a = 0; a < s.extent; ++a)
        mx = std::max(mx, v[(o * s.extent + a) * s.inner + i]);
      double denom = 0.0;
      for (Index a = 0; a < s.extent; ++a) {
        const Index idx = (o * s.extent + a) * s.inner + i;
        y[idx] = std::exp(v[idx] - mx);
        denom += y[idx];
      }
      for (Index a = 0; a < s.extent; ++a)
        y[(o * s.extent + a) * s.inner + i] /= denom;
    }
  }
  Tensor out = Tensor::from_values(x.shape(), std::move(y));
  return g.record("softmax", out, {x}, [x, out, s]() mutable {
    if (!x.requires_grad()) return;
    const auto& y = out.values();
    const auto& gy = out.grad();
    auto& gx = x.grad();
    for (Index o = 0; o < s.outer; ++o) {
      for (Index i = 0; i < s.inner; ++i) {
        double dot = 0.0;
        for (Index a = 0; a < s.extent; ++a) {
          const Index idx = (o * s.extent + a) * s.inner + i;
          dot += gy[idx] * y[idx];
        }
        for (Index a = 0; a < s.extent; ++a) {
          const Index idx = (o * s.extent + a) * s.inner + i;
          gx[idx] += y[idx] * (gy[idx] - dot);
        }
      }
    }
  });
}

Tensor concat(Graph& g, const std::vector<Tensor>& parts, std::size_t axis) {
  require(!parts.empty(), errc::invalid_argument, "concat: no inputs");
  const Shape& first = parts.front().shape();
  require(axis < first.size(), errc::invalid_argument, "axis out of range");
  Index total_extent = 0;
  for (const Tensor& p : parts) {
    require(p.rank() == first.size(), errc::shape_mismatch,
            "concat: rank mismatch");
    for (std::size_t d = 0; d < first.size(); ++d) {
      if (d != axis)
        require(p.shape()[d] == first[d], errc::shape_mismatch,
                "concat: extent mismatch outside the concat axis");
    }
    total_extent += p.shape()[axis];
  }
  Shape out_shape = first;
  out_shape[axis] = total_extent;

  const AxisSplit s = split_axis(out_shape, axis);
  Eigen::ArrayXd y(shape_size(out_shape));
  Index offset = 0;
  for (const Tensor& p : parts) {
    const Index extent = p.shape()[axis];
    const Index chunk = extent * s.inner;
    for (Index o = 0; o < s.outer; ++o) {
      y.segment((o * total_extent + offset) * s.inner, chunk) =
          p.values().segment(o * chunk, chunk);
    }
    offset += extent;
  }
  Tensor out = Tensor::from_values(std::move(out_shape), std::move(y));
  std::vector<Tensor> inputs = parts;
  return g.record("concat", out, inputs, [inputs, out, s, total_extent]() mutable {
    const auto& gy = out.grad();
    Index offset = 0;
    for (Tensor& p : inputs) {
      const Index extent = p.size() / (s.outer * s.inner);
      const Index chunk = extent * s.inner;
      if (p.requires_grad()) {
        auto& gp = p.grad();
        for (Index o = 0; o < s.outer; ++o)
          gp.segment(o * chunk, chunk) +=
              gy.segment((o * total_extent + offset) * s.inner, chunk);
      }
      offset += extent;
    }
  });
}

Tensor slice(Graph& g, const Tensor& x, std::size_t axis, Index start,
             Index count) {
  const AxisSplit s = split_axis(x.shape(), axis);
  require(start >= 0 && count >= 1 && start + count <= s.extent,
          errc::invalid_argument, "slice: range out of bounds");
  Shape out_shape = x.shape();
  out_shape[axis] = count;
  Eigen::ArrayXd y(s.outer * count * s.inner);
  const Index chunk = count * s.inner;
  for (Index o = 0; o < s.outer; ++o)
    y.segment(o * chunk, chunk) =
        x.values().segment((o * s.extent + start) * s.inner, chunk);
  Tensor out = Tensor::from_values(std::move(out_shape), std::move(y));
  return g.record("slice", out, {x}, [x, out, s, start, chunk]() mutable {
    if (!x.requires_grad()) return;
    auto& gx = x.grad();
    const auto& gy = out.grad();
    for (Index o = 0; o < s.outer; ++o)
      gx.segment((o * s.extent + start) * s.inner, chunk) +=
          gy.segment(o * chunk, chunk);
  });
}

Tensor reshape(Graph& g, const Tensor& x, Shape shape) {
  (void)g;  // aliasing view: gradient flows through the shared buffer
  return x.reshaped(std::move(shape));
}

Tensor matmul(Graph& g, const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2, errc::shape_mismatch,
          "matmul expects rank-2 tensors");
  const Index m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  require(k == k2, errc::shape_mismatch,
          "matmul: inner extents differ " + shape_to_string(a.shape()) +
              " vs " + shape_to_string(b.shape()));
  Eigen::ArrayXd y(m * n);
  {
    ConstRowMap am(a.values().data(), m, k);
    ConstRowMap bm(b.values().data(), k, n);
    RowMap ym(y.data(), m, n);
    ym.noalias() = am * bm;
  }
  Tensor out = Tensor::from_values({m, n}, std::move(y));
  return g.record("matmul", out, {a, b}, [a, b, out, m, k, n]() mutable {
    ConstRowMap gy(out.grad().data(), m, n);
    if (a.requires_grad()) {
      ConstRowMap bm(b.values().data(), k, n);
      RowMap ga(a.grad().data(), m, k);
      ga.noalias() += gy * bm.transpose();
    }
    if (b.requires_grad()) {
      ConstRowMap am(a.values().data(), m, k);
      RowMap gb(b.grad().data(), k, n);
      gb.noalias() += am.transpose() * gy;
    }
  });
}

// ---- convolution ------------------------------------------------------

namespace {

struct ConvGeometry {
  Index channels, in_h, in_w, k_h, k_w, s_h, s_w, p_h, p_w, out_h, out_w;
  Index patch_rows() const { return channels * k_h * k_w; }
  Index out_positions() const { return out_h * out_w; }
};

/// Gathers padded patches of one image [C,H,W] into a column-major matrix
/// [C*kH*kW, outH*outW].
void im2col(const double* image, const ConvGeometry& geo, ColMat& col) {
  col.resize(geo.patch_rows(), geo.out_positions());
  for (Index oh = 0; oh < geo.out_h; ++oh) {
    for (Index ow = 0; ow < geo.out_w; ++ow) {
      const Index p = oh * geo.out_w + ow;
      double* dst = col.data() + p * geo.patch_rows();
      for (Index c = 0; c < geo.channels; ++c) {
        const double* plane = image + c * geo.in_h * geo.in_w;
        for (Index u = 0; u < geo.k_h; ++u) {
          const Index h = oh * geo.s_h - geo.p_h + u;
          for (Index v = 0; v < geo.k_w; ++v) {
            const Index w = ow * geo.s_w - geo.p_w + v;
            *dst++ = (h >= 0 && h < geo.in_h && w >= 0 && w < geo.in_w)
                         ? plane[h * geo.in_w + w]
                         : 0.0;
          }
        }
      }
    }
  }
}

/// Scatter-adds columns back into one image, the adjoint of im2col.
void col2im(const ColMat& col, const ConvGeometry& geo, double* image) {
  for (Index oh = 0; oh < geo.out_h; ++oh) {
    for (Index ow = 0; ow < geo.out_w; ++ow) {
      const Index p = oh * geo.out_w + ow;
      const double* src = col.data() + p * geo.patch_rows();
      for (Index c = 0; c < geo.channels; ++c) {
        double* plane = image + c * geo.in_h * geo.in_w;
        for (Index u = 0; u < geo.k_h; ++u) {
          const Index h = oh * geo.s_h - geo.p_h + u;
          for (Index v = 0; v < geo.k_w; ++v) {
            const Index w = ow * geo.s_w - geo.p_w + v;
            if (h >= 0 && h < geo.in_h && w >= 0 && w < geo.in_w)
              plane[h * geo.in_w + w] += *src;
            ++src;
          }
        }
      }
    }
  }
}

// Direct-loop kernels for the skinny-channel regime, where materializing
// im2col columns is pure memory traffic. All three share the conv index
// relation h = i*sH - pH + u, w = j*sW - pW + v between conv-input
// coordinates (h, w) and conv-output coordinates (i, j).

struct ConvDims {
  Index c_in_maps;     // channels living on conv-input-spatial maps (x, gx)
  Index c_out_maps;    // channels living on conv-output-spatial maps (y, gy)
  Index in_h, in_w;    // conv-input spatial extents
  Index out_h, out_w;  // conv-output spatial extents
  Index k_h, k_w, s_h, s_w, p_h, p_w;
};

/// Valid conv-output js for column offset v: 0 <= j*sW - pW + v < in_w.
inline std::pair<Index, Index> j_range(const ConvDims& d, Index v) {
  const Index lo_num = d.p_w - v;
  const Index lo = lo_num > 0 ? (lo_num + d.s_w - 1) / d.s_w : 0;
  const Index hi_num = d.in_w - 1 + d.p_w - v;
  const Index hi = hi_num < 0 ? 0 : std::min(d.out_w, hi_num / d.s_w + 1);
  return {lo, std::max(lo, hi)};
}

/// result[rc, i, j] += sum_{sc,u,v} k[rc, sc, u, v] src[sc, h, w]
/// (conv2d forward; conv_transpose2d input gradient). The kernel layout is
/// [out-map channel][in-map channel][u][v].
void conv_output_gather(const double* src, const double* kernel,
                        const ConvDims& d, double* result) {
  for (Index rc = 0; rc < d.c_out_maps; ++rc) {
    for (Index i = 0; i < d.out_h; ++i) {
      double* row = result + (rc * d.out_h + i) * d.out_w;
      for (Index u = 0; u < d.k_h; ++u) {
        const Index h = i * d.s_h - d.p_h + u;
        if (h < 0 || h >= d.in_h) continue;
        for (Index sc = 0; sc < d.c_in_maps; ++sc) {
          const double* srow = src + (sc * d.in_h + h) * d.in_w;
          const double* krow =
              kernel + ((rc * d.c_in_maps + sc) * d.k_h + u) * d.k_w;
          for (Index v = 0; v < d.k_w; ++v) {
            const double kval = krow[v];
            const auto [j_lo, j_hi] = j_range(d, v);
            const Index base = v - d.p_w;
            for (Index j = j_lo; j < j_hi; ++j)
              row[j] += kval * srow[j * d.s_w + base];
          }
        }
      }
    }
  }
}

/// result[rc, h, w] += sum_{sc,u,v} k[sc, rc, u, v] src[sc, i, j]
/// (conv2d input gradient; conv_transpose2d forward). The kernel layout is
/// [out-map channel][in-map channel][u][v].
void conv_input_gather(const double* src, const double* kernel,
                       const ConvDims& d, double* result) {
  for (Index rc = 0; rc < d.c_in_maps; ++rc) {
    for (Index h = 0; h < d.in_h; ++h) {
      double* row = result + (rc * d.in_h + h) * d.in_w;
      for (Index u = 0; u < d.k_h; ++u) {
        const Index t = h + d.p_h - u;
        if (t < 0 || t % d.s_h != 0) continue;
        const Index i = t / d.s_h;
        if (i >= d.out_h) continue;
        for (Index sc = 0; sc < d.c_out_maps; ++sc) {
          const double* srow = src + (sc * d.out_h + i) * d.out_w;
          const double* krow =
              kernel + ((sc * d.c_in_maps + rc) * d.k_h + u) * d.k_w;
          for (Index v = 0; v < d.k_w; ++v) {
            const double kval = krow[v];
            const auto [j_lo, j_hi] = j_range(d, v);
            const Index base = v - d.p_w;
            for (Index j = j_lo; j < j_hi; ++j)
              row[j * d.s_w + base] += kval * srow[j];
          }
        }
      }
    }
  }
}

/// gk[a, b, u, v] += sum_{i,j} A[a, i, j] B[b, h, w] with A on
/// conv-output-spatial maps and B on conv-input-spatial maps
/// (kernel gradients of both convolution ops).
void conv_kernel_grad(const double* a_maps, const double* b_maps,
                      const ConvDims& d, double* gk) {
  for (Index a = 0; a < d.c_out_maps; ++a) {
    for (Index b = 0; b < d.c_in_maps; ++b) {
      for (Index u = 0; u < d.k_h; ++u) {
        for (Index v = 0; v < d.k_w; ++v) {
          const auto [j_lo, j_hi] = j_range(d, v);
          double acc = 0.0;
          const Index base = v - d.p_w;
          for (Index i = 0; i < d.out_h; ++i) {
            const Index h = i * d.s_h - d.p_h + u;
            if (h < 0 || h >= d.in_h) continue;
            const double* arow = a_maps + (a * d.out_h + i) * d.out_w;
            const double* brow = b_maps + (b * d.in_h + h) * d.in_w;
            for (Index j = j_lo; j < j_hi; ++j)
              acc += arow[j] * brow[j * d.s_w + base];
          }
          gk[((a * d.c_in_maps + b) * d.k_h + u) * d.k_w + v] += acc;
        }
      }
    }
  }
}

/// im2col + GEMM only pays off once both matrix dimensions are real.
bool wide_enough_for_gemm(Index c_out, Index patch_rows) {
  return c_out >= 16 && patch_rows >= 96;
}

}  // namespace

Tensor conv2d(Graph& g, const Tensor& input, const Tensor& kernel,
              const Tensor& bias, std::array<Index, 2> stride,
              std::array<Index, 2> padding) {
  require(input.rank() == 4, errc::shape_mismatch,
          "conv2d: input must be [B,C,H,W], got " +
              shape_to_string(input.shape()));
  require(kernel.rank() == 4, errc::shape_mismatch,
          "conv2d: kernel must be [Cout,Cin,kH,kW], got " +
              shape_to_string(kernel.shape()));
  const Index batch = input.dim(0), c_in = input.dim(1), in_h = input.dim(2),
              in_w = input.dim(3);
  const Index c_out = kernel.dim(0), k_h = kernel.dim(2), k_w = kernel.dim(3);
  require(kernel.dim(1) == c_in, errc::shape_mismatch,
          "conv2d: kernel expects " + std::to_string(kernel.dim(1)) +
              " input channels, input has " + std::to_string(c_in));
  require(bias.rank() == 1 && bias.dim(0) == c_out, errc::shape_mismatch,
          "conv2d: bias must be [Cout]");
  require(stride[0] >= 1 && stride[1] >= 1, errc::invalid_argument,
          "conv2d: stride must be >= 1");
  require(padding[0] >= 0 && padding[1] >= 0, errc::invalid_argument,
          "conv2d: padding must be >= 0");
  const Index num_h = in_h + 2 * padding[0] - k_h;
  const Index num_w = in_w + 2 * padding[1] - k_w;
  require(num_h >= 0 && num_w >= 0, errc::shape_mismatch,
          "conv2d: kernel " + std::to_string(k_h) + "x" + std::to_string(k_w) +
              " exceeds padded input " + std::to_string(in_h + 2 * padding[0]) +
              "x" + std::to_string(in_w + 2 * padding[1]));
  ConvGeometry geo{c_in,       in_h,       in_w,
                   k_h,        k_w,        stride[0],
                   stride[1],  padding[0], padding[1],
                   num_h / stride[0] + 1,  num_w / stride[1] + 1};
  const ConvDims dims{c_in,      c_out,      in_h,       in_w,
                      geo.out_h, geo.out_w,  k_h,        k_w,
                      stride[0], stride[1],  padding[0], padding[1]};
  const bool gemm = wide_enough_for_gemm(c_out, geo.patch_rows());

  const Index positions = geo.out_positions();
  Eigen::ArrayXd y(batch * c_out * positions);
  if (gemm) {
    ColMat col;
    ConstRowMap km(kernel.values().data(), c_out, geo.patch_rows());
    for (Index b = 0; b < batch; ++b) {
      im2col(input.values().data() + b * c_in * in_h * in_w, geo, col);
      RowMap ym(y.data() + b * c_out * positions, c_out, positions);
      ym.noalias() = km * col;
      ym.colwise() +=
          Eigen::Map<const Eigen::VectorXd>(bias.values().data(), c_out);
    }
  } else {
    for (Index b = 0; b < batch; ++b) {
      double* item = y.data() + b * c_out * positions;
      for (Index co = 0; co < c_out; ++co)
        std::fill(item + co * positions, item + (co + 1) * positions,
                  bias.values()[co]);
      conv_output_gather(input.values().data() + b * c_in * in_h * in_w,
                         kernel.values().data(), dims, item);
    }
  }
  Tensor out =
      Tensor::from_values({batch, c_out, geo.out_h, geo.out_w}, std::move(y));
  return g.record(
      "conv2d", out, {input, kernel, bias},
      [input, kernel, bias, out, geo, dims, gemm, batch, c_in, c_out, in_h,
       in_w, positions]() mutable {
        ColMat col;
        for (Index b = 0; b < batch; ++b) {
          const double* gy_item = out.grad().data() + b * c_out * positions;
          if (gemm) {
            ConstRowMap gy(gy_item, c_out, positions);
            if (kernel.requires_grad() || input.requires_grad())
              im2col(input.values().data() + b * c_in * in_h * in_w, geo, col);
            if (kernel.requires_grad()) {
              RowMap gk(kernel.grad().data(), c_out, geo.patch_rows());
              gk.noalias() += gy * col.transpose();
            }
            if (input.requires_grad()) {
              ConstRowMap km(kernel.values().data(), c_out, geo.patch_rows());
              ColMat gcol = km.transpose() * gy;
              col2im(gcol, geo, input.grad().data() + b * c_in * in_h * in_w);
            }
          } else {
            if (kernel.requires_grad())
              conv_kernel_grad(gy_item,
                               input.values().data() + b * c_in * in_h * in_w,
                               dims, kernel.grad().data());
            if (input.requires_grad())
              conv_input_gather(gy_item, kernel.values().data(), dims,
                                input.grad().data() + b * c_in * in_h * in_w);
          }
          if (bias.requires_grad()) {
            Eigen::Map<Eigen::VectorXd> gb(bias.grad().data(), c_out);
            gb += ConstRowMap(gy_item, c_out, positions).rowwise().sum();
          }
        }
      });
}

Tensor conv_transpose2d(Graph& g, const Tensor& input, const Tensor& kernel,
                        const Tensor& bias, std::array<Index, 2> stride,
                        std::array<Index, 2> padding,
                        std::array<Index, 2> output_padding) {
  require(input.rank() == 4, errc::shape_mismatch,
          "conv_transpose2d: input must be [B,C,H,W], got " +
              shape_to_string(input.shape()));
  require(kernel.rank() == 4, errc::shape_mismatch,
          "conv_transpose2d: kernel must be [Cin,Cout,kH,kW], got " +
              shape_to_string(kernel.shape()));
  const Index batch = input.dim(0), c_in = input.dim(1), in_h = input.dim(2),
              in_w = input.dim(3);
  const Index c_out = kernel.dim(1), k_h = kernel.dim(2), k_w = kernel.dim(3);
  require(kernel.dim(0) == c_in, errc::shape_mismatch,
          "conv_transpose2d: kernel expects " + std::to_string(kernel.dim(0)) +
              " input channels, input has " + std::to_string(c_in));
  require(bias.rank() == 1 && bias.dim(0) == c_out, errc::shape_mismatch,
          "conv_transpose2d: bias must be [Cout]");
  require(output_padding[0] >= 0 && output_padding[0] < stride[0] &&
              output_padding[1] >= 0 && output_padding[1] < stride[1],
          errc::invalid_argument,
          "conv_transpose2d: output_padding must be < stride");
  const Index out_h =
      (in_h - 1) * stride[0] - 2 * padding[0] + k_h + output_padding[0];
  const Index out_w =
      (in_w - 1) * stride[1] - 2 * padding[1] + k_w + output_padding[1];
  require(out_h >= 1 && out_w >= 1, errc::shape_mismatch,
          "conv_transpose2d: output collapses to zero size");

  // Structurally this is the adjoint of a conv2d whose input is our
  // output: (out_h, out_w) here take the conv-input spatial role and the
  // transposed-conv input channels c_in live on conv-output-spatial maps.
  ConvGeometry geo{c_out, out_h,  out_w,      k_h,        k_w,  stride[0],
                   stride[1],     padding[0], padding[1], in_h, in_w};
  const ConvDims dims{c_out,     c_in,       out_h,      out_w,
                      in_h,      in_w,       k_h,        k_w,
                      stride[0], stride[1],  padding[0], padding[1]};
  const bool gemm = wide_enough_for_gemm(c_in, geo.patch_rows());

  const Index positions = in_h * in_w;
  const Index out_plane = out_h * out_w;
  Eigen::ArrayXd y(batch * c_out * out_plane);
  for (Index b = 0; b < batch; ++b) {
    double* item = y.data() + b * c_out * out_plane;
    for (Index c = 0; c < c_out; ++c)
      std::fill(item + c * out_plane, item + (c + 1) * out_plane,
                bias.values()[c]);
    if (gemm) {
      ConstRowMap km(kernel.values().data(), c_in, geo.patch_rows());
      ConstRowMap xm(input.values().data() + b * c_in * positions, c_in,
                     positions);
      ColMat col = km.transpose() * xm;
      col2im(col, geo, item);
    } else {
      conv_input_gather(input.values().data() + b * c_in * positions,
                        kernel.values().data(), dims, item);
    }
  }
  Tensor out =
      Tensor::from_values({batch, c_out, out_h, out_w}, std::move(y));
  return g.record(
      "conv_transpose2d", out, {input, kernel, bias},
      [input, kernel, bias, out, geo, dims, gemm, batch, c_in, c_out, out_h,
       out_w, positions]() mutable {
        ColMat gcol;
        for (Index b = 0; b < batch; ++b) {
          const double* gy_img = out.grad().data() + b * c_out * out_h * out_w;
          if (gemm) {
            if (input.requires_grad() || kernel.requires_grad())
              im2col(gy_img, geo, gcol);
            if (input.requires_grad()) {
              ConstRowMap km(kernel.values().data(), c_in, geo.patch_rows());
              RowMap gx(input.grad().data() + b * c_in * positions, c_in,
                        positions);
              gx.noalias() += km * gcol;
            }
            if (kernel.requires_grad()) {
              ConstRowMap xm(input.values().data() + b * c_in * positions,
                             c_in, positions);
              RowMap gk(kernel.grad().data(), c_in, geo.patch_rows());
              gk.noalias() += xm * gcol.transpose();
            }
          } else {
            if (input.requires_grad())
              conv_output_gather(gy_img, kernel.values().data(), dims,
                                 input.grad().data() + b * c_in * positions);
            if (kernel.requires_grad())
              conv_kernel_grad(input.values().data() + b * c_in * positions,
                               gy_img, dims, kernel.grad().data());
          }
          if (bias.requires_grad()) {
            for (Index c = 0; c < c_out; ++c)
              bias.grad()[c] +=
                  Eigen::Map<const Eigen::ArrayXd>(
                      gy_img + c * out_h * out_w, out_h * out_w)
                      .sum();
          }
        }
      });
}

// ---- batch normalization ---------------------------------------------

BatchNormState BatchNormState::init(Index channels) {
  BatchNormState s;
  s.running_mean = Eigen::ArrayXd::Zero(channels);
  s.running_var = Eigen::ArrayXd::Ones(channels);
  return s;
}

Tensor batch_norm2d(Graph& g, const Tensor& input, const Tensor& gamma,
                    const Tensor& beta, BatchNormState& state, Mode mode,
                    double momentum, double eps) {
  require(input.rank() == 4, errc::shape_mismatch,
          "batch_norm2d: input must be [B,C,H,W]");
  const Index batch = input.dim(0), channels = input.dim(1),
              plane = input.dim(2) * input.dim(3);
  require(gamma.rank() == 1 && gamma.dim(0) == channels && beta.rank() == 1 &&
              beta.dim(0) == channels,
          errc::shape_mismatch, "batch_norm2d: gamma/beta must be [C]");
  require(state.running_mean.size() == channels &&
              state.running_var.size() == channels,
          errc::shape_mismatch, "batch_norm2d: state channel mismatch");
  const Index n = batch * plane;  // samples per channel

  Eigen::ArrayXd mean_c(channels), inv_std_c(channels);
  if (mode == Mode::train) {
    require(n >= 2, errc::invalid_argument,
            "batch_norm2d: variance undefined for a single element");
    for (Index c = 0; c < channels; ++c) {
      double s = 0.0, s2 = 0.0;
      for (Index b = 0; b < batch; ++b) {
        const double* seg = input.values().data() + (b * channels + c) * plane;
        for (Index i = 0; i < plane; ++i) {
          s += seg[i];
          s2 += seg[i] * seg[i];
        }
      }
      const double mu = s / static_cast<double>(n);
      const double var =
          std::max(0.0, s2 / static_cast<double>(n) - mu * mu);
      mean_c[c] = mu;
      inv_std_c[c] = 1.0 / std::sqrt(var + eps);
      const double unbiased = var * static_cast<double>(n) /
                              static_cast<double>(n - 1);
      state.running_mean[c] =
          (1.0 - momentum) * state.running_mean[c] + momentum * mu;
      state.running_var[c] =
          (1.0 - momentum) * state.running_var[c] + momentum * unbiased;
    }
  } else {
    mean_c = state.running_mean;
    inv_std_c = 1.0 / (state.running_var + eps).sqrt();
  }

  Eigen::ArrayXd y(input.size());
  for (Index b = 0; b < batch; ++b) {
    for (Index c = 0; c < channels; ++c) {
      const Index off = (b * channels + c) * plane;
      y.segment(off, plane) =
          (input.values().segment(off, plane) - mean_c[c]) * inv_std_c[c] *
              gamma.values()[c] +
          beta.values()[c];
    }
  }
  Tensor out = Tensor::from_values(input.shape(), std::move(y));
  const bool train_mode = mode == Mode::train;
  return g.record(
      "batch_norm2d", out, {input, gamma, beta},
      [input, gamma, beta, out, mean_c, inv_std_c, batch, channels, plane, n,
       train_mode]() mutable {
        const auto& gy = out.grad();
        for (Index c = 0; c < channels; ++c) {
          // Per-channel reductions over (B,H,W), fused into one pass.
          double sum_gy = 0.0, sum_gy_xhat = 0.0;
          for (Index b = 0; b < batch; ++b) {
            const Index off = (b * channels + c) * plane;
            const double* gseg = gy.data() + off;
            const double* xseg = input.values().data() + off;
            for (Index i = 0; i < plane; ++i) {
              sum_gy += gseg[i];
              sum_gy_xhat += gseg[i] * (xseg[i] - mean_c[c]) * inv_std_c[c];
            }
          }
          if (gamma.requires_grad()) gamma.grad()[c] += sum_gy_xhat;
          if (beta.requires_grad()) beta.grad()[c] += sum_gy;
          if (input.requires_grad()) {
            const double gam = gamma.values()[c];
            const double scale_g = gam * inv_std_c[c];
            const double mean_gy = sum_gy / static_cast<double>(n);
            const double mean_gy_xhat = sum_gy_xhat / static_cast<double>(n);
            for (Index b = 0; b < batch; ++b) {
              const Index off = (b * channels + c) * plane;
              const double* gseg = gy.data() + off;
              const double* xseg = input.values().data() + off;
              double* gxseg = input.grad().data() + off;
              if (train_mode) {
                for (Index i = 0; i < plane; ++i) {
                  const double xhat = (xseg[i] - mean_c[c]) * inv_std_c[c];
                  gxseg[i] += scale_g * (gseg[i] - mean_gy - xhat * mean_gy_xhat);
                }
              } else {
                for (Index i = 0; i < plane; ++i) gxseg[i] += scale_g * gseg[i];
              }
            }
          }
        }
      });
}

// ---- differentiable STFT bridge ---------------------------------------

Tensor stft(Graph& g, const Tensor& wave, const signal::StftConfig& config) {
  require(wave.rank() == 1, errc::shape_mismatch,
          "stft op expects a rank-1 waveform tensor");
  const Eigen::ArrayXd x = wave.values();
  const signal::ComplexSpectrogram spec = signal::stft(x, config);
  const Index bins = spec.bins(), frames = spec.frames();
  Eigen::ArrayXd y(2 * bins * frames);
  RowArrMap(y.data(), bins, frames) = spec.real_part;
  RowArrMap(y.data() + bins * frames, bins, frames) = spec.imag_part;
  Tensor out = Tensor::from_values({2, bins, frames}, std::move(y));
  return g.record("stft", out, {wave}, [wave, out, config, bins, frames]() mutable {
    if (!wave.requires_grad()) return;
    const Index fft_len = config.fft_length;
    const Eigen::ArrayXd window = signal::hann_window(config.window_length);
    const auto& gy = out.grad();
    ConstRowArrMap g_re(gy.data(), bins, frames);
    ConstRowArrMap g_im(gy.data() + bins * frames, bins, frames);
    auto& gx = wave.grad();
    fft::ComplexVec gfull(fft_len);
    for (Index t = 0; t < frames; ++t) {
      gfull.setZero();
      for (Index b = 0; b < bins; ++b)
        gfull[b] = std::complex<double>(g_re(b, t), g_im(b, t));
      // d/dx of Re/Im bins: window-weighted inverse-orientation transform.
      const fft::ComplexVec time = fft::inverse(gfull);
      const Index start = t * config.hop_length;
      for (Index l = 0; l < config.window_length; ++l)
        gx[start + l] +=
            window[l] * static_cast<double>(fft_len) * time[l].real();
    }
  });
}

Tensor istft(Graph& g, const Tensor& spec, const signal::StftConfig& config,
             Index original_length) {
  require(spec.rank() == 3 && spec.dim(0) == 2, errc::shape_mismatch,
          "istft op expects a [2,F,T] tensor");
  const Index bins = spec.dim(1), frames = spec.dim(2);
  signal::ComplexSpectrogram s;
  s.config = config;
  s.original_length = original_length;
  s.real_part = ConstRowArrMap(spec.values().data(), bins, frames);
  s.imag_part = ConstRowArrMap(spec.values().data() + bins * frames, bins, frames);
  Eigen::ArrayXd y = signal::istft(s);
  const Index out_len = y.size();
  Tensor out = Tensor::from_values({out_len}, std::move(y));
  return g.record("istft", out, {spec}, [spec, out, config, bins, frames,
                                         original_length]() mutable {
    if (!spec.requires_grad()) return;
    const Index fft_len = config.fft_length;
    const Index hop = config.hop_length;
    const Index win_len = config.window_length;
    const Eigen::ArrayXd window = signal::hann_window(win_len);
    const Index full_len = (frames - 1) * hop + win_len;

    Eigen::ArrayXd wss = Eigen::ArrayXd::Zero(full_len);
    for (Index t = 0; t < frames; ++t)
      wss.segment(t * hop, win_len) += window.square();

    // Adjoint of truncation + normalization.
    Eigen::ArrayXd g_acc = Eigen::ArrayXd::Zero(full_len);
    const Index n = std::min(full_len, original_length);
    for (Index i = 0; i < n; ++i)
      g_acc[i] = wss[i] > 1e-8 ? out.grad()[i] / wss[i] : 0.0;

    auto& gs = spec.grad();
    RowArrMap g_re(gs.data(), bins, frames);
    RowArrMap g_im(gs.data() + bins * frames, bins, frames);
    Eigen::VectorXd gframe = Eigen::VectorXd::Zero(fft_len);
    for (Index t = 0; t < frames; ++t) {
      gframe.setZero();
      gframe.head(win_len) =
          (g_acc.segment(t * hop, win_len) * window).matrix();
      const fft::ComplexVec gb = fft::rfft(gframe, fft_len);
      // Adjoint of the Hermitian-extended inverse real DFT.
      for (Index b = 0; b < bins; ++b) {
        const double c = (b == 0 || b == fft_len / 2)
                             ? 1.0 / static_cast<double>(fft_len)
                             : 2.0 / static_cast<double>(fft_len);
        g_re(b, t) += c * gb[b].real();
        if (b != 0 && b != fft_len / 2) g_im(b, t) += c * gb[b].imag();
      }
    }
  });
}

}  // namespace mcse::ad

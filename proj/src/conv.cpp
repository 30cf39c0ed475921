#include <Eigen/Core>

#include <string>

#include "vqunet/ops.hpp"

namespace vqunet {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

// Geometry of a forward cross-correlation from an [n,h,w,cin] image to an
// [n,ho,wo,cout] image.
struct ConvGeometry {
  std::size_t n, h, w, cin;
  std::size_t kh, kw, cout;
  std::size_t stride;
  std::size_t ho, wo;
  std::size_t pad_top, pad_left;

  std::size_t patch() const { return kh * kw * cin; }
  std::size_t rows() const { return n * ho * wo; }
};

std::size_t same_pad_before(std::size_t in, std::size_t out, std::size_t k, std::size_t stride) {
  const std::ptrdiff_t total =
      static_cast<std::ptrdiff_t>((out - 1) * stride + k) - static_cast<std::ptrdiff_t>(in);
  return total > 0 ? static_cast<std::size_t>(total) / 2 : 0;
}

ConvGeometry make_geometry(std::size_t n, std::size_t h, std::size_t w, std::size_t cin, std::size_t kh,
                           std::size_t kw, std::size_t cout, std::size_t stride, Padding padding,
                           const char* op) {
  if (stride == 0) throw ShapeError(std::string(op) + ": stride must be positive");
  if (n == 0 || h == 0 || w == 0 || kh == 0 || kw == 0) {
    throw ShapeError(std::string(op) + ": zero-sized dimension");
  }
  ConvGeometry g{n, h, w, cin, kh, kw, cout, stride, 0, 0, 0, 0};
  if (padding == Padding::kSame) {
    g.ho = (h + stride - 1) / stride;
    g.wo = (w + stride - 1) / stride;
    g.pad_top = same_pad_before(h, g.ho, kh, stride);
    g.pad_left = same_pad_before(w, g.wo, kw, stride);
  } else {
    if (h < kh || w < kw) {
      throw ShapeError(std::string(op) + ": kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                       " larger than input " + std::to_string(h) + "x" + std::to_string(w) + " in valid mode");
    }
    g.ho = (h - kh) / stride + 1;
    g.wo = (w - kw) / stride + 1;
  }
  return g;
}

// Unfolds every receptive field into a row of length kh*kw*cin.
std::vector<double> im2col(std::span<const double> x, const ConvGeometry& g) {
  std::vector<double> cols(g.rows() * g.patch(), 0.0);
  double* dst = cols.data();
  for (std::size_t b = 0; b < g.n; ++b)
    for (std::size_t oy = 0; oy < g.ho; ++oy)
      for (std::size_t ox = 0; ox < g.wo; ++ox) {
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad_top);
          for (std::size_t kx = 0; kx < g.kw; ++kx, dst += g.cin) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                      static_cast<std::ptrdiff_t>(g.pad_left);
            if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(g.h) ||
                ix >= static_cast<std::ptrdiff_t>(g.w))
              continue;
            const double* src = x.data() + ((b * g.h + iy) * g.w + ix) * g.cin;
            std::copy_n(src, g.cin, dst);
          }
        }
      }
  return cols;
}

// Adjoint of im2col: scatters rows back onto the image, accumulating.
void col2im(const double* cols, const ConvGeometry& g, double* x) {
  const double* src = cols;
  for (std::size_t b = 0; b < g.n; ++b)
    for (std::size_t oy = 0; oy < g.ho; ++oy)
      for (std::size_t ox = 0; ox < g.wo; ++ox) {
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad_top);
          for (std::size_t kx = 0; kx < g.kw; ++kx, src += g.cin) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                      static_cast<std::ptrdiff_t>(g.pad_left);
            if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(g.h) ||
                ix >= static_cast<std::ptrdiff_t>(g.w))
              continue;
            double* dst = x + ((b * g.h + iy) * g.w + ix) * g.cin;
            for (std::size_t c = 0; c < g.cin; ++c) dst[c] += src[c];
          }
        }
      }
}

void check_ranks(const Tensor& input, const Tensor& kernel, const char* op) {
  if (input.rank() != 4 || kernel.rank() != 4) {
    throw ShapeError(std::string(op) + ": expected rank-4 input and kernel, got " + shape_string(input.shape()) +
                     " and " + shape_string(kernel.shape()));
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, Padding padding) {
  check_ranks(input, kernel, "conv2d");
  const auto& is = input.shape();
  const auto& ks = kernel.shape();
  if (ks[2] != is[3]) {
    throw ShapeError("conv2d: kernel " + shape_string(ks) + " expects " + std::to_string(ks[2]) +
                     " input channels, input is " + shape_string(is));
  }
  const ConvGeometry g = make_geometry(is[0], is[1], is[2], is[3], ks[0], ks[1], ks[3], stride, padding, "conv2d");

  auto cols = im2col(input.data(), g);
  std::vector<double> out(g.rows() * g.cout);
  MutMap(out.data(), g.rows(), g.cout).noalias() =
      ConstMap(cols.data(), g.rows(), g.patch()) * ConstMap(kernel.data().data(), g.patch(), g.cout);

  const bool keep_cols = grad_enabled() && kernel.requires_grad();
  if (!keep_cols) cols = {};
  return make_result(Shape{g.n, g.ho, g.wo, g.cout}, std::move(out), {input, kernel},
                     [g, kernel, cols = std::move(cols)](std::span<const double> grad,
                                                         std::span<std::vector<double>*> pg) {
                       ConstMap gout(grad.data(), g.rows(), g.cout);
                       if (pg[1]) {
                         MutMap(pg[1]->data(), g.patch(), g.cout).noalias() +=
                             ConstMap(cols.data(), g.rows(), g.patch()).transpose() * gout;
                       }
                       if (pg[0]) {
                         RowMatrix dcols = gout * ConstMap(kernel.data().data(), g.patch(), g.cout).transpose();
                         col2im(dcols.data(), g, pg[0]->data());
                       }
                     });
}

Tensor conv_transpose2d(const Tensor& input, const Tensor& kernel, std::size_t stride) {
  check_ranks(input, kernel, "conv_transpose2d");
  const auto& is = input.shape();
  const auto& ks = kernel.shape();
  if (ks[3] != is[3]) {
    throw ShapeError("conv_transpose2d: kernel " + shape_string(ks) + " expects " + std::to_string(ks[3]) +
                     " input channels, input is " + shape_string(is));
  }
  if (stride == 0) throw ShapeError("conv_transpose2d: stride must be positive");
  if (is[1] == 0 || is[2] == 0) throw ShapeError("conv_transpose2d: zero-sized spatial dims");
  // The forward conv this op is the adjoint of: [n, h*s, w*s, cout] -> [n, h, w, cin].
  const ConvGeometry g = make_geometry(is[0], is[1] * stride, is[2] * stride, ks[2], ks[0], ks[1], ks[3], stride,
                                       Padding::kSame, "conv_transpose2d");

  std::vector<double> out(g.n * g.h * g.w * g.cin, 0.0);
  {
    RowMatrix cols = ConstMap(input.data().data(), g.rows(), g.cout) *
                     ConstMap(kernel.data().data(), g.patch(), g.cout).transpose();
    col2im(cols.data(), g, out.data());
  }
  return make_result(Shape{g.n, g.h, g.w, g.cin}, std::move(out), {input, kernel},
                     [g, input, kernel](std::span<const double> grad, std::span<std::vector<double>*> pg) {
                       const auto gcols = im2col(grad, g);
                       ConstMap gc(gcols.data(), g.rows(), g.patch());
                       if (pg[0]) {
                         MutMap(pg[0]->data(), g.rows(), g.cout).noalias() +=
                             gc * ConstMap(kernel.data().data(), g.patch(), g.cout);
                       }
                       if (pg[1]) {
                         MutMap(pg[1]->data(), g.patch(), g.cout).noalias() +=
                             gc.transpose() * ConstMap(input.data().data(), g.rows(), g.cout);
                       }
                     });
}

}  // namespace vqunet

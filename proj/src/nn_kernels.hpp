#pragma once

// Dense kernels for the frame encoder. All tensors are row-major, one frame at a time.

#include <algorithm>
#include <cstddef>
#include <cstdint>

#include <Eigen/Core>

namespace fwdecg::kernels {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Copies a C x H x W frame into a zero-bordered C x (H + 2 pad) x (W + 2 pad) buffer.
inline void pad_frame(const double* in, int c, int h, int w, int pad, double* out) {
  const int ph = h + 2 * pad;
  const int pw = w + 2 * pad;
  std::fill(out, out + static_cast<std::size_t>(c) * ph * pw, 0.0);
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < h; ++y) {
      const double* src = in + (static_cast<std::size_t>(ch) * h + y) * w;
      double* dst = out + (static_cast<std::size_t>(ch) * ph + y + pad) * pw + pad;
      std::copy(src, src + w, dst);
    }
  }
}

/// Unrolls a padded cin x (h + k - 1) x (w + k - 1) input into a (cin k k) x (h w) matrix.
inline void im2col(const double* padded, int cin, int h, int w, int k, double* col) {
  const int ph = h + k - 1;
  const int pw = w + k - 1;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int ic = 0; ic < cin; ++ic) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* dst = col + (static_cast<std::size_t>(ic) * k * k + ky * k + kx) * plane;
        for (int y = 0; y < h; ++y) {
          const double* src = padded + (static_cast<std::size_t>(ic) * ph + y + ky) * pw + kx;
          std::copy(src, src + w, dst + static_cast<std::size_t>(y) * w);
        }
      }
    }
  }
}

/// Adjoint of im2col: scatters a column matrix back onto the padded input, accumulating.
inline void col2im_add(const double* col, int cin, int h, int w, int k, double* padded) {
  const int ph = h + k - 1;
  const int pw = w + k - 1;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int ic = 0; ic < cin; ++ic) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* src = col + (static_cast<std::size_t>(ic) * k * k + ky * k + kx) * plane;
        for (int y = 0; y < h; ++y) {
          double* dst = padded + (static_cast<std::size_t>(ic) * ph + y + ky) * pw + kx;
          const double* s = src + static_cast<std::size_t>(y) * w;
          for (int x = 0; x < w; ++x) dst[x] += s[x];
        }
      }
    }
  }
}

/// "Same" convolution of a padded input; out is cout x h x w. `col` is scratch of (cin k k) x (h w).
inline void conv_forward(const double* padded, int cin, int h, int w, int k, const double* weight, const double* bias,
                         int cout, double* out, double* col) {
  const Eigen::Index kk = static_cast<Eigen::Index>(cin) * k * k;
  const Eigen::Index plane = static_cast<Eigen::Index>(h) * w;
  im2col(padded, cin, h, w, k, col);
  Eigen::Map<const RowMatrix> wm(weight, cout, kk);
  Eigen::Map<const RowMatrix> cm(col, kk, plane);
  Eigen::Map<RowMatrix> om(out, cout, plane);
  om.noalias() = wm * cm;
  if (bias) {
    for (int oc = 0; oc < cout; ++oc) om.row(oc).array() += bias[oc];
  }
}

/// Accumulates weight (and optionally bias / padded-input) gradients of conv_forward.
/// `col` is scratch of (cin k k) x (h w).
inline void conv_backward(const double* padded, int cin, int h, int w, int k, const double* weight, int cout,
                          const double* grad_out, double* grad_weight, double* grad_bias, double* grad_padded,
                          double* col) {
  const Eigen::Index kk = static_cast<Eigen::Index>(cin) * k * k;
  const Eigen::Index plane = static_cast<Eigen::Index>(h) * w;
  Eigen::Map<const RowMatrix> gm(grad_out, cout, plane);
  if (grad_bias) {
    for (int oc = 0; oc < cout; ++oc) grad_bias[oc] += gm.row(oc).sum();
  }
  im2col(padded, cin, h, w, k, col);
  Eigen::Map<RowMatrix> cm(col, kk, plane);
  Eigen::Map<RowMatrix> gw(grad_weight, cout, kk);
  gw.noalias() += gm * cm.transpose();
  if (grad_padded) {
    Eigen::Map<const RowMatrix> wm(weight, cout, kk);
    cm.noalias() = wm.transpose() * gm;
    col2im_add(col, cin, h, w, k, grad_padded);
  }
}

/// Max pooling with window = stride = p (floor mode). argmax holds the flat index into the c x h x w input.
inline void maxpool_forward(const double* in, int c, int h, int w, int p, double* out, std::int32_t* argmax) {
  const int oh = h / p;
  const int ow = w / p;
  for (int ch = 0; ch < c; ++ch) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        std::int32_t best = -1;
        double best_v = 0.0;
        for (int dy = 0; dy < p; ++dy) {
          for (int dx = 0; dx < p; ++dx) {
            const auto idx = static_cast<std::int32_t>((ch * h + oy * p + dy) * w + ox * p + dx);
            if (best < 0 || in[idx] > best_v) {
              best = idx;
              best_v = in[idx];
            }
          }
        }
        const std::size_t o = (static_cast<std::size_t>(ch) * oh + oy) * ow + ox;
        out[o] = best_v;
        argmax[o] = best;
      }
    }
  }
}

/// PyTorch adaptive average pooling bin bounds: [floor(i n / m), ceil((i + 1) n / m)).
inline int adaptive_start(int i, int in, int out) { return (i * in) / out; }
inline int adaptive_end(int i, int in, int out) { return ((i + 1) * in + out - 1) / out; }

inline void adaptive_avgpool_forward(const double* in, int c, int h, int w, int oh, int ow, double* out) {
  for (int ch = 0; ch < c; ++ch) {
    for (int i = 0; i < oh; ++i) {
      const int y0 = adaptive_start(i, h, oh);
      const int y1 = adaptive_end(i, h, oh);
      for (int j = 0; j < ow; ++j) {
        const int x0 = adaptive_start(j, w, ow);
        const int x1 = adaptive_end(j, w, ow);
        double s = 0.0;
        for (int y = y0; y < y1; ++y) {
          for (int x = x0; x < x1; ++x) s += in[(static_cast<std::size_t>(ch) * h + y) * w + x];
        }
        out[(static_cast<std::size_t>(ch) * oh + i) * ow + j] = s / static_cast<double>((y1 - y0) * (x1 - x0));
      }
    }
  }
}

inline void adaptive_avgpool_backward(const double* grad_out, int c, int h, int w, int oh, int ow, double* grad_in) {
  for (int ch = 0; ch < c; ++ch) {
    for (int i = 0; i < oh; ++i) {
      const int y0 = adaptive_start(i, h, oh);
      const int y1 = adaptive_end(i, h, oh);
      for (int j = 0; j < ow; ++j) {
        const int x0 = adaptive_start(j, w, ow);
        const int x1 = adaptive_end(j, w, ow);
        const double g = grad_out[(static_cast<std::size_t>(ch) * oh + i) * ow + j] /
                         static_cast<double>((y1 - y0) * (x1 - x0));
        for (int y = y0; y < y1; ++y) {
          for (int x = x0; x < x1; ++x) grad_in[(static_cast<std::size_t>(ch) * h + y) * w + x] += g;
        }
      }
    }
  }
}

/// out = W x + b with W rows x cols.
inline void linear_forward(const double* weight, const double* bias, const double* x, int rows, int cols, double* out) {
  for (int r = 0; r < rows; ++r) {
    const double* wr = weight + static_cast<std::size_t>(r) * cols;
    double s = bias ? bias[r] : 0.0;
    for (int c = 0; c < cols; ++c) s += wr[c] * x[c];
    out[r] = s;
  }
}

/// grad_W += g x^T, grad_b += g, grad_x (+)= W^T g.
inline void linear_backward(const double* weight, const double* x, const double* g, int rows, int cols,
                            double* grad_weight, double* grad_bias, double* grad_x) {
  for (int r = 0; r < rows; ++r) {
    const double gr = g[r];
    if (grad_bias) grad_bias[r] += gr;
    if (gr == 0.0) continue;
    double* gw = grad_weight + static_cast<std::size_t>(r) * cols;
    for (int c = 0; c < cols; ++c) gw[c] += gr * x[c];
    if (grad_x) {
      const double* wr = weight + static_cast<std::size_t>(r) * cols;
      for (int c = 0; c < cols; ++c) grad_x[c] += gr * wr[c];
    }
  }
}

}  // namespace fwdecg::kernels

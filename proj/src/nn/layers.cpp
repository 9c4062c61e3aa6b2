#include "dtae/nn/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include "dtae/random.hpp"

namespace dtae::nn {

namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<Mat<T>>;
template <typename T>
using CMapM = Eigen::Map<const Mat<T>>;

// db[c] += Σ_r dy[r][c], accumulated in row order. Eigen's reductions peel
// unaligned heads, so their rounding would depend on buffer addresses.
template <typename T>
void add_column_sums(const T* dy, std::size_t rows, std::size_t cols, T* db) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) db[c] += dy[r * cols + c];
}

// Rows of im2col / col2im work processed per GEMM call.
constexpr std::size_t kChunkRows = 2048;

std::size_t chunk_images(std::size_t rows_per_image) {
  return std::max<std::size_t>(1, kChunkRows / std::max<std::size_t>(1, rows_per_image));
}

template <typename T>
Param<T> make_param(std::string name, Shape shape, typename Param<T>::Init init,
                    std::size_t fan_in = 0) {
  Param<T> p;
  p.name = std::move(name);
  p.value = Tensor<T>(shape);
  p.grad = Tensor<T>(shape);
  p.init = init;
  p.fan_in = fan_in;
  return p;
}

void require_forward(bool ok, const char* layer) {
  if (!ok) throw DomainError(std::string("backward before forward in ") + layer);
}

}  // namespace

// ---------------------------------------------------------------------------
// Conv2d

template <typename T>
Conv2d<T>::Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel)
    : in_c_(in_channels),
      out_c_(out_channels),
      k_(kernel),
      weight_(make_param<T>("weight", {kernel * kernel * in_channels, out_channels},
                            Param<T>::Init::kHe, kernel * kernel * in_channels)),
      bias_(make_param<T>("bias", {out_channels}, Param<T>::Init::kZero)) {}

namespace {

// Patch matrix for a stride-1 "same" convolution of `count` images.
template <typename T>
void im2col_same(const T* x, std::size_t count, std::size_t h, std::size_t w, std::size_t c,
                 std::size_t k, T* col) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
  const std::size_t row_len = k * k * c;
  for (std::size_t n = 0; n < count; ++n) {
    const T* img = x + n * h * w * c;
    for (std::size_t y = 0; y < h; ++y) {
      T* rows = col + (n * h + y) * w * row_len;
      for (std::size_t ky = 0; ky < k; ++ky) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + ky) - pad;
        const bool row_ok = iy >= 0 && iy < static_cast<std::ptrdiff_t>(h);
        for (std::size_t kx = 0; kx < k; ++kx) {
          const std::size_t off = (ky * k + kx) * c;
          const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(kx) - pad;
          for (std::size_t xx = 0; xx < w; ++xx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(xx) + shift;
            T* dst = rows + xx * row_len + off;
            if (!row_ok || ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) {
              for (std::size_t ch = 0; ch < c; ++ch) dst[ch] = T(0);
            } else {
              const T* src = img + (static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * c;
              for (std::size_t ch = 0; ch < c; ++ch) dst[ch] = src[ch];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_same(const T* col, std::size_t count, std::size_t h, std::size_t w, std::size_t c,
                 std::size_t k, T* dx) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
  const std::size_t row_len = k * k * c;
  for (std::size_t n = 0; n < count; ++n) {
    T* img = dx + n * h * w * c;
    for (std::size_t y = 0; y < h; ++y) {
      const T* rows = col + (n * h + y) * w * row_len;
      for (std::size_t ky = 0; ky < k; ++ky) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + ky) - pad;
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t kx = 0; kx < k; ++kx) {
          const std::size_t off = (ky * k + kx) * c;
          const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(kx) - pad;
          for (std::size_t xx = 0; xx < w; ++xx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(xx) + shift;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            const T* src = rows + xx * row_len + off;
            T* dst = img + (static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * c;
            for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += src[ch];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> Conv2d<T>::forward(Tensor<T> x, bool) {
  require_shape(x.rank() == 4 && x.dim(3) == in_c_,
                "conv2d expects N×H×W×" + std::to_string(in_c_) + ", got " + shape_str(x.shape));
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2);
  input_ = std::move(x);
  Tensor<T> y({n, h, w, out_c_});
  const std::size_t row_len = k_ * k_ * in_c_;
  const std::size_t per = chunk_images(h * w);
  col_.resize(per * h * w * row_len);
  CMapM<T> wm(weight_.value.ptr(), static_cast<Eigen::Index>(row_len), static_cast<Eigen::Index>(out_c_));
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bm(bias_.value.ptr(), static_cast<Eigen::Index>(out_c_));
  for (std::size_t first = 0; first < n; first += per) {
    const std::size_t count = std::min(per, n - first);
    const auto rows = static_cast<Eigen::Index>(count * h * w);
    im2col_same(input_.ptr() + first * h * w * in_c_, count, h, w, in_c_, k_, col_.data());
    CMapM<T> cm(col_.data(), rows, static_cast<Eigen::Index>(row_len));
    MapM<T> ym(y.ptr() + first * h * w * out_c_, rows, static_cast<Eigen::Index>(out_c_));
    ym.noalias() = cm * wm;
    ym.rowwise() += bm;
  }
  return y;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(Tensor<T> dy) {
  require_forward(!input_.data.empty(), "conv2d");
  const std::size_t n = input_.dim(0), h = input_.dim(1), w = input_.dim(2);
  require_shape(dy.shape == Shape({n, h, w, out_c_}), "conv2d backward: gradient shape mismatch");
  const std::size_t row_len = k_ * k_ * in_c_;
  const std::size_t per = chunk_images(h * w);
  col_.resize(per * h * w * row_len);
  Tensor<T> dx;
  if (this->needs_input_grad) dx = Tensor<T>(input_.shape);
  MapM<T> dw(weight_.grad.ptr(), static_cast<Eigen::Index>(row_len), static_cast<Eigen::Index>(out_c_));
  CMapM<T> wm(weight_.value.ptr(), static_cast<Eigen::Index>(row_len), static_cast<Eigen::Index>(out_c_));
  for (std::size_t first = 0; first < n; first += per) {
    const std::size_t count = std::min(per, n - first);
    const auto rows = static_cast<Eigen::Index>(count * h * w);
    im2col_same(input_.ptr() + first * h * w * in_c_, count, h, w, in_c_, k_, col_.data());
    MapM<T> cm(col_.data(), rows, static_cast<Eigen::Index>(row_len));
    CMapM<T> dym(dy.ptr() + first * h * w * out_c_, rows, static_cast<Eigen::Index>(out_c_));
    dw.noalias() += cm.transpose() * dym;
    add_column_sums(dy.ptr() + first * h * w * out_c_, count * h * w, out_c_, bias_.grad.ptr());
    if (this->needs_input_grad) {
      cm.noalias() = dym * wm.transpose();
      col2im_same(col_.data(), count, h, w, in_c_, k_, dx.ptr() + first * h * w * in_c_);
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// ConvTranspose2d
//
// Input cell (y, x) scatters into output rows stride*y + ky and columns
// stride*x + kx; contributions falling past the output edge are dropped.

template <typename T>
ConvTranspose2d<T>::ConvTranspose2d(std::size_t in_channels, std::size_t out_channels,
                                    std::size_t kernel, std::size_t stride)
    : in_c_(in_channels),
      out_c_(out_channels),
      k_(kernel),
      stride_(stride),
      weight_(make_param<T>("weight", {in_channels, kernel * kernel * out_channels},
                            Param<T>::Init::kHe, kernel * kernel * in_channels)),
      bias_(make_param<T>("bias", {out_channels}, Param<T>::Init::kZero)) {}

template <typename T>
Tensor<T> ConvTranspose2d<T>::forward(Tensor<T> x, bool) {
  require_shape(x.rank() == 4 && x.dim(3) == in_c_,
                "conv_transpose2d expects N×H×W×" + std::to_string(in_c_) + ", got " +
                    shape_str(x.shape));
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t oh = h * stride_, ow = w * stride_;
  const std::size_t row_len = k_ * k_ * out_c_;
  input_ = std::move(x);
  Tensor<T> y({n, oh, ow, out_c_});
  const std::size_t per = chunk_images(h * w);
  col_.resize(per * h * w * row_len);
  CMapM<T> wm(weight_.value.ptr(), static_cast<Eigen::Index>(in_c_), static_cast<Eigen::Index>(row_len));
  for (std::size_t first = 0; first < n; first += per) {
    const std::size_t count = std::min(per, n - first);
    const auto rows = static_cast<Eigen::Index>(count * h * w);
    CMapM<T> xm(input_.ptr() + first * h * w * in_c_, rows, static_cast<Eigen::Index>(in_c_));
    MapM<T> cm(col_.data(), rows, static_cast<Eigen::Index>(row_len));
    cm.noalias() = xm * wm;
    for (std::size_t b = 0; b < count; ++b) {
      T* out = y.ptr() + (first + b) * oh * ow * out_c_;
      for (std::size_t iy = 0; iy < h; ++iy)
        for (std::size_t ix = 0; ix < w; ++ix) {
          const T* row = col_.data() + ((b * h + iy) * w + ix) * row_len;
          for (std::size_t ky = 0; ky < k_; ++ky) {
            const std::size_t oy = iy * stride_ + ky;
            if (oy >= oh) continue;
            for (std::size_t kx = 0; kx < k_; ++kx) {
              const std::size_t ox = ix * stride_ + kx;
              if (ox >= ow) continue;
              const T* src = row + (ky * k_ + kx) * out_c_;
              T* dst = out + (oy * ow + ox) * out_c_;
              for (std::size_t c = 0; c < out_c_; ++c) dst[c] += src[c];
            }
          }
        }
    }
  }
  const std::size_t cells = n * oh * ow;
  for (std::size_t i = 0; i < cells; ++i)
    for (std::size_t c = 0; c < out_c_; ++c) y[i * out_c_ + c] += bias_.value[c];
  return y;
}

template <typename T>
Tensor<T> ConvTranspose2d<T>::backward(Tensor<T> dy) {
  require_forward(!input_.data.empty(), "conv_transpose2d");
  const std::size_t n = input_.dim(0), h = input_.dim(1), w = input_.dim(2);
  const std::size_t oh = h * stride_, ow = w * stride_;
  require_shape(dy.shape == Shape({n, oh, ow, out_c_}),
                "conv_transpose2d backward: gradient shape mismatch");
  const std::size_t row_len = k_ * k_ * out_c_;
  const std::size_t per = chunk_images(h * w);
  col_.resize(per * h * w * row_len);
  Tensor<T> dx;
  if (this->needs_input_grad) dx = Tensor<T>(input_.shape);
  MapM<T> dw(weight_.grad.ptr(), static_cast<Eigen::Index>(in_c_), static_cast<Eigen::Index>(row_len));
  CMapM<T> wm(weight_.value.ptr(), static_cast<Eigen::Index>(in_c_), static_cast<Eigen::Index>(row_len));
  for (std::size_t first = 0; first < n; first += per) {
    const std::size_t count = std::min(per, n - first);
    const auto rows = static_cast<Eigen::Index>(count * h * w);
    for (std::size_t b = 0; b < count; ++b) {
      const T* g = dy.ptr() + (first + b) * oh * ow * out_c_;
      for (std::size_t iy = 0; iy < h; ++iy)
        for (std::size_t ix = 0; ix < w; ++ix) {
          T* row = col_.data() + ((b * h + iy) * w + ix) * row_len;
          for (std::size_t ky = 0; ky < k_; ++ky) {
            const std::size_t oy = iy * stride_ + ky;
            for (std::size_t kx = 0; kx < k_; ++kx) {
              const std::size_t ox = ix * stride_ + kx;
              T* dst = row + (ky * k_ + kx) * out_c_;
              if (oy >= oh || ox >= ow) {
                std::fill(dst, dst + out_c_, T(0));
              } else {
                const T* src = g + (oy * ow + ox) * out_c_;
                std::copy(src, src + out_c_, dst);
              }
            }
          }
        }
    }
    CMapM<T> cm(col_.data(), rows, static_cast<Eigen::Index>(row_len));
    CMapM<T> xm(input_.ptr() + first * h * w * in_c_, rows, static_cast<Eigen::Index>(in_c_));
    dw.noalias() += xm.transpose() * cm;
    if (this->needs_input_grad) {
      MapM<T> dxm(dx.ptr() + first * h * w * in_c_, rows, static_cast<Eigen::Index>(in_c_));
      dxm.noalias() = cm * wm.transpose();
    }
  }
  const std::size_t cells = n * oh * ow;
  for (std::size_t i = 0; i < cells; ++i)
    for (std::size_t c = 0; c < out_c_; ++c) bias_.grad[c] += dy[i * out_c_ + c];
  return dx;
}

// ---------------------------------------------------------------------------
// MaxPool2d

template <typename T>
Tensor<T> MaxPool2d<T>::forward(Tensor<T> x, bool) {
  require_shape(x.rank() == 4, "maxpool2d expects N×H×W×C, got " + shape_str(x.shape));
  if (x.size() > std::numeric_limits<std::uint32_t>::max()) throw ShapeError("maxpool2d input too large");
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const std::size_t oh = (h + stride_ - 1) / stride_, ow = (w + stride_ - 1) / stride_;
  const std::size_t pad_total_h = std::max<std::ptrdiff_t>(
      static_cast<std::ptrdiff_t>((oh - 1) * stride_ + k_) - static_cast<std::ptrdiff_t>(h), 0);
  const std::size_t pad_total_w = std::max<std::ptrdiff_t>(
      static_cast<std::ptrdiff_t>((ow - 1) * stride_ + k_) - static_cast<std::ptrdiff_t>(w), 0);
  const std::ptrdiff_t pad_h = static_cast<std::ptrdiff_t>(pad_total_h / 2);
  const std::ptrdiff_t pad_w = static_cast<std::ptrdiff_t>(pad_total_w / 2);

  in_shape_ = x.shape;
  Tensor<T> y({n, oh, ow, c});
  argmax_.resize(y.size());
  const T* xs = x.ptr();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t oy = 0; oy < oh; ++oy) {
      const std::ptrdiff_t y0 = std::max<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(oy * stride_) - pad_h, 0);
      const std::ptrdiff_t y1 = std::min<std::ptrdiff_t>(
          static_cast<std::ptrdiff_t>(oy * stride_ + k_) - pad_h, static_cast<std::ptrdiff_t>(h));
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(ox * stride_) - pad_w, 0);
        const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(
            static_cast<std::ptrdiff_t>(ox * stride_ + k_) - pad_w, static_cast<std::ptrdiff_t>(w));
        const std::size_t out_base = ((b * oh + oy) * ow + ox) * c;
        T* best = y.ptr() + out_base;
        std::uint32_t* arg = argmax_.data() + out_base;
        bool first = true;
        // Window cells in row-major order; the first maximum wins ties.
        for (std::ptrdiff_t iy = y0; iy < y1; ++iy)
          for (std::ptrdiff_t ix = x0; ix < x1; ++ix) {
            const auto base = static_cast<std::uint32_t>(
                ((b * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)) * c);
            const T* v = xs + base;
            if (first) {
              for (std::size_t ch = 0; ch < c; ++ch) {
                best[ch] = v[ch];
                arg[ch] = base + static_cast<std::uint32_t>(ch);
              }
              first = false;
              continue;
            }
            for (std::size_t ch = 0; ch < c; ++ch) {
              const bool gt = v[ch] > best[ch];
              best[ch] = gt ? v[ch] : best[ch];
              arg[ch] = gt ? base + static_cast<std::uint32_t>(ch) : arg[ch];
            }
          }
      }
    }
  return y;
}

template <typename T>
Tensor<T> MaxPool2d<T>::backward(Tensor<T> dy) {
  require_forward(!in_shape_.empty(), "maxpool2d");
  require_shape(dy.size() == argmax_.size(), "maxpool2d backward: gradient shape mismatch");
  Tensor<T> dx(in_shape_);
  for (std::size_t i = 0; i < dy.size(); ++i) dx[argmax_[i]] += dy[i];
  return dx;
}

// ---------------------------------------------------------------------------
// Dense

template <typename T>
Dense<T>::Dense(std::size_t in_features, std::size_t out_features)
    : in_(in_features),
      out_(out_features),
      weight_(make_param<T>("weight", {in_features, out_features}, Param<T>::Init::kHe, in_features)),
      bias_(make_param<T>("bias", {out_features}, Param<T>::Init::kZero)) {}

template <typename T>
Tensor<T> Dense<T>::forward(Tensor<T> x, bool) {
  require_shape(x.rank() == 2 && x.dim(1) == in_,
                "dense expects N×" + std::to_string(in_) + ", got " + shape_str(x.shape));
  input_ = std::move(x);
  const auto n = static_cast<Eigen::Index>(input_.dim(0));
  Tensor<T> y({input_.dim(0), out_});
  CMapM<T> xm(input_.ptr(), n, static_cast<Eigen::Index>(in_));
  CMapM<T> wm(weight_.value.ptr(), static_cast<Eigen::Index>(in_), static_cast<Eigen::Index>(out_));
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bm(bias_.value.ptr(), static_cast<Eigen::Index>(out_));
  MapM<T> ym(y.ptr(), n, static_cast<Eigen::Index>(out_));
  ym.noalias() = xm * wm;
  ym.rowwise() += bm;
  return y;
}

template <typename T>
Tensor<T> Dense<T>::backward(Tensor<T> dy) {
  require_forward(!input_.shape.empty(), "dense");
  require_shape(dy.shape == Shape({input_.dim(0), out_}), "dense backward: gradient shape mismatch");
  const auto n = static_cast<Eigen::Index>(input_.dim(0));
  CMapM<T> xm(input_.ptr(), n, static_cast<Eigen::Index>(in_));
  CMapM<T> dym(dy.ptr(), n, static_cast<Eigen::Index>(out_));
  MapM<T> dw(weight_.grad.ptr(), static_cast<Eigen::Index>(in_), static_cast<Eigen::Index>(out_));
  dw.noalias() += xm.transpose() * dym;
  add_column_sums(dy.ptr(), input_.dim(0), out_, bias_.grad.ptr());
  Tensor<T> dx;
  if (this->needs_input_grad) {
    dx = Tensor<T>(input_.shape);
    CMapM<T> wm(weight_.value.ptr(), static_cast<Eigen::Index>(in_), static_cast<Eigen::Index>(out_));
    MapM<T> dxm(dx.ptr(), n, static_cast<Eigen::Index>(in_));
    dxm.noalias() = dym * wm.transpose();
  }
  return dx;
}

// ---------------------------------------------------------------------------
// BatchNorm

template <typename T>
BatchNorm<T>::BatchNorm(std::size_t channels, T momentum, T eps)
    : c_(channels),
      momentum_(momentum),
      eps_(eps),
      gamma_(make_param<T>("gamma", {channels}, Param<T>::Init::kOne)),
      beta_(make_param<T>("beta", {channels}, Param<T>::Init::kZero)),
      running_mean_({channels}),
      running_var_({channels}, T(1)) {
  gamma_.value.fill(T(1));
}

template <typename T>
Tensor<T> BatchNorm<T>::forward(Tensor<T> x, bool training) {
  require_shape(x.rank() >= 2 && x.shape.back() == c_,
                "batchnorm expects trailing dimension " + std::to_string(c_) + ", got " +
                    shape_str(x.shape));
  const std::size_t m = x.size() / c_;
  if (xhat_.shape != x.shape) xhat_ = Tensor<T>(x.shape);
  inv_std_.assign(c_, T(0));
  std::vector<T> shift(c_);
  trained_pass_ = training;
  if (training) {
    std::vector<double> mean(c_, 0.0), var(c_, 0.0);
    const T* xs = x.ptr();
    for (std::size_t i = 0; i < m; ++i) {
      const T* row = xs + i * c_;
      for (std::size_t ch = 0; ch < c_; ++ch) mean[ch] += static_cast<double>(row[ch]);
    }
    for (auto& v : mean) v /= static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i) {
      const T* row = xs + i * c_;
      for (std::size_t ch = 0; ch < c_; ++ch) {
        const double d = static_cast<double>(row[ch]) - mean[ch];
        var[ch] += d * d;
      }
    }
    for (std::size_t ch = 0; ch < c_; ++ch) {
      const double biased = var[ch] / static_cast<double>(m);
      inv_std_[ch] = static_cast<T>(1.0 / std::sqrt(biased + static_cast<double>(eps_)));
      const double unbiased = m > 1 ? var[ch] / static_cast<double>(m - 1) : biased;
      running_mean_[ch] = momentum_ * running_mean_[ch] + (T(1) - momentum_) * static_cast<T>(mean[ch]);
      running_var_[ch] = momentum_ * running_var_[ch] + (T(1) - momentum_) * static_cast<T>(unbiased);
      shift[ch] = static_cast<T>(mean[ch]);
    }
  } else {
    for (std::size_t ch = 0; ch < c_; ++ch) {
      inv_std_[ch] = T(1) / std::sqrt(running_var_[ch] + eps_);
      shift[ch] = running_mean_[ch];
    }
  }
  const T* g = gamma_.value.ptr();
  const T* bt = beta_.value.ptr();
  for (std::size_t i = 0; i < m; ++i) {
    T* row = x.ptr() + i * c_;
    T* xh = xhat_.ptr() + i * c_;
    for (std::size_t ch = 0; ch < c_; ++ch) {
      xh[ch] = (row[ch] - shift[ch]) * inv_std_[ch];
      row[ch] = g[ch] * xh[ch] + bt[ch];
    }
  }
  return x;
}

template <typename T>
Tensor<T> BatchNorm<T>::backward(Tensor<T> dy) {
  require_forward(!xhat_.shape.empty(), "batchnorm");
  require_shape(dy.shape == xhat_.shape, "batchnorm backward: gradient shape mismatch");
  const std::size_t m = dy.size() / c_;
  std::vector<double> sum_dy(c_, 0.0), sum_dy_xhat(c_, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const T* g = dy.ptr() + i * c_;
    const T* xh = xhat_.ptr() + i * c_;
    for (std::size_t ch = 0; ch < c_; ++ch) {
      sum_dy[ch] += static_cast<double>(g[ch]);
      sum_dy_xhat[ch] += static_cast<double>(g[ch] * xh[ch]);
    }
  }
  for (std::size_t ch = 0; ch < c_; ++ch) {
    gamma_.grad[ch] += static_cast<T>(sum_dy_xhat[ch]);
    beta_.grad[ch] += static_cast<T>(sum_dy[ch]);
  }
  std::vector<T> scale(c_), mean_dy(c_), mean_dy_xhat(c_);
  const double inv_m = trained_pass_ ? 1.0 / static_cast<double>(m) : 0.0;
  for (std::size_t ch = 0; ch < c_; ++ch) {
    scale[ch] = gamma_.value[ch] * inv_std_[ch];
    mean_dy[ch] = static_cast<T>(sum_dy[ch] * inv_m);
    mean_dy_xhat[ch] = static_cast<T>(sum_dy_xhat[ch] * inv_m);
  }
  // With running statistics the normalizer is a constant and the batch terms vanish.
  for (std::size_t i = 0; i < m; ++i) {
    T* g = dy.ptr() + i * c_;
    const T* xh = xhat_.ptr() + i * c_;
    for (std::size_t ch = 0; ch < c_; ++ch)
      g[ch] = scale[ch] * (g[ch] - mean_dy[ch] - xh[ch] * mean_dy_xhat[ch]);
  }
  return dy;
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> ReLU<T>::forward(Tensor<T> x, bool) {
  active_.resize(x.size());
  T* __restrict v = x.ptr();
  std::uint8_t* __restrict mask = active_.data();
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) {
    const bool on = v[i] > T(0);
    mask[i] = on;
    v[i] = on ? v[i] : T(0);
  }
  has_forward_ = true;
  return x;
}

template <typename T>
Tensor<T> ReLU<T>::backward(Tensor<T> dy) {
  require_forward(has_forward_, "relu");
  require_shape(dy.size() == active_.size(), "relu backward: gradient shape mismatch");
  T* __restrict g = dy.ptr();
  const std::uint8_t* __restrict mask = active_.data();
  const std::size_t n = dy.size();
  for (std::size_t i = 0; i < n; ++i) g[i] = mask[i] ? g[i] : T(0);
  return dy;
}

template <typename T>
Tensor<T> Sigmoid<T>::forward(Tensor<T> x, bool) {
  for (auto& v : x.data) v = T(1) / (T(1) + std::exp(-v));
  output_ = x;
  return x;
}

template <typename T>
Tensor<T> Sigmoid<T>::backward(Tensor<T> dy) {
  require_forward(!output_.shape.empty(), "sigmoid");
  require_shape(dy.shape == output_.shape, "sigmoid backward: gradient shape mismatch");
  for (std::size_t i = 0; i < dy.size(); ++i) dy[i] *= output_[i] * (T(1) - output_[i]);
  return dy;
}

template <typename T>
Tensor<T> Dropout<T>::forward(Tensor<T> x, bool training) {
  has_forward_ = true;
  if (!training || keep_ >= 1.0) {
    mask_.clear();
    return x;
  }
  std::bernoulli_distribution keep(keep_);
  const T scale = static_cast<T>(1.0 / keep_);
  mask_.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    mask_[i] = keep(rng_) ? scale : T(0);
    x[i] *= mask_[i];
  }
  return x;
}

template <typename T>
Tensor<T> Dropout<T>::backward(Tensor<T> dy) {
  require_forward(has_forward_, "dropout");
  if (mask_.empty()) return dy;
  require_shape(dy.size() == mask_.size(), "dropout backward: gradient shape mismatch");
  for (std::size_t i = 0; i < dy.size(); ++i) dy[i] *= mask_[i];
  return dy;
}

template <typename T>
Tensor<T> Reshape<T>::forward(Tensor<T> x, bool) {
  require_shape(x.rank() >= 1, "reshape of a scalar");
  Shape s{x.dim(0)};
  s.insert(s.end(), target_.begin(), target_.end());
  require_shape(shape_size(s) == x.size(), "reshape " + shape_str(x.shape) + " -> " + shape_str(s));
  in_shape_ = std::exchange(x.shape, std::move(s));
  return x;
}

template <typename T>
Tensor<T> Reshape<T>::backward(Tensor<T> dy) {
  require_forward(!in_shape_.empty(), "reshape");
  require_shape(dy.size() == shape_size(in_shape_), "reshape backward: gradient shape mismatch");
  dy.shape = in_shape_;
  return dy;
}

// ---------------------------------------------------------------------------
// Sequential

template <typename T>
Layer<T>& Sequential<T>::add(LayerPtr<T> layer) {
  const std::size_t idx = layers_.size();
  const std::string base = (prefix_.empty() ? "" : prefix_ + ".") + std::to_string(idx) + ".";
  for (auto* p : layer->params()) p->name = base + p->name;
  layers_.push_back(std::move(layer));
  return *layers_.back();
}

template <typename T>
Tensor<T> Sequential<T>::forward(Tensor<T> x, bool training) {
  for (auto& l : layers_) x = l->forward(std::move(x), training);
  forwarded_ = true;
  return x;
}

template <typename T>
Tensor<T> Sequential<T>::backward(Tensor<T> dy) {
  if (!forwarded_) throw DomainError("backward before forward in " + prefix_);
  for (std::size_t i = layers_.size(); i-- > 0;) dy = layers_[i]->backward(std::move(dy));
  return dy;
}

template <typename T>
std::vector<Param<T>*> Sequential<T>::params() {
  std::vector<Param<T>*> out;
  for (auto& l : layers_)
    for (auto* p : l->params()) out.push_back(p);
  return out;
}

template <typename T>
std::vector<NamedBuffer<T>> Sequential<T>::buffers() {
  std::vector<NamedBuffer<T>> out;
  for (std::size_t i = 0; i < layers_.size(); ++i)
    for (auto b : layers_[i]->buffers()) {
      b.name = (prefix_.empty() ? "" : prefix_ + ".") + std::to_string(i) + "." + b.name;
      out.push_back(b);
    }
  return out;
}

template <typename T>
void Sequential<T>::zero_grad() {
  for (auto* p : params()) p->grad.fill(T(0));
}

template <typename T>
void Sequential<T>::init(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto* p : params()) {
    switch (p->init) {
      case Param<T>::Init::kHe: {
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(p->fan_in)));
        for (auto& v : p->value.data) v = static_cast<T>(dist(rng));
        break;
      }
      case Param<T>::Init::kZero:
        p->value.fill(T(0));
        break;
      case Param<T>::Init::kOne:
        p->value.fill(T(1));
        break;
    }
    p->grad.fill(T(0));
  }
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i]->reseed(derive_seed(seed, {0xd0, i}));
}

#define DTAE_INSTANTIATE(T)          \
  template class Conv2d<T>;          \
  template class ConvTranspose2d<T>; \
  template class MaxPool2d<T>;       \
  template class Dense<T>;           \
  template class BatchNorm<T>;       \
  template class ReLU<T>;            \
  template class Sigmoid<T>;         \
  template class Dropout<T>;         \
  template class Reshape<T>;         \
  template class Sequential<T>;

DTAE_INSTANTIATE(float)
DTAE_INSTANTIATE(double)

#undef DTAE_INSTANTIATE

}  // namespace dtae::nn

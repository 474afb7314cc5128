#include "mac/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "gemm.hpp"
#include "mac/errors.hpp"

namespace mac {

namespace {

template <typename T>
using Node = typename Tensor<T>::Node;

[[noreturn]] void dim_error(const std::string& op, const Shape& a, const Shape& b) {
  throw DimensionError(op + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

[[noreturn]] void dim_error(const std::string& op, const Shape& a) {
  throw DimensionError(op + ": unsupported shape " + shape_str(a));
}

template <typename N>
bool wants_grad(const N& out, std::size_t i) {
  return out.parents[i]->requires_grad;
}

template <typename N>
auto& parent_grad(N& out, std::size_t i) {
  return out.parents[i]->grad_buffer();
}

template <typename T, typename Fwd, typename Bwd>
Tensor<T> unary(const std::string& op, const Tensor<T>& x, Fwd fwd, Bwd bwd) {
  auto in = x.data();
  std::vector<T> y(in.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = fwd(in[i]);
  return Tensor<T>::make_result(op, x.shape(), std::move(y), {x}, [bwd](Node<T>& out) {
    auto& g = parent_grad(out, 0);
    const auto& xin = out.parents[0]->data;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * bwd(xin[i], out.data[i]);
  });
}

struct ConvGeometry {
  std::size_t n, cin, h, w, cout, kh, kw, pad_top, pad_left;
  std::size_t patch() const { return cin * kh * kw; }
  std::size_t plane() const { return h * w; }
};

// Rows (sample, y, x) for samples [n0, n1); columns (c, dy, dx).
template <typename T>
void im2row(const ConvGeometry& g, const T* x, std::size_t n0, std::size_t n1, T* rows) {
  const std::size_t cols = g.patch();
  for (std::size_t s = n0; s < n1; ++s) {
    const T* xs = x + s * g.cin * g.plane();
    for (std::size_t oy = 0; oy < g.h; ++oy) {
      for (std::size_t ox = 0; ox < g.w; ++ox) {
        T* row = rows + ((s - n0) * g.plane() + oy * g.w + ox) * cols;
        for (std::size_t c = 0; c < g.cin; ++c) {
          for (std::size_t dy = 0; dy < g.kh; ++dy) {
            const auto iy = static_cast<std::ptrdiff_t>(oy + dy) - static_cast<std::ptrdiff_t>(g.pad_top);
            for (std::size_t dx = 0; dx < g.kw; ++dx) {
              const auto ix = static_cast<std::ptrdiff_t>(ox + dx) - static_cast<std::ptrdiff_t>(g.pad_left);
              const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.h) &&
                                  ix < static_cast<std::ptrdiff_t>(g.w);
              *row++ = inside ? xs[(c * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] : T(0);
            }
          }
        }
      }
    }
  }
}

template <typename T>
void row2im_add(const ConvGeometry& g, const T* rows, std::size_t n0, std::size_t n1, T* dx) {
  const std::size_t cols = g.patch();
  for (std::size_t s = n0; s < n1; ++s) {
    T* ds = dx + s * g.cin * g.plane();
    for (std::size_t oy = 0; oy < g.h; ++oy) {
      for (std::size_t ox = 0; ox < g.w; ++ox) {
        const T* row = rows + ((s - n0) * g.plane() + oy * g.w + ox) * cols;
        for (std::size_t c = 0; c < g.cin; ++c) {
          for (std::size_t dy = 0; dy < g.kh; ++dy) {
            const auto iy = static_cast<std::ptrdiff_t>(oy + dy) - static_cast<std::ptrdiff_t>(g.pad_top);
            for (std::size_t dxk = 0; dxk < g.kw; ++dxk, ++row) {
              const auto ix = static_cast<std::ptrdiff_t>(ox + dxk) - static_cast<std::ptrdiff_t>(g.pad_left);
              if (iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.h) &&
                  ix < static_cast<std::ptrdiff_t>(g.w))
                ds[(c * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] += *row;
            }
          }
        }
      }
    }
  }
}

// Samples per im2row chunk, bounding the scratch matrix to ~4M elements.
std::size_t conv_chunk(const ConvGeometry& g) {
  const std::size_t per_sample = std::max<std::size_t>(1, g.plane() * g.patch());
  return std::clamp<std::size_t>((std::size_t{1} << 22) / per_sample, 1, g.n);
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) dim_error("matmul", a.shape(), b.shape());
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> c(m * n);
  detail::gemm_nn(m, n, k, a.data().data(), b.data().data(), c.data(), false);
  return Tensor<T>::make_result("matmul", {m, n}, std::move(c), {a, b}, [m, k, n](Node<T>& out) {
    const auto& av = out.parents[0]->data;
    const auto& bv = out.parents[1]->data;
    if (wants_grad(out, 0)) {
      std::vector<T> bt(n * k);
      detail::transpose_into(k, n, bv.data(), bt.data());
      detail::gemm_nn(m, k, n, out.grad.data(), bt.data(), parent_grad(out, 0).data(), true);
    }
    if (wants_grad(out, 1))
      detail::gemm_tn(k, n, m, av.data(), out.grad.data(), parent_grad(out, 1).data(), true);
  });
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
    dim_error("bmm", a.shape(), b.shape());
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  std::vector<T> c(batch * m * n);
  for (std::size_t s = 0; s < batch; ++s)
    detail::gemm_nn(m, n, k, a.data().data() + s * m * k, b.data().data() + s * k * n,
                    c.data() + s * m * n, false);
  return Tensor<T>::make_result("bmm", {batch, m, n}, std::move(c), {a, b},
                                [batch, m, k, n](Node<T>& out) {
    const auto& av = out.parents[0]->data;
    const auto& bv = out.parents[1]->data;
    std::vector<T> bt(n * k);
    for (std::size_t s = 0; s < batch; ++s) {
      const T* gs = out.grad.data() + s * m * n;
      if (wants_grad(out, 0)) {
        detail::transpose_into(k, n, bv.data() + s * k * n, bt.data());
        detail::gemm_nn(m, k, n, gs, bt.data(), parent_grad(out, 0).data() + s * m * k, true);
      }
      if (wants_grad(out, 1))
        detail::gemm_tn(k, n, m, av.data() + s * m * k, gs, parent_grad(out, 1).data() + s * k * n, true);
    }
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  if (x.rank() != 2 && x.rank() != 3) dim_error("transpose", x.shape());
  const std::size_t batch = x.rank() == 3 ? x.dim(0) : 1;
  const std::size_t r = x.dim(x.rank() - 2), c = x.dim(x.rank() - 1);
  std::vector<T> y(x.numel());
  for (std::size_t s = 0; s < batch; ++s)
    detail::transpose_into(r, c, x.data().data() + s * r * c, y.data() + s * r * c);
  Shape shape = x.shape();
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  return Tensor<T>::make_result("transpose", shape, std::move(y), {x}, [batch, r, c](Node<T>& out) {
    auto& g = parent_grad(out, 0);
    for (std::size_t s = 0; s < batch; ++s)
      for (std::size_t i = 0; i < c; ++i)
        for (std::size_t j = 0; j < r; ++j) g[s * r * c + j * c + i] += out.grad[s * r * c + i * r + j];
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) dim_error("reshape", x.shape(), shape);
  std::vector<T> y(x.data().begin(), x.data().end());
  return Tensor<T>::make_result("reshape", std::move(shape), std::move(y), {x}, [](Node<T>& out) {
    auto& g = parent_grad(out, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) dim_error("add", a.shape(), b.shape());
  std::vector<T> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] + b[i];
  return Tensor<T>::make_result("add", a.shape(), std::move(y), {a, b}, [](Node<T>& out) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (!wants_grad(out, p)) continue;
      auto& g = parent_grad(out, p);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) dim_error("sub", a.shape(), b.shape());
  std::vector<T> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] - b[i];
  return Tensor<T>::make_result("sub", a.shape(), std::move(y), {a, b}, [](Node<T>& out) {
    if (wants_grad(out, 0)) {
      auto& g = parent_grad(out, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
    }
    if (wants_grad(out, 1)) {
      auto& g = parent_grad(out, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= out.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) dim_error("mul", a.shape(), b.shape());
  std::vector<T> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] * b[i];
  return Tensor<T>::make_result("mul", a.shape(), std::move(y), {a, b}, [](Node<T>& out) {
    const auto& av = out.parents[0]->data;
    const auto& bv = out.parents[1]->data;
    if (wants_grad(out, 0)) {
      auto& g = parent_grad(out, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * bv[i];
    }
    if (wants_grad(out, 1)) {
      auto& g = parent_grad(out, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * av[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  return unary<T>("scale", x, [factor](T v) { return v * factor; },
                  [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  if (bias.rank() != 1 || x.dim(x.rank() - 1) != bias.dim(0)) dim_error("add_bias", x.shape(), bias.shape());
  const std::size_t n = bias.dim(0);
  std::vector<T> y(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bias[i % n];
  return Tensor<T>::make_result("add_bias", x.shape(), std::move(y), {x, bias}, [n](Node<T>& out) {
    if (wants_grad(out, 0)) {
      auto& g = parent_grad(out, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
    }
    if (wants_grad(out, 1)) {
      auto& g = parent_grad(out, 1);
      for (std::size_t i = 0; i < out.grad.size(); ++i) g[i % n] += out.grad[i];
    }
  });
}

template <typename T>
Tensor<T> fc(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (weight.rank() != 2 || (x.rank() != 1 && x.rank() != 2) || x.dim(x.rank() - 1) != weight.dim(1))
    dim_error("fc", x.shape(), weight.shape());
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != weight.dim(0)))
    dim_error("fc bias", weight.shape(), bias.shape());
  const std::size_t rows = x.rank() == 2 ? x.dim(0) : 1;
  const std::size_t in = weight.dim(1), outw = weight.dim(0);
  std::vector<T> wt(in * outw);
  detail::transpose_into(outw, in, weight.data().data(), wt.data());
  std::vector<T> y(rows * outw);
  detail::gemm_nn(rows, outw, in, x.data().data(), wt.data(), y.data(), false);
  if (has_bias)
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < outw; ++j) y[r * outw + j] += bias[j];
  Shape shape = x.rank() == 2 ? Shape{rows, outw} : Shape{outw};
  std::vector<Tensor<T>> parents{x, weight};
  if (has_bias) parents.push_back(bias);
  return Tensor<T>::make_result("fc", std::move(shape), std::move(y), parents,
                                [rows, in, outw, has_bias](Node<T>& out) {
    const auto& xv = out.parents[0]->data;
    const auto& wv = out.parents[1]->data;
    if (wants_grad(out, 0))
      detail::gemm_nn(rows, in, outw, out.grad.data(), wv.data(), parent_grad(out, 0).data(), true);
    if (wants_grad(out, 1))
      detail::gemm_tn(outw, in, rows, out.grad.data(), xv.data(), parent_grad(out, 1).data(), true);
    if (has_bias && wants_grad(out, 2)) {
      auto& gb = parent_grad(out, 2);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < outw; ++j) gb[j] += out.grad[r * outw + j];
    }
  });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernels, const Tensor<T>& bias) {
  if ((x.rank() != 3 && x.rank() != 4) || kernels.rank() != 4) dim_error("conv2d", x.shape(), kernels.shape());
  const bool batched = x.rank() == 4;
  ConvGeometry g{};
  g.n = batched ? x.dim(0) : 1;
  g.cin = x.dim(x.rank() - 3);
  g.h = x.dim(x.rank() - 2);
  g.w = x.dim(x.rank() - 1);
  g.cout = kernels.dim(0);
  g.kh = kernels.dim(2);
  g.kw = kernels.dim(3);
  g.pad_top = g.kh / 2;
  g.pad_left = g.kw / 2;
  if (kernels.dim(1) != g.cin) dim_error("conv2d", x.shape(), kernels.shape());
  if (g.kh > g.h + g.kh - 1 || g.kw > g.w + g.kw - 1)
    throw DimensionError("conv2d: kernel " + shape_str(kernels.shape()) + " larger than padded input " +
                         shape_str(x.shape()));
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != g.cout)) dim_error("conv2d bias", kernels.shape(), bias.shape());

  const std::size_t cols = g.patch(), plane = g.plane();
  std::vector<T> kt(cols * g.cout);
  detail::transpose_into(g.cout, cols, kernels.data().data(), kt.data());
  std::vector<T> y(g.n * g.cout * plane);
  const std::size_t chunk = conv_chunk(g);
  std::vector<T> rows(chunk * plane * cols), res(chunk * plane * g.cout);
  for (std::size_t n0 = 0; n0 < g.n; n0 += chunk) {
    const std::size_t n1 = std::min(g.n, n0 + chunk);
    const std::size_t nrows = (n1 - n0) * plane;
    im2row(g, x.data().data(), n0, n1, rows.data());
    detail::gemm_nn(nrows, g.cout, cols, rows.data(), kt.data(), res.data(), false);
    for (std::size_t s = n0; s < n1; ++s)
      for (std::size_t p = 0; p < plane; ++p)
        for (std::size_t co = 0; co < g.cout; ++co)
          y[(s * g.cout + co) * plane + p] =
              res[((s - n0) * plane + p) * g.cout + co] + (has_bias ? bias[co] : T(0));
  }

  Shape shape = batched ? Shape{g.n, g.cout, g.h, g.w} : Shape{g.cout, g.h, g.w};
  std::vector<Tensor<T>> parents{x, kernels};
  if (has_bias) parents.push_back(bias);
  return Tensor<T>::make_result("conv2d", std::move(shape), std::move(y), parents,
                                [g, has_bias](Node<T>& out) {
    const std::size_t cols = g.patch(), plane = g.plane();
    const auto& xv = out.parents[0]->data;
    const auto& kv = out.parents[1]->data;
    const bool need_x = wants_grad(out, 0), need_k = wants_grad(out, 1);
    if (has_bias && wants_grad(out, 2)) {
      auto& gb = parent_grad(out, 2);
      for (std::size_t s = 0; s < g.n; ++s)
        for (std::size_t co = 0; co < g.cout; ++co)
          for (std::size_t p = 0; p < plane; ++p) gb[co] += out.grad[(s * g.cout + co) * plane + p];
    }
    if (!need_x && !need_k) return;
    const std::size_t chunk = conv_chunk(g);
    std::vector<T> rows(chunk * plane * cols), drows(chunk * plane * cols);
    std::vector<T> dres(chunk * plane * g.cout), dkt(cols * g.cout, T(0));
    for (std::size_t n0 = 0; n0 < g.n; n0 += chunk) {
      const std::size_t n1 = std::min(g.n, n0 + chunk);
      const std::size_t nrows = (n1 - n0) * plane;
      for (std::size_t s = n0; s < n1; ++s)
        for (std::size_t co = 0; co < g.cout; ++co)
          for (std::size_t p = 0; p < plane; ++p)
            dres[((s - n0) * plane + p) * g.cout + co] = out.grad[(s * g.cout + co) * plane + p];
      if (need_k) {
        im2row(g, xv.data(), n0, n1, rows.data());
        detail::gemm_tn(cols, g.cout, nrows, rows.data(), dres.data(), dkt.data(), true);
      }
      if (need_x) {
        detail::gemm_nn(nrows, cols, g.cout, dres.data(), kv.data(), drows.data(), false);
        row2im_add(g, drows.data(), n0, n1, parent_grad(out, 0).data());
      }
    }
    if (need_k) {
      auto& gk = parent_grad(out, 1);
      for (std::size_t c = 0; c < cols; ++c)
        for (std::size_t co = 0; co < g.cout; ++co) gk[co * cols + c] += dkt[c * g.cout + co];
    }
  });
}

template <typename T>
Tensor<T> maxpool2(const Tensor<T>& x) {
  if (x.rank() < 2) dim_error("maxpool2", x.shape());
  const std::size_t h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1);
  if (h < 2 || w < 2) throw DimensionError("maxpool2: spatial size below 2 in " + shape_str(x.shape()));
  const std::size_t oh = h / 2, ow = w / 2, planes = x.numel() / (h * w);
  std::vector<T> y(planes * oh * ow);
  auto argmax = std::make_shared<std::vector<std::size_t>>(y.size());
  auto in = x.data();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t best = (p * h + 2 * i) * w + 2 * j;
        for (std::size_t di = 0; di < 2; ++di)
          for (std::size_t dj = 0; dj < 2; ++dj) {
            const std::size_t idx = (p * h + 2 * i + di) * w + 2 * j + dj;
            // NaN wins so corrupted inputs stay visible downstream.
            if (in[idx] > in[best] || (std::isnan(in[idx]) && !std::isnan(in[best]))) best = idx;
          }
        const std::size_t o = (p * oh + i) * ow + j;
        y[o] = in[best];
        (*argmax)[o] = best;
      }
    }
  }
  Shape shape = x.shape();
  shape[shape.size() - 2] = oh;
  shape[shape.size() - 1] = ow;
  return Tensor<T>::make_result("maxpool2", std::move(shape), std::move(y), {x}, [argmax](Node<T>& out) {
    auto& g = parent_grad(out, 0);
    for (std::size_t o = 0; o < out.grad.size(); ++o) g[(*argmax)[o]] += out.grad[o];
  });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return unary<T>("tanh", x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary<T>("sigmoid", x, [](T v) { return T(1) / (T(1) + std::exp(-v)); },
                  [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary<T>("relu", x, [](T v) { return v < T(0) ? T(0) : v; },  // NaN passes through
                  [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  if (x.rank() < 1) dim_error("softmax_rows", x.shape());
  const std::size_t len = x.dim(x.rank() - 1), rows = x.numel() / len;
  std::vector<T> y(x.numel());
  auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = in.data() + r * len;
    T* yr = y.data() + r * len;
    const T mx = *std::max_element(xr, xr + len);
    T total = 0;
    for (std::size_t j = 0; j < len; ++j) total += (yr[j] = std::exp(xr[j] - mx));
    for (std::size_t j = 0; j < len; ++j) yr[j] /= total;
  }
  return Tensor<T>::make_result("softmax_rows", x.shape(), std::move(y), {x}, [rows, len](Node<T>& out) {
    auto& g = parent_grad(out, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* yr = out.data.data() + r * len;
      const T* gy = out.grad.data() + r * len;
      T dot = 0;
      for (std::size_t j = 0; j < len; ++j) dot += gy[j] * yr[j];
      for (std::size_t j = 0; j < len; ++j) g[r * len + j] += yr[j] * (gy[j] - dot);
    }
  });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw UsageError("concat: no parts");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) dim_error("concat", first);
  Shape shape = first;
  shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size()) dim_error("concat", first, s);
    for (std::size_t d = 0; d < s.size(); ++d)
      if (d != axis && s[d] != first[d]) dim_error("concat", first, s);
    shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  std::vector<std::size_t> widths;
  for (const auto& p : parts) widths.push_back(p.dim(axis) * inner);
  const std::size_t total = shape[axis] * inner;
  std::vector<T> y(outer * total);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    auto src = parts[i].data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(src.data() + o * widths[i], widths[i], y.data() + o * total + offset);
    offset += widths[i];
  }
  return Tensor<T>::make_result("concat", std::move(shape), std::move(y), parts,
                                [outer, total, widths](Node<T>& out) {
    std::size_t offset = 0;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      if (wants_grad(out, i)) {
        auto& g = parent_grad(out, i);
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t j = 0; j < widths[i]; ++j) g[o * widths[i] + j] += out.grad[o * total + offset + j];
      }
      offset += widths[i];
    }
  });
}

template <typename T>
Tensor<T> select(const Tensor<T>& x, std::size_t axis, std::size_t index) {
  if (axis >= x.rank() || x.rank() < 2 || index >= x.dim(axis)) dim_error("select", x.shape());
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= x.dim(d);
  for (std::size_t d = axis + 1; d < x.rank(); ++d) inner *= x.dim(d);
  const std::size_t len = x.dim(axis);
  std::vector<T> y(outer * inner);
  auto in = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(in.data() + (o * len + index) * inner, inner, y.data() + o * inner);
  Shape shape = x.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  return Tensor<T>::make_result("select", std::move(shape), std::move(y), {x},
                                [outer, inner, len, index](Node<T>& out) {
    auto& g = parent_grad(out, 0);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t j = 0; j < inner; ++j) g[(o * len + index) * inner + j] += out.grad[o * inner + j];
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = 0;
  for (T v : x.data()) total += v;
  return Tensor<T>::make_result("sum", {1}, {total}, {x}, [](Node<T>& out) {
    auto& g = parent_grad(out, 0);
    for (auto& v : g) v += out.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, std::span<const T> targets) {
  if (targets.size() != logits.numel())
    throw DimensionError("bce_with_logits: " + std::to_string(targets.size()) + " targets for logits " +
                         shape_str(logits.shape()));
  auto z = logits.data();
  const T n = static_cast<T>(z.size());
  T total = 0;
  for (std::size_t i = 0; i < z.size(); ++i)
    total += std::max(z[i], T(0)) - z[i] * targets[i] + std::log1p(std::exp(-std::abs(z[i])));
  std::vector<T> y(targets.begin(), targets.end());
  return Tensor<T>::make_result("bce_with_logits", {1}, {total / n}, {logits},
                                [y = std::move(y), n](Node<T>& out) {
    auto& g = parent_grad(out, 0);
    const auto& zv = out.parents[0]->data;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T p = T(1) / (T(1) + std::exp(-zv[i]));
      g[i] += out.grad[0] * (p - y[i]) / n;
    }
  });
}

template <typename T>
Tensor<T> bce(const Tensor<T>& probs, std::span<const T> targets, T eps) {
  if (targets.size() != probs.numel())
    throw DimensionError("bce: " + std::to_string(targets.size()) + " targets for probabilities " +
                         shape_str(probs.shape()));
  auto p = probs.data();
  const T n = static_cast<T>(p.size());
  T total = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const T pc = std::clamp(p[i], eps, T(1) - eps);
    total -= targets[i] * std::log(pc) + (T(1) - targets[i]) * std::log(T(1) - pc);
  }
  std::vector<T> y(targets.begin(), targets.end());
  return Tensor<T>::make_result("bce", {1}, {total / n}, {probs}, [y = std::move(y), n, eps](Node<T>& out) {
    auto& g = parent_grad(out, 0);
    const auto& pv = out.parents[0]->data;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (pv[i] < eps || pv[i] > T(1) - eps) continue;
      g[i] += out.grad[0] * (-y[i] / pv[i] + (T(1) - y[i]) / (T(1) - pv[i])) / n;
    }
  });
}

#define MAC_INSTANTIATE_OPS(T)                                                            \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> bmm(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> transpose(const Tensor<T>&);                                         \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                    \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> scale(const Tensor<T>&, T);                                          \
  template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> fc(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);            \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);        \
  template Tensor<T> maxpool2(const Tensor<T>&);                                          \
  template Tensor<T> tanh(const Tensor<T>&);                                              \
  template Tensor<T> sigmoid(const Tensor<T>&);                                           \
  template Tensor<T> relu(const Tensor<T>&);                                              \
  template Tensor<T> softmax_rows(const Tensor<T>&);                                      \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                  \
  template Tensor<T> select(const Tensor<T>&, std::size_t, std::size_t);                  \
  template Tensor<T> sum(const Tensor<T>&);                                               \
  template Tensor<T> mean(const Tensor<T>&);                                              \
  template Tensor<T> bce_with_logits(const Tensor<T>&, std::span<const T>);               \
  template Tensor<T> bce(const Tensor<T>&, std::span<const T>, T);

MAC_INSTANTIATE_OPS(float)
MAC_INSTANTIATE_OPS(double)

}  // namespace mac

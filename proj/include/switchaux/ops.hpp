#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "switchaux/tensor.hpp"

// Differentiable primitives. Every function builds one graph node whose
// backward closure reads saved context from its parents' forward values.
namespace swaux {

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

inline void require_rank(const Tensor& a, std::size_t rank, const char* op) {
    if (a.rank() != rank)
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(a.shape()));
}

inline void accumulate(Node& parent, const std::vector<double>& g) {
    if (!parent.requires_grad) return;
    auto& dst = parent.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

// Bilinear source taps for one output coordinate, half-pixel centres.
struct Tap {
    std::size_t lo, hi;
    double w_hi;
};

inline std::vector<Tap> bilinear_taps(std::size_t in, std::size_t out) {
    std::vector<Tap> taps(out);
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    const double max_src = static_cast<double>(in - 1);
    for (std::size_t d = 0; d < out; ++d) {
        double s = (static_cast<double>(d) + 0.5) * ratio - 0.5;
        s = std::clamp(s, 0.0, max_src);
        auto lo = static_cast<std::size_t>(std::floor(s));
        std::size_t hi = std::min(lo + 1, in - 1);
        taps[d] = {lo, hi, s - static_cast<double>(lo)};
    }
    return taps;
}

inline double gelu_value(double x) {
    constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
    return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

inline double gelu_derivative(double x) {
    constexpr double c = 0.7978845608028654;
    const double u = c * (x + 0.044715 * x * x * x);
    const double t = std::tanh(u);
    const double du = c * (1.0 + 3.0 * 0.044715 * x * x);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

inline double sigmoid_value(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    return Tensor::make_result(a.shape(), std::move(out), "add", {a, b}, [](detail::Node& self) {
        detail::accumulate(*self.parents[0], self.grad);
        detail::accumulate(*self.parents[1], self.grad);
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "sub");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    return Tensor::make_result(a.shape(), std::move(out), "sub", {a, b}, [](detail::Node& self) {
        detail::accumulate(*self.parents[0], self.grad);
        std::vector<double> neg(self.grad.size());
        for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -self.grad[i];
        detail::accumulate(*self.parents[1], neg);
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "mul");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    return Tensor::make_result(a.shape(), std::move(out), "mul", {a, b}, [](detail::Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        std::vector<double> ga(self.grad.size()), gb(self.grad.size());
        for (std::size_t i = 0; i < ga.size(); ++i) {
            ga[i] = self.grad[i] * pb.value[i];
            gb[i] = self.grad[i] * pa.value[i];
        }
        detail::accumulate(pa, ga);
        detail::accumulate(pb, gb);
    });
}

inline Tensor scale(const Tensor& a, double s) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
    return Tensor::make_result(a.shape(), std::move(out), "scale", {a}, [s](detail::Node& self) {
        std::vector<double> g(self.grad.size());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] * s;
        detail::accumulate(*self.parents[0], g);
    });
}

inline Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (double v : a.values()) acc += v;
    return Tensor::make_result({1}, {acc}, "sum", {a}, [](detail::Node& self) {
        std::vector<double> g(self.parents[0]->value.size(), self.grad[0]);
        detail::accumulate(*self.parents[0], g);
    });
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

inline Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel())
        throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
    std::vector<double> out(a.values().begin(), a.values().end());
    return Tensor::make_result(std::move(shape), std::move(out), "reshape", {a},
                               [](detail::Node& self) { detail::accumulate(*self.parents[0], self.grad); });
}

inline Tensor transpose(const Tensor& a) {
    detail::require_rank(a, 2, "transpose");
    const std::size_t m = a.dim(0), n = a.dim(1);
    std::vector<double> out(m * n);
    auto av = a.values();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
    return Tensor::make_result({n, m}, std::move(out), "transpose", {a}, [m, n](detail::Node& self) {
        std::vector<double> g(m * n);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) g[i * n + j] = self.grad[j * m + i];
        detail::accumulate(*self.parents[0], g);
    });
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::require_rank(a, 2, "matmul");
    detail::require_rank(b, 2, "matmul");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) throw ShapeError("matmul: inner dims " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    std::vector<double> out(m * n, 0.0);
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = av[i * k + p];
            const double* brow = &bv[p * n];
            double* orow = &out[i * n];
            for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
        }
    return Tensor::make_result({m, n}, std::move(out), "matmul", {a, b}, [m, k, n](detail::Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const auto& g = self.grad;
        if (pa.requires_grad) {
            std::vector<double> ga(m * k, 0.0);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * pb.value[p * n + j];
                    ga[i * k + p] = acc;
                }
            detail::accumulate(pa, ga);
        }
        if (pb.requires_grad) {
            std::vector<double> gb(k * n, 0.0);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double aip = pa.value[i * k + p];
                    for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
                }
            detail::accumulate(pb, gb);
        }
    });
}

/// x[N,in] * weight[out,in]^T + bias[out]
inline Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    detail::require_rank(x, 2, "linear");
    detail::require_rank(weight, 2, "linear");
    const std::size_t n = x.dim(0), in = x.dim(1), out_f = weight.dim(0);
    if (weight.dim(1) != in) throw ShapeError("linear: input width " + std::to_string(in) + " vs weight " + shape_str(weight.shape()));
    if (bias.shape() != Shape{out_f}) throw ShapeError("linear: bias shape " + shape_str(bias.shape()));
    std::vector<double> out(n * out_f);
    auto xv = x.values();
    auto wv = weight.values();
    auto bv = bias.values();
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t o = 0; o < out_f; ++o) {
            double acc = bv[o];
            for (std::size_t i = 0; i < in; ++i) acc += xv[r * in + i] * wv[o * in + i];
            out[r * out_f + o] = acc;
        }
    return Tensor::make_result({n, out_f}, std::move(out), "linear", {x, weight, bias},
                               [n, in, out_f](detail::Node& self) {
                                   auto& px = *self.parents[0];
                                   auto& pw = *self.parents[1];
                                   auto& pb = *self.parents[2];
                                   const auto& g = self.grad;
                                   if (px.requires_grad) {
                                       std::vector<double> gx(n * in, 0.0);
                                       for (std::size_t r = 0; r < n; ++r)
                                           for (std::size_t o = 0; o < out_f; ++o) {
                                               const double go = g[r * out_f + o];
                                               for (std::size_t i = 0; i < in; ++i) gx[r * in + i] += go * pw.value[o * in + i];
                                           }
                                       detail::accumulate(px, gx);
                                   }
                                   if (pw.requires_grad) {
                                       std::vector<double> gw(out_f * in, 0.0);
                                       for (std::size_t r = 0; r < n; ++r)
                                           for (std::size_t o = 0; o < out_f; ++o) {
                                               const double go = g[r * out_f + o];
                                               for (std::size_t i = 0; i < in; ++i) gw[o * in + i] += go * px.value[r * in + i];
                                           }
                                       detail::accumulate(pw, gw);
                                   }
                                   if (pb.requires_grad) {
                                       std::vector<double> gb(out_f, 0.0);
                                       for (std::size_t r = 0; r < n; ++r)
                                           for (std::size_t o = 0; o < out_f; ++o) gb[o] += g[r * out_f + o];
                                       detail::accumulate(pb, gb);
                                   }
                               });
}

/// Row-wise softmax of a [M,N] matrix.
inline Tensor softmax_rows(const Tensor& a) {
    detail::require_rank(a, 2, "softmax_rows");
    const std::size_t m = a.dim(0), n = a.dim(1);
    std::vector<double> out(m * n);
    auto av = a.values();
    for (std::size_t i = 0; i < m; ++i) {
        double mx = av[i * n];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, av[i * n + j]);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) z += (out[i * n + j] = std::exp(av[i * n + j] - mx));
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= z;
    }
    return Tensor::make_result({m, n}, std::move(out), "softmax_rows", {a}, [m, n](detail::Node& self) {
        const auto& y = self.value;
        const auto& g = self.grad;
        std::vector<double> ga(m * n);
        for (std::size_t i = 0; i < m; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
            for (std::size_t j = 0; j < n; ++j) ga[i * n + j] = y[i * n + j] * (g[i * n + j] - dot);
        }
        detail::accumulate(*self.parents[0], ga);
    });
}

/// tanh-approximated GELU.
inline Tensor gelu(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::gelu_value(a[i]);
    return Tensor::make_result(a.shape(), std::move(out), "gelu", {a}, [](detail::Node& self) {
        auto& p = *self.parents[0];
        std::vector<double> g(self.grad.size());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] * detail::gelu_derivative(p.value[i]);
        detail::accumulate(p, g);
    });
}

inline Tensor sigmoid(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::sigmoid_value(a[i]);
    return Tensor::make_result(a.shape(), std::move(out), "sigmoid", {a}, [](detail::Node& self) {
        std::vector<double> g(self.grad.size());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] * self.value[i] * (1.0 - self.value[i]);
        detail::accumulate(*self.parents[0], g);
    });
}

/// 2-D cross-correlation. input is [C,H,W] or [N,C,H,W]; kernel [Co,Ci,kH,kW];
/// bias, when defined, is [Co]. Output keeps the input's rank.
inline Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t stride,
                     std::size_t padding) {
    if (input.rank() != 3 && input.rank() != 4)
        throw ShapeError("conv2d: input must be [C,H,W] or [N,C,H,W], got " + shape_str(input.shape()));
    detail::require_rank(kernel, 4, "conv2d kernel");
    if (stride == 0) throw std::invalid_argument("conv2d: stride must be >= 1");
    const bool batched = input.rank() == 4;
    const std::size_t nb = batched ? input.dim(0) : 1;
    const std::size_t off = batched ? 1 : 0;
    const std::size_t ci = input.dim(off), h = input.dim(off + 1), w = input.dim(off + 2);
    const std::size_t co = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
    if (kernel.dim(1) != ci)
        throw ShapeError("conv2d: input channels " + std::to_string(ci) + " vs kernel " + shape_str(kernel.shape()));
    if (kh > h + 2 * padding || kw > w + 2 * padding)
        throw ShapeError("conv2d: kernel " + shape_str(kernel.shape()) + " larger than padded input " +
                         shape_str(input.shape()));
    const bool has_bias = bias.defined();
    if (has_bias && bias.shape() != Shape{co}) throw ShapeError("conv2d: bias shape " + shape_str(bias.shape()));
    const std::size_t oh = (h + 2 * padding - kh) / stride + 1;
    const std::size_t ow = (w + 2 * padding - kw) / stride + 1;

    std::vector<double> out(nb * co * oh * ow, 0.0);
    auto xv = input.values();
    auto kv = kernel.values();
    for (std::size_t b = 0; b < nb; ++b)
        for (std::size_t o = 0; o < co; ++o) {
            double* op = &out[((b * co) + o) * oh * ow];
            if (has_bias) std::fill(op, op + oh * ow, bias[o]);
            for (std::size_t c = 0; c < ci; ++c) {
                const double* ip = &xv[((b * ci) + c) * h * w];
                for (std::size_t dy = 0; dy < kh; ++dy)
                    for (std::size_t dx = 0; dx < kw; ++dx) {
                        const double kval = kv[((o * ci + c) * kh + dy) * kw + dx];
                        for (std::size_t y = 0; y < oh; ++y) {
                            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * stride + dy) - static_cast<std::ptrdiff_t>(padding);
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                            for (std::size_t x = 0; x < ow; ++x) {
                                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x * stride + dx) - static_cast<std::ptrdiff_t>(padding);
                                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                                op[y * ow + x] += kval * ip[iy * static_cast<std::ptrdiff_t>(w) + ix];
                            }
                        }
                    }
            }
        }

    Shape out_shape = batched ? Shape{nb, co, oh, ow} : Shape{co, oh, ow};
    std::vector<Tensor> parents{input, kernel};
    if (has_bias) parents.push_back(bias);
    return Tensor::make_result(
        std::move(out_shape), std::move(out), "conv2d", std::move(parents),
        [=](detail::Node& self) {
            auto& px = *self.parents[0];
            auto& pk = *self.parents[1];
            const auto& g = self.grad;
            std::vector<double> gx(px.requires_grad ? px.value.size() : 0, 0.0);
            std::vector<double> gk(pk.requires_grad ? pk.value.size() : 0, 0.0);
            for (std::size_t b = 0; b < nb; ++b)
                for (std::size_t o = 0; o < co; ++o) {
                    const double* gp = &g[((b * co) + o) * oh * ow];
                    for (std::size_t c = 0; c < ci; ++c) {
                        const std::size_t ibase = ((b * ci) + c) * h * w;
                        for (std::size_t dy = 0; dy < kh; ++dy)
                            for (std::size_t dx = 0; dx < kw; ++dx) {
                                const std::size_t kidx = ((o * ci + c) * kh + dy) * kw + dx;
                                const double kval = pk.value[kidx];
                                double kacc = 0.0;
                                for (std::size_t y = 0; y < oh; ++y) {
                                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * stride + dy) - static_cast<std::ptrdiff_t>(padding);
                                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                                    for (std::size_t x = 0; x < ow; ++x) {
                                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x * stride + dx) - static_cast<std::ptrdiff_t>(padding);
                                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                                        const std::size_t ii = ibase + static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix);
                                        const double go = gp[y * ow + x];
                                        kacc += go * px.value[ii];
                                        if (!gx.empty()) gx[ii] += go * kval;
                                    }
                                }
                                if (!gk.empty()) gk[kidx] += kacc;
                            }
                    }
                }
            if (!gx.empty()) detail::accumulate(px, gx);
            if (!gk.empty()) detail::accumulate(pk, gk);
            if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
                std::vector<double> gb(co, 0.0);
                for (std::size_t b = 0; b < nb; ++b)
                    for (std::size_t o = 0; o < co; ++o)
                        for (std::size_t i = 0; i < oh * ow; ++i) gb[o] += g[((b * co) + o) * oh * ow + i];
                detail::accumulate(*self.parents[2], gb);
            }
        });
}

inline Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding) {
    return conv2d(input, kernel, Tensor{}, stride, padding);
}

/// Concatenate along the leading axis; trailing extents must agree.
inline Tensor concat(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
    std::size_t lead = 0;
    std::vector<double> out;
    for (const auto& p : parts) {
        Shape t(p.shape().begin() + 1, p.shape().end());
        if (t != tail) throw ShapeError("concat: trailing shape " + shape_str(p.shape()) + " vs " + shape_str(parts[0].shape()));
        lead += p.dim(0);
        out.insert(out.end(), p.values().begin(), p.values().end());
    }
    Shape shape{lead};
    shape.insert(shape.end(), tail.begin(), tail.end());
    return Tensor::make_result(std::move(shape), std::move(out), "concat", parts, [](detail::Node& self) {
        std::size_t offset = 0;
        for (auto& p : self.parents) {
            const std::size_t n = p->value.size();
            if (p->requires_grad) {
                std::vector<double> g(self.grad.begin() + static_cast<std::ptrdiff_t>(offset),
                                      self.grad.begin() + static_cast<std::ptrdiff_t>(offset + n));
                detail::accumulate(*p, g);
            }
            offset += n;
        }
    });
}

/// Bilinear resize of [C,h,w] with half-pixel centres (align_corners = false).
inline Tensor upsample_bilinear(const Tensor& map, std::size_t out_h, std::size_t out_w) {
    detail::require_rank(map, 3, "upsample_bilinear");
    if (out_h == 0 || out_w == 0) throw ShapeError("upsample_bilinear: output extents must be >= 1");
    const std::size_t c = map.dim(0), h = map.dim(1), w = map.dim(2);
    auto ty = detail::bilinear_taps(h, out_h);
    auto tx = detail::bilinear_taps(w, out_w);
    std::vector<double> out(c * out_h * out_w);
    auto mv = map.values();
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double* src = &mv[ch * h * w];
        for (std::size_t y = 0; y < out_h; ++y) {
            const auto& a = ty[y];
            for (std::size_t x = 0; x < out_w; ++x) {
                const auto& b = tx[x];
                const double top = src[a.lo * w + b.lo] * (1.0 - b.w_hi) + src[a.lo * w + b.hi] * b.w_hi;
                const double bot = src[a.hi * w + b.lo] * (1.0 - b.w_hi) + src[a.hi * w + b.hi] * b.w_hi;
                out[(ch * out_h + y) * out_w + x] = top * (1.0 - a.w_hi) + bot * a.w_hi;
            }
        }
    }
    return Tensor::make_result({c, out_h, out_w}, std::move(out), "upsample_bilinear", {map},
                               [=](detail::Node& self) {
                                   std::vector<double> g(c * h * w, 0.0);
                                   for (std::size_t ch = 0; ch < c; ++ch) {
                                       double* dst = &g[ch * h * w];
                                       for (std::size_t y = 0; y < out_h; ++y) {
                                           const auto& a = ty[y];
                                           for (std::size_t x = 0; x < out_w; ++x) {
                                               const auto& b = tx[x];
                                               const double go = self.grad[(ch * out_h + y) * out_w + x];
                                               dst[a.lo * w + b.lo] += go * (1.0 - a.w_hi) * (1.0 - b.w_hi);
                                               dst[a.lo * w + b.hi] += go * (1.0 - a.w_hi) * b.w_hi;
                                               dst[a.hi * w + b.lo] += go * a.w_hi * (1.0 - b.w_hi);
                                               dst[a.hi * w + b.hi] += go * a.w_hi * b.w_hi;
                                           }
                                       }
                                   }
                                   detail::accumulate(*self.parents[0], g);
                               });
}

/// Mean over non-overlapping factor x factor blocks of a [C,H,W] map.
inline Tensor downsample_avg(const Tensor& map, std::size_t factor) {
    detail::require_rank(map, 3, "downsample_avg");
    if (factor == 0) throw std::invalid_argument("downsample_avg: factor must be >= 1");
    const std::size_t c = map.dim(0), h = map.dim(1), w = map.dim(2);
    if (h % factor != 0 || w % factor != 0)
        throw ShapeError("downsample_avg: " + shape_str(map.shape()) + " not divisible by factor " + std::to_string(factor));
    const std::size_t oh = h / factor, ow = w / factor;
    const double inv = 1.0 / static_cast<double>(factor * factor);
    std::vector<double> out(c * oh * ow, 0.0);
    auto mv = map.values();
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) out[(ch * oh + y / factor) * ow + x / factor] += mv[(ch * h + y) * w + x];
    for (auto& v : out) v *= inv;
    return Tensor::make_result({c, oh, ow}, std::move(out), "downsample_avg", {map}, [=](detail::Node& self) {
        std::vector<double> g(c * h * w);
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x)
                    g[(ch * h + y) * w + x] = self.grad[(ch * oh + y / factor) * ow + x / factor] * inv;
        detail::accumulate(*self.parents[0], g);
    });
}

/// Mirror the last two axes of a [C,H,W] map.
inline Tensor flip(const Tensor& map, bool horizontal, bool vertical) {
    detail::require_rank(map, 3, "flip");
    const std::size_t c = map.dim(0), h = map.dim(1), w = map.dim(2);
    auto index = [=](std::size_t ch, std::size_t y, std::size_t x) {
        const std::size_t sy = vertical ? h - 1 - y : y;
        const std::size_t sx = horizontal ? w - 1 - x : x;
        return (ch * h + sy) * w + sx;
    };
    std::vector<double> out(map.numel());
    auto mv = map.values();
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) out[(ch * h + y) * w + x] = mv[index(ch, y, x)];
    return Tensor::make_result(map.shape(), std::move(out), "flip", {map}, [=](detail::Node& self) {
        std::vector<double> g(self.grad.size());
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x) g[index(ch, y, x)] = self.grad[(ch * h + y) * w + x];
        detail::accumulate(*self.parents[0], g);
    });
}

/// Mean binary cross-entropy on logits, stable form
/// max(z,0) - z*y + log(1 + exp(-|z|)). Targets may be soft but must lie in
/// [0,1]; gradients flow to the logits only.
inline Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
    detail::require_same_shape(logits, targets, "bce_with_logits");
    auto tv = targets.values();
    for (double y : tv)
        if (!(y >= 0.0 && y <= 1.0))
            throw std::invalid_argument("bce_with_logits: target " + std::to_string(y) + " outside [0,1]");
    auto zv = logits.values();
    double acc = 0.0;
    for (std::size_t i = 0; i < zv.size(); ++i) {
        const double z = zv[i];
        acc += std::max(z, 0.0) - z * tv[i] + std::log1p(std::exp(-std::abs(z)));
    }
    const double n = static_cast<double>(zv.size());
    std::vector<double> y(tv.begin(), tv.end());
    return Tensor::make_result({1}, {acc / n}, "bce_with_logits", {logits},
                               [y = std::move(y), n](detail::Node& self) {
                                   auto& p = *self.parents[0];
                                   std::vector<double> g(p.value.size());
                                   const double go = self.grad[0] / n;
                                   for (std::size_t i = 0; i < g.size(); ++i)
                                       g[i] = go * (detail::sigmoid_value(p.value[i]) - y[i]);
                                   detail::accumulate(p, g);
                               });
}

}  // namespace swaux

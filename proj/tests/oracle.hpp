#pragma once

// Independent reference implementations used as test oracles. Written from the
// documented semantics, deliberately without calling into the simulator.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "tpusim/workloads.hpp"

namespace oracle {

inline std::int32_t wrap32(std::int64_t v) {
    return static_cast<std::int32_t>(static_cast<std::uint32_t>(static_cast<std::uint64_t>(v)));
}

/// Naive triple-loop GEMM with 32-bit wrap: C[b][j] = sum_i A[b][i] * W[i][j].
inline std::vector<std::int32_t> gemm(const std::vector<std::int32_t>& a, const std::vector<std::int32_t>& w,
                                      std::size_t rows, std::size_t inner, std::size_t cols) {
    std::vector<std::int32_t> c(rows * cols);
    for (std::size_t b = 0; b < rows; ++b)
        for (std::size_t j = 0; j < cols; ++j) {
            std::int64_t s = 0;
            for (std::size_t i = 0; i < inner; ++i) s += std::int64_t{a[b * inner + i]} * w[i * cols + j];
            c[b * cols + j] = wrap32(s);
        }
    return c;
}

/// Exact rational rounding of v * scale / 2^shift, ties away from zero.
inline std::int64_t requant(std::int64_t v, std::int32_t scale, std::uint32_t shift) {
    const __int128 p = static_cast<__int128>(v) * scale;
    if (shift == 0) return static_cast<std::int64_t>(p);
    const __int128 den = static_cast<__int128>(1) << shift;
    const __int128 mag = p < 0 ? -p : p;
    const __int128 q = (2 * mag + den) / (2 * den);
    return static_cast<std::int64_t>(p < 0 ? -q : q);
}

inline std::int64_t saturate(std::int64_t v, bool wide, bool is_unsigned) {
    const std::int64_t lo = is_unsigned ? 0 : (wide ? -32768 : -128);
    const std::int64_t hi = is_unsigned ? (wide ? 65535 : 255) : (wide ? 32767 : 127);
    return std::clamp(v, lo, hi);
}

inline std::int64_t apply(std::int64_t acc, tpusim::isa::ActivationFn fn, tpusim::func::Requant rq, bool wide) {
    using tpusim::isa::ActivationFn;
    const std::int64_t q = requant(acc, rq.scale, rq.shift);
    const double x = static_cast<double>(std::clamp<std::int64_t>(q, -128, 127)) / 16.0;
    switch (fn) {
    case ActivationFn::Identity: return saturate(q, wide, false);
    case ActivationFn::ReLU: return saturate(std::max<std::int64_t>(q, 0), wide, false);
    case ActivationFn::Sigmoid:
        return saturate(std::clamp<long>(std::lround(256.0 / (1.0 + std::exp(-x))), 0, 255), wide, true);
    case ActivationFn::Tanh: return saturate(std::lround(127.0 * std::tanh(x)), wide, false);
    }
    return 0;
}

inline std::int64_t round_div(std::int64_t num, std::int64_t den) {
    const std::int64_t t = num / den;
    const std::int64_t r = num - t * den;
    if (2 * std::llabs(r) >= den) return t + (num < 0 ? -1 : 1);
    return t;
}

/// Quantized forward pass for one sample in [h][w][c] layout.
inline std::vector<std::int32_t> forward(const tpusim::workloads::QuantizedModel& m, std::vector<std::int32_t> x) {
    using namespace tpusim::workloads;
    const auto& ws = m.spec;
    const bool wide = ws.activation_bits == 16;
    TensorShape xs = ws.input_shape();
    const auto shapes = ws.layer_outputs();
    for (std::size_t li = 0; li < ws.layers.size(); ++li) {
        const LayerSpec& l = ws.layers[li];
        const auto& w = m.weights[li];
        std::vector<std::int32_t> y;
        if (const auto* f = std::get_if<FcShape>(&l.shape)) {
            const auto acc = gemm(x, w, 1, f->in_dim, f->out_dim);
            for (auto a : acc) y.push_back(static_cast<std::int32_t>(apply(a, l.activation, l.requant, wide)));
        } else if (const auto* c = std::get_if<ConvShape>(&l.shape)) {
            const std::uint32_t oh = c->out_h(), ow = c->out_w(), M = c->out_channels;
            std::vector<std::int64_t> acc(std::size_t{oh} * ow * M, 0);
            for (std::uint32_t oy = 0; oy < oh; ++oy)
                for (std::uint32_t ox = 0; ox < ow; ++ox)
                    for (std::uint32_t mm = 0; mm < M; ++mm) {
                        std::int64_t s = 0;
                        for (std::uint32_t r = 0; r < c->kernel_h; ++r)
                            for (std::uint32_t q = 0; q < c->kernel_w; ++q) {
                                const long iy = long(oy) * c->stride + r - c->pad;
                                const long ix = long(ox) * c->stride + q - c->pad;
                                if (iy < 0 || ix < 0 || iy >= long(c->image_h) || ix >= long(c->image_w)) continue;
                                for (std::uint32_t ci = 0; ci < c->in_channels; ++ci)
                                    s += std::int64_t{x[(std::size_t(iy) * c->image_w + ix) * c->in_channels + ci]} *
                                         w[((std::size_t{r} * c->kernel_w + q) * c->in_channels + ci) * M + mm];
                            }
                        acc[(std::size_t{oy} * ow + ox) * M + mm] = wrap32(s);
                    }
            if (li + 1 < ws.layers.size() && ws.layers[li + 1].kind() == LayerKind::Pool) {
                const auto& p = std::get<PoolShape>(ws.layers[li + 1].shape);
                const auto& ps = shapes[li + 1];
                for (std::uint32_t py = 0; py < ps.h; ++py)
                    for (std::uint32_t px = 0; px < ps.w; ++px)
                        for (std::uint32_t mm = 0; mm < M; ++mm) {
                            std::int64_t best = INT64_MIN, sum = 0, n = 0;
                            for (std::uint32_t ky = 0; ky < p.window; ++ky)
                                for (std::uint32_t kx = 0; kx < p.window; ++kx) {
                                    const long iy = long(py) * p.stride + ky - p.pad;
                                    const long ix = long(px) * p.stride + kx - p.pad;
                                    if (iy < 0 || ix < 0 || iy >= long(oh) || ix >= long(ow)) continue;
                                    const std::int64_t v = acc[(std::size_t(iy) * ow + ix) * M + mm];
                                    best = std::max(best, v);
                                    sum += v;
                                    ++n;
                                }
                            const std::int64_t pooled = p.kind == PoolKind::Max ? best : round_div(sum, n);
                            y.push_back(static_cast<std::int32_t>(apply(pooled, l.activation, l.requant, wide)));
                        }
                ++li;
            } else {
                for (auto a : acc) y.push_back(static_cast<std::int32_t>(apply(a, l.activation, l.requant, wide)));
            }
        } else if (std::get_if<VectorShape>(&l.shape)) {
            for (auto v : x) y.push_back(static_cast<std::int32_t>(apply(v, l.activation, l.requant, wide)));
        }
        x = std::move(y);
        xs = shapes[li];
    }
    return x;
}

} // namespace oracle

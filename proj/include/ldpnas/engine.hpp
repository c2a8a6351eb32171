#pragma once

// Minimal dense runtime over a GraphPlan: seeded initialisation, forward pass
// with ReLU sign capture, and exact reverse-mode gradients. Templated on the
// scalar so gradient checks can run in double while training runs in float.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ldpnas/errors.hpp"
#include "ldpnas/kernels.hpp"
#include "ldpnas/net_graph.hpp"
#include "ldpnas/tensor.hpp"

namespace ldpnas {

inline constexpr double kNormEps = 1e-5;

/// Tensor dims of every learnable slot of a node, in storage order.
inline std::vector<std::vector<std::int64_t>> param_slots(const LayerNode& n) {
    switch (n.kind) {
    case NodeKind::Conv:
        return {{n.out_shape.c, n.in_shape.c / n.groups, n.kh, n.kw}, {n.out_shape.c}};
    case NodeKind::Norm: return {{n.out_shape.c}, {n.out_shape.c}};
    case NodeKind::SqueezeExcite:
        return {{n.hidden, n.out_shape.c}, {n.hidden}, {n.out_shape.c, n.hidden}, {n.out_shape.c}};
    default: return {};
    }
}

template <class Scalar>
struct ParamStore {
    std::vector<Scalar> values;
    std::vector<Scalar> grads;
    std::vector<Scalar> m, v; // Adam moments
    std::vector<std::int64_t> offsets; // per node; -1 when the node has no parameters
    std::vector<std::int64_t> sizes;
    std::vector<Scalar> running; // norm running mean then variance, per norm node
    std::vector<std::int64_t> running_offsets;
    std::int64_t step = 0;

    std::size_t size() const { return values.size(); }
    Scalar* at(int node) { return values.data() + offsets[node]; }
    const Scalar* at(int node) const { return values.data() + offsets[node]; }
};

/// Lays out the store from node weight shapes. Values start at zero.
template <class Scalar>
ParamStore<Scalar> allocate_params(const GraphPlan& plan) {
    ParamStore<Scalar> s;
    std::int64_t off = 0, roff = 0;
    for (const LayerNode& n : plan.nodes) {
        std::int64_t len = 0;
        for (const auto& dims : param_slots(n)) {
            std::int64_t p = 1;
            for (auto d : dims) p *= d;
            len += p;
        }
        s.offsets.push_back(len ? off : -1);
        s.sizes.push_back(len);
        off += len;
        if (n.kind == NodeKind::Norm) {
            s.running_offsets.push_back(roff);
            roff += 2 * n.out_shape.c;
        } else {
            s.running_offsets.push_back(-1);
        }
    }
    s.values.assign(off, Scalar(0));
    s.grads.assign(off, Scalar(0));
    s.m.assign(off, Scalar(0));
    s.v.assign(off, Scalar(0));
    s.running.assign(roff, Scalar(0));
    for (std::size_t i = 0; i < plan.nodes.size(); ++i)
        if (plan.nodes[i].kind == NodeKind::Norm) {
            const int c = plan.nodes[i].out_shape.c;
            std::fill_n(s.running.begin() + s.running_offsets[i] + c, c, Scalar(1));
        }
    return s;
}

/// He-style fan-in normal weights, zero biases, unit norm scale and zero shift.
template <class Scalar>
ParamStore<Scalar> init_params(const GraphPlan& plan, std::uint64_t seed) {
    ParamStore<Scalar> s = allocate_params<Scalar>(plan);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t i = 0; i < plan.nodes.size(); ++i) {
        const LayerNode& n = plan.nodes[i];
        if (s.offsets[i] < 0) continue;
        Scalar* p = s.at(int(i));
        switch (n.kind) {
        case NodeKind::Conv: {
            const int fan_in = (n.in_shape.c / n.groups) * n.kh * n.kw;
            const double sd = std::sqrt(2.0 / fan_in);
            const std::int64_t nw = std::int64_t(n.out_shape.c) * fan_in;
            for (std::int64_t k = 0; k < nw; ++k) p[k] = Scalar(sd * normal(rng));
            break;
        }
        case NodeKind::Norm:
            std::fill_n(p, n.out_shape.c, Scalar(1));
            break;
        case NodeKind::SqueezeExcite: {
            const int c = n.out_shape.c, h = n.hidden;
            const double sd1 = std::sqrt(2.0 / c), sd2 = std::sqrt(2.0 / h);
            for (int k = 0; k < h * c; ++k) p[k] = Scalar(sd1 * normal(rng));
            Scalar* w2 = p + h * c + h;
            for (int k = 0; k < c * h; ++k) w2[k] = Scalar(sd2 * normal(rng));
            break;
        }
        default: break;
        }
    }
    return s;
}

/// Sign bits of every ReLU pre-activation, concatenated in node order per batch element.
struct ActivationTrace {
    int batch = 0;
    std::int64_t units = 0; // N_A
    std::vector<std::vector<std::uint64_t>> bits;

    bool bit(int n, std::int64_t i) const { return (bits[n][i >> 6] >> (i & 63)) & 1u; }
    void set(int n, std::int64_t i) { bits[n][i >> 6] |= std::uint64_t(1) << (i & 63); }
    /// ORs the low `len` bits of `word` in starting at bit i.
    void set_word(int n, std::int64_t i, std::uint64_t word, int len) {
        if (len < 64) word &= (std::uint64_t(1) << len) - 1;
        const int sh = int(i & 63);
        auto& v = bits[n];
        v[i >> 6] |= word << sh;
        if (sh != 0 && sh + len > 64) v[(i >> 6) + 1] |= word >> (64 - sh);
    }
    std::int64_t popcount(int n) const {
        std::int64_t c = 0;
        for (auto w : bits[n]) c += std::popcount(w);
        return c;
    }
};

enum class NormMode { Batch, Running };

struct ForwardOptions {
    NormMode norm = NormMode::Batch;
    bool capture = false;
    bool keep = true; // retain every activation for a backward pass
    bool check_finite = false;
};

template <class Scalar>
struct ForwardResult {
    struct NormCache {
        std::vector<Scalar> mean, var, inv_std;
    };
    struct SeCache {
        std::vector<Scalar> pooled, hidden, gate;
    };
    std::vector<Tensor4<Scalar>> acts;
    std::vector<NormCache> norm;
    std::vector<SeCache> se;
    std::optional<ActivationTrace> trace;
    int output_node = 0;

    const Tensor4<Scalar>& output() const { return acts[output_node]; }
};

namespace detail {

template <class Scalar>
Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>> plane(const Tensor4<Scalar>& x, int b, int c, std::size_t hw) {
    return {x.data() + (std::size_t(b) * x.c() + c) * hw, Eigen::Index(hw)};
}

template <class Scalar>
Scalar sigmoid(Scalar z) {
    return Scalar(1) / (Scalar(1) + std::exp(-z));
}

inline std::vector<int> last_use(const GraphPlan& plan) {
    std::vector<int> last(plan.nodes.size(), -1);
    for (std::size_t i = 0; i < plan.nodes.size(); ++i)
        for (int in : plan.nodes[i].inputs)
            if (in != kGraphInput) last[in] = int(i);
    return last;
}

} // namespace detail

template <class Scalar>
ForwardResult<Scalar> forward(const GraphPlan& plan, const ParamStore<Scalar>& params, const Tensor4<Scalar>& batch,
                              const ForwardOptions& opt = {}) {
    if (batch.c() != plan.input.c || batch.h() != plan.input.h || batch.w() != plan.input.w || batch.n() < 1)
        throw ShapeError("batch shape does not match plan input");
    if (params.offsets.size() != plan.nodes.size()) throw ShapeError("parameter store does not match plan");

    const int N = batch.n();
    ForwardResult<Scalar> r;
    r.output_node = plan.output;
    r.acts.resize(plan.nodes.size());
    r.norm.resize(plan.nodes.size());
    r.se.resize(plan.nodes.size());
    std::int64_t bit_cursor = 0;
    if (opt.capture) {
        ActivationTrace t;
        t.batch = N;
        t.units = plan.relu_unit_count;
        t.bits.assign(N, std::vector<std::uint64_t>((t.units + 63) / 64, 0));
        r.trace = std::move(t);
    }
    const std::vector<int> last = detail::last_use(plan);

    auto input_of = [&](const LayerNode& n, int k) -> const Tensor4<Scalar>& {
        return n.inputs[k] == kGraphInput ? batch : r.acts[n.inputs[k]];
    };

    for (std::size_t i = 0; i < plan.nodes.size(); ++i) {
        const LayerNode& n = plan.nodes[i];
        const Shape3 os = n.out_shape;
        Tensor4<Scalar> y(N, os.c, os.h, os.w);
        const Tensor4<Scalar>& x = input_of(n, 0);
        const std::size_t hw = std::size_t(os.h) * os.w;

        switch (n.kind) {
        case NodeKind::Conv: {
            const auto g = kernels::ConvGeom::of(n);
            const Scalar* w = params.at(int(i));
            const Scalar* b = w + std::int64_t(g.cout) * g.rows();
            kernels::conv_forward(x.data(), w, b, g, N, y.data());
            break;
        }
        case NodeKind::Norm: {
            const int C = os.c;
            const Scalar* gamma = params.at(int(i));
            const Scalar* beta = gamma + C;
            auto& nc = r.norm[i];
            nc.mean.assign(C, 0);
            nc.var.assign(C, 0);
            nc.inv_std.assign(C, 0);
            const double count = double(N) * hw;
            for (int c = 0; c < C; ++c) {
                double mean, var;
                if (opt.norm == NormMode::Batch) {
                    double s = 0;
                    for (int b = 0; b < N; ++b) s += detail::plane(x, b, c, hw).template cast<double>().sum();
                    mean = s / count;
                    double ss = 0;
                    for (int b = 0; b < N; ++b)
                        ss += (detail::plane(x, b, c, hw).template cast<double>() - mean).square().sum();
                    var = ss / count;
                } else {
                    mean = params.running[params.running_offsets[i] + c];
                    var = params.running[params.running_offsets[i] + C + c];
                }
                const Scalar inv = Scalar(1.0 / std::sqrt(var + kNormEps));
                nc.mean[c] = Scalar(mean);
                nc.var[c] = Scalar(var);
                nc.inv_std[c] = inv;
                for (int b = 0; b < N; ++b) {
                    const Scalar* xc = x.data() + (std::size_t(b) * C + c) * hw;
                    Scalar* yc = y.data() + (std::size_t(b) * C + c) * hw;
                    for (std::size_t k = 0; k < hw; ++k) yc[k] = gamma[c] * (xc[k] - Scalar(mean)) * inv + beta[c];
                }
            }
            break;
        }
        case NodeKind::Relu: {
            const std::size_t per = x.sample_size();
            for (int b = 0; b < N; ++b) {
                const Scalar* xb = x.data() + b * per;
                Scalar* yb = y.data() + b * per;
                for (std::size_t k = 0; k < per; ++k) yb[k] = std::max(xb[k], Scalar(0));
                if (r.trace) {
                    for (std::size_t k0 = 0; k0 < per; k0 += 64) {
                        std::uint64_t word = 0;
                        const std::size_t len = std::min<std::size_t>(64, per - k0);
                        for (std::size_t k = 0; k < len; ++k) word |= std::uint64_t(xb[k0 + k] > Scalar(0)) << k;
                        r.trace->set_word(b, bit_cursor + std::int64_t(k0), word, int(len));
                    }
                }
            }
            bit_cursor += std::int64_t(per);
            break;
        }
        case NodeKind::SqueezeExcite: {
            const int C = os.c, H = n.hidden;
            const Scalar* w1 = params.at(int(i));
            const Scalar* b1 = w1 + H * C;
            const Scalar* w2 = b1 + H;
            const Scalar* b2 = w2 + C * H;
            auto& sc = r.se[i];
            sc.pooled.assign(std::size_t(N) * C, 0);
            sc.hidden.assign(std::size_t(N) * H, 0);
            sc.gate.assign(std::size_t(N) * C, 0);
            for (int b = 0; b < N; ++b) {
                for (int c = 0; c < C; ++c) {
                    const Scalar* xc = x.data() + (std::size_t(b) * C + c) * hw;
                    Scalar s = 0;
                    for (std::size_t k = 0; k < hw; ++k) s += xc[k];
                    sc.pooled[b * C + c] = s / Scalar(hw);
                }
                for (int h = 0; h < H; ++h) {
                    Scalar z = b1[h];
                    for (int c = 0; c < C; ++c) z += w1[h * C + c] * sc.pooled[b * C + c];
                    sc.hidden[b * H + h] = z;
                    if (z > Scalar(0) && r.trace) r.trace->set(b, bit_cursor + h);
                }
                for (int c = 0; c < C; ++c) {
                    Scalar z = b2[c];
                    for (int h = 0; h < H; ++h) z += w2[c * H + h] * std::max(sc.hidden[b * H + h], Scalar(0));
                    const Scalar gate = detail::sigmoid(z);
                    sc.gate[b * C + c] = gate;
                    const Scalar* xc = x.data() + (std::size_t(b) * C + c) * hw;
                    Scalar* yc = y.data() + (std::size_t(b) * C + c) * hw;
                    for (std::size_t k = 0; k < hw; ++k) yc[k] = xc[k] * gate;
                }
            }
            bit_cursor += H;
            break;
        }
        case NodeKind::Add: {
            const Tensor4<Scalar>& x2 = input_of(n, 1);
            for (std::size_t k = 0; k < y.size(); ++k) y.data()[k] = x.data()[k] + x2.data()[k];
            break;
        }
        case NodeKind::Upsample2x:
            for (int b = 0; b < N; ++b)
                for (int c = 0; c < os.c; ++c)
                    for (int h = 0; h < os.h; ++h)
                        for (int w = 0; w < os.w; ++w) y(b, c, h, w) = x(b, c, h / 2, w / 2);
            break;
        case NodeKind::Subsample2x:
            for (int b = 0; b < N; ++b)
                for (int c = 0; c < os.c; ++c)
                    for (int h = 0; h < os.h; ++h)
                        for (int w = 0; w < os.w; ++w) y(b, c, h, w) = x(b, c, 2 * h, 2 * w);
            break;
        case NodeKind::PixelShuffle: {
            const int f = n.factor;
            for (int b = 0; b < N; ++b)
                for (int c = 0; c < os.c; ++c)
                    for (int h = 0; h < os.h; ++h)
                        for (int w = 0; w < os.w; ++w)
                            y(b, c, h, w) = x(b, c * f * f + (h % f) * f + (w % f), h / f, w / f);
            break;
        }
        }

        if (opt.check_finite && !y.all_finite())
            throw NonFiniteError("non-finite activation at node " + n.name);
        r.acts[i] = std::move(y);
        if (!opt.keep)
            for (int in : n.inputs)
                if (in != kGraphInput && last[in] == int(i) && in != plan.output) r.acts[in].release();
    }
    return r;
}

/// Blends batch statistics from a training forward pass into the running averages.
template <class Scalar>
void update_running_stats(const GraphPlan& plan, ParamStore<Scalar>& params, const ForwardResult<Scalar>& fwd,
                          int batch, double momentum = 0.1) {
    for (std::size_t i = 0; i < plan.nodes.size(); ++i) {
        const LayerNode& n = plan.nodes[i];
        if (n.kind != NodeKind::Norm || fwd.norm[i].mean.empty()) continue;
        const int C = n.out_shape.c;
        const double count = double(batch) * n.out_shape.h * n.out_shape.w;
        const double unbias = count > 1 ? count / (count - 1) : 1.0;
        Scalar* rm = params.running.data() + params.running_offsets[i];
        Scalar* rv = rm + C;
        for (int c = 0; c < C; ++c) {
            rm[c] = Scalar((1 - momentum) * rm[c] + momentum * fwd.norm[i].mean[c]);
            rv[c] = Scalar((1 - momentum) * rv[c] + momentum * fwd.norm[i].var[c] * unbias);
        }
    }
}

// ---------------------------------------------------------------------------
// losses

enum class LossKind { L1, L2, CrossEntropy };

template <class Scalar>
struct LossValue {
    double loss = 0;
    Tensor4<Scalar> grad; // d loss / d prediction
};

/// Mean loss over all output scalars (L1, L2) or all pixels (cross entropy,
/// where `target` holds class indices in a single channel).
template <class Scalar>
LossValue<Scalar> compute_loss(const Tensor4<Scalar>& pred, const Tensor4<Scalar>& target, LossKind kind) {
    LossValue<Scalar> out;
    out.grad = Tensor4<Scalar>(pred.n(), pred.c(), pred.h(), pred.w());
    if (kind == LossKind::CrossEntropy) {
        if (target.n() != pred.n() || target.c() != 1 || target.h() != pred.h() || target.w() != pred.w())
            throw ShapeError("cross entropy target must be [N,1,H,W] labels");
        const int K = pred.c();
        const double pixels = double(pred.n()) * pred.h() * pred.w();
        double total = 0;
        std::vector<double> p(K);
        for (int b = 0; b < pred.n(); ++b)
            for (int h = 0; h < pred.h(); ++h)
                for (int w = 0; w < pred.w(); ++w) {
                    const int label = int(target(b, 0, h, w));
                    if (label < 0 || label >= K) throw ShapeError("label out of range");
                    double mx = -INFINITY;
                    for (int k = 0; k < K; ++k) mx = std::max(mx, double(pred(b, k, h, w)));
                    double z = 0;
                    for (int k = 0; k < K; ++k) z += p[k] = std::exp(double(pred(b, k, h, w)) - mx);
                    total += -(double(pred(b, label, h, w)) - mx - std::log(z));
                    for (int k = 0; k < K; ++k)
                        out.grad(b, k, h, w) = Scalar((p[k] / z - (k == label ? 1.0 : 0.0)) / pixels);
                }
        out.loss = total / pixels;
    } else {
        if (!pred.same_shape(target)) throw ShapeError("prediction and target shapes differ");
        const double count = double(pred.size());
        double total = 0;
        for (std::size_t k = 0; k < pred.size(); ++k) {
            const double d = double(pred.data()[k]) - double(target.data()[k]);
            if (kind == LossKind::L1) {
                total += std::abs(d);
                out.grad.data()[k] = Scalar((d > 0 ? 1.0 : d < 0 ? -1.0 : 0.0) / count);
            } else {
                total += d * d;
                out.grad.data()[k] = Scalar(2.0 * d / count);
            }
        }
        out.loss = total / count;
    }
    if (!std::isfinite(out.loss)) throw NonFiniteError("non-finite loss");
    return out;
}

template <class Scalar>
struct Gradient {
    double loss = 0;
    std::vector<Scalar> grad;
    ForwardResult<Scalar> fwd;
};

/// Reverse pass for a forward result computed with NormMode::Batch and keep = true.
template <class Scalar>
std::vector<Scalar> backprop(const GraphPlan& plan, const ParamStore<Scalar>& params, const Tensor4<Scalar>& batch,
                             const ForwardResult<Scalar>& fwd, const Tensor4<Scalar>& dout) {
    const int N = batch.n();
    std::vector<Scalar> grad(params.size(), Scalar(0));
    std::vector<Tensor4<Scalar>> d(plan.nodes.size());
    d[plan.output] = dout;
    Tensor4<Scalar> dinput; // gradient wrt the graph input is discarded

    auto input_of = [&](const LayerNode& n, int k) -> const Tensor4<Scalar>& {
        return n.inputs[k] == kGraphInput ? batch : fwd.acts[n.inputs[k]];
    };
    auto dinput_of = [&](const LayerNode& n, int k) -> Tensor4<Scalar>& {
        const int id = n.inputs[k];
        const Shape3 s = id == kGraphInput ? plan.input : plan.nodes[id].out_shape;
        Tensor4<Scalar>& t = id == kGraphInput ? dinput : d[id];
        if (t.empty()) t = Tensor4<Scalar>(N, s.c, s.h, s.w);
        return t;
    };

    for (int i = int(plan.nodes.size()) - 1; i >= 0; --i) {
        const LayerNode& n = plan.nodes[i];
        if (d[i].empty()) continue; // node does not reach the output
        const Tensor4<Scalar>& dy = d[i];
        const Tensor4<Scalar>& x = input_of(n, 0);
        Tensor4<Scalar>& dx = dinput_of(n, 0);
        const Shape3 os = n.out_shape;
        const std::size_t hw = std::size_t(os.h) * os.w;

        switch (n.kind) {
        case NodeKind::Conv: {
            const auto g = kernels::ConvGeom::of(n);
            const Scalar* w = params.at(i);
            Scalar* dw = grad.data() + params.offsets[i];
            Scalar* db = dw + std::int64_t(g.cout) * g.rows();
            kernels::conv_backward(x.data(), w, dy.data(), g, N, dx.data(), dw, db);
            break;
        }
        case NodeKind::Norm: {
            const int C = os.c;
            const Scalar* gamma = params.at(i);
            Scalar* dgamma = grad.data() + params.offsets[i];
            Scalar* dbeta = dgamma + C;
            const auto& nc = fwd.norm[i];
            const double count = double(N) * hw;
            for (int c = 0; c < C; ++c) {
                const double mean = nc.mean[c], inv = nc.inv_std[c];
                double sdy = 0, sdyx = 0;
                for (int b = 0; b < N; ++b) {
                    const Scalar* xc = x.data() + (std::size_t(b) * C + c) * hw;
                    const Scalar* dyc = dy.data() + (std::size_t(b) * C + c) * hw;
                    for (std::size_t k = 0; k < hw; ++k) {
                        sdy += dyc[k];
                        sdyx += dyc[k] * (xc[k] - mean) * inv;
                    }
                }
                dgamma[c] += Scalar(sdyx);
                dbeta[c] += Scalar(sdy);
                const double scale = gamma[c] * inv / count;
                for (int b = 0; b < N; ++b) {
                    const Scalar* xc = x.data() + (std::size_t(b) * C + c) * hw;
                    const Scalar* dyc = dy.data() + (std::size_t(b) * C + c) * hw;
                    Scalar* dxc = dx.data() + (std::size_t(b) * C + c) * hw;
                    for (std::size_t k = 0; k < hw; ++k) {
                        const double xhat = (xc[k] - mean) * inv;
                        dxc[k] += Scalar(scale * (count * dyc[k] - sdy - xhat * sdyx));
                    }
                }
            }
            break;
        }
        case NodeKind::Relu:
            for (std::size_t k = 0; k < dy.size(); ++k)
                if (x.data()[k] > Scalar(0)) dx.data()[k] += dy.data()[k];
            break;
        case NodeKind::SqueezeExcite: {
            const int C = os.c, H = n.hidden;
            const Scalar* w1 = params.at(i);
            const Scalar* w2 = w1 + H * C + H;
            Scalar* dw1 = grad.data() + params.offsets[i];
            Scalar* db1 = dw1 + H * C;
            Scalar* dw2 = db1 + H;
            Scalar* db2 = dw2 + C * H;
            const auto& sc = fwd.se[i];
            std::vector<Scalar> dz(C), dh(H);
            for (int b = 0; b < N; ++b) {
                for (int c = 0; c < C; ++c) {
                    const Scalar* xc = x.data() + (std::size_t(b) * C + c) * hw;
                    const Scalar* dyc = dy.data() + (std::size_t(b) * C + c) * hw;
                    Scalar* dxc = dx.data() + (std::size_t(b) * C + c) * hw;
                    const Scalar gate = sc.gate[b * C + c];
                    Scalar dg = 0;
                    for (std::size_t k = 0; k < hw; ++k) {
                        dg += dyc[k] * xc[k];
                        dxc[k] += dyc[k] * gate;
                    }
                    dz[c] = dg * gate * (Scalar(1) - gate);
                }
                std::fill(dh.begin(), dh.end(), Scalar(0));
                for (int c = 0; c < C; ++c) {
                    db2[c] += dz[c];
                    for (int h = 0; h < H; ++h) {
                        const Scalar a = std::max(sc.hidden[b * H + h], Scalar(0));
                        dw2[c * H + h] += dz[c] * a;
                        dh[h] += w2[c * H + h] * dz[c];
                    }
                }
                for (int h = 0; h < H; ++h) {
                    if (!(sc.hidden[b * H + h] > Scalar(0))) continue;
                    db1[h] += dh[h];
                    for (int c = 0; c < C; ++c) {
                        dw1[h * C + c] += dh[h] * sc.pooled[b * C + c];
                        const Scalar ds = w1[h * C + c] * dh[h] / Scalar(hw);
                        Scalar* dxc = dx.data() + (std::size_t(b) * C + c) * hw;
                        for (std::size_t k = 0; k < hw; ++k) dxc[k] += ds;
                    }
                }
            }
            break;
        }
        case NodeKind::Add: {
            for (std::size_t k = 0; k < dy.size(); ++k) dx.data()[k] += dy.data()[k];
            Tensor4<Scalar>& dx2 = dinput_of(n, 1);
            for (std::size_t k = 0; k < dy.size(); ++k) dx2.data()[k] += dy.data()[k];
            break;
        }
        case NodeKind::Upsample2x:
            for (int b = 0; b < N; ++b)
                for (int c = 0; c < os.c; ++c)
                    for (int h = 0; h < os.h; ++h)
                        for (int w = 0; w < os.w; ++w) dx(b, c, h / 2, w / 2) += dy(b, c, h, w);
            break;
        case NodeKind::Subsample2x:
            for (int b = 0; b < N; ++b)
                for (int c = 0; c < os.c; ++c)
                    for (int h = 0; h < os.h; ++h)
                        for (int w = 0; w < os.w; ++w) dx(b, c, 2 * h, 2 * w) += dy(b, c, h, w);
            break;
        case NodeKind::PixelShuffle: {
            const int f = n.factor;
            for (int b = 0; b < N; ++b)
                for (int c = 0; c < os.c; ++c)
                    for (int h = 0; h < os.h; ++h)
                        for (int w = 0; w < os.w; ++w)
                            dx(b, c * f * f + (h % f) * f + (w % f), h / f, w / f) += dy(b, c, h, w);
            break;
        }
        }
        d[i].release();
    }
    return grad;
}

/// Loss and exact gradient of the mean loss with respect to every parameter.
template <class Scalar>
Gradient<Scalar> backward(const GraphPlan& plan, const ParamStore<Scalar>& params, const Tensor4<Scalar>& batch,
                          const Tensor4<Scalar>& target, LossKind kind, bool check_finite = false) {
    Gradient<Scalar> g;
    ForwardOptions opt;
    opt.check_finite = check_finite;
    g.fwd = forward(plan, params, batch, opt);
    LossValue<Scalar> lv = compute_loss(g.fwd.output(), target, kind);
    g.loss = lv.loss;
    g.grad = backprop(plan, params, batch, g.fwd, lv.grad);
    return g;
}

} // namespace ldpnas

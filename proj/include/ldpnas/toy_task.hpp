#pragma once

// Procedural desk-scale tasks: textures with a smooth positive target map,
// coloured shapes with exact label maps, and bicubic-downsampled images.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "ldpnas/objective.hpp"
#include "ldpnas/spec.hpp"
#include "ldpnas/tensor.hpp"

namespace ldpnas {

struct ToyTask {
    TaskKind kind = TaskKind::DenseRegress;
    int classes = 4;   // DenseClass
    int factor = 2;    // SuperRes, 2 or 4
    int resolution = 32;
    int train_size = 200;
    int val_size = 64;
    std::uint64_t seed = 1;

    void validate() const {
        if (resolution < 2) throw ConfigError("task resolution must be >= 2");
        if (train_size < 1 || val_size < 1) throw ConfigError("task split sizes must be >= 1");
        if (kind == TaskKind::DenseClass && classes < 2) throw ConfigError("segmentation task needs >= 2 classes");
        if (kind == TaskKind::SuperRes) {
            if (factor != 2 && factor != 4) throw ConfigError("super-resolution factor must be 2 or 4");
            if (resolution % factor != 0) throw ConfigError("resolution must be divisible by the super-resolution factor");
        }
    }

    /// Head the searched networks must carry for this task.
    TaskHead head() const {
        switch (kind) {
        case TaskKind::DenseRegress: return {HeadKind::Regress, 1, 1};
        case TaskKind::DenseClass: return {HeadKind::Classify, classes, 1};
        case TaskKind::SuperRes: return {HeadKind::SuperRes, 1, factor};
        }
        return {};
    }

    /// Network input shape (the low-resolution side for super-resolution).
    Shape3 input_shape() const {
        const int side = kind == TaskKind::SuperRes ? resolution / factor : resolution;
        return {3, side, side};
    }
};

inline std::string to_string(TaskKind k) {
    switch (k) {
    case TaskKind::DenseRegress: return "dense_regress";
    case TaskKind::DenseClass: return "dense_class";
    case TaskKind::SuperRes: return "superres";
    }
    return "?";
}

inline TaskKind parse_task_kind(const std::string& s) {
    if (s == "dense_regress") return TaskKind::DenseRegress;
    if (s == "dense_class") return TaskKind::DenseClass;
    if (s == "superres") return TaskKind::SuperRes;
    throw ConfigError("unknown task kind '" + s + "' (dense_regress, dense_class, superres)");
}

struct Dataset {
    Tensor4<float> inputs;
    Tensor4<float> targets; // class labels stored as floats for DenseClass

    int size() const { return inputs.n(); }
};

struct TaskData {
    ToyTask task;
    Dataset train, val;
};

namespace detail {

using Plane = std::vector<double>;

/// Sum of random oriented sinusoids rescaled into [0, 1].
inline Plane texture(int side, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    constexpr int kWaves = 4;
    std::array<double, kWaves> fx, fy, ph, amp;
    double total = 0;
    for (int k = 0; k < kWaves; ++k) {
        const double freq = 0.5 + 3.5 * u(rng); // cycles per image
        const double ang = 2 * std::numbers::pi * u(rng);
        fx[k] = freq * std::cos(ang);
        fy[k] = freq * std::sin(ang);
        ph[k] = 2 * std::numbers::pi * u(rng);
        amp[k] = 0.25 + u(rng);
        total += amp[k];
    }
    Plane p(std::size_t(side) * side);
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) {
            double v = 0;
            for (int k = 0; k < kWaves; ++k)
                v += amp[k] * std::sin(2 * std::numbers::pi * (fx[k] * x + fy[k] * y) / side + ph[k]);
            p[y * side + x] = 0.5 + 0.5 * v / total;
        }
    return p;
}

/// Mean over a (2r+1)^2 window with edge clamping.
inline Plane box_blur(const Plane& in, int side, int r) {
    Plane out(in.size());
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) {
            double s = 0;
            for (int dy = -r; dy <= r; ++dy)
                for (int dx = -r; dx <= r; ++dx) {
                    const int yy = std::clamp(y + dy, 0, side - 1), xx = std::clamp(x + dx, 0, side - 1);
                    s += in[yy * side + xx];
                }
            out[y * side + x] = s / double((2 * r + 1) * (2 * r + 1));
        }
    return out;
}

inline double cubic(double x, double a = -0.5) {
    x = std::abs(x);
    if (x < 1) return ((a + 2) * x - (a + 3)) * x * x + 1;
    if (x < 2) return (((x - 5) * x + 8) * x - 4) * a;
    return 0;
}

/// Antialiased bicubic resampling weights for shrinking n samples by `factor`
/// (kernel stretched by the factor, rows renormalised, edges clamped).
inline std::vector<std::vector<std::pair<int, double>>> bicubic_weights(int n, int factor) {
    const int m = n / factor;
    const double support = 2.0 * factor;
    std::vector<std::vector<std::pair<int, double>>> rows(m);
    for (int i = 0; i < m; ++i) {
        const double center = (i + 0.5) * factor - 0.5;
        double norm = 0;
        for (int j = int(std::floor(center - support)); j <= int(std::ceil(center + support)); ++j) {
            const double w = cubic((j - center) / factor);
            if (w == 0.0) continue;
            rows[i].push_back({std::clamp(j, 0, n - 1), w});
            norm += w;
        }
        for (auto& [j, w] : rows[i]) w /= norm;
    }
    return rows;
}

inline Plane bicubic_downsample(const Plane& in, int side, int factor) {
    const int m = side / factor;
    const auto wts = bicubic_weights(side, factor);
    Plane tmp(std::size_t(side) * m), out(std::size_t(m) * m);
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < m; ++x) {
            double s = 0;
            for (auto [j, w] : wts[x]) s += w * in[y * side + j];
            tmp[y * m + x] = s;
        }
    for (int y = 0; y < m; ++y)
        for (int x = 0; x < m; ++x) {
            double s = 0;
            for (auto [j, w] : wts[y]) s += w * tmp[j * m + x];
            out[y * m + x] = s;
        }
    return out;
}

inline void put(Tensor4<float>& t, int n, int c, const Plane& p) {
    std::copy(p.begin(), p.end(), t.data() + (std::size_t(n) * t.c() + c) * t.h() * t.w());
}

inline void regress_sample(Dataset& d, int n, int side, std::mt19937_64& rng) {
    Plane mix(std::size_t(side) * side, 0.0);
    const double wts[3] = {0.5, 0.3, 0.2};
    for (int c = 0; c < 3; ++c) {
        const Plane t = texture(side, rng);
        put(d.inputs, n, c, t);
        for (std::size_t k = 0; k < mix.size(); ++k) mix[k] += wts[c] * t[k] * t[k];
    }
    Plane target = box_blur(mix, side, 2);
    for (double& v : target) v = 0.5 + 2.0 * v; // in [0.5, 2.5]
    put(d.targets, n, 0, target);
}

inline void class_sample(Dataset& d, int n, int side, int classes, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 0.05);
    Plane label(std::size_t(side) * side, 0.0);
    std::array<Plane, 3> img;
    for (auto& ch : img) ch = texture(side, rng);
    for (auto& ch : img)
        for (double& v : ch) v = 0.2 + 0.2 * v; // dim background
    const int shapes = 2 + int(u(rng) * 3);
    for (int s = 0; s < shapes; ++s) {
        const int k = 1 + int(u(rng) * (classes - 1)) % (classes - 1);
        const double cx = u(rng) * side, cy = u(rng) * side, rad = side * (0.12 + 0.18 * u(rng));
        const double hue = double(k) / classes;
        const double col[3] = {0.55 + 0.45 * std::cos(2 * std::numbers::pi * hue),
                               0.55 + 0.45 * std::cos(2 * std::numbers::pi * (hue + 1.0 / 3)),
                               0.55 + 0.45 * std::cos(2 * std::numbers::pi * (hue + 2.0 / 3))};
        for (int y = 0; y < side; ++y)
            for (int x = 0; x < side; ++x) {
                const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
                bool inside = false;
                switch ((k - 1) % 3) {
                case 0: inside = dx * dx + dy * dy <= rad * rad; break;
                case 1: inside = std::abs(dx) <= rad * 0.8 && std::abs(dy) <= rad * 0.8; break;
                case 2: inside = std::abs(dx) + std::abs(dy) <= rad; break;
                }
                if (!inside) continue;
                label[y * side + x] = k;
                for (int c = 0; c < 3; ++c) img[c][y * side + x] = col[c];
            }
    }
    for (int c = 0; c < 3; ++c) {
        for (double& v : img[c]) v = std::clamp(v + noise(rng), 0.0, 1.0);
        put(d.inputs, n, c, img[c]);
    }
    put(d.targets, n, 0, label);
}

inline void superres_sample(Dataset& d, int n, int side, int factor, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    // a hard-edged rectangle over the texture gives detail the low-res input cannot carry
    const int x0 = int(u(rng) * side * 0.6), y0 = int(u(rng) * side * 0.6);
    const int x1 = x0 + 2 + int(u(rng) * side * 0.4), y1 = y0 + 2 + int(u(rng) * side * 0.4);
    for (int c = 0; c < 3; ++c) {
        Plane hr = texture(side, rng);
        const double shade = u(rng);
        for (int y = y0; y < std::min(y1, side); ++y)
            for (int x = x0; x < std::min(x1, side); ++x) hr[y * side + x] = 0.5 * hr[y * side + x] + 0.5 * shade;
        put(d.targets, n, c, hr);
        Plane lr = bicubic_downsample(hr, side, factor);
        for (double& v : lr) v = std::clamp(v, 0.0, 1.0);
        put(d.inputs, n, c, lr);
    }
}

inline Dataset make_split(const ToyTask& t, int count, std::uint64_t seed) {
    Dataset d;
    const int side = t.resolution;
    const Shape3 in = t.input_shape();
    d.inputs = Tensor4<float>(count, in.c, in.h, in.w);
    d.targets = Tensor4<float>(count, t.kind == TaskKind::SuperRes ? 3 : 1, side, side);
    for (int n = 0; n < count; ++n) {
        std::mt19937_64 rng(mix_seed(seed, std::uint64_t(n)));
        switch (t.kind) {
        case TaskKind::DenseRegress: regress_sample(d, n, side, rng); break;
        case TaskKind::DenseClass: class_sample(d, n, side, t.classes, rng); break;
        case TaskKind::SuperRes: superres_sample(d, n, side, t.factor, rng); break;
        }
    }
    return d;
}

} // namespace detail

/// Train and validation splits come from disjoint seed streams.
inline TaskData gen_task(const ToyTask& t) {
    t.validate();
    TaskData d;
    d.task = t;
    d.train = detail::make_split(t, t.train_size, mix_seed(t.seed, 0x7261696e));
    d.val = detail::make_split(t, t.val_size, mix_seed(t.seed, 0x76616c));
    return d;
}

/// Random subset of `count` training samples (validation split kept whole).
inline TaskData subsample(const TaskData& d, int count, std::uint64_t seed) {
    if (count < 1 || count > d.train.size()) throw ConfigError("subsample size must lie in [1, train_size]");
    std::vector<int> idx(d.train.size());
    for (int i = 0; i < int(idx.size()); ++i) idx[i] = i;
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(count);
    std::sort(idx.begin(), idx.end());
    TaskData out = d;
    out.task.train_size = count;
    out.train.inputs = Tensor4<float>(count, d.train.inputs.c(), d.train.inputs.h(), d.train.inputs.w());
    out.train.targets = Tensor4<float>(count, d.train.targets.c(), d.train.targets.h(), d.train.targets.w());
    for (int i = 0; i < count; ++i) {
        std::ranges::copy(d.train.inputs.sample(idx[i]), out.train.inputs.sample(i).begin());
        std::ranges::copy(d.train.targets.sample(idx[i]), out.train.targets.sample(i).begin());
    }
    return out;
}

// ---------------------------------------------------------------------------
// augmentation

struct Augment {
    bool flip = false;
    int quarter_turns = 0;
    bool drop = false;
    int drop_y = 0, drop_x = 0, drop_size = 0;

    static Augment draw(int side, std::mt19937_64& rng) {
        std::uniform_int_distribution<int> coin(0, 1), turns(0, 3);
        Augment a;
        a.flip = coin(rng);
        a.quarter_turns = turns(rng);
        a.drop = coin(rng);
        a.drop_size = std::max(1, side / 4);
        std::uniform_int_distribution<int> pos(0, side - a.drop_size);
        a.drop_y = pos(rng);
        a.drop_x = pos(rng);
        return a;
    }
};

namespace detail {

/// Flip then rotate each plane of sample n in place (planes are square).
inline void geometric(Tensor4<float>& t, int n, const Augment& a) {
    const int s = t.h();
    std::vector<float> buf(std::size_t(s) * s);
    for (int c = 0; c < t.c(); ++c) {
        float* p = t.data() + (std::size_t(n) * t.c() + c) * s * s;
        if (a.flip)
            for (int y = 0; y < s; ++y) std::reverse(p + y * s, p + (y + 1) * s);
        for (int q = 0; q < a.quarter_turns; ++q) {
            for (int y = 0; y < s; ++y)
                for (int x = 0; x < s; ++x) buf[x * s + (s - 1 - y)] = p[y * s + x]; // 90 degrees clockwise
            std::copy(buf.begin(), buf.end(), p);
        }
    }
}

} // namespace detail

/// Applies the same flip/rotation to input and target; the window drop zeroes
/// a square of the input only. Drop coordinates are in input pixels.
inline void apply_augment(Tensor4<float>& inputs, Tensor4<float>& targets, int n, const Augment& a) {
    detail::geometric(inputs, n, a);
    detail::geometric(targets, n, a);
    if (!a.drop) return;
    const int s = inputs.h();
    const int size = std::min(a.drop_size, s);
    const int y0 = std::min(a.drop_y, s - size), x0 = std::min(a.drop_x, s - size);
    for (int c = 0; c < inputs.c(); ++c)
        for (int y = y0; y < y0 + size; ++y)
            for (int x = x0; x < x0 + size; ++x) inputs(n, c, y, x) = 0.0f;
}

} // namespace ldpnas

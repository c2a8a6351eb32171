#pragma once

// Validation grade, mutation reward and the task metrics feeding A(m).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "ldpnas/errors.hpp"

namespace ldpnas {

struct ObjectiveConfig {
    double alpha = 0.6;
    std::int64_t target_params = 50000;

    void validate() const {
        if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
        if (target_params < 1) throw ConfigError("target_params must be >= 1");
    }
};

/// [P / P(m)]^r with r = 0 when P(m) <= P and r = 1 otherwise.
inline double size_term(std::int64_t params, std::int64_t target) {
    if (params <= target) return 1.0;
    return double(target) / double(params);
}

inline double grade(double accuracy, std::int64_t params, const ObjectiveConfig& cfg) {
    return cfg.alpha * accuracy + (1.0 - cfg.alpha) * size_term(params, cfg.target_params);
}

/// Reward of a child against its parent. Scores are used as given; callers
/// apply any run-constant shift beforehand. A non-finite child score is
/// ranked last with -inf.
inline double mutation_reward(double score_parent, double score_child, std::int64_t params_child,
                              const ObjectiveConfig& cfg) {
    if (!std::isfinite(score_child)) return -std::numeric_limits<double>::infinity();
    if (score_parent == 0.0 || !std::isfinite(score_parent))
        throw DegenerateParent("parent score must be finite and nonzero");
    return cfg.alpha * (score_child / score_parent) + (1.0 - cfg.alpha) * size_term(params_child, cfg.target_params);
}

// ---------------------------------------------------------------------------
// metrics

inline constexpr double kPsnrInfinite = std::numeric_limits<double>::infinity();

struct DepthMetrics {
    double rel = 0, rmse = 0, d1 = 0, d2 = 0, d3 = 0;
};

struct SegMetrics {
    double miou = 0, pixacc = 0;
};

struct SrMetrics {
    double psnr = 0, ssim = 0;
};

/// REL, RMSE and threshold accuracies over masked pixels (mask empty = all pixels).
inline DepthMetrics depth_metrics(std::span<const double> pred, std::span<const double> gt,
                                  std::span<const bool> mask = {}) {
    if (pred.size() != gt.size()) throw ShapeError("depth prediction and ground truth differ in size");
    if (!mask.empty() && mask.size() != gt.size()) throw ShapeError("mask size mismatch");
    DepthMetrics m;
    std::size_t n = 0, c1 = 0, c2 = 0, c3 = 0;
    double rel = 0, sq = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        if (!mask.empty() && !mask[i]) continue;
        const double g = gt[i], p = pred[i];
        if (!(g > 0)) throw ShapeError("ground truth must be positive on the mask");
        ++n;
        rel += std::abs(p - g) / g;
        sq += (p - g) * (p - g);
        const double ratio = std::max(p / g, g / p);
        if (ratio < 1.25) ++c1;
        if (ratio < 1.25 * 1.25) ++c2;
        if (ratio < 1.25 * 1.25 * 1.25) ++c3;
    }
    if (n == 0) throw ShapeError("empty mask");
    m.rel = rel / double(n);
    m.rmse = std::sqrt(sq / double(n));
    m.d1 = double(c1) / double(n);
    m.d2 = double(c2) / double(n);
    m.d3 = double(c3) / double(n);
    return m;
}

/// Mean IoU over classes present in prediction or ground truth, and pixel accuracy.
inline SegMetrics seg_metrics(std::span<const int> pred, std::span<const int> gt, int classes) {
    if (classes <= 0) throw ConfigError("class count must be >= 1");
    if (pred.size() != gt.size()) throw ShapeError("label maps differ in size");
    if (gt.empty()) throw ShapeError("empty label map");
    std::vector<std::int64_t> inter(classes, 0), in_pred(classes, 0), in_gt(classes, 0);
    std::int64_t correct = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        if (pred[i] < 0 || pred[i] >= classes || gt[i] < 0 || gt[i] >= classes) throw ShapeError("label out of range");
        ++in_pred[pred[i]];
        ++in_gt[gt[i]];
        if (pred[i] == gt[i]) {
            ++inter[gt[i]];
            ++correct;
        }
    }
    SegMetrics m;
    int present = 0;
    double sum = 0;
    for (int k = 0; k < classes; ++k) {
        const std::int64_t uni = in_pred[k] + in_gt[k] - inter[k];
        if (uni == 0) continue;
        ++present;
        sum += double(inter[k]) / double(uni);
    }
    m.miou = sum / present;
    m.pixacc = double(correct) / double(gt.size());
    return m;
}

/// SSIM factors for one window: luminance l and the joint contrast-structure term cs.
struct SsimTerms {
    double luminance = 1, contrast_structure = 1;
    double value() const { return luminance * contrast_structure; }
};

inline SsimTerms ssim_window(std::span<const double> x, std::span<const double> y, double value_range) {
    const double c1 = (0.01 * value_range) * (0.01 * value_range);
    const double c2 = (0.03 * value_range) * (0.03 * value_range);
    const double n = double(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double vx = 0, vy = 0, cxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        vx += (x[i] - mx) * (x[i] - mx);
        vy += (y[i] - my) * (y[i] - my);
        cxy += (x[i] - mx) * (y[i] - my);
    }
    vx /= n;
    vy /= n;
    cxy /= n;
    return {(2 * mx * my + c1) / (mx * mx + my * my + c1), (2 * cxy + c2) / (vx + vy + c2)};
}

/// PSNR and mean SSIM over sliding 8x8 windows (stride 1) of each channel.
/// Images are [channels][height][width] flattened; planes smaller than 8x8 use one window.
inline SrMetrics sr_metrics(std::span<const double> pred, std::span<const double> gt, int channels, int height,
                            int width, double value_range) {
    if (pred.size() != gt.size() || gt.size() != std::size_t(channels) * height * width)
        throw ShapeError("super-resolution images differ in shape");
    double mse = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) mse += (pred[i] - gt[i]) * (pred[i] - gt[i]);
    mse /= double(gt.size());
    SrMetrics m;
    if (mse == 0.0) {
        m.psnr = kPsnrInfinite;
        m.ssim = 1.0;
        return m;
    }
    m.psnr = 10.0 * std::log10(value_range * value_range / mse);

    const int wh = std::min(8, height), ww = std::min(8, width);
    std::vector<double> wx(std::size_t(wh) * ww), wy(wx.size());
    double total = 0;
    std::int64_t windows = 0;
    for (int c = 0; c < channels; ++c) {
        const std::size_t plane = std::size_t(c) * height * width;
        for (int r0 = 0; r0 + wh <= height; ++r0) {
            for (int c0 = 0; c0 + ww <= width; ++c0) {
                for (int r = 0; r < wh; ++r)
                    for (int q = 0; q < ww; ++q) {
                        wx[r * ww + q] = pred[plane + std::size_t(r0 + r) * width + c0 + q];
                        wy[r * ww + q] = gt[plane + std::size_t(r0 + r) * width + c0 + q];
                    }
                total += ssim_window(wx, wy, value_range).value();
                ++windows;
            }
        }
    }
    m.ssim = total / double(windows);
    return m;
}

enum class TaskKind { DenseRegress, DenseClass, SuperRes };

/// Per-task metric breakdown; fields not produced by a task stay NaN.
struct MetricReport {
    double rel = NAN, rmse = NAN, d1 = NAN, d2 = NAN, d3 = NAN;
    double miou = NAN, pixacc = NAN;
    double psnr = NAN, ssim = NAN;

    static MetricReport of(const DepthMetrics& d) {
        MetricReport r;
        r.rel = d.rel;
        r.rmse = d.rmse;
        r.d1 = d.d1;
        r.d2 = d.d2;
        r.d3 = d.d3;
        return r;
    }
    static MetricReport of(const SegMetrics& s) {
        MetricReport r;
        r.miou = s.miou;
        r.pixacc = s.pixacc;
        return r;
    }
    static MetricReport of(const SrMetrics& s) {
        MetricReport r;
        r.psnr = s.psnr;
        r.ssim = s.ssim;
        return r;
    }
};

/// Bounded accuracy A(m): depth -> d1, segmentation -> MIoU, super-res -> clamp(PSNR / 50, 0, 1).
inline double accuracy_of(TaskKind task, const MetricReport& m) {
    switch (task) {
    case TaskKind::DenseRegress: return std::clamp(m.d1, 0.0, 1.0);
    case TaskKind::DenseClass: return std::clamp(m.miou, 0.0, 1.0);
    case TaskKind::SuperRes:
        if (m.psnr == kPsnrInfinite) return 1.0;
        return std::clamp(m.psnr / 50.0, 0.0, 1.0);
    }
    return 0.0;
}

struct EvalResult {
    double accuracy = 0;
    std::int64_t params = 0;
    double grade = 0;
    MetricReport metrics;
    bool diverged = false;
    double score = -std::numeric_limits<double>::infinity(); // zero-cost score, when known
};

inline EvalResult make_result(double accuracy, std::int64_t params, const ObjectiveConfig& cfg) {
    EvalResult r;
    r.accuracy = accuracy;
    r.params = params;
    r.grade = grade(accuracy, params, cfg);
    return r;
}

} // namespace ldpnas

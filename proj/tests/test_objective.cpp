#include <random>

#include <gtest/gtest.h>

#include "ldpnas/objective.hpp"

using namespace ldpnas;

TEST(SizeTerm, Branches) {
    EXPECT_EQ(size_term(1'800'000, 2'000'000), 1.0);
    EXPECT_DOUBLE_EQ(size_term(4'000'000, 2'000'000), 0.5);
    EXPECT_EQ(size_term(2'000'000, 2'000'000), 1.0);
}

TEST(Grade, HandEvaluations) {
    EXPECT_NEAR(grade(0.85, 1'000'000, {0.6, 2'000'000}), 0.91, 1e-15);
    EXPECT_DOUBLE_EQ(grade(0.37, 9'000'000, {1.0, 2'000'000}), 0.37);
    EXPECT_DOUBLE_EQ(grade(0.9, 4'000'000, {0.0, 2'000'000}), 0.5);
}

TEST(Grade, MonotoneInAccuracyAndParams) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0, 1);
    for (int t = 0; t < 1000; ++t) {
        const ObjectiveConfig cfg{u(rng), 1 + std::int64_t(u(rng) * 1e6)};
        const double a = u(rng), b = u(rng);
        const std::int64_t p = 1 + std::int64_t(u(rng) * 3e6), q = 1 + std::int64_t(u(rng) * 3e6);
        EXPECT_LE(grade(std::min(a, b), p, cfg), grade(std::max(a, b), p, cfg));
        EXPECT_GE(grade(a, std::min(p, q), cfg), grade(a, std::max(p, q), cfg));
        const double st = size_term(p, cfg.target_params);
        EXPECT_GT(st, 0.0);
        EXPECT_LE(st, 1.0);
        EXPECT_EQ(st == 1.0, p <= cfg.target_params);
    }
}

TEST(MutationReward, HandEvaluations) {
    const ObjectiveConfig cfg{0.6, 1000};
    EXPECT_DOUBLE_EQ(mutation_reward(12.5, 12.5, 900, cfg), 1.0);
    EXPECT_NEAR(mutation_reward(10.0, 11.0, 2000, cfg), 0.66 + 0.2, 1e-12);
    EXPECT_EQ(mutation_reward(10.0, -INFINITY, 10, cfg), -INFINITY);
    EXPECT_THROW(mutation_reward(0.0, 3.0, 10, cfg), DegenerateParent);
}

TEST(MutationReward, InvariantUnderCommonScoreScaling) {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0.5, 200);
    for (int t = 0; t < 200; ++t) {
        const ObjectiveConfig cfg{u(rng) / 200, 5000};
        const double sp = u(rng), sc = u(rng), k = u(rng);
        EXPECT_NEAR(mutation_reward(sp, sc, 7000, cfg), mutation_reward(k * sp, k * sc, 7000, cfg), 1e-12);
    }
}

TEST(DepthMetrics, PerfectPrediction) {
    const std::vector<double> g{1.0, 2.0, 3.5};
    const DepthMetrics m = depth_metrics(g, g);
    EXPECT_EQ(m.rel, 0.0);
    EXPECT_EQ(m.rmse, 0.0);
    EXPECT_EQ(m.d1, 1.0);
    EXPECT_EQ(m.d3, 1.0);
}

TEST(DepthMetrics, DoubledPredictionMissesAllThresholds) {
    const std::vector<double> g{1.0, 2.0, 3.5, 0.25};
    std::vector<double> p;
    for (double v : g) p.push_back(2 * v);
    const DepthMetrics m = depth_metrics(p, g);
    EXPECT_NEAR(m.rel, 1.0, 1e-9);
    EXPECT_EQ(m.d1, 0.0);
    EXPECT_EQ(m.d2, 0.0); // 2 > 1.5625
    EXPECT_EQ(m.d3, 0.0); // 2 > 1.953125
}

TEST(DepthMetrics, TwoPixelCase) {
    const std::vector<double> g{1, 2}, p{1, 1};
    const DepthMetrics m = depth_metrics(p, g);
    EXPECT_NEAR(m.rel, 0.25, 1e-9);
    EXPECT_NEAR(m.rmse, std::sqrt(0.5), 1e-9);
    EXPECT_NEAR(m.d1, 0.5, 1e-9);
    EXPECT_NEAR(m.d3, 0.5, 1e-9);
}

TEST(DepthMetrics, MaskAndErrors) {
    const std::vector<double> g{1, 2, 4}, p{1, 1, 4};
    const bool mask[] = {true, false, true};
    EXPECT_EQ(depth_metrics(p, g, mask).rel, 0.0);
    const bool none[] = {false, false, false};
    EXPECT_THROW(depth_metrics(p, g, none), ShapeError);
}

TEST(DepthMetrics, ThresholdsAreNested) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.1, 5);
    for (int t = 0; t < 100; ++t) {
        std::vector<double> g(20), p(20);
        for (int i = 0; i < 20; ++i) {
            g[i] = u(rng);
            p[i] = u(rng);
        }
        const DepthMetrics m = depth_metrics(p, g);
        EXPECT_LE(m.d1, m.d2);
        EXPECT_LE(m.d2, m.d3);
    }
}

TEST(SegMetrics, PerfectAndAllWrong) {
    const std::vector<int> gt{0, 1, 1, 0};
    const SegMetrics ok = seg_metrics(gt, gt, 2);
    EXPECT_EQ(ok.miou, 1.0);
    EXPECT_EQ(ok.pixacc, 1.0);
    const std::vector<int> flip{1, 0, 0, 1};
    EXPECT_EQ(seg_metrics(flip, gt, 2).miou, 0.0);
    EXPECT_THROW(seg_metrics(gt, gt, 0), ConfigError);
}

TEST(SegMetrics, OneMismatchOnTwoByTwo) {
    // confusion: class 0 -> {tp 2}, class 1 -> {tp 1, fn 1 predicted as 0}
    const std::vector<int> gt{0, 0, 1, 1}, pred{0, 0, 1, 0};
    const SegMetrics m = seg_metrics(pred, gt, 2);
    EXPECT_NEAR(m.pixacc, 0.75, 1e-9);
    EXPECT_NEAR(m.miou, (2.0 / 3.0 + 1.0 / 2.0) / 2.0, 1e-9);
    EXPECT_NEAR(m.miou, 7.0 / 12.0, 1e-9);
}

TEST(SrMetrics, IdenticalImages) {
    std::vector<double> img(3 * 9 * 9);
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = double(i % 17) / 17.0;
    const SrMetrics m = sr_metrics(img, img, 3, 9, 9, 1.0);
    EXPECT_EQ(m.psnr, kPsnrInfinite);
    EXPECT_EQ(m.ssim, 1.0);
}

TEST(SrMetrics, PsnrOf20dB) {
    // constant error e with e^2 = range^2 / 100
    std::vector<double> gt(64, 0.5), pred(64, 0.5 + 0.1);
    EXPECT_NEAR(sr_metrics(pred, gt, 1, 8, 8, 1.0).psnr, 20.0, 1e-9);
}

TEST(SrMetrics, ConstantShiftKeepsStructure) {
    std::vector<double> x(64), y(64);
    for (int i = 0; i < 64; ++i) {
        x[i] = 0.2 + 0.01 * (i % 8) + 0.02 * (i / 8);
        y[i] = x[i] + 0.3;
    }
    const SsimTerms t = ssim_window(y, x, 1.0);
    EXPECT_LT(t.luminance, 1.0);
    EXPECT_NEAR(t.contrast_structure, 1.0, 1e-12);
    // closed-form luminance term
    double mx = 0;
    for (double v : x) mx += v;
    mx /= 64;
    const double my = mx + 0.3, c1 = 1e-4;
    EXPECT_NEAR(t.luminance, (2 * mx * my + c1) / (mx * mx + my * my + c1), 1e-12);
    EXPECT_LT(sr_metrics(y, x, 1, 8, 8, 1.0).ssim, 1.0);
}

TEST(AccuracyOf, TaskMappings) {
    MetricReport d;
    d.d1 = 0.848;
    EXPECT_EQ(accuracy_of(TaskKind::DenseRegress, d), 0.848);
    MetricReport s;
    s.miou = 0;
    EXPECT_EQ(accuracy_of(TaskKind::DenseClass, s), 0.0);
    MetricReport r;
    r.psnr = 60;
    EXPECT_EQ(accuracy_of(TaskKind::SuperRes, r), 1.0);
    r.psnr = 25;
    EXPECT_EQ(accuracy_of(TaskKind::SuperRes, r), 0.5);
    r.psnr = kPsnrInfinite;
    EXPECT_EQ(accuracy_of(TaskKind::SuperRes, r), 1.0);
}

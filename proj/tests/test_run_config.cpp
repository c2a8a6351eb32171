#include <gtest/gtest.h>

#include <cstdlib>

#include "ldpnas/run_config.hpp"
#include "ldpnas/thread_pool.hpp"

using namespace ldpnas;

namespace {

std::string error_of(const std::string& text) {
    try {
        RunConfig::parse(text, "t.cfg");
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

} // namespace

TEST(RunConfig, EmptyTextGivesDefaults) {
    const RunConfig c = RunConfig::parse("");
    EXPECT_EQ(c.objective.alpha, 0.6);
    EXPECT_EQ(c.search.pool_size, 2000);
    EXPECT_EQ(c.task.resolution, 32);
    EXPECT_EQ(c.train.epochs, 20);
    EXPECT_EQ(c.space.head, c.task.head());
}

TEST(RunConfig, TextRoundTrip) {
    RunConfig c = RunConfig::desk();
    c.set("task", "dense_class");
    c.set("classes", "5");
    c.set("ops", "vanilla,micro_block");
    c.set("se_ratios", "0.25");
    c.set("lr", "0.0015");
    c.set("patience_mode", "adopted");
    c.finalize();
    const RunConfig d = RunConfig::parse(c.to_text());
    EXPECT_EQ(d.to_text(), c.to_text());
    EXPECT_EQ(d.space.head.kind, HeadKind::Classify);
    EXPECT_EQ(d.space.head.classes, 5);
    EXPECT_EQ(d.space.ops.size(), 2u);
    EXPECT_EQ(d.train.base_lr, 0.0015);
    EXPECT_EQ(d.search.patience_mode, PatienceMode::Adopted);
}

TEST(RunConfig, EveryKeyIsReadable) {
    const RunConfig c;
    for (const std::string& k : RunConfig::keys()) EXPECT_NO_THROW(c.get(k)) << k;
}

TEST(RunConfig, CommentsAndBlankLines) {
    const RunConfig c = RunConfig::parse("# run\n\n  alpha = 0.4   # trailing\nseed=9\n");
    EXPECT_EQ(c.objective.alpha, 0.4);
    EXPECT_EQ(c.search.seed, 9u);
}

TEST(RunConfig, ErrorsNameLineAndKey) {
    EXPECT_EQ(error_of("alpha = 0.5\nbogus = 1\n"), "t.cfg:2: unknown key 'bogus'");
    EXPECT_EQ(error_of("pool_size = ten\n"), "t.cfg:1: pool_size: expected an integer, got 'ten'");
    EXPECT_EQ(error_of("seed 3\n"), "t.cfg:1: expected key = value");
    EXPECT_NE(error_of("alpha = 0.5\nalpha = 0.6\n").find("duplicate key 'alpha'"), std::string::npos);
    EXPECT_NE(error_of("skips = none,,residual\n").find("t.cfg:1:"), std::string::npos);
    EXPECT_NE(error_of("se_ratios = 0.5\n").find("0 or 0.25"), std::string::npos);
    EXPECT_NE(error_of("evaluator = oracle\n").find("toy or zerocost"), std::string::npos);
    EXPECT_NE(error_of("task = depth\n").find("unknown task kind"), std::string::npos);
    EXPECT_NE(error_of("augment = maybe\n").find("true or false"), std::string::npos);
    EXPECT_NE(error_of("lr = 1e-3x\n").find("expected a number"), std::string::npos);
}

TEST(RunConfig, RangeAndCrossChecks) {
    EXPECT_NE(error_of("alpha = 1.5\n").find("alpha"), std::string::npos);
    EXPECT_NE(error_of("target_params = 0\n").find("target_params"), std::string::npos);
    EXPECT_NE(error_of("resolution = 36\n").find("divisible by 2^(scales_max-1)"), std::string::npos);
    EXPECT_EQ(error_of("resolution = 36\nscales_max = 3\n"), "");
    EXPECT_NE(error_of("probe_size = 300\n").find("exceeds train_size"), std::string::npos);
    EXPECT_EQ(error_of("probe_size = 300\nprobe_source = noise\n"), "");
    EXPECT_NE(error_of("channels = 8,4\n").find("strictly increasing"), std::string::npos);
    EXPECT_NE(error_of("task = superres\nsr_factor = 3\n").find("factor"), std::string::npos);
    // super-resolution networks see the low-resolution side: 32/4 = 8 is not divisible by 16
    EXPECT_NE(error_of("task = superres\nsr_factor = 4\n").find("network input side 8"), std::string::npos);
    EXPECT_NE(error_of("kernels = 7\n").find("3 or 5"), std::string::npos);
    EXPECT_NE(error_of("workers = -1\n").find("workers"), std::string::npos);
}

TEST(RunConfig, DeskPresetIsValidAndSmall) {
    const RunConfig c = RunConfig::desk();
    EXPECT_NO_THROW(c.validate());
    EXPECT_EQ(c.search.pool_size, 200);
    EXPECT_EQ(c.search.parents, 6);
    EXPECT_EQ(c.search.max_iter, 15);
    EXPECT_EQ(c.task.resolution, 16);
}

TEST(RunConfig, LoadMissingFile) { EXPECT_THROW(RunConfig::load("/nonexistent/run.cfg"), ConfigError); }

TEST(RunConfig, EvaluatorKindsAndProbe) {
    RunConfig c = RunConfig::desk();
    c.task.train_size = 20;
    c.search.probe_size = 5;
    c.finalize();
    const TaskData d = gen_task(c.task);
    const ProbeBatch p = c.probe(d);
    EXPECT_EQ(p.size(), 5);
    EXPECT_EQ(p.source, ProbeSource::Task);
    EXPECT_EQ(c.make_evaluator(d)->kind(), "toy");
    c.set("evaluator", "zerocost");
    c.set("probe_source", "noise");
    EXPECT_EQ(c.make_evaluator(d)->kind(), "zerocost");
    EXPECT_EQ(c.probe(d).source, ProbeSource::Noise);
}

TEST(Workers, EnvironmentOverride) {
    ::setenv(kWorkersEnv, "3", 1);
    EXPECT_EQ(worker_count(0), 3);
    EXPECT_EQ(worker_count(2), 2);
    ::setenv(kWorkersEnv, "zero", 1);
    EXPECT_THROW(worker_count(0), ConfigError);
    ::setenv(kWorkersEnv, "0", 1);
    EXPECT_THROW(worker_count(0), ConfigError);
    ::unsetenv(kWorkersEnv);
    EXPECT_GE(worker_count(0), 1);
}

TEST(Workers, ParallelForCoversEachIndexOnceAndRethrows) {
    std::vector<int> hits(100, 0);
    parallel_for(100, 4, [&](int i) { ++hits[i]; });
    for (int h : hits) EXPECT_EQ(h, 1);
    EXPECT_THROW(parallel_for(10, 3, [](int i) {
                     if (i == 7) throw Error("boom");
                 }),
                 Error);
}

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "ldpnas/ats.hpp"
#include "test_support.hpp"

using namespace ldpnas;
namespace fs = std::filesystem;

namespace {

SpaceConfig space() {
    SpaceConfig s = fixtures::small_space();
    s.scales_max = 2;
    return s;
}

Scorer scorer() { return {ProbeBatch::noise(6, {3, 8, 8}, 17), {1}}; }

// Accuracy is a fixed function of the spec hash; never trains.
class HashEval : public Evaluator {
public:
    explicit HashEval(ObjectiveConfig o) : Evaluator(o) {}
    EvalResult evaluate(const NetworkSpec& spec) override {
        ++calls;
        const std::uint64_t h = spec_hash(spec);
        EvalResult r;
        r.accuracy = double(h % 1000) / 1000.0;
        r.params = analytic_params(spec, 3);
        r.grade = grade(r.accuracy, r.params, obj_);
        return r;
    }
    std::string kind() const override { return "hash"; }
    int calls = 0;
};

class ConstEval : public Evaluator {
public:
    ConstEval() : Evaluator({}) {}
    EvalResult evaluate(const NetworkSpec&) override { return make_result(0.5, 100, obj_); }
    std::string kind() const override { return "const"; }
};

class FailingEval : public Evaluator {
public:
    FailingEval() : Evaluator({}) {}
    EvalResult evaluate(const NetworkSpec&) override { throw Error("evaluation backend unavailable"); }
    std::string kind() const override { return "failing"; }
};

SearchConfig small_search() {
    SearchConfig c;
    c.pool_size = 24;
    c.n_children = 6;
    c.max_iter = 5;
    c.patience = 3;
    c.tenure = 4;
    c.parents = 3;
    c.seed = 5;
    c.workers = 1;
    return c;
}

std::string slurp(const std::string& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::vector<Json> records(const std::string& p) {
    std::vector<Json> out;
    std::ifstream is(p);
    for (std::string line; std::getline(is, line);) out.push_back(Json::parse(line));
    return out;
}

Candidate cand(std::uint64_t hash, double score, std::int64_t params) {
    Candidate c;
    c.hash = hash;
    c.score = score;
    c.params = params;
    return c;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& f) const { return (path / f).string(); }
};

} // namespace

TEST(ParentPool, DistinctSortedDeterministic) {
    const Scorer sc = scorer();
    const auto a = build_parent_pool(space(), 30, sc, 9, 1);
    const auto b = build_parent_pool(space(), 30, sc, 9, 2);
    ASSERT_EQ(a.size(), 30u);
    std::set<std::uint64_t> hashes;
    for (std::size_t i = 0; i < a.size(); ++i) {
        hashes.insert(a[i].hash);
        EXPECT_EQ(a[i].hash, b[i].hash);
        EXPECT_EQ(a[i].score, b[i].score);
        EXPECT_EQ(a[i].params, analytic_params(a[i].spec, 3));
        if (i) {
            EXPECT_GE(a[i - 1].score, a[i].score);
        }
    }
    EXPECT_EQ(hashes.size(), 30u);
}

TEST(ParentPool, TinySpaceRaisesPoolError) {
    SpaceConfig s = space();
    s.scales_max = 1;
    s.layers_max = 1;
    s.channels = {4};
    s.ops = {{ConvKind::Vanilla}};
    s.kernels = {3};
    s.se_ratios = {SeRatio::None};
    s.skips = {SkipOp::None};
    EXPECT_THROW(build_parent_pool(s, 5, scorer(), 1), PoolError);
}

TEST(SelectParents, TopHalfThenSizeWindow) {
    // target 1000, window 10%: sizes within [900, 1100] qualify
    std::vector<Candidate> r{cand(1, 9, 5000), cand(2, 8, 20),   cand(3, 7, 3000), cand(4, 6, 1500),
                             cand(5, 5, 950),  cand(6, 4, 4000), cand(7, 3, 1080), cand(8, 2, 1000)};
    const ParentSelection s = select_parents(r, 1000, 0.10, 6);
    EXPECT_EQ(s.picks, (std::vector<std::size_t>{0, 1, 2, 4, 6, 7}));
    EXPECT_DOUBLE_EQ(s.window, 0.10);
    EXPECT_FALSE(s.short_ranking);
}

TEST(SelectParents, WindowDoublesUntilFilled) {
    std::vector<Candidate> r{cand(1, 9, 10), cand(2, 8, 10), cand(3, 7, 10), cand(4, 6, 1250),
                             cand(5, 5, 1390), cand(6, 4, 5000), cand(7, 3, 700)};
    const ParentSelection s = select_parents(r, 1000, 0.10, 6);
    // 0.1 -> 0.2 -> 0.4: 1250 (0.25), 1390 (0.39), 700 (0.3) all fit at 0.4
    EXPECT_EQ(s.picks, (std::vector<std::size_t>{0, 1, 2, 3, 4, 6}));
    EXPECT_DOUBLE_EQ(s.window, 0.4);
}

TEST(SelectParents, ShortRankingReturnsAll) {
    std::vector<Candidate> r{cand(1, 2, 10), cand(2, 1, 10)};
    const ParentSelection s = select_parents(r, 1000, 0.1, 6);
    EXPECT_EQ(s.picks.size(), 2u);
    EXPECT_TRUE(s.short_ranking);
    EXPECT_THROW(select_parents({}, 1000, 0.1, 6), PoolError);
}

TEST(Tabu, FifoTenureAndUnique) {
    std::deque<TabuEntry> t;
    GradedSpec g;
    for (std::uint64_t h = 1; h <= 5; ++h) {
        g.hash = h;
        detail::push_tabu(t, g, int(h), 3);
    }
    ASSERT_EQ(t.size(), 3u);
    EXPECT_EQ(t.front().item.hash, 3u);
    g.hash = 4;
    detail::push_tabu(t, g, 9, 3);
    ASSERT_EQ(t.size(), 3u);
    EXPECT_EQ(t[0].item.hash, 3u);
    EXPECT_EQ(t[1].item.hash, 5u);
    EXPECT_EQ(t[2].item.hash, 4u);
    EXPECT_EQ(t[2].admitted, 9);
}

namespace {

SearchState start_state(const SpaceConfig& sp, Evaluator& ev, std::uint64_t seed) {
    SearchState st;
    const NetworkSpec s = random_spec(sp, seed);
    st.current = make_graded(s, scorer()(s).score, ev.evaluate(s));
    st.best = st.current;
    return st;
}

} // namespace

TEST(AtsIteration, EmptyTabuFallbackKeepsCurrent) {
    ConstEval ev;
    const Scorer sc = scorer();
    SearchContext ctx{space(), small_search(), ObjectiveConfig{}, &sc, &ev, 0.0};
    ctx.search.patience = 1;
    SearchState st = start_state(ctx.space, ev, 3);
    const std::uint64_t start = st.current.hash;
    const Json rec = ats_iteration(st, ctx);
    ASSERT_FALSE(rec.at("barren").get<bool>());
    EXPECT_FALSE(rec.at("adopted").get<bool>());   // equal grade is not an improvement
    EXPECT_TRUE(rec.at("swapped_to").is_null());   // nothing else in tabu to fall back on
    EXPECT_EQ(st.current.hash, start);
    ASSERT_EQ(st.tabu.size(), 1u);
    EXPECT_NE(st.tabu.front().item.hash, start);
    // patience 1 with a constant evaluator ends after one step
    EXPECT_EQ(st.no_improve, 1);
    EXPECT_TRUE(st.finished(ctx.search));
}

TEST(AtsIteration, SwapsToBestTabuEntryWhenChildLoses) {
    HashEval ev({1.0, 50000});
    const Scorer sc = scorer();
    SearchContext ctx{space(), small_search(), ObjectiveConfig{1.0, 50000}, &sc, &ev, 0.0};
    SearchState st = start_state(ctx.space, ev, 3);
    st.current.grade = 2.0; // nothing can beat it
    GradedSpec a = st.current, b = st.current;
    a.hash = 11;
    a.grade = 0.3;
    b.hash = 12;
    b.grade = 0.7;
    detail::push_tabu(st.tabu, a, 0, 10);
    detail::push_tabu(st.tabu, b, 0, 10);
    const Json rec = ats_iteration(st, ctx);
    ASSERT_FALSE(rec.at("barren").get<bool>());
    EXPECT_FALSE(rec.at("adopted").get<bool>());
    EXPECT_EQ(rec.at("swapped_to").get<std::string>(), hash_hex(12));
    EXPECT_EQ(st.current.hash, 12u);
    EXPECT_EQ(st.tabu.size(), 3u);
}

TEST(AtsIteration, DeterministicAndParallelInvariant) {
    HashEval e1({0.6, 3000}), e2({0.6, 3000});
    const Scorer sc = scorer();
    SearchConfig c1 = small_search(), c2 = small_search();
    c2.workers = 3;
    SearchContext x{space(), c1, e1.objective(), &sc, &e1, 0.5}, y{space(), c2, e2.objective(), &sc, &e2, 0.5};
    SearchState s1 = start_state(x.space, e1, 4), s2 = start_state(y.space, e2, 4);
    for (int i = 0; i < 4; ++i) EXPECT_EQ(ats_iteration(s1, x).dump(), ats_iteration(s2, y).dump());
}

TEST(AtsIteration, TabuChildSkippedUnlessAspirated) {
    HashEval ev({0.6, 3000});
    const Scorer sc = scorer();
    const SearchContext ctx{space(), small_search(), ev.objective(), &sc, &ev, 0.0};
    const SearchState st0 = start_state(ctx.space, ev, 6);
    SearchState probe = st0;
    const std::string first = ats_iteration(probe, ctx).at("trained").get<std::string>();

    // Same iteration with the preferred child already tabu: it is flagged and passed over.
    SearchState st = st0;
    GradedSpec t = probe.current.hash != st0.current.hash ? probe.current : probe.tabu.back().item;
    ASSERT_EQ(hash_hex(t.hash), first);
    t.grade = st0.best.grade - 1.0;
    detail::push_tabu(st.tabu, t, 0, 10);
    const Json rec = ats_iteration(st, ctx);
    EXPECT_NE(rec.at("trained").get<std::string>(), first);
    int flagged = 0;
    for (const Json& ch : rec.at("children"))
        if (ch.contains("hash") && ch.at("hash") == first) flagged += ch.at("tabu").get<bool>();
    EXPECT_GE(flagged, 1);

    // A tabu entry holding a record grade is admitted (aspiration).
    SearchState asp = st0;
    t.grade = st0.best.grade + 1.0;
    detail::push_tabu(asp.tabu, t, 0, 10);
    EXPECT_EQ(ats_iteration(asp, ctx).at("trained").get<std::string>(), first);
}

TEST(AtsSearch, BestNondecreasingAndSummary) {
    TempDir dir("ldpnas_ats_best");
    HashEval ev({0.6, 3000});
    SearchIO io{dir / "run.ndjson", dir / "run.ckpt", -1, "cfg"};
    AtsSearch s(space(), small_search(), ev.objective(), scorer(), ev, io);
    const SearchReport rep = s.run();
    ASSERT_TRUE(rep.best);
    EXPECT_FALSE(rep.interrupted);
    EXPECT_EQ(rep.runs.size(), 3u);
    const auto recs = records(io.log_path);
    ASSERT_GE(recs.size(), 4u);
    EXPECT_EQ(recs.front().at("type"), "header");
    EXPECT_EQ(recs.front().at("schema"), kLogSchema);
    EXPECT_EQ(recs.back().at("type"), "summary");
    double last = -1;
    int slot = -1;
    std::int64_t iters = 0;
    for (const Json& r : recs) {
        if (r.at("type") == "parent_start") {
            slot = r.at("slot").get<int>();
            last = r.at("grade").get<double>();
        }
        if (r.at("type") != "iteration") continue;
        ++iters;
        EXPECT_EQ(r.at("parent").get<int>(), slot);
        const double g = r.at("best_grade").get<double>();
        EXPECT_GE(g, last);
        last = g;
    }
    EXPECT_EQ(iters, rep.iterations);
    EXPECT_EQ(recs.back().at("best").get<std::string>(), hash_hex(rep.best->hash));
}

TEST(AtsSearch, RepeatRunIsByteIdentical) {
    TempDir dir("ldpnas_ats_repeat");
    HashEval e1({0.6, 3000}), e2({0.6, 3000});
    SearchIO a{dir / "a.ndjson", "", -1, "cfg"}, b{dir / "b.ndjson", "", -1, "cfg"};
    SearchConfig c2 = small_search();
    c2.workers = 2;
    AtsSearch(space(), small_search(), e1.objective(), scorer(), e1, a).run();
    AtsSearch(space(), c2, e2.objective(), scorer(), e2, b).run();
    EXPECT_EQ(slurp(a.log_path), slurp(b.log_path));
}

TEST(AtsSearch, ResumeReplaysByteIdentical) {
    TempDir dir("ldpnas_ats_resume");
    HashEval e1({0.6, 3000});
    SearchIO full{dir / "full.ndjson", dir / "full.ckpt", -1, "cfg"};
    AtsSearch(space(), small_search(), e1.objective(), scorer(), e1, full).run();

    for (std::int64_t stop : {0, 1, 4, 7}) {
        HashEval e2({0.6, 3000}), e3({0.6, 3000});
        SearchIO part{dir / "part.ndjson", dir / "part.ckpt", stop, "cfg"};
        const SearchReport r1 = AtsSearch(space(), small_search(), e2.objective(), scorer(), e2, part).run();
        EXPECT_TRUE(r1.interrupted);
        EXPECT_EQ(r1.iterations, stop);
        {
            // debris past the checkpoint is discarded on resume
            std::ofstream junk(part.log_path, std::ios::app);
            junk << "{\"type\":\"partial";
        }
        part.stop_after = -1;
        const SearchReport r2 = AtsSearch(space(), small_search(), e3.objective(), scorer(), e3, part).resume(part.checkpoint_path);
        EXPECT_FALSE(r2.interrupted);
        EXPECT_EQ(slurp(part.log_path), slurp(full.log_path)) << "stop after " << stop;
        EXPECT_EQ(slurp(part.checkpoint_path), slurp(full.checkpoint_path));
    }
}

TEST(AtsSearch, ResumeRejectsForeignOrCorruptCheckpoint) {
    TempDir dir("ldpnas_ats_bad");
    HashEval ev({0.6, 3000});
    SearchIO io{dir / "r.ndjson", dir / "r.ckpt", 2, "cfg"};
    AtsSearch(space(), small_search(), ev.objective(), scorer(), ev, io).run();
    SearchIO other = io;
    other.config_text = "different";
    EXPECT_THROW(AtsSearch(space(), small_search(), ev.objective(), scorer(), ev, other).resume(io.checkpoint_path),
                 ConfigError);
    std::string bytes = slurp(io.checkpoint_path);
    bytes[bytes.size() / 2] ^= 0x5a;
    std::ofstream(dir / "bad.ckpt", std::ios::binary) << bytes;
    EXPECT_THROW(AtsSearch(space(), small_search(), ev.objective(), scorer(), ev, io).resume(dir / "bad.ckpt"),
                 ConfigError);
    std::ofstream(dir / "short.ckpt", std::ios::binary) << bytes.substr(0, 10);
    EXPECT_THROW(AtsSearch(space(), small_search(), ev.objective(), scorer(), ev, io).resume(dir / "short.ckpt"),
                 ConfigError);
    EXPECT_THROW(read_checkpoint(dir / "missing.ckpt"), ConfigError);
}

TEST(AtsSearch, FailingEvaluatorAbortsEverySlot) {
    TempDir dir("ldpnas_ats_fail");
    FailingEval ev;
    SearchIO io{dir / "f.ndjson", "", -1, "cfg"};
    const SearchReport rep = AtsSearch(space(), small_search(), ev.objective(), scorer(), ev, io).run();
    EXPECT_FALSE(rep.best);
    ASSERT_EQ(rep.runs.size(), 3u);
    for (const ParentRun& r : rep.runs) EXPECT_TRUE(r.aborted);
    int aborted = 0;
    for (const Json& r : records(io.log_path)) aborted += r.at("type") == "parent_aborted";
    EXPECT_EQ(aborted, 3);
}

TEST(AtsSearch, SlotsStartFromDistinctParents) {
    // A single-parent pool with several slots forces re-selection.
    TempDir dir("ldpnas_ats_resel");
    HashEval ev({0.6, 3000});
    SearchConfig c = small_search();
    c.pool_size = 4;
    c.parents = 4;
    c.max_iter = 1;
    SearchIO io{dir / "p.ndjson", "", -1, "cfg"};
    AtsSearch(space(), c, ev.objective(), scorer(), ev, io).run();
    std::set<std::string> parents;
    for (const Json& r : records(io.log_path))
        if (r.at("type") == "parent_start") {
            EXPECT_TRUE(parents.insert(r.at("parent").get<std::string>()).second);
        }
    EXPECT_GE(parents.size(), 3u);
}

TEST(SearchConfig, ValidateRejectsBadValues) {
    SearchConfig c;
    c.patience = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.swap_ratio = 1.5;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.n_children = 0;
    EXPECT_THROW(c.validate(), ConfigError);
}

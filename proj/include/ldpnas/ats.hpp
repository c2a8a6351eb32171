#pragma once

// Assisted Tabu Search. A zero-cost ranked pool supplies parents; each
// iteration mutates the current network, ranks the children by the mutation
// reward and trains only the best one; a bounded tabu list steers the walk
// when a child fails to improve.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ldpnas/evaluator.hpp"
#include "ldpnas/param_io.hpp"
#include "ldpnas/search_space.hpp"
#include "ldpnas/thread_pool.hpp"
#include "ldpnas/zerocost.hpp"

namespace ldpnas {

using Json = nlohmann::ordered_json;

enum class PatienceMode { Best, Adopted };

struct SearchConfig {
    int pool_size = 2000;
    int n_children = 24;
    double swap_ratio = 0.5;
    int max_iter = 100;
    int patience = 10;
    PatienceMode patience_mode = PatienceMode::Best; // what resets the no-improvement streak
    int tenure = 20;
    int parents = 6;
    double window = 0.10;
    std::uint64_t seed = 1;
    int probe_size = 16;
    int score_seeds = 1;
    int workers = 0; // 0 = LDPNAS_WORKERS or hardware concurrency

    void validate() const {
        if (pool_size < 1) throw ConfigError("pool_size must be >= 1");
        if (n_children < 1) throw ConfigError("n_children must be >= 1");
        if (!(swap_ratio >= 0 && swap_ratio <= 1)) throw ConfigError("swap_ratio must lie in [0, 1]");
        if (max_iter < 0) throw ConfigError("max_iter must be >= 0");
        if (patience < 1) throw ConfigError("patience must be >= 1");
        if (tenure < 1) throw ConfigError("tenure must be >= 1");
        if (parents < 1) throw ConfigError("parents must be >= 1");
        if (!(window > 0)) throw ConfigError("window must be > 0");
        if (probe_size < 1) throw ConfigError("probe_size must be >= 1");
        if (score_seeds < 1) throw ConfigError("score_seeds must be >= 1");
        if (workers < 0) throw ConfigError("workers must be >= 0");
    }
};

/// Zero-cost scoring against the run's fixed probe batch.
struct Scorer {
    ProbeBatch probe;
    std::vector<std::uint64_t> init_seeds;

    struct Result {
        double score = -std::numeric_limits<double>::infinity();
        std::int64_t params = 0;
        bool degenerate = true;
    };

    Result operator()(const NetworkSpec& spec) const {
        Result r;
        r.params = instantiate(spec, probe.shape()).total_params;
        const ScoreReport s = score_network(spec, probe, init_seeds);
        r.score = s.score;
        r.degenerate = s.degenerate;
        return r;
    }
};

struct Candidate {
    NetworkSpec spec;
    std::uint64_t hash = 0;
    double score = -std::numeric_limits<double>::infinity();
    std::int64_t params = 0;
    bool graded = false;
    double grade = NAN;
};

struct GradedSpec {
    NetworkSpec spec;
    std::uint64_t hash = 0;
    double score = -std::numeric_limits<double>::infinity();
    std::int64_t params = 0;
    double accuracy = 0;
    double grade = -std::numeric_limits<double>::infinity();
    bool diverged = false;
    MetricReport metrics;
};

struct TabuEntry {
    GradedSpec item;
    int admitted = 0;
};

struct SearchState {
    int parent_id = 0;
    GradedSpec current;
    GradedSpec best;
    std::deque<TabuEntry> tabu;
    int iteration = 0;
    int no_improve = 0;

    bool finished(const SearchConfig& c) const { return iteration >= c.max_iter || no_improve >= c.patience; }
};

/// Everything an iteration reads but never mutates (besides the evaluator cache).
struct SearchContext {
    SpaceConfig space;
    SearchConfig search;
    ObjectiveConfig objective;
    const Scorer* scorer = nullptr;
    Evaluator* evaluator = nullptr;
    double score_offset = 0;
};

namespace detail {

inline constexpr std::uint64_t kPoolTag = 0x706f6f6c;
inline constexpr std::uint64_t kChildTag = 0x6368696c64;
inline constexpr std::uint64_t kInitTag = 0x696e6974;

inline Json num(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline Json metrics_json(const MetricReport& m) {
    return Json{{"rel", num(m.rel)},       {"rmse", num(m.rmse)},     {"d1", num(m.d1)},
                {"d2", num(m.d2)},         {"d3", num(m.d3)},         {"miou", num(m.miou)},
                {"pixacc", num(m.pixacc)}, {"psnr", num(m.psnr)},     {"ssim", num(m.ssim)}};
}

/// Ranking order: graded entries first by grade, then everything by score; hash breaks ties.
inline bool rank_before(const Candidate& a, const Candidate& b) {
    if (a.graded != b.graded) return a.graded;
    if (a.graded && a.grade != b.grade) return a.grade > b.grade;
    if (a.score != b.score) return a.score > b.score;
    return a.hash < b.hash;
}

inline std::uint64_t tabu_digest(const std::deque<TabuEntry>& tabu) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& e : tabu)
        for (int k = 0; k < 8; ++k) {
            h ^= (e.item.hash >> (8 * k)) & 0xff;
            h *= 0x100000001b3ULL;
        }
    return h;
}

inline void push_tabu(std::deque<TabuEntry>& tabu, const GradedSpec& g, int iteration, int tenure) {
    std::erase_if(tabu, [&](const TabuEntry& e) { return e.item.hash == g.hash; });
    tabu.push_back({g, iteration});
    while (int(tabu.size()) > tenure) tabu.pop_front();
}

inline bool better_best(const GradedSpec& cand, const GradedSpec& best) {
    return cand.grade > best.grade || (cand.grade == best.grade && cand.params < best.params);
}

} // namespace detail

inline GradedSpec make_graded(const NetworkSpec& spec, double score, const EvalResult& ev) {
    GradedSpec g;
    g.spec = spec;
    g.hash = spec_hash(spec);
    g.score = score;
    g.params = ev.params;
    g.accuracy = ev.accuracy;
    g.grade = ev.grade;
    g.diverged = ev.diverged;
    g.metrics = ev.metrics;
    return g;
}

inline std::vector<std::uint64_t> score_seeds(const SearchConfig& c) {
    std::vector<std::uint64_t> s;
    for (int k = 0; k < c.score_seeds; ++k) s.push_back(mix_seed(c.seed, detail::kInitTag, std::uint64_t(k)));
    return s;
}

/// pool_size distinct random specs scored in parallel, best score first.
inline std::vector<Candidate> build_parent_pool(const SpaceConfig& space, int pool_size, const Scorer& scorer,
                                                std::uint64_t seed, int workers = 1) {
    if (pool_size < 1) throw ConfigError("pool_size must be >= 1");
    std::vector<Candidate> pool;
    std::set<std::uint64_t> seen;
    const std::int64_t budget = 20LL * pool_size + 100;
    for (std::int64_t a = 0; int(pool.size()) < pool_size; ++a) {
        if (a >= budget)
            throw PoolError("only " + std::to_string(pool.size()) + " unique specs after " + std::to_string(budget) +
                            " draws; the space is too small for pool_size " + std::to_string(pool_size));
        Candidate c;
        c.spec = random_spec(space, mix_seed(seed, detail::kPoolTag, std::uint64_t(a)));
        c.hash = spec_hash(c.spec);
        if (!seen.insert(c.hash).second) continue;
        pool.push_back(std::move(c));
    }
    parallel_for(int(pool.size()), workers, [&](int i) {
        const Scorer::Result r = scorer(pool[i].spec);
        pool[i].score = r.score;
        pool[i].params = r.params;
    });
    std::sort(pool.begin(), pool.end(), detail::rank_before);
    return pool;
}

struct ParentSelection {
    std::vector<std::size_t> picks; // indices into the ranking
    bool short_ranking = false;     // fewer entries than requested
    double window = 0;              // relative window finally used for the size-matched half
};

/// The top-ranked half (rounded up) plus the best-ranked specs whose size lies
/// within a relative window of the target; the window doubles until it holds
/// enough unpicked candidates.
inline ParentSelection select_parents(const std::vector<Candidate>& ranking, std::int64_t target_params,
                                      double window = 0.10, int count = 6) {
    if (ranking.empty()) throw PoolError("cannot select parents from an empty ranking");
    if (count < 1) throw ConfigError("parent count must be >= 1");
    ParentSelection sel;
    sel.window = window;
    if (int(ranking.size()) <= count) {
        sel.short_ranking = int(ranking.size()) < count;
        for (std::size_t i = 0; i < ranking.size(); ++i) sel.picks.push_back(i);
        return sel;
    }
    const int top = (count + 1) / 2;
    for (int i = 0; i < top; ++i) sel.picks.push_back(std::size_t(i));
    const int rest = count - top;
    auto rel = [&](std::size_t i) {
        return std::abs(double(ranking[i].params - target_params)) / double(target_params);
    };
    double widest = 0;
    for (std::size_t i = top; i < ranking.size(); ++i) widest = std::max(widest, rel(i));
    for (double w = window;; w *= 2) {
        std::vector<std::size_t> in;
        for (std::size_t i = top; i < ranking.size() && int(in.size()) < rest; ++i)
            if (rel(i) <= w) in.push_back(i);
        if (int(in.size()) >= rest || w >= widest) {
            sel.picks.insert(sel.picks.end(), in.begin(), in.end());
            sel.window = w;
            return sel;
        }
    }
}

/// One mutate, score, reward, train, decide step. Returns the event record;
/// the trained child, if any, is copied to *trained.
inline Json ats_iteration(SearchState& st, const SearchContext& ctx, GradedSpec* trained = nullptr) {
    const SearchConfig& sc = ctx.search;
    const int iter = st.iteration;
    struct Child {
        NetworkSpec spec;
        bool swap = false, ok = false, tabu = false;
        std::string error;
        std::uint64_t hash = 0;
        Scorer::Result s;
        double reward = -std::numeric_limits<double>::infinity();
    };
    std::vector<Child> kids(sc.n_children);
    for (int c = 0; c < sc.n_children; ++c) {
        std::mt19937_64 rng(mix_seed(sc.seed, detail::kChildTag, std::uint64_t(st.parent_id), std::uint64_t(iter),
                                     std::uint64_t(c)));
        Child& k = kids[c];
        k.swap = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < sc.swap_ratio;
        try {
            k.spec = k.swap ? mutate_swap(st.current.spec, ctx.space, rng()) : mutate_modify(st.current.spec, ctx.space, rng());
            k.hash = spec_hash(k.spec);
            k.ok = true;
        } catch (const MutationFailed& e) {
            k.error = e.what();
        }
    }
    parallel_for(sc.n_children, worker_count(sc.workers), [&](int c) {
        if (kids[c].ok) kids[c].s = (*ctx.scorer)(kids[c].spec);
    });

    const double parent_score = std::max(1.0, st.current.score + ctx.score_offset);
    int pick = -1;
    for (int c = 0; c < sc.n_children; ++c) {
        Child& k = kids[c];
        if (!k.ok || k.hash == st.current.hash) continue;
        k.reward = mutation_reward(parent_score, k.s.score + ctx.score_offset, k.s.params, ctx.objective);
        const auto t = std::find_if(st.tabu.begin(), st.tabu.end(), [&](const TabuEntry& e) { return e.item.hash == k.hash; });
        if (t != st.tabu.end() && !(t->item.grade > st.best.grade)) { // aspiration: only a record grade lifts tabu
            k.tabu = true;
            continue;
        }
        if (std::isfinite(k.reward) && (pick < 0 || k.reward > kids[pick].reward)) pick = c;
    }

    Json rec{{"type", "iteration"},
             {"parent", st.parent_id},
             {"iteration", iter},
             {"current", hash_hex(st.current.hash)},
             {"current_grade", detail::num(st.current.grade)}};
    Json children = Json::array();
    for (const Child& k : kids) {
        if (!k.ok) {
            children.push_back({{"op", k.swap ? "swap" : "modify"}, {"failed", k.error}});
            continue;
        }
        children.push_back({{"op", k.swap ? "swap" : "modify"},
                            {"hash", hash_hex(k.hash)},
                            {"score", detail::num(k.s.score)},
                            {"params", k.s.params},
                            {"reward", detail::num(k.reward)},
                            {"tabu", k.tabu}});
    }
    rec["children"] = std::move(children);

    bool improved = false, adopted = false;
    if (pick < 0) {
        rec["barren"] = true;
    } else {
        const Child& k = kids[pick];
        const GradedSpec child = make_graded(k.spec, k.s.score, ctx.evaluator->evaluate(k.spec));
        if (trained) *trained = child;
        adopted = child.grade > st.current.grade;
        std::optional<std::uint64_t> swapped;
        if (adopted) {
            detail::push_tabu(st.tabu, st.current, iter, sc.tenure);
            st.current = child;
        } else {
            const TabuEntry* alt = nullptr;
            for (const TabuEntry& e : st.tabu)
                if (e.item.hash != st.current.hash && (!alt || e.item.grade > alt->item.grade)) alt = &e;
            if (alt) {
                swapped = alt->item.hash;
                st.current = alt->item;
            }
            detail::push_tabu(st.tabu, child, iter, sc.tenure);
        }
        improved = detail::better_best(child, st.best);
        if (improved) st.best = child;
        rec["barren"] = false;
        rec["trained"] = hash_hex(child.hash);
        rec["reward"] = detail::num(k.reward);
        rec["child_grade"] = detail::num(child.grade);
        rec["child_accuracy"] = detail::num(child.accuracy);
        rec["child_params"] = child.params;
        rec["diverged"] = child.diverged;
        rec["metrics"] = detail::metrics_json(child.metrics);
        rec["adopted"] = adopted;
        rec["swapped_to"] = swapped ? Json(hash_hex(*swapped)) : Json(nullptr);
    }
    const bool reset = sc.patience_mode == PatienceMode::Best ? improved : adopted;
    st.no_improve = reset ? 0 : st.no_improve + 1;
    ++st.iteration;
    rec["best"] = hash_hex(st.best.hash);
    rec["best_grade"] = detail::num(st.best.grade);
    rec["best_params"] = st.best.params;
    rec["no_improve"] = st.no_improve;
    rec["tabu_size"] = st.tabu.size();
    rec["tabu_digest"] = hash_hex(detail::tabu_digest(st.tabu));
    return rec;
}

// ---------------------------------------------------------------------------
// run driver, event log and checkpoints

struct ParentRun {
    int slot = 0;
    std::uint64_t parent = 0;
    GradedSpec best;
    int iterations = 0;
    bool aborted = false;
    std::string error;
};

struct SearchReport {
    std::vector<ParentRun> runs;
    std::optional<GradedSpec> best;
    std::int64_t iterations = 0;
    bool interrupted = false;
};

struct SearchIO {
    std::string log_path;          // NDJSON event log; empty disables
    std::string checkpoint_path;   // rewritten at every iteration boundary; empty disables
    std::int64_t stop_after = -1;  // simulate an interruption after this many iterations in this process
    std::string config_text;       // echoed into the log header and the checkpoint
};

inline constexpr char kCheckpointMagic[8] = {'L', 'D', 'P', 'N', 'A', 'S', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr int kLogSchema = 1;

namespace detail {

inline Json graded_json(const GradedSpec& g) {
    return Json{{"spec", serialize(g.spec)}, {"score", g.score},       {"params", g.params},
                {"accuracy", g.accuracy},    {"grade", g.grade},       {"diverged", g.diverged},
                {"metrics", Json::array({g.metrics.rel, g.metrics.rmse, g.metrics.d1, g.metrics.d2, g.metrics.d3,
                                         g.metrics.miou, g.metrics.pixacc, g.metrics.psnr, g.metrics.ssim})}};
}

inline GradedSpec graded_from(const Json& j) {
    GradedSpec g;
    g.spec = deserialize(j.at("spec").get<std::string>());
    g.hash = spec_hash(g.spec);
    g.score = j.at("score").get<double>();
    g.params = j.at("params").get<std::int64_t>();
    g.accuracy = j.at("accuracy").get<double>();
    g.grade = j.at("grade").get<double>();
    g.diverged = j.at("diverged").get<bool>();
    const auto& m = j.at("metrics");
    g.metrics.rel = m.at(0).get<double>();
    g.metrics.rmse = m.at(1).get<double>();
    g.metrics.d1 = m.at(2).get<double>();
    g.metrics.d2 = m.at(3).get<double>();
    g.metrics.d3 = m.at(4).get<double>();
    g.metrics.miou = m.at(5).get<double>();
    g.metrics.pixacc = m.at(6).get<double>();
    g.metrics.psnr = m.at(7).get<double>();
    g.metrics.ssim = m.at(8).get<double>();
    return g;
}

inline std::uint64_t fnv1a(const std::vector<std::uint8_t>& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (auto b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace detail

/// Writes the checkpoint payload (CBOR) behind a magic, version, length and
/// FNV-1a trailer. The file is replaced atomically.
inline void write_checkpoint(const std::string& path, const Json& payload) {
    const std::vector<std::uint8_t> bytes = Json::to_cbor(payload);
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw Error("cannot write checkpoint " + tmp);
        os.write(kCheckpointMagic, 8);
        detail::put_le<std::uint32_t>(os, kCheckpointVersion);
        detail::put_le<std::uint64_t>(os, bytes.size());
        os.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
        detail::put_le<std::uint64_t>(os, detail::fnv1a(bytes));
        if (!os) throw Error("failed writing checkpoint " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

inline Json read_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot open checkpoint " + path);
    const auto file_size = std::filesystem::file_size(path);
    char magic[8];
    if (!is.read(magic, 8) || !std::equal(magic, magic + 8, kCheckpointMagic))
        throw ConfigError(path + " is not a search checkpoint");
    try {
        const auto version = detail::get_le<std::uint32_t>(is);
        if (version != kCheckpointVersion)
            throw ConfigError("unsupported checkpoint version " + std::to_string(version));
        const auto len = detail::get_le<std::uint64_t>(is);
        if (len > file_size) throw ConfigError("checkpoint truncated");
        std::vector<std::uint8_t> bytes(len);
        if (!is.read(reinterpret_cast<char*>(bytes.data()), std::streamsize(len)))
            throw ConfigError("checkpoint truncated");
        if (detail::get_le<std::uint64_t>(is) != detail::fnv1a(bytes)) throw ConfigError("checkpoint checksum mismatch");
        return Json::from_cbor(bytes);
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError("corrupt checkpoint " + path + ": " + e.what());
    }
}

class AtsSearch {
public:
    AtsSearch(SpaceConfig space, SearchConfig search, ObjectiveConfig objective, Scorer scorer, Evaluator& evaluator,
              SearchIO io)
        : scorer_(std::move(scorer)), io_(std::move(io)) {
        space.validate();
        search.validate();
        objective.validate();
        ctx_.space = std::move(space);
        ctx_.search = search;
        ctx_.objective = objective;
        ctx_.scorer = &scorer_;
        ctx_.evaluator = &evaluator;
    }

    SearchReport run() {
        open_log(true);
        emit({{"type", "header"},
              {"schema", kLogSchema},
              {"evaluator", ctx_.evaluator->kind()},
              {"config", io_.config_text}});
        ranking_ = build_parent_pool(ctx_.space, ctx_.search.pool_size, scorer_, ctx_.search.seed,
                                     worker_count(ctx_.search.workers));
        double lowest = std::numeric_limits<double>::infinity();
        for (const Candidate& c : ranking_)
            if (std::isfinite(c.score)) lowest = std::min(lowest, c.score);
        ctx_.score_offset = std::isfinite(lowest) ? std::max(0.0, 1.0 - lowest) : 0.0;
        Json top = Json::array();
        for (std::size_t i = 0; i < std::min<std::size_t>(10, ranking_.size()); ++i)
            top.push_back({{"hash", hash_hex(ranking_[i].hash)},
                           {"score", detail::num(ranking_[i].score)},
                           {"params", ranking_[i].params}});
        emit({{"type", "pool"}, {"size", ranking_.size()}, {"score_offset", ctx_.score_offset}, {"top", top}});

        const ParentSelection sel = select_parents(ranking_, ctx_.objective.target_params, ctx_.search.window,
                                                   ctx_.search.parents);
        if (sel.short_ranking)
            emit({{"type", "warning"},
                  {"message", "ranking holds fewer specs than the requested parent count"},
                  {"selected", sel.picks.size()}});
        Json hashes = Json::array();
        for (std::size_t i : sel.picks) {
            initial_.push_back(ranking_[i].hash);
            hashes.push_back(hash_hex(ranking_[i].hash));
        }
        emit({{"type", "parents"}, {"hashes", hashes}, {"window", sel.window}});
        checkpoint();
        return loop();
    }

    /// Continues from a checkpoint written by run() or resume() with the same configuration.
    SearchReport resume(const std::string& checkpoint_path) {
        try {
            load(read_checkpoint(checkpoint_path));
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("malformed checkpoint " + checkpoint_path + ": " + e.what());
        } catch (const ParseError& e) {
            throw ConfigError("malformed spec in checkpoint " + checkpoint_path + ": " + e.what());
        }
        open_log(false);
        return loop();
    }

    double score_offset() const { return ctx_.score_offset; }
    const std::vector<Candidate>& ranking() const { return ranking_; }

private:
    SearchReport loop() {
        SearchReport rep;
        std::int64_t done_here = 0;
        while (slot_ < int(initial_.size())) {
            if (!active_) {
                if (!start_slot()) {
                    ++slot_;
                    checkpoint();
                    continue;
                }
                checkpoint();
            }
            while (!active_->finished(ctx_.search)) {
                if (io_.stop_after >= 0 && done_here >= io_.stop_after) {
                    rep.interrupted = true;
                    return finish_report(rep);
                }
                Json rec;
                GradedSpec child;
                try {
                    rec = ats_iteration(*active_, ctx_, &child);
                } catch (const ConfigError&) {
                    throw;
                } catch (const Error& e) {
                    abort_slot(e.what());
                    break;
                }
                emit(rec);
                if (!rec.at("barren").get<bool>()) run_graded_.push_back(std::move(child));
                ++iterations_;
                ++done_here;
                checkpoint();
            }
            if (active_) end_slot();
            checkpoint();
        }
        emit_summary();
        checkpoint();
        return finish_report(rep);
    }

    const Candidate* find(std::uint64_t h) const {
        for (const Candidate& c : ranking_)
            if (c.hash == h) return &c;
        return nullptr;
    }

    bool start_slot() {
        std::uint64_t parent = initial_[slot_];
        const Candidate* c = find(parent);
        const bool visited = (c && c->graded) || std::count(used_.begin(), used_.end(), parent) > 0;
        if (visited) {
            std::vector<Candidate> open;
            for (const Candidate& r : ranking_)
                if (!r.graded && std::count(used_.begin(), used_.end(), r.hash) == 0) open.push_back(r);
            if (open.empty()) {
                emit({{"type", "warning"}, {"message", "no unvisited spec left to replace a visited parent"}, {"slot", slot_}});
                return false;
            }
            const ParentSelection sel = select_parents(open, ctx_.objective.target_params, ctx_.search.window, 1);
            const std::uint64_t repl = open[sel.picks.front()].hash;
            emit({{"type", "parent_reselected"}, {"slot", slot_}, {"was", hash_hex(parent)}, {"now", hash_hex(repl)}});
            parent = repl;
            c = find(parent);
        }
        used_.push_back(parent);
        SearchState st;
        st.parent_id = slot_;
        try {
            st.current = make_graded(c->spec, c->score, ctx_.evaluator->evaluate(c->spec));
        } catch (const ConfigError&) {
            throw;
        } catch (const Error& e) {
            ParentRun pr;
            pr.slot = slot_;
            pr.parent = parent;
            pr.aborted = true;
            pr.error = e.what();
            runs_.push_back(pr);
            emit({{"type", "parent_aborted"}, {"slot", slot_}, {"parent", hash_hex(parent)}, {"error", pr.error}});
            return false;
        }
        st.best = st.current;
        run_graded_ = {st.current};
        active_ = st;
        emit({{"type", "parent_start"},
              {"slot", slot_},
              {"parent", hash_hex(parent)},
              {"score", detail::num(st.current.score)},
              {"params", st.current.params},
              {"accuracy", detail::num(st.current.accuracy)},
              {"grade", detail::num(st.current.grade)},
              {"metrics", detail::metrics_json(st.current.metrics)}});
        return true;
    }

    void abort_slot(const std::string& why) {
        ParentRun pr;
        pr.slot = slot_;
        pr.parent = used_.back();
        pr.best = active_->best;
        pr.iterations = active_->iteration;
        pr.aborted = true;
        pr.error = why;
        runs_.push_back(pr);
        emit({{"type", "parent_aborted"}, {"slot", slot_}, {"parent", hash_hex(pr.parent)}, {"error", why}});
        merge_ranking();
        active_.reset();
        ++slot_;
    }

    void end_slot() {
        ParentRun pr;
        pr.slot = slot_;
        pr.parent = used_.back();
        pr.best = active_->best;
        pr.iterations = active_->iteration;
        runs_.push_back(pr);
        emit({{"type", "parent_end"},
              {"slot", slot_},
              {"parent", hash_hex(pr.parent)},
              {"iterations", pr.iterations},
              {"best", hash_hex(pr.best.hash)},
              {"best_grade", detail::num(pr.best.grade)},
              {"best_accuracy", detail::num(pr.best.accuracy)},
              {"best_params", pr.best.params},
              {"best_spec", serialize(pr.best.spec)}});
        merge_ranking();
        active_.reset();
        ++slot_;
    }

    void merge_ranking() {
        std::size_t added = 0;
        for (const GradedSpec& g : run_graded_) {
            auto it = std::find_if(ranking_.begin(), ranking_.end(), [&](const Candidate& c) { return c.hash == g.hash; });
            if (it == ranking_.end()) {
                ranking_.push_back({g.spec, g.hash, g.score, g.params, true, g.grade});
                ++added;
            } else {
                it->graded = true;
                it->grade = g.grade;
            }
        }
        std::sort(ranking_.begin(), ranking_.end(), detail::rank_before);
        emit({{"type", "ranking_update"},
              {"graded", run_graded_.size()},
              {"added", added},
              {"size", ranking_.size()},
              {"top", hash_hex(ranking_.front().hash)}});
        run_graded_.clear();
    }

    void emit_summary() {
        Json runs = Json::array();
        for (const ParentRun& r : runs_)
            runs.push_back({{"slot", r.slot},
                            {"parent", hash_hex(r.parent)},
                            {"aborted", r.aborted},
                            {"iterations", r.iterations},
                            {"best", hash_hex(r.best.hash)},
                            {"best_grade", detail::num(r.best.grade)},
                            {"best_params", r.best.params}});
        Json rec{{"type", "summary"}, {"iterations", iterations_}, {"runs", runs}};
        if (const auto b = global_best()) {
            rec["best"] = hash_hex(b->hash);
            rec["best_grade"] = detail::num(b->grade);
            rec["best_accuracy"] = detail::num(b->accuracy);
            rec["best_params"] = b->params;
            rec["best_spec"] = serialize(b->spec);
        }
        emit(rec);
    }

    std::optional<GradedSpec> global_best() const {
        std::optional<GradedSpec> b;
        for (const ParentRun& r : runs_)
            if (r.iterations > 0 || !r.aborted)
                if (!b || detail::better_best(r.best, *b)) b = r.best;
        return b;
    }

    SearchReport& finish_report(SearchReport& rep) const {
        rep.runs = runs_;
        rep.best = global_best();
        rep.iterations = iterations_;
        return rep;
    }

    // -- persistence --

    void open_log(bool fresh) {
        if (io_.log_path.empty()) return;
        if (fresh) {
            log_.open(io_.log_path, std::ios::binary | std::ios::trunc);
            log_bytes_ = 0;
        } else {
            if (!std::filesystem::exists(io_.log_path) || std::filesystem::file_size(io_.log_path) < log_bytes_)
                throw ConfigError("run log " + io_.log_path + " is missing or shorter than the checkpoint records");
            std::filesystem::resize_file(io_.log_path, log_bytes_);
            log_.open(io_.log_path, std::ios::binary | std::ios::app);
        }
        if (!log_) throw Error("cannot open run log " + io_.log_path);
    }

    void emit(const Json& rec) {
        if (!log_.is_open()) return;
        const std::string line = rec.dump() + "\n";
        log_.write(line.data(), std::streamsize(line.size()));
        log_.flush();
        if (!log_) throw Error("failed writing run log");
        log_bytes_ += line.size();
    }

    void checkpoint() const {
        if (io_.checkpoint_path.empty()) return;
        Json j;
        j["config"] = io_.config_text;
        j["score_offset"] = ctx_.score_offset;
        j["log_bytes"] = log_bytes_;
        j["iterations"] = iterations_;
        j["slot"] = slot_;
        Json rk = Json::array();
        for (const Candidate& c : ranking_)
            rk.push_back({serialize(c.spec), c.score, c.params, c.graded, c.grade});
        j["ranking"] = std::move(rk);
        j["initial"] = initial_;
        j["used"] = used_;
        Json runs = Json::array();
        for (const ParentRun& r : runs_)
            runs.push_back({{"slot", r.slot},
                            {"parent", r.parent},
                            {"best", detail::graded_json(r.best)},
                            {"iterations", r.iterations},
                            {"aborted", r.aborted},
                            {"error", r.error}});
        j["runs"] = std::move(runs);
        Json graded = Json::array();
        for (const GradedSpec& g : run_graded_) graded.push_back(detail::graded_json(g));
        j["run_graded"] = std::move(graded);
        if (active_) {
            Json tabu = Json::array();
            for (const TabuEntry& e : active_->tabu)
                tabu.push_back({{"item", detail::graded_json(e.item)}, {"admitted", e.admitted}});
            j["active"] = {{"parent_id", active_->parent_id},
                           {"current", detail::graded_json(active_->current)},
                           {"best", detail::graded_json(active_->best)},
                           {"tabu", tabu},
                           {"iteration", active_->iteration},
                           {"no_improve", active_->no_improve}};
        } else {
            j["active"] = nullptr;
        }
        write_checkpoint(io_.checkpoint_path, j);
    }

    void load(const Json& j) {
        if (j.at("config").get<std::string>() != io_.config_text)
            throw ConfigError("checkpoint was written under a different configuration");
        ctx_.score_offset = j.at("score_offset").get<double>();
        log_bytes_ = j.at("log_bytes").get<std::uint64_t>();
        iterations_ = j.at("iterations").get<std::int64_t>();
        slot_ = j.at("slot").get<int>();
        ranking_.clear();
        for (const Json& r : j.at("ranking")) {
            Candidate c;
            c.spec = deserialize(r.at(0).get<std::string>());
            c.hash = spec_hash(c.spec);
            c.score = r.at(1).get<double>();
            c.params = r.at(2).get<std::int64_t>();
            c.graded = r.at(3).get<bool>();
            c.grade = r.at(4).get<double>();
            ranking_.push_back(std::move(c));
        }
        initial_ = j.at("initial").get<std::vector<std::uint64_t>>();
        used_ = j.at("used").get<std::vector<std::uint64_t>>();
        runs_.clear();
        for (const Json& r : j.at("runs")) {
            ParentRun pr;
            pr.slot = r.at("slot").get<int>();
            pr.parent = r.at("parent").get<std::uint64_t>();
            pr.best = detail::graded_from(r.at("best"));
            pr.iterations = r.at("iterations").get<int>();
            pr.aborted = r.at("aborted").get<bool>();
            pr.error = r.at("error").get<std::string>();
            runs_.push_back(std::move(pr));
        }
        run_graded_.clear();
        for (const Json& g : j.at("run_graded")) run_graded_.push_back(detail::graded_from(g));
        active_.reset();
        if (const Json& a = j.at("active"); !a.is_null()) {
            SearchState st;
            st.parent_id = a.at("parent_id").get<int>();
            st.current = detail::graded_from(a.at("current"));
            st.best = detail::graded_from(a.at("best"));
            for (const Json& e : a.at("tabu"))
                st.tabu.push_back({detail::graded_from(e.at("item")), e.at("admitted").get<int>()});
            st.iteration = a.at("iteration").get<int>();
            st.no_improve = a.at("no_improve").get<int>();
            active_ = std::move(st);
        }
    }

    Scorer scorer_;
    SearchIO io_;
    SearchContext ctx_;
    std::vector<Candidate> ranking_;
    std::vector<std::uint64_t> initial_, used_;
    std::vector<ParentRun> runs_;
    std::vector<GradedSpec> run_graded_;
    std::optional<SearchState> active_;
    int slot_ = 0;
    std::int64_t iterations_ = 0;
    std::uint64_t log_bytes_ = 0;
    std::ofstream log_;
};

} // namespace ldpnas

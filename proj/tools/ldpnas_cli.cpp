// ldpnas command-line front end. Exit codes: 0 ok, 2 bad configuration or
// input, 3 runtime failure.

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "ldpnas/ldpnas.hpp"

using namespace ldpnas;
namespace fs = std::filesystem;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

std::string read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot read " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot write " + path);
    os << text;
    if (!os) throw Error("failed writing " + path);
}

// Shared --config / --set handling.
struct ConfigArgs {
    std::string path;
    std::vector<std::string> sets;

    void attach(CLI::App* app) {
        app->add_option("-c,--config", path, "key = value run configuration file");
        app->add_option("--set", sets, "override one key, e.g. --set alpha=0.4 (repeatable)");
    }

    RunConfig build(const std::string& fallback_text = "") const {
        RunConfig c = !path.empty() ? RunConfig::load(path) : RunConfig::parse(fallback_text, "checkpoint config");
        for (const std::string& kv : sets) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
            auto trim = [](std::string s) {
                s.erase(0, s.find_first_not_of(" \t"));
                s.erase(s.find_last_not_of(" \t") + 1);
                return s;
            };
            try {
                c.set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
            } catch (const ConfigError& e) {
                throw ConfigError(std::string("--set: ") + e.what());
            }
        }
        c.finalize();
        return c;
    }
};

NetworkSpec load_spec(const std::string& path) {
    try {
        return deserialize(read_file(path));
    } catch (const ParseError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

// Specs must fit the configured task head and input.
void check_spec_for(const NetworkSpec& spec, const RunConfig& c, const std::string& what) {
    if (!(spec.head == c.space.head))
        throw ConfigError(what + ": head " + head_to_string(spec.head) + " does not match task head " +
                          head_to_string(c.space.head));
    const auto bad = structural_violations(spec);
    if (!bad.empty()) throw ConfigError(what + ": " + bad.front());
    const Shape3 in = c.task.input_shape();
    if (in.h % (1 << (spec.num_scales - 1)) != 0)
        throw ConfigError(what + ": " + std::to_string(spec.num_scales) + " scales do not divide input side " +
                          std::to_string(in.h));
}

std::string fmt(double v) { return format_real(v); }

// ---------------------------------------------------------------------------

int cmd_search(const ConfigArgs& ca, const std::string& out_dir, const std::string& resume, std::int64_t stop_after,
               int workers) {
    std::string base_text;
    if (!resume.empty() && ca.path.empty()) base_text = read_checkpoint(resume).at("config").get<std::string>();
    RunConfig c = ca.build(base_text);
    if (workers > 0) c.search.workers = workers;
    const std::string dir = !out_dir.empty() ? out_dir : !resume.empty() ? fs::path(resume).parent_path().string() : "run";
    if (!dir.empty()) fs::create_directories(dir);
    const fs::path root = dir.empty() ? fs::path(".") : fs::path(dir);

    SearchIO io;
    io.log_path = (root / "run.ndjson").string();
    io.checkpoint_path = !resume.empty() ? resume : (root / "run.ckpt").string();
    io.stop_after = stop_after;
    // worker count never changes results, so it stays out of the identity text
    RunConfig ident = c;
    ident.search.workers = 0;
    io.config_text = ident.to_text();
    if (resume.empty()) write_file((root / "config.txt").string(), c.to_text());

    const auto t0 = std::chrono::steady_clock::now();
    const TaskData data = gen_task(c.task);
    const auto ev = c.make_evaluator(data);
    AtsSearch search(c.space, c.search, c.objective, c.scorer(data), *ev, io);
    const SearchReport rep = resume.empty() ? search.run() : search.resume(resume);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    std::cout << "log: " << io.log_path << "\ncheckpoint: " << io.checkpoint_path << "\n";
    std::cout << "iterations: " << rep.iterations << "\n";
    if (rep.interrupted) {
        std::cout << "status: interrupted (resume with --resume " << io.checkpoint_path << ")\n";
        return 0;
    }
    std::cout << "status: complete\n";
    if (rep.best) {
        const std::string spec_path = (root / "best.spec").string();
        write_file(spec_path, serialize(rep.best->spec));
        std::cout << "best: " << hash_hex(rep.best->hash) << " grade " << fmt(rep.best->grade) << " accuracy "
                  << fmt(rep.best->accuracy) << " params " << rep.best->params << "\nbest spec: " << spec_path << "\n";
    } else {
        std::cout << "best: none (every parent slot aborted)\n";
    }
    std::cout << "seconds: " << std::fixed << std::setprecision(1) << secs << "\n";
    return 0;
}

int cmd_score(const ConfigArgs& ca, const std::vector<std::string>& specs, const std::string& batch,
              const std::string& out) {
    const RunConfig c = ca.build();
    std::vector<std::string> paths = specs;
    if (!batch.empty()) {
        std::istringstream is(read_file(batch));
        for (std::string line; std::getline(is, line);)
            if (line.find_first_not_of(" \t\r") != std::string::npos) {
                line.erase(line.find_last_not_of(" \t\r") + 1);
                line.erase(0, line.find_first_not_of(" \t"));
                paths.push_back((fs::path(batch).parent_path() / line).string());
            }
    }
    if (paths.empty()) throw ConfigError("score: give at least one spec file or --batch");
    const bool csv = paths.size() > 1 || !batch.empty();
    TaskData data;
    if (c.probe_source == ProbeSource::Task) data = gen_task(c.task);
    const Scorer scorer = c.scorer(data);

    std::ostringstream os;
    if (csv) os << "file,hash,score,units,degenerate,params\n";
    for (const std::string& p : paths) {
        const NetworkSpec spec = load_spec(p);
        check_spec_for(spec, c, p);
        const ScoreReport r = score_network(spec, scorer.probe, scorer.init_seeds);
        const std::int64_t params = analytic_params(spec, c.space.in_channels);
        const std::string score = r.degenerate ? "-inf" : fmt(r.score);
        if (csv)
            os << p << "," << hash_hex(spec_hash(spec)) << "," << score << "," << r.units << "," << int(r.degenerate)
               << "," << params << "\n";
        else
            os << "hash=" << hash_hex(spec_hash(spec)) << " score=" << score << " units=" << r.units
               << " degenerate=" << (r.degenerate ? "true" : "false") << " params=" << params << "\n";
    }
    if (out.empty()) std::cout << os.str();
    else write_file(out, os.str());
    return 0;
}

int cmd_eval(const ConfigArgs& ca, const std::string& spec_path, const std::string& save) {
    const RunConfig c = ca.build();
    const NetworkSpec spec = load_spec(spec_path);
    check_spec_for(spec, c, spec_path);
    const TaskData data = gen_task(c.task);
    EvalResult r;
    if (c.evaluator == EvaluatorKind::ToyTrainer) {
        ToyTrainer tt(data, c.train, c.objective, mix_seed(c.search.seed, 0x747261696e));
        ParamStore<float> params;
        r = tt.evaluate_keep(spec, params);
        if (!save.empty()) {
            save_params(save, params);
            std::cout << "params saved: " << save << "\n";
        }
    } else {
        if (!save.empty()) throw ConfigError("--save-params needs the toy evaluator");
        r = c.make_evaluator(data)->evaluate(spec);
    }
    const MetricReport& m = r.metrics;
    std::cout << "hash: " << hash_hex(spec_hash(spec)) << "\ntask: " << to_string(c.task.kind)
              << "\nparams: " << r.params << "\naccuracy: " << fmt(r.accuracy) << "\ngrade: " << fmt(r.grade)
              << "\ndiverged: " << (r.diverged ? "true" : "false") << "\n";
    auto line = [](const char* k, double v) {
        if (!std::isnan(v)) std::cout << k << ": " << fmt(v) << "\n";
    };
    line("rel", m.rel);
    line("rmse", m.rmse);
    line("d1", m.d1);
    line("d2", m.d2);
    line("d3", m.d3);
    line("miou", m.miou);
    line("pixacc", m.pixacc);
    line("psnr", m.psnr);
    line("ssim", m.ssim);
    return 0;
}

int cmd_space_size(const ConfigArgs& ca, std::int64_t m, int s) {
    if (m <= 0) m = ca.build().space.block_space_size();
    const SpaceSize sz = space_size(m, s);
    std::cout << "M: " << m << "\nS: " << s << "\nexponent: " << 5 + 7 * (s - 1) << "\nsize: " << sz.exact
              << "\nlog10: " << std::fixed << std::setprecision(4) << sz.log10 << "\n";
    return 0;
}

int cmd_mutate(const ConfigArgs& ca, const std::string& spec_path, const std::string& op, std::uint64_t seed,
               const std::string& out) {
    const RunConfig c = ca.build();
    const NetworkSpec parent = load_spec(spec_path);
    check_spec_for(parent, c, spec_path);
    bool swap = op == "swap";
    if (op == "auto") {
        std::mt19937_64 rng(seed);
        swap = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < c.search.swap_ratio;
    }
    NetworkSpec child;
    try {
        child = swap ? mutate_swap(parent, c.space, seed) : mutate_modify(parent, c.space, seed);
    } catch (const MutationFailed& e) {
        std::cerr << "mutate: " << e.what() << "\n";
        return kExitRuntime;
    }
    std::cerr << "op: " << (swap ? "swap" : "modify") << "\nparent: " << hash_hex(spec_hash(parent))
              << "\nchild: " << hash_hex(spec_hash(child)) << "\n";
    if (out.empty()) std::cout << serialize(child);
    else write_file(out, serialize(child));
    return 0;
}

int cmd_rank(const ConfigArgs& ca, int pool, int top, const std::string& spec_dir) {
    RunConfig c = ca.build();
    if (pool > 0) c.search.pool_size = pool;
    TaskData data;
    if (c.probe_source == ProbeSource::Task) data = gen_task(c.task);
    const auto ranking =
        build_parent_pool(c.space, c.search.pool_size, c.scorer(data), c.search.seed, worker_count(c.search.workers));
    const ParentSelection sel = select_parents(ranking, c.objective.target_params, c.search.window, c.search.parents);
    std::vector<bool> parent(ranking.size(), false);
    for (std::size_t i : sel.picks) parent[i] = true;
    if (!spec_dir.empty()) fs::create_directories(spec_dir);
    std::cout << "rank,hash,score,params,parent\n";
    const std::size_t n = top > 0 ? std::min<std::size_t>(top, ranking.size()) : ranking.size();
    for (std::size_t i = 0; i < n; ++i) {
        const Candidate& r = ranking[i];
        std::cout << i + 1 << "," << hash_hex(r.hash) << "," << (std::isfinite(r.score) ? fmt(r.score) : "-inf") << ","
                  << r.params << "," << int(parent[i]) << "\n";
        if (!spec_dir.empty()) write_file((fs::path(spec_dir) / (hash_hex(r.hash) + ".spec")).string(), serialize(r.spec));
    }
    return 0;
}

int cmd_export(const std::string& log, const std::string& out) {
    std::ifstream is(log);
    if (!is) throw ConfigError("cannot read run log " + log);
    std::int64_t rows = 0;
    if (out.empty()) {
        rows = export_iterations(is, std::cout);
    } else {
        std::ostringstream os;
        rows = export_iterations(is, os);
        write_file(out, os.str());
    }
    std::cerr << "rows: " << rows << "\n";
    return 0;
}

int cmd_alpha_grid(const ConfigArgs& ca, const std::vector<std::string>& tasks, int subsample_size,
                   const std::string& out, const std::string& log_dir) {
    const RunConfig base = ca.build();
    std::vector<TaskKind> kinds;
    for (const std::string& t : tasks) kinds.push_back(parse_task_kind(t));
    if (kinds.empty()) kinds = {TaskKind::DenseRegress, TaskKind::DenseClass, TaskKind::SuperRes};
    if (!log_dir.empty()) fs::create_directories(log_dir);
    std::ostringstream os;
    os << kAlphaCsvHeader << "\n";
    for (TaskKind k : kinds) {
        RunConfig c = base;
        c.task.kind = k;
        c.finalize();
        const int n = subsample_size > 0 ? subsample_size : c.task.train_size;
        const std::string prefix = log_dir.empty() ? "" : (fs::path(log_dir) / "").string();
        for (const AlphaRow& r : alpha_grid(c, n, prefix)) {
            os << alpha_csv_row(r) << "\n";
            std::cerr << to_string(k) << " alpha=" << r.alpha << " done\n";
        }
    }
    if (out.empty()) std::cout << os.str();
    else write_file(out, os.str());
    return 0;
}

int cmd_describe(const ConfigArgs& ca, const std::string& spec_path) {
    const RunConfig c = ca.build();
    const NetworkSpec spec = load_spec(spec_path);
    check_spec_for(spec, c, spec_path);
    std::cout << describe(instantiate(spec, c.task.input_shape()));
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-scale dense-prediction architecture search with a training-free score and tabu search"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "ldpnas 1.0");

    ConfigArgs ca;
    std::string out, resume, spec, batch, log, log_dir, op = "auto", spec_dir;
    std::vector<std::string> specs, tasks;
    std::int64_t stop_after = -1, m = 0;
    int workers = 0, s = 5, pool = 0, top = 0, subsample_size = 0;
    std::uint64_t seed = 1;

    auto* search = app.add_subcommand("search", "run the search; writes run.ndjson, run.ckpt, best.spec");
    ca.attach(search);
    search->add_option("-o,--out", out, "output directory (default: run, or the checkpoint's directory)");
    search->add_option("--resume", resume, "continue from a checkpoint");
    search->add_option("--stop-after", stop_after, "stop after this many iterations (resume later)");
    search->add_option("-j,--workers", workers, "worker threads (default: LDPNAS_WORKERS or all cores)")
        ->check(CLI::Range(1, 1024));

    auto* score = app.add_subcommand("score", "training-free score of spec files");
    ca.attach(score);
    score->add_option("specs", specs, "spec files");
    score->add_option("--batch", batch, "file listing spec paths, one per line (CSV output)");
    score->add_option("-o,--out", out, "write output here instead of stdout");

    auto* eval = app.add_subcommand("eval", "train a spec on the toy task and report metrics");
    ca.attach(eval);
    eval->add_option("spec", spec, "spec file")->required();
    eval->add_option("--save-params", out, "write the trained parameters to this file");

    auto* size = app.add_subcommand("space-size", "search-space size M^(5+7(S-1))");
    ca.attach(size);
    size->add_option("--m", m, "choices per block (default: derived from the configured space)");
    size->add_option("--s", s, "number of scales")->check(CLI::Range(1, 64));

    auto* mutate = app.add_subcommand("mutate", "apply one mutation to a spec");
    ca.attach(mutate);
    mutate->add_option("spec", spec, "spec file")->required();
    mutate->add_option("--op", op, "swap, modify or auto (by swap_ratio)")
        ->check(CLI::IsMember({"swap", "modify", "auto"}));
    mutate->add_option("--seed", seed, "mutation seed");
    mutate->add_option("-o,--out", out, "write the child spec here instead of stdout");

    auto* rank = app.add_subcommand("rank", "score a random pool and print the ranking as CSV");
    ca.attach(rank);
    rank->add_option("--pool", pool, "pool size (default: pool_size)")->check(CLI::PositiveNumber);
    rank->add_option("--top", top, "print only the first N rows")->check(CLI::PositiveNumber);
    rank->add_option("--spec-dir", spec_dir, "also write each printed spec to this directory");

    auto* exp = app.add_subcommand("export", "per-iteration CSV from a run log");
    exp->add_option("log", log, "run.ndjson")->required();
    exp->add_option("-o,--out", out, "CSV path (default: stdout)");

    auto* grid = app.add_subcommand("alpha-grid", "search once per alpha in {0, 0.4, 0.5, 0.6, 1} on subsampled tasks");
    ca.attach(grid);
    grid->add_option("--tasks", tasks, "dense_regress, dense_class, superres (default: all)")->delimiter(',');
    grid->add_option("--subsample", subsample_size, "training samples per task (default: train_size)")
        ->check(CLI::PositiveNumber);
    grid->add_option("-o,--out", out, "CSV path (default: stdout)");
    grid->add_option("--log-dir", log_dir, "keep one run log per task and alpha here");

    auto* desc = app.add_subcommand("describe", "per-node table of the instantiated network");
    ca.attach(desc);
    desc->add_option("spec", spec, "spec file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitConfig;
    }

    try {
        if (*search) return cmd_search(ca, out, resume, stop_after, workers);
        if (*score) return cmd_score(ca, specs, batch, out);
        if (*eval) return cmd_eval(ca, spec, out);
        if (*size) return cmd_space_size(ca, m, s);
        if (*mutate) return cmd_mutate(ca, spec, op, seed, out);
        if (*rank) return cmd_rank(ca, pool, top, spec_dir);
        if (*exp) return cmd_export(log, out);
        if (*grid) return cmd_alpha_grid(ca, tasks, subsample_size, out, log_dir);
        if (*desc) return cmd_describe(ca, spec);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "runtime failure: " << e.what() << "\n";
        return kExitRuntime;
    }
    return 0;
}

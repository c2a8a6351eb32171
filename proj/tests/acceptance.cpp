// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
// `acceptance <name>...` runs only the named checks.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "grad_check.hpp"
#include "ldpnas/ldpnas.hpp"
#include "test_support.hpp"

using namespace ldpnas;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Check {
    std::string name;
    double budget_s;
    std::function<Outcome()> run;
};

std::string num(double v, int prec = 4) {
    std::ostringstream os;
    os << std::setprecision(prec) << v;
    return os.str();
}

// ---------------------------------------------------------------------------
// independent oracles

// Decimal big integer by schoolbook multiplication.
std::string decimal_power(unsigned base, unsigned exp) {
    std::vector<int> digits{1}; // little-endian
    for (unsigned e = 0; e < exp; ++e) {
        int carry = 0;
        for (int& d : digits) {
            const int v = d * int(base) + carry;
            d = v % 10;
            carry = v / 10;
        }
        while (carry) {
            digits.push_back(carry % 10);
            carry /= 10;
        }
    }
    std::string s;
    for (auto it = digits.rbegin(); it != digits.rend(); ++it) s += char('0' + *it);
    return s;
}

double laplace_det(const std::vector<std::vector<double>>& m) {
    const std::size_t n = m.size();
    if (n == 1) return m[0][0];
    double det = 0;
    for (std::size_t c = 0; c < n; ++c) {
        std::vector<std::vector<double>> minor;
        for (std::size_t r = 1; r < n; ++r) {
            std::vector<double> row;
            for (std::size_t q = 0; q < n; ++q)
                if (q != c) row.push_back(m[r][q]);
            minor.push_back(row);
        }
        det += (c % 2 ? -1.0 : 1.0) * m[0][c] * laplace_det(minor);
    }
    return det;
}

std::vector<double> avg_ranks(const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t a = 0; a < idx.size();) {
        std::size_t b = a;
        while (b + 1 < idx.size() && v[idx[b + 1]] == v[idx[a]]) ++b;
        for (std::size_t k = a; k <= b; ++k) r[idx[k]] = (double(a) + double(b)) / 2.0;
        a = b + 1;
    }
    return r;
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    const auto rx = avg_ranks(x), ry = avg_ranks(y);
    const double n = double(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        mx += rx[i] / n;
        my += ry[i] / n;
    }
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    return sxy / std::sqrt(sxx * syy);
}

std::string slurp(const std::string& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

bool close_rel(double a, double b, double tol) { return std::abs(a - b) <= tol * std::max(1.0, std::abs(b)); }

// ---------------------------------------------------------------------------
// criteria

Outcome space_size_check() {
    const SpaceSize s = space_size(192, 5);
    const std::string want = decimal_power(192, 33);
    std::ostringstream got;
    got << s.exact;
    const bool ok = got.str() == want && s.log10 >= 75.3 && s.log10 <= 75.4;
    return {ok, "192^33 = " + got.str().substr(0, 6) + "... (" + std::to_string(got.str().size()) + " digits), log10 " +
                    num(s.log10, 6)};
}

Outcome grade_check() {
    std::mt19937_64 rng(20240);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst = 0;
    int branch_one = 0, bad_branch = 0;
    for (int i = 0; i < 1000; ++i) {
        ObjectiveConfig cfg;
        cfg.alpha = i % 10 == 0 ? double(i % 3) / 2.0 : u(rng);
        cfg.target_params = 1 + std::int64_t(u(rng) * 5e6);
        const double a = u(rng);
        std::int64_t pm = 1 + std::int64_t(u(rng) * 1e7);
        if (i % 7 == 0) pm = cfg.target_params; // boundary
        const int r = pm <= cfg.target_params ? 0 : 1;
        const double hand = cfg.alpha * a + (1.0 - cfg.alpha) * std::pow(double(cfg.target_params) / double(pm), r);
        worst = std::max(worst, std::abs(grade(a, pm, cfg) - hand));
        if (pm <= cfg.target_params) {
            ++branch_one;
            if (size_term(pm, cfg.target_params) != 1.0) ++bad_branch;
        }
    }
    return {worst <= 1e-12 && bad_branch == 0,
            "max |G - hand| = " + num(worst, 3) + ", size_term exactly 1 on " + std::to_string(branch_one) +
                " small-model tuples, violations " + std::to_string(bad_branch)};
}

Outcome kernel_check() {
    std::mt19937_64 rng(7);
    std::bernoulli_distribution coin(0.5);
    auto codes_of = [&](int n, int len) {
        std::vector<BinaryCode> out;
        for (int i = 0; i < n; ++i) {
            BinaryCode c;
            c.length = len;
            c.words.assign((len + 63) / 64, 0);
            for (int k = 0; k < len; ++k)
                if (coin(rng)) c.words[k / 64] |= std::uint64_t(1) << (k % 64);
            out.push_back(c);
        }
        return out;
    };
    int prop_fail = 0;
    for (int t = 0; t < 500; ++t) {
        const int len = 1 + int(rng() % 150);
        const auto codes = codes_of(1 + int(rng() % 12), len);
        const Eigen::MatrixXd k = hamming_kernel(codes);
        for (int i = 0; i < k.rows(); ++i)
            for (int j = 0; j < k.cols(); ++j) {
                // independent: count agreeing bits directly
                int agree = 0;
                for (int b = 0; b < len; ++b)
                    agree += ((codes[i].words[b / 64] >> (b % 64)) & 1u) == ((codes[j].words[b / 64] >> (b % 64)) & 1u);
                if (k(i, j) != k(j, i) || k(i, j) < 0 || k(i, j) > len || k(i, j) != agree) ++prop_fail;
            }
        for (int i = 0; i < k.rows(); ++i)
            if (k(i, i) != len) ++prop_fail;
    }
    int det_checked = 0, det_fail = 0, singular = 0;
    for (int t = 0; t < 500; ++t) {
        const int len = 3 + int(rng() % 40);
        const Eigen::MatrixXd k = hamming_kernel(codes_of(5, len));
        std::vector<std::vector<double>> m(5, std::vector<double>(5));
        for (int i = 0; i < 5; ++i)
            for (int j = 0; j < 5; ++j) m[i][j] = k(i, j);
        const double det = laplace_det(m); // integer entries: exact in double at this size
        const LogDet ld = log_abs_det(k, len);
        ++det_checked;
        if (det == 0.0) {
            ++singular;
            det_fail += !ld.degenerate;
        } else if (ld.degenerate || !close_rel(std::exp(ld.value), std::abs(det), 1e-8)) {
            ++det_fail;
        }
    }
    return {prop_fail == 0 && det_fail == 0,
            "500 code sets, property violations " + std::to_string(prop_fail) + "; " + std::to_string(det_checked) +
                " 5x5 determinants (" + std::to_string(singular) + " singular), mismatches " + std::to_string(det_fail)};
}

Outcome gradient_check() {
    std::set<NodeKind> nodes;
    std::set<ConvKind> ops;
    double worst = 0;
    int coords = 0;
    for (int i = 0; i < 20; ++i) {
        const auto m = fixtures::micro_graph(i);
        for (const auto& n : m.plan.nodes) nodes.insert(n.kind);
        for (const auto& l : m.plan.layers) ops.insert(l.spec.op.kind);
        const auto r = fixtures::grad_check(m, 100 + i);
        worst = std::max(worst, r.max_rel_error);
        coords += r.checked;
    }
    return {worst <= 1e-3 && ops.size() == 4 && nodes.size() == 8,
            "20 micro-graphs, " + std::to_string(coords) + " coordinates, " + std::to_string(nodes.size()) +
                " node kinds, " + std::to_string(ops.size()) + " conv ops, max rel error " + num(worst, 3)};
}

Outcome param_oracle_check() {
    SpaceConfig s; // full default space
    std::set<ConvKind> ops;
    std::set<SeRatio> se;
    int mismatches = 0;
    for (int i = 0; i < 100; ++i) {
        const NetworkSpec spec = random_spec(s, mix_seed(99, std::uint64_t(i)));
        for (const BlockPos p : spec.positions()) {
            ops.insert(spec.block(p).layer.op.kind);
            se.insert(spec.block(p).layer.se);
        }
        const GraphPlan plan = instantiate(spec, {3, 32, 32});
        const auto store = allocate_params<float>(plan);
        const std::int64_t analytic = analytic_params(spec, 3);
        if (analytic != std::int64_t(store.values.size()) || analytic != count_params(plan)) ++mismatches;
    }
    return {mismatches == 0 && ops.size() == 4 && se.size() == 2,
            "100 specs, " + std::to_string(ops.size()) + " conv ops, " + std::to_string(se.size()) +
                " SE ratios, mismatches " + std::to_string(mismatches)};
}

Outcome ats_check() {
    const fs::path dir = fs::temp_directory_path() / "ldpnas_acceptance_ats";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const RunConfig c = RunConfig::desk();
    const TaskData data = gen_task(c.task);

    const auto t0 = std::chrono::steady_clock::now();
    SearchIO full{(dir / "full.ndjson").string(), (dir / "full.ckpt").string(), -1, c.to_text()};
    {
        const auto ev = c.make_evaluator(data);
        AtsSearch(c.space, c.search, c.objective, c.scorer(data), *ev, full).run();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    // best-so-far within each parent slot, and the global best over slots
    std::ifstream log(full.log_path);
    double slot_best = -1, global = -1;
    int violations = 0, iterations = 0, slots = 0;
    for (std::string line; std::getline(log, line);) {
        const Json r = Json::parse(line);
        const std::string type = r.at("type");
        if (type == "parent_start") {
            slot_best = r.at("grade").get<double>();
            ++slots;
        } else if (type == "iteration") {
            const double g = r.at("best_grade").get<double>();
            violations += g < slot_best;
            slot_best = g;
            ++iterations;
        } else if (type == "parent_end") {
            const double g = r.at("best_grade").get<double>();
            violations += g < slot_best;
        } else if (type == "summary" && r.contains("best_grade")) {
            global = r.at("best_grade").get<double>();
        }
    }

    // interrupt mid-slot, resume in a fresh search object, compare bytes
    SearchIO part{(dir / "part.ndjson").string(), (dir / "part.ckpt").string(), iterations / 2 + 1, c.to_text()};
    {
        const auto ev = c.make_evaluator(data);
        AtsSearch(c.space, c.search, c.objective, c.scorer(data), *ev, part).run();
    }
    part.stop_after = -1;
    {
        const auto ev = c.make_evaluator(data);
        AtsSearch(c.space, c.search, c.objective, c.scorer(data), *ev, part).resume(part.checkpoint_path);
    }
    const bool same_log = slurp(full.log_path) == slurp(part.log_path);
    const bool same_ckpt = slurp(full.checkpoint_path) == slurp(part.checkpoint_path);
    fs::remove_all(dir);
    const bool ok = violations == 0 && same_log && same_ckpt && secs < 1800 && slots == c.search.parents;
    return {ok, "pool " + std::to_string(c.search.pool_size) + ", " + std::to_string(slots) + " parents, " +
                    std::to_string(iterations) + " iterations, best-so-far decreases " + std::to_string(violations) +
                    ", final best " + num(global) + ", resumed log identical " + (same_log ? "yes" : "no") +
                    ", checkpoint identical " + (same_ckpt ? "yes" : "no") + ", uninterrupted run " + num(secs, 4) +
                    " s"};
}

RunConfig alpha_grid_config(TaskKind kind) {
    RunConfig c = RunConfig::desk();
    c.task.kind = kind;
    c.search.pool_size = 100;
    c.search.parents = 4;
    c.search.max_iter = 10;
    // below the smallest model in this space (about 620): otherwise every
    // sub-budget model grades 1 at alpha=0 and size stops mattering
    c.objective.target_params = 500;
    c.finalize();
    return c;
}

Outcome alpha_check() {
    bool ok = true;
    std::string detail;
    for (TaskKind kind : {TaskKind::DenseRegress, TaskKind::DenseClass, TaskKind::SuperRes}) {
        const RunConfig c = alpha_grid_config(kind);
        const auto rows = alpha_grid(c, 48);
        const AlphaRow* zero = nullptr;
        const AlphaRow* one = nullptr;
        for (const AlphaRow& r : rows) {
            if (r.alpha == 0.0) zero = &r;
            if (r.alpha == 1.0) one = &r;
            std::cout << "    " << alpha_csv_row(r) << "\n";
        }
        bool small = zero && zero->found, acc = one && one->found;
        for (const AlphaRow& r : rows) {
            if (!r.found) continue;
            small = small && zero->best_params <= r.best_params;
            acc = acc && one->best_accuracy >= r.best_accuracy;
        }
        ok = ok && small && acc && rows.size() == 5;
        detail += std::string(detail.empty() ? "" : "; ") + to_string(kind) + ": alpha=0 smallest " +
                  (small ? "yes" : "no") + ", alpha=1 most accurate " + (acc ? "yes" : "no");
    }
    return {ok, detail};
}

Outcome spearman_check() {
    double total = 0;
    std::string per_seed;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        RunConfig c = RunConfig::desk();
        c.task.seed = seed;
        c.task.train_size = 200;
        c.train.epochs = 20;
        c.search.seed = seed;
        c.finalize();
        const TaskData data = gen_task(c.task);
        const Scorer scorer = c.scorer(data);
        ToyTrainer trainer(data, c.train, c.objective, mix_seed(seed, 0x72616e6b));
        std::vector<double> scores, d1;
        for (int s = 0; s < 30; ++s) {
            const NetworkSpec spec = random_spec(c.space, mix_seed(seed, std::uint64_t(s)));
            scores.push_back(scorer(spec).score);
            const EvalResult r = trainer.evaluate(spec);
            d1.push_back(r.diverged ? 0.0 : r.metrics.d1);
        }
        const double rho = spearman(scores, d1);
        total += rho;
        per_seed += (per_seed.empty() ? "" : ", ") + num(rho, 3);
        std::cout << "    seed " << seed << ": spearman " << num(rho, 4) << "\n" << std::flush;
    }
    const double mean = total / 3.0;
    return {mean > 0.3, "30 specs x 3 seeds, per-seed rho " + per_seed + ", mean " + num(mean, 3) + " (need > 0.3)"};
}

Outcome metric_check() {
    int bad = 0;
    auto near = [&](double got, double want) {
        if (!(std::abs(got - want) <= 1e-9)) ++bad;
    };
    {
        const std::vector<double> g{1, 2}, p{1, 1};
        const DepthMetrics m = depth_metrics(p, g);
        near(m.rel, 0.25);
        near(m.rmse, std::sqrt(0.5));
        near(m.d1, 0.5);
        near(m.d3, 0.5);
    }
    {
        const std::vector<double> g{0.5, 1.5, 3.0}, p{1.0, 3.0, 6.0}; // 2x everywhere
        const DepthMetrics m = depth_metrics(p, g);
        near(m.rel, 1.0);
        near(m.d1, 0.0);
        near(m.d3, 0.0);
        const DepthMetrics same = depth_metrics(g, g);
        near(same.rel, 0);
        near(same.rmse, 0);
        near(same.d1, 1);
        near(same.d2, 1);
        near(same.d3, 1);
    }
    {
        const std::vector<int> g{0, 0, 1, 1}, p{0, 1, 1, 1};
        const SegMetrics m = seg_metrics(p, g, 2);
        near(m.pixacc, 0.75);
        near(m.miou, 7.0 / 12.0);
        const std::vector<int> wrong{1, 1, 0, 0};
        near(seg_metrics(wrong, g, 2).miou, 0.0);
        near(seg_metrics(g, g, 2).miou, 1.0);
    }
    {
        std::vector<double> gt(64), pred(64);
        for (int i = 0; i < 64; ++i) {
            gt[i] = 0.5;
            pred[i] = 0.5 + (i % 2 ? 0.1 : -0.1); // MSE = 0.01 = range^2 / 100
        }
        near(sr_metrics(pred, gt, 1, 8, 8, 1.0).psnr, 20.0);
        const SrMetrics same = sr_metrics(gt, gt, 1, 8, 8, 1.0);
        if (same.psnr != kPsnrInfinite) ++bad;
        near(same.ssim, 1.0);
        // constant shift: structure term 1, luminance term < 1, closed form
        std::vector<double> x(64), y(64);
        for (int i = 0; i < 64; ++i) {
            x[i] = 0.2 + 0.01 * (i % 8) + 0.005 * (i / 8);
            y[i] = x[i] + 0.1;
        }
        double mx = 0;
        for (double v : x) mx += v / 64;
        const double my = mx + 0.1, c1 = 0.01 * 0.01;
        const double lum = (2 * mx * my + c1) / (mx * mx + my * my + c1);
        near(sr_metrics(y, x, 1, 8, 8, 1.0).ssim, lum);
    }
    near(accuracy_of(TaskKind::DenseRegress, MetricReport::of(DepthMetrics{0, 0, 0.848, 0, 0})), 0.848);
    near(accuracy_of(TaskKind::SuperRes, MetricReport::of(SrMetrics{60, 1})), 1.0);
    return {bad == 0, "depth, segmentation and super-resolution fixtures, mismatches " + std::to_string(bad)};
}

} // namespace

int main(int argc, char** argv) {
    const std::vector<Check> checks{
        {"space-size", 1, space_size_check},
        {"grade-formula", 1, grade_check},
        {"kernel", 10, kernel_check},
        {"gradients", 120, gradient_check},
        {"param-oracle", 60, param_oracle_check},
        {"ats-contract", 1800, ats_check},
        {"alpha-tradeoff", 7200, alpha_check},
        {"zerocost-rank", 3600, spearman_check},
        {"metric-oracles", 1, metric_check},
    };
    std::set<std::string> only(argv + 1, argv + argc);
    int failed = 0;
    for (const Check& c : checks) {
        if (!only.empty() && !only.count(c.name)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_time = secs < c.budget_s;
        const bool pass = o.pass && in_time;
        failed += !pass;
        std::cout << (pass ? "PASS " : "FAIL ") << c.name << ": " << o.detail << " [" << std::fixed
                  << std::setprecision(2) << secs << " s, budget " << std::setprecision(0) << c.budget_s << " s"
                  << (in_time ? "" : ", over budget") << "]\n"
                  << std::defaultfloat << std::flush;
    }
    std::cout << (failed ? std::to_string(failed) + " criteria failed" : std::string("all criteria passed")) << "\n";
    return failed ? 1 : 0;
}

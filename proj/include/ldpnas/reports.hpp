#pragma once

// Run-log export to CSV and the alpha sweep.

#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "ldpnas/ats.hpp"
#include "ldpnas/run_config.hpp"

namespace ldpnas {

/// Columns of the per-iteration export, in order.
inline const std::vector<std::string>& export_columns() {
    static const std::vector<std::string> cols{
        "parent",     "iteration",      "current",      "current_grade", "barren",    "trained",
        "reward",     "child_grade",    "child_accuracy", "child_params", "adopted",  "swapped_to",
        "best",       "best_grade",     "best_params",  "no_improve",    "tabu_size", "tabu_digest"};
    return cols;
}

namespace detail {

inline std::string csv_cell(const Json& v) {
    if (v.is_null()) return "";
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "1" : "0";
    if (v.is_number_float()) return format_real(v.get<double>());
    return v.dump();
}

} // namespace detail

/// Writes one CSV row per iteration record in `log`; returns the row count.
/// Lines that do not parse are reported with their line number.
inline std::int64_t export_iterations(std::istream& log, std::ostream& csv) {
    const auto& cols = export_columns();
    for (std::size_t i = 0; i < cols.size(); ++i) csv << (i ? "," : "") << cols[i];
    csv << "\n";
    std::int64_t rows = 0, no = 0;
    for (std::string line; std::getline(log, line);) {
        ++no;
        if (line.empty()) continue;
        Json rec;
        try {
            rec = Json::parse(line);
        } catch (const nlohmann::json::exception&) {
            throw ConfigError("run log line " + std::to_string(no) + " is not valid JSON");
        }
        if (!rec.is_object()) throw ConfigError("run log line " + std::to_string(no) + " is not a record");
        if (rec.value("type", "") != "iteration") continue;
        for (std::size_t i = 0; i < cols.size(); ++i)
            csv << (i ? "," : "") << (rec.contains(cols[i]) ? detail::csv_cell(rec[cols[i]]) : "");
        csv << "\n";
        ++rows;
    }
    return rows;
}

inline const std::vector<double>& alpha_grid_values() {
    static const std::vector<double> a{0.0, 0.4, 0.5, 0.6, 1.0};
    return a;
}

struct AlphaRow {
    TaskKind task = TaskKind::DenseRegress;
    double alpha = 0;
    double best_accuracy = 0;
    std::int64_t best_params = 0;
    double best_grade = 0;
    std::int64_t iterations = 0;
    bool found = false;
};

inline const char* kAlphaCsvHeader = "task,alpha,best_accuracy,best_params,best_grade,iterations";

inline std::string alpha_csv_row(const AlphaRow& r) {
    std::ostringstream os;
    os << to_string(r.task) << "," << format_real(r.alpha) << ",";
    if (r.found) os << format_real(r.best_accuracy) << "," << r.best_params << "," << format_real(r.best_grade);
    else os << ",,";
    os << "," << r.iterations;
    return os.str();
}

/// Runs one search per alpha on a subsample of the task's training split.
/// All runs share seeds, pool and parents; the trainer is shared so a spec
/// is trained once per task and only regraded under each alpha.
/// `log_prefix` (optional) receives one NDJSON log per alpha.
inline std::vector<AlphaRow> alpha_grid(const RunConfig& base, int subsample_size, const std::string& log_prefix = "",
                                        const std::vector<double>& alphas = alpha_grid_values()) {
    RunConfig cfg = base;
    cfg.finalize();
    if (subsample_size < 1) throw ConfigError("subsample size must be >= 1");
    if (subsample_size > cfg.task.train_size)
        throw ConfigError("subsample size " + std::to_string(subsample_size) + " exceeds train_size " +
                          std::to_string(cfg.task.train_size));
    const TaskData full = gen_task(cfg.task);
    const TaskData data = subsample(full, subsample_size, mix_seed(cfg.task.seed, 0x737562));
    if (cfg.probe_source == ProbeSource::Task && cfg.search.probe_size > subsample_size)
        throw ConfigError("probe_size exceeds the subsample size");
    const std::unique_ptr<Evaluator> ev = cfg.make_evaluator(data);
    const Scorer scorer = cfg.scorer(data);
    std::vector<AlphaRow> rows;
    for (double a : alphas) {
        RunConfig run = cfg;
        run.objective.alpha = a;
        run.validate();
        ev->set_objective(run.objective);
        SearchIO io;
        io.config_text = run.to_text();
        if (!log_prefix.empty()) {
            std::ostringstream name;
            name << log_prefix << to_string(cfg.task.kind) << "_alpha" << std::fixed << std::setprecision(2) << a
                 << ".ndjson";
            io.log_path = name.str();
        }
        AtsSearch search(run.space, run.search, run.objective, scorer, *ev, io);
        const SearchReport rep = search.run();
        AlphaRow r;
        r.task = cfg.task.kind;
        r.alpha = a;
        r.iterations = rep.iterations;
        if (rep.best) {
            r.found = true;
            r.best_accuracy = rep.best->accuracy;
            r.best_params = rep.best->params;
            r.best_grade = rep.best->grade;
        }
        rows.push_back(r);
    }
    return rows;
}

} // namespace ldpnas

#pragma once

// Run configuration as `key = value` text. Unknown keys, malformed values and
// cross-field conflicts raise ConfigError naming the line and key.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ldpnas/ats.hpp"
#include "ldpnas/evaluator.hpp"
#include "ldpnas/toy_task.hpp"

namespace ldpnas {

enum class EvaluatorKind { ToyTrainer, ZeroCostOnly };

struct RunConfig {
    ObjectiveConfig objective;
    SpaceConfig space;
    SearchConfig search;
    ToyTask task;
    TrainConfig train;
    EvaluatorKind evaluator = EvaluatorKind::ToyTrainer;
    ProbeSource probe_source = ProbeSource::Task;

    /// Keys in canonical order.
    static const std::vector<std::string>& keys();

    void set(const std::string& key, const std::string& value);
    std::string get(const std::string& key) const;

    /// Derived fields (network head and input channels follow the task) plus validation.
    void finalize() {
        space.head = task.head();
        space.in_channels = task.input_shape().c;
        validate();
    }

    void validate() const {
        objective.validate();
        space.validate();
        search.validate();
        task.validate();
        train.validate();
        const Shape3 in = task.input_shape();
        const int side = 1 << (space.scales_max - 1);
        if (in.h % side != 0)
            throw ConfigError("network input side " + std::to_string(in.h) + " is not divisible by 2^(scales_max-1) = " +
                              std::to_string(side));
        if (probe_source == ProbeSource::Task && search.probe_size > task.train_size)
            throw ConfigError("probe_size " + std::to_string(search.probe_size) + " exceeds train_size " +
                              std::to_string(task.train_size));
    }

    std::string to_text() const {
        std::string out;
        for (const std::string& k : keys()) out += k + " = " + get(k) + "\n";
        return out;
    }

    static RunConfig parse(const std::string& text, const std::string& origin = "config") {
        RunConfig c;
        std::istringstream is(text);
        std::string line;
        std::map<std::string, int> seen;
        for (int no = 1; std::getline(is, line); ++no) {
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            const auto first = line.find_first_not_of(" \t\r");
            if (first == std::string::npos) continue;
            const auto eq = line.find('=');
            const std::string where = origin + ":" + std::to_string(no) + ": ";
            if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
            const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
            if (key.empty()) throw ConfigError(where + "empty key");
            if (auto [it, fresh] = seen.emplace(key, no); !fresh)
                throw ConfigError(where + "duplicate key '" + key + "' (first set on line " + std::to_string(it->second) + ")");
            try {
                c.set(key, value);
            } catch (const ConfigError& e) {
                throw ConfigError(where + e.what());
            }
        }
        c.finalize();
        return c;
    }

    static RunConfig load(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw ConfigError("cannot read config file " + path);
        std::stringstream ss;
        ss << is.rdbuf();
        return parse(ss.str(), path);
    }

    /// Small, fast settings for a laptop-scale search at 16x16.
    static RunConfig desk() {
        RunConfig c;
        c.space.scales_max = 3;
        c.space.layers_max = 2;
        c.space.channels = {4, 8, 12, 16};
        c.space.budget = {300, 60000};
        c.search.pool_size = 200;
        c.search.max_iter = 15;
        c.task.resolution = 16;
        c.task.train_size = 64;
        c.task.val_size = 32;
        c.train.epochs = 10;
        c.train.base_lr = 3e-3;
        c.objective.target_params = 10000;
        c.finalize();
        return c;
    }

    ProbeBatch probe(const TaskData& data) const {
        if (probe_source == ProbeSource::Noise)
            return ProbeBatch::noise(search.probe_size, task.input_shape(), mix_seed(search.seed, 0x70726f6265));
        ProbeBatch p;
        p.source = ProbeSource::Task;
        p.inputs = data.train.inputs.slice(0, search.probe_size);
        return p;
    }

    Scorer scorer(const TaskData& data) const { return {probe(data), score_seeds(search)}; }

    std::unique_ptr<Evaluator> make_evaluator(const TaskData& data) const {
        if (evaluator == EvaluatorKind::ZeroCostOnly)
            return std::make_unique<ZeroCostOnly>(probe(data), score_seeds(search).front(), objective);
        return std::make_unique<ToyTrainer>(data, train, objective, mix_seed(search.seed, 0x747261696e));
    }

private:
    static std::string trim(const std::string& s) {
        const auto a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return "";
        return s.substr(a, s.find_last_not_of(" \t\r") - a + 1);
    }
};

/// Shortest text that reads back to the same double; "inf", "-inf", "nan" otherwise.
inline std::string format_real(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

namespace detail {

inline std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream is(v);
    while (std::getline(is, item, ',')) {
        const auto a = item.find_first_not_of(" \t");
        if (a == std::string::npos) throw ConfigError("empty list item in '" + v + "'");
        out.push_back(item.substr(a, item.find_last_not_of(" \t") - a + 1));
    }
    if (out.empty()) throw ConfigError("empty list");
    return out;
}

inline std::int64_t to_int(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    std::int64_t x = 0;
    try {
        x = std::stoll(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != v.size()) throw ConfigError(key + ": expected an integer, got '" + v + "'");
    return x;
}

inline int to_int32(const std::string& key, const std::string& v) {
    const std::int64_t x = to_int(key, v);
    if (x < -2147483647LL || x > 2147483647LL) throw ConfigError(key + ": value out of range");
    return int(x);
}

inline double to_real(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    double x = 0;
    try {
        x = std::stod(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
    return x;
}

inline bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

template <class T, class F>
std::string join(const std::vector<T>& xs, F f) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + f(xs[i]);
    return out;
}

} // namespace detail

inline const std::vector<std::string>& RunConfig::keys() {
    static const std::vector<std::string> k{
        "alpha",         "target_params", "scales_min", "scales_max",  "layers_min",    "layers_max",   "channels",
        "ops",           "ib_expansion",  "kernels",    "se_ratios",   "skips",         "per_block_cap", "param_cap",
        "mutate_layers", "pool_size",     "n_children", "swap_ratio",  "max_iter",      "patience",     "patience_mode",
        "tenure",        "parents",       "window",     "seed",        "probe_size",    "probe_source", "score_seeds",
        "workers",       "task",          "classes",    "sr_factor",   "resolution",    "train_size",   "val_size",
        "task_seed",     "epochs",        "batch_size", "lr",          "augment",       "evaluator"};
    return k;
}

inline void RunConfig::set(const std::string& key, const std::string& v) {
    using namespace detail;
    if (key == "alpha") objective.alpha = to_real(key, v);
    else if (key == "target_params") objective.target_params = to_int(key, v);
    else if (key == "scales_min") space.scales_min = to_int32(key, v);
    else if (key == "scales_max") space.scales_max = to_int32(key, v);
    else if (key == "layers_min") space.layers_min = to_int32(key, v);
    else if (key == "layers_max") space.layers_max = to_int32(key, v);
    else if (key == "channels") {
        space.channels.clear();
        for (const auto& s : split_list(v)) space.channels.push_back(to_int32(key, s));
    } else if (key == "ops" || key == "ib_expansion") {
        int t = 6;
        for (const ConvOp& op : space.ops)
            if (op.kind == ConvKind::InvertedBottleneck) t = op.expansion;
        if (key == "ib_expansion") {
            t = to_int32(key, v);
            for (ConvOp& op : space.ops)
                if (op.kind == ConvKind::InvertedBottleneck) op.expansion = t;
        } else {
            space.ops.clear();
            for (const auto& s : split_list(v)) {
                ConvOp op;
                if (!parse_conv_kind(s, op.kind))
                    throw ConfigError(key + ": unknown op '" + s +
                                      "' (vanilla, depthwise_separable, inverted_bottleneck, micro_block)");
                if (op.kind == ConvKind::InvertedBottleneck) op.expansion = t;
                space.ops.push_back(op);
            }
        }
    } else if (key == "kernels") {
        space.kernels.clear();
        for (const auto& s : split_list(v)) space.kernels.push_back(to_int32(key, s));
    } else if (key == "se_ratios") {
        space.se_ratios.clear();
        for (const auto& s : split_list(v)) {
            const double r = to_real(key, s);
            if (r == 0.0) space.se_ratios.push_back(SeRatio::None);
            else if (r == 0.25) space.se_ratios.push_back(SeRatio::Quarter);
            else throw ConfigError(key + ": SE ratio must be 0 or 0.25, got '" + s + "'");
        }
    } else if (key == "skips") {
        space.skips.clear();
        for (const auto& s : split_list(v)) {
            if (s == "none") space.skips.push_back(SkipOp::None);
            else if (s == "residual") space.skips.push_back(SkipOp::Residual);
            else throw ConfigError(key + ": skip must be none or residual, got '" + s + "'");
        }
    } else if (key == "per_block_cap") space.budget.per_block_cap = to_int(key, v);
    else if (key == "param_cap") space.budget.param_cap = to_int(key, v);
    else if (key == "mutate_layers") space.mutate_layers = to_bool(key, v);
    else if (key == "pool_size") search.pool_size = to_int32(key, v);
    else if (key == "n_children") search.n_children = to_int32(key, v);
    else if (key == "swap_ratio") search.swap_ratio = to_real(key, v);
    else if (key == "max_iter") search.max_iter = to_int32(key, v);
    else if (key == "patience") search.patience = to_int32(key, v);
    else if (key == "patience_mode") {
        if (v == "best") search.patience_mode = PatienceMode::Best;
        else if (v == "adopted") search.patience_mode = PatienceMode::Adopted;
        else throw ConfigError(key + ": expected best or adopted, got '" + v + "'");
    } else if (key == "tenure") search.tenure = to_int32(key, v);
    else if (key == "parents") search.parents = to_int32(key, v);
    else if (key == "window") search.window = to_real(key, v);
    else if (key == "seed") search.seed = std::uint64_t(to_int(key, v));
    else if (key == "probe_size") search.probe_size = to_int32(key, v);
    else if (key == "probe_source") {
        if (v == "task") probe_source = ProbeSource::Task;
        else if (v == "noise") probe_source = ProbeSource::Noise;
        else throw ConfigError(key + ": expected task or noise, got '" + v + "'");
    } else if (key == "score_seeds") search.score_seeds = to_int32(key, v);
    else if (key == "workers") search.workers = to_int32(key, v);
    else if (key == "task") task.kind = parse_task_kind(v);
    else if (key == "classes") task.classes = to_int32(key, v);
    else if (key == "sr_factor") task.factor = to_int32(key, v);
    else if (key == "resolution") task.resolution = to_int32(key, v);
    else if (key == "train_size") task.train_size = to_int32(key, v);
    else if (key == "val_size") task.val_size = to_int32(key, v);
    else if (key == "task_seed") task.seed = std::uint64_t(to_int(key, v));
    else if (key == "epochs") train.epochs = to_int32(key, v);
    else if (key == "batch_size") train.batch_size = to_int32(key, v);
    else if (key == "lr") train.base_lr = to_real(key, v);
    else if (key == "augment") train.augment = to_bool(key, v);
    else if (key == "evaluator") {
        if (v == "toy") evaluator = EvaluatorKind::ToyTrainer;
        else if (v == "zerocost") evaluator = EvaluatorKind::ZeroCostOnly;
        else throw ConfigError(key + ": expected toy or zerocost, got '" + v + "'");
    } else throw ConfigError("unknown key '" + key + "'");
}

inline std::string RunConfig::get(const std::string& key) const {
    using namespace detail;
    auto itos = [](auto x) { return std::to_string(x); };
    if (key == "alpha") return format_real(objective.alpha);
    if (key == "target_params") return itos(objective.target_params);
    if (key == "scales_min") return itos(space.scales_min);
    if (key == "scales_max") return itos(space.scales_max);
    if (key == "layers_min") return itos(space.layers_min);
    if (key == "layers_max") return itos(space.layers_max);
    if (key == "channels") return join(space.channels, itos);
    if (key == "ops") return join(space.ops, [](const ConvOp& o) { return std::string(to_string(o.kind)); });
    if (key == "ib_expansion") {
        for (const ConvOp& op : space.ops)
            if (op.kind == ConvKind::InvertedBottleneck) return itos(op.expansion);
        return "6";
    }
    if (key == "kernels") return join(space.kernels, itos);
    if (key == "se_ratios") return join(space.se_ratios, [](SeRatio r) { return std::string(r == SeRatio::Quarter ? "0.25" : "0"); });
    if (key == "skips") return join(space.skips, [](SkipOp s) { return std::string(to_string(s)); });
    if (key == "per_block_cap") return itos(space.budget.per_block_cap);
    if (key == "param_cap") return itos(space.budget.param_cap);
    if (key == "mutate_layers") return space.mutate_layers ? "true" : "false";
    if (key == "pool_size") return itos(search.pool_size);
    if (key == "n_children") return itos(search.n_children);
    if (key == "swap_ratio") return format_real(search.swap_ratio);
    if (key == "max_iter") return itos(search.max_iter);
    if (key == "patience") return itos(search.patience);
    if (key == "patience_mode") return search.patience_mode == PatienceMode::Best ? "best" : "adopted";
    if (key == "tenure") return itos(search.tenure);
    if (key == "parents") return itos(search.parents);
    if (key == "window") return format_real(search.window);
    if (key == "seed") return itos(search.seed);
    if (key == "probe_size") return itos(search.probe_size);
    if (key == "probe_source") return probe_source == ProbeSource::Task ? "task" : "noise";
    if (key == "score_seeds") return itos(search.score_seeds);
    if (key == "workers") return itos(search.workers);
    if (key == "task") return to_string(task.kind);
    if (key == "classes") return itos(task.classes);
    if (key == "sr_factor") return itos(task.factor);
    if (key == "resolution") return itos(task.resolution);
    if (key == "train_size") return itos(task.train_size);
    if (key == "val_size") return itos(task.val_size);
    if (key == "task_seed") return itos(task.seed);
    if (key == "epochs") return itos(train.epochs);
    if (key == "batch_size") return itos(train.batch_size);
    if (key == "lr") return format_real(train.base_lr);
    if (key == "augment") return train.augment ? "true" : "false";
    if (key == "evaluator") return evaluator == EvaluatorKind::ToyTrainer ? "toy" : "zerocost";
    throw ConfigError("unknown key '" + key + "'");
}

} // namespace ldpnas

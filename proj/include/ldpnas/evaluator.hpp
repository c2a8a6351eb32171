#pragma once

// Desk-scale training and the two evaluators the search can grade with.

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "ldpnas/objective.hpp"
#include "ldpnas/optim.hpp"
#include "ldpnas/toy_task.hpp"
#include "ldpnas/zerocost.hpp"

namespace ldpnas {

struct TrainConfig {
    int epochs = 20;
    int batch_size = 16;
    double base_lr = 7e-4;
    bool augment = true;

    void validate() const {
        if (epochs < 0) throw ConfigError("epochs must be >= 0");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (!(base_lr > 0)) throw ConfigError("learning rate must be > 0");
    }
};

/// Counts train_model calls in this process.
inline std::atomic<std::int64_t>& train_invocations() {
    static std::atomic<std::int64_t> count{0};
    return count;
}

inline LossKind loss_for(TaskKind k) { return k == TaskKind::DenseClass ? LossKind::CrossEntropy : LossKind::L1; }

struct TrainReport {
    std::vector<double> epoch_loss; // mean training loss per epoch
    std::int64_t steps = 0;
    bool diverged = false;
};

/// Adam with the step schedule, batch-statistics normalisation and running
/// averages for later evaluation. A non-finite loss or activation stops
/// training and marks the report diverged.
inline TrainReport train_model(const GraphPlan& plan, ParamStore<float>& params, const TaskData& data,
                               const TrainConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ++train_invocations();
    TrainReport rep;
    const int n = data.train.size();
    const LossKind loss = loss_for(data.task.kind);
    std::mt19937_64 rng(seed);
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    const Dataset& tr = data.train;
    try {
        for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
            std::shuffle(order.begin(), order.end(), rng);
            AdamHyper h;
            h.lr = lr_schedule(epoch, cfg.base_lr);
            double total = 0;
            for (int first = 0; first < n; first += cfg.batch_size) {
                const int count = std::min(cfg.batch_size, n - first);
                Tensor4<float> x(count, tr.inputs.c(), tr.inputs.h(), tr.inputs.w());
                Tensor4<float> y(count, tr.targets.c(), tr.targets.h(), tr.targets.w());
                for (int b = 0; b < count; ++b) {
                    std::ranges::copy(tr.inputs.sample(order[first + b]), x.sample(b).begin());
                    std::ranges::copy(tr.targets.sample(order[first + b]), y.sample(b).begin());
                    if (cfg.augment) apply_augment(x, y, b, Augment::draw(x.h(), rng));
                }
                const Gradient<float> g = backward(plan, params, x, y, loss, true);
                update_running_stats(plan, params, g.fwd, count);
                adam_step<float>(params, g.grad, h, ++rep.steps);
                total += g.loss * count;
            }
            rep.epoch_loss.push_back(total / n);
        }
    } catch (const NonFiniteError&) {
        rep.diverged = true;
    }
    if (!rep.diverged)
        for (float v : params.values)
            if (!std::isfinite(v)) rep.diverged = true;
    return rep;
}

/// Inference with running statistics over `ds`, batched by `chunk`.
inline Tensor4<float> predict(const GraphPlan& plan, const ParamStore<float>& params, const Tensor4<float>& inputs,
                              int chunk = 32) {
    const Shape3 os = plan.output_shape();
    Tensor4<float> out(inputs.n(), os.c, os.h, os.w);
    ForwardOptions opt;
    opt.norm = NormMode::Running;
    opt.keep = false;
    for (int first = 0; first < inputs.n(); first += chunk) {
        const int count = std::min(chunk, inputs.n() - first);
        const auto f = forward(plan, params, inputs.slice(first, count), opt);
        std::ranges::copy(f.output().span(), out.data() + std::size_t(first) * out.sample_size());
    }
    return out;
}

inline constexpr double kMinDepth = 1e-3;

inline MetricReport task_metrics(const TaskData& data, const Tensor4<float>& pred) {
    const Dataset& val = data.val;
    switch (data.task.kind) {
    case TaskKind::DenseRegress: {
        std::vector<double> p(pred.size()), g(val.targets.size());
        for (std::size_t k = 0; k < p.size(); ++k) p[k] = std::max(double(pred.data()[k]), kMinDepth);
        for (std::size_t k = 0; k < g.size(); ++k) g[k] = val.targets.data()[k];
        return MetricReport::of(depth_metrics(p, g));
    }
    case TaskKind::DenseClass: {
        const int K = pred.c(), hw = pred.h() * pred.w();
        std::vector<int> p(std::size_t(pred.n()) * hw), g(p.size());
        for (int b = 0; b < pred.n(); ++b)
            for (int k = 0; k < hw; ++k) {
                int best = 0;
                for (int c = 1; c < K; ++c)
                    if (pred.data()[(std::size_t(b) * K + c) * hw + k] > pred.data()[(std::size_t(b) * K + best) * hw + k])
                        best = c;
                p[std::size_t(b) * hw + k] = best;
                g[std::size_t(b) * hw + k] = int(val.targets.data()[std::size_t(b) * hw + k]);
            }
        return MetricReport::of(seg_metrics(p, g, data.task.classes));
    }
    case TaskKind::SuperRes: {
        SrMetrics mean;
        for (int b = 0; b < pred.n(); ++b) {
            std::vector<double> p(pred.sample_size()), g(p.size());
            const auto ps = pred.sample(b), gs = val.targets.sample(b);
            for (std::size_t k = 0; k < p.size(); ++k) {
                p[k] = std::clamp(double(ps[k]), 0.0, 1.0);
                g[k] = gs[k];
            }
            const SrMetrics m = sr_metrics(p, g, pred.c(), pred.h(), pred.w(), 1.0);
            mean.psnr += m.psnr / pred.n();
            mean.ssim += m.ssim / pred.n();
        }
        return MetricReport::of(mean);
    }
    }
    return {};
}

class Evaluator {
public:
    explicit Evaluator(ObjectiveConfig obj) : obj_(obj) { obj_.validate(); }
    virtual ~Evaluator() = default;

    virtual EvalResult evaluate(const NetworkSpec& spec) = 0;
    virtual std::string kind() const = 0;

    const ObjectiveConfig& objective() const { return obj_; }
    // Later results are graded under `obj`; cached training is reused.
    void set_objective(const ObjectiveConfig& obj) {
        obj.validate();
        obj_ = obj;
    }

protected:
    ObjectiveConfig obj_;
};

/// Trains every candidate on the toy task. Training is seeded from the run
/// seed and the spec hash, so a spec always receives the same result; results
/// are cached by hash.
class ToyTrainer : public Evaluator {
public:
    ToyTrainer(TaskData data, TrainConfig train, ObjectiveConfig obj, std::uint64_t seed)
        : Evaluator(obj), data_(std::move(data)), train_(train), seed_(seed) {
        train_.validate();
    }

    EvalResult evaluate(const NetworkSpec& spec) override {
        const std::uint64_t h = spec_hash(spec);
        if (auto it = cache_.find(h); it != cache_.end()) return regrade(it->second);
        ParamStore<float> params;
        const EvalResult r = train_and_measure(spec, params);
        cache_.emplace(h, r);
        return regrade(r);
    }

    /// Uncached evaluation that hands back the trained parameters.
    EvalResult evaluate_keep(const NetworkSpec& spec, ParamStore<float>& params) {
        return regrade(train_and_measure(spec, params));
    }

    std::string kind() const override { return "toy"; }
    const TaskData& data() const { return data_; }

private:
    EvalResult train_and_measure(const NetworkSpec& spec, ParamStore<float>& params) const {
        const std::uint64_t h = spec_hash(spec);
        const GraphPlan plan = instantiate(spec, data_.task.input_shape());
        params = init_params<float>(plan, mix_seed(seed_, h));
        const TrainReport rep = train_model(plan, params, data_, train_, mix_seed(seed_, h, 1));
        EvalResult r;
        r.params = plan.total_params;
        r.diverged = rep.diverged;
        if (!rep.diverged) {
            const Tensor4<float> pred = predict(plan, params, data_.val.inputs);
            if (!pred.all_finite()) {
                r.diverged = true;
            } else {
                r.metrics = task_metrics(data_, pred);
                r.accuracy = accuracy_of(data_.task.kind, r.metrics);
            }
        }
        if (r.diverged) r.accuracy = 0.0;
        return r;
    }

    EvalResult regrade(EvalResult r) const {
        r.grade = grade(r.accuracy, r.params, obj_);
        return r;
    }

    TaskData data_;
    TrainConfig train_;
    std::uint64_t seed_;
    std::map<std::uint64_t, EvalResult> cache_;
};

/// Grades from the zero-cost score alone: A = score / (N ln N_A), the score
/// normalised by its upper bound, clamped to [0, 1]. Never trains.
class ZeroCostOnly : public Evaluator {
public:
    ZeroCostOnly(ProbeBatch probe, std::uint64_t init_seed, ObjectiveConfig obj)
        : Evaluator(obj), probe_(std::move(probe)), init_seed_(init_seed) {}

    EvalResult evaluate(const NetworkSpec& spec) override {
        const ScoreReport s = score_network(spec, probe_, init_seed_);
        EvalResult r;
        r.params = instantiate(spec, probe_.shape()).total_params;
        r.score = s.score;
        if (!s.degenerate && s.units > 1) {
            const double bound = double(probe_.size()) * std::log(double(s.units));
            r.accuracy = std::clamp(s.score / bound, 0.0, 1.0);
        }
        r.grade = grade(r.accuracy, r.params, obj_);
        return r;
    }

    std::string kind() const override { return "zerocost"; }

private:
    ProbeBatch probe_;
    std::uint64_t init_seed_;
};

} // namespace ldpnas

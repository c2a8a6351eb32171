#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "ldpnas/errors.hpp"
#include "ldpnas/net_graph.hpp"
#include "ldpnas/spec.hpp"

namespace ldpnas {

/// Caps that keep kernel size and width in balance: k*k*F per block and the
/// analytic parameter total.
struct ComputeBudget {
    std::int64_t per_block_cap = 1200;
    std::int64_t param_cap = 500000;
};

struct SpaceConfig {
    int scales_min = 1, scales_max = 5;
    int layers_min = 1, layers_max = 4;
    std::vector<int> channels{8, 16, 24, 32, 48, 64};
    std::vector<ConvOp> ops{{ConvKind::Vanilla},
                            {ConvKind::DepthwiseSeparable},
                            {ConvKind::InvertedBottleneck, 6},
                            {ConvKind::MicroBlock}};
    std::vector<int> kernels{3, 5};
    std::vector<SeRatio> se_ratios{SeRatio::None, SeRatio::Quarter};
    std::vector<SkipOp> skips{SkipOp::None, SkipOp::Residual};
    ComputeBudget budget;
    int in_channels = 3;
    TaskHead head;
    bool mutate_layers = true;

    void validate() const {
        if (scales_min < 1 || scales_max < scales_min) throw ConfigError("scale range must satisfy 1 <= min <= max");
        if (layers_min < 1 || layers_max < layers_min) throw ConfigError("layer range must satisfy 1 <= min <= max");
        if (channels.empty() || ops.empty() || kernels.empty() || se_ratios.empty() || skips.empty())
            throw ConfigError("every choice list must be non-empty");
        if (!std::is_sorted(channels.begin(), channels.end()) ||
            std::adjacent_find(channels.begin(), channels.end()) != channels.end())
            throw ConfigError("channel ladder must be strictly increasing");
        if (channels.front() < 1) throw ConfigError("channel ladder entries must be >= 1");
        for (int k : kernels)
            if (k != 3 && k != 5) throw ConfigError("kernel sizes must be 3 or 5");
        for (const ConvOp& op : ops)
            if (op.kind == ConvKind::InvertedBottleneck && op.expansion < 1)
                throw ConfigError("inverted bottleneck expansion must be >= 1");
        if (in_channels < 1) throw ConfigError("in_channels must be >= 1");
        if (budget.per_block_cap < 1 || budget.param_cap < 1) throw ConfigError("budget caps must be >= 1");
    }

    bool within_block_cap(const LayerSpec& l) const {
        return std::int64_t(l.kernel) * l.kernel * l.out_channels <= budget.per_block_cap;
    }

    /// Every LayerSpec the space permits, in a fixed enumeration order.
    std::vector<LayerSpec> allowed_layers() const {
        std::vector<LayerSpec> out;
        for (const ConvOp& op : ops)
            for (int k : kernels)
                for (SeRatio se : se_ratios)
                    for (SkipOp sk : skips)
                        for (int f : channels) {
                            LayerSpec l{op, k, se, sk, f};
                            if (within_block_cap(l)) out.push_back(l);
                        }
        return out;
    }

    /// Per-block sub-space size M: permitted (op, kernel, se, skip, F) tuples times the N choices.
    std::int64_t block_space_size() const {
        return std::int64_t(allowed_layers().size()) * (layers_max - layers_min + 1);
    }
};

struct ConstraintReport {
    bool ok = true;
    std::vector<std::string> violations;
    std::vector<BlockPos> blocks; // blocks named by a violation (may repeat)
    std::int64_t params = 0;

    void add(std::string msg) {
        ok = false;
        violations.push_back(std::move(msg));
    }
    void add(BlockPos p, std::string msg) {
        add(std::move(msg));
        blocks.push_back(p);
    }
};

inline ConstraintReport check_constraints(const NetworkSpec& spec, const SpaceConfig& cfg) {
    ConstraintReport r;
    for (auto& v : structural_violations(spec)) r.add(std::move(v));
    if (!r.ok) return r;
    if (spec.num_scales < cfg.scales_min || spec.num_scales > cfg.scales_max)
        r.add("scale count " + std::to_string(spec.num_scales) + " outside configured range");

    auto contains = [](const auto& v, const auto& x) { return std::find(v.begin(), v.end(), x) != v.end(); };
    for (const BlockPos p : spec.positions()) {
        const BlockSpec& b = spec.block(p);
        const LayerSpec& l = b.layer;
        const std::string at = "block " + std::to_string(p.scale) + "." + std::to_string(p.index);
        if (!contains(cfg.ops, l.op)) r.add(p, at + ": op not in the configured pool");
        if (!contains(cfg.kernels, l.kernel)) r.add(p, at + ": kernel not allowed");
        if (!contains(cfg.se_ratios, l.se)) r.add(p, at + ": se ratio not allowed");
        if (!contains(cfg.skips, l.skip)) r.add(p, at + ": skip op not allowed");
        if (!contains(cfg.channels, l.out_channels))
            r.add(p, at + ": out_channels " + std::to_string(l.out_channels) + " not on the channel ladder");
        if (b.num_layers < cfg.layers_min || b.num_layers > cfg.layers_max)
            r.add(p, at + ": num_layers outside configured range");
        if (!cfg.within_block_cap(l))
            r.add(p, at + ": k*k*F = " + std::to_string(l.kernel * l.kernel * l.out_channels) + " exceeds block cap " +
                         std::to_string(cfg.budget.per_block_cap));
    }
    r.params = analytic_params(spec, cfg.in_channels);
    if (r.params > cfg.budget.param_cap)
        r.add("parameter count " + std::to_string(r.params) + " exceeds cap " + std::to_string(cfg.budget.param_cap));
    return r;
}

// ---------------------------------------------------------------------------
// search-space size M^(5 + 7(S-1))

struct SpaceSize {
    boost::multiprecision::cpp_int exact;
    double log10 = 0.0;
};

inline SpaceSize space_size(std::int64_t m, int scales) {
    if (scales < 1) throw ConfigError("scale count must be >= 1");
    if (m < 1) throw ConfigError("block sub-space size must be >= 1");
    const unsigned exponent = 5u + 7u * unsigned(scales - 1);
    SpaceSize out;
    out.exact = boost::multiprecision::pow(boost::multiprecision::cpp_int(m), exponent);
    out.log10 = exponent * std::log10(double(m));
    return out;
}

inline SpaceSize space_size(const SpaceConfig& cfg, int scales) { return space_size(cfg.block_space_size(), scales); }

// ---------------------------------------------------------------------------
// sampling and mutation

inline constexpr int kMutationRetries = 64;

namespace detail {

inline int ladder_index(const std::vector<int>& ladder, int f) {
    auto it = std::find(ladder.begin(), ladder.end(), f);
    return it == ladder.end() ? -1 : int(it - ladder.begin());
}

inline std::int64_t block_params(const GraphPlan& plan, BlockPos p) {
    std::int64_t total = 0;
    for (const LayerInstance& li : plan.layers)
        if (li.block == p) total += layer_param_count(li.spec, li.in_channels);
    return total;
}

/// Steps the most expensive block (other than `keep`) one rung down the channel
/// ladder until the parameter cap holds. False when no block can shrink further.
inline bool rebalance(NetworkSpec& spec, const SpaceConfig& cfg, const BlockPos* keep) {
    for (;;) {
        const int side = 1 << (spec.num_scales - 1);
        const GraphPlan plan = instantiate(spec, {cfg.in_channels, side, side});
        if (plan.total_params <= cfg.budget.param_cap) return true;
        BlockPos best{};
        std::int64_t best_cost = -1;
        for (const BlockPos p : spec.positions()) {
            if (keep && p == *keep) continue;
            if (ladder_index(cfg.channels, spec.block(p).layer.out_channels) <= 0) continue;
            const std::int64_t c = block_params(plan, p);
            if (c > best_cost) {
                best_cost = c;
                best = p;
            }
        }
        if (best_cost < 0) return false;
        LayerSpec& l = spec.block(best).layer;
        l.out_channels = cfg.channels[ladder_index(cfg.channels, l.out_channels) - 1];
    }
}

template <class Rng>
int uniform_int(Rng& rng, int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(rng);
}

} // namespace detail

/// Draws a spec uniformly over layer choices, then applies channel rebalancing
/// to meet the parameter cap.
inline NetworkSpec random_spec(const SpaceConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const std::vector<LayerSpec> pool = cfg.allowed_layers();
    if (pool.empty()) throw ConfigError("no layer choice satisfies the per-block cap");

    std::mt19937_64 rng(seed);
    for (int attempt = 0; attempt < kMutationRetries; ++attempt) {
        NetworkSpec spec;
        spec.head = cfg.head;
        spec.num_scales = detail::uniform_int(rng, cfg.scales_min, cfg.scales_max);
        spec.scales.resize(spec.num_scales);
        for (int i = 1; i <= spec.num_scales; ++i) {
            for (int j = 1; j <= blocks_at_scale(i); ++j) {
                BlockSpec b;
                b.kind = block_kind_at(j);
                b.layer = pool[detail::uniform_int(rng, 0, int(pool.size()) - 1)];
                b.num_layers = detail::uniform_int(rng, cfg.layers_min, cfg.layers_max);
                spec.scales[i - 1].push_back(b);
            }
        }
        if (detail::rebalance(spec, cfg, nullptr) && check_constraints(spec, cfg).ok) return spec;
    }
    throw ConfigError("parameter cap " + std::to_string(cfg.budget.param_cap) +
                      " unsatisfiable: no valid channel assignment found");
}

/// Exchanges the LayerSpecs of two distinct blocks; block kinds and layer counts stay put.
inline NetworkSpec mutate_swap(const NetworkSpec& spec, const SpaceConfig& cfg, std::uint64_t seed) {
    const std::vector<BlockPos> pos = spec.positions();
    if (pos.size() < 2) throw MutationFailed("swap needs at least two blocks");
    std::mt19937_64 rng(seed);
    for (int attempt = 0; attempt < kMutationRetries; ++attempt) {
        const int a = detail::uniform_int(rng, 0, int(pos.size()) - 1);
        int b = detail::uniform_int(rng, 0, int(pos.size()) - 2);
        if (b >= a) ++b;
        NetworkSpec child = spec;
        std::swap(child.block(pos[a]).layer, child.block(pos[b]).layer);
        if (check_constraints(child, cfg).ok) return child;
    }
    throw MutationFailed("no compatible swap within " + std::to_string(kMutationRetries) + " attempts");
}

/// Replaces the layer (and layer count) of block `at`. When the parameter cap
/// breaks, other blocks lose channels one ladder rung at a time. Returns false
/// when the result cannot be made valid.
inline bool apply_modification(NetworkSpec& spec, const SpaceConfig& cfg, BlockPos at, const LayerSpec& layer,
                               int num_layers) {
    spec.block(at).layer = layer;
    spec.block(at).num_layers = num_layers;
    ConstraintReport r = check_constraints(spec, cfg);
    if (r.ok) return true;
    if (r.params <= cfg.budget.param_cap) return false;
    if (!detail::rebalance(spec, cfg, &at)) return false;
    return check_constraints(spec, cfg).ok;
}

inline NetworkSpec mutate_modify(const NetworkSpec& spec, const SpaceConfig& cfg, std::uint64_t seed) {
    const std::vector<LayerSpec> pool = cfg.allowed_layers();
    const std::vector<BlockPos> pos = spec.positions();
    if (pool.empty() || pos.empty()) throw MutationFailed("empty layer pool");
    std::mt19937_64 rng(seed);
    for (int attempt = 0; attempt < kMutationRetries; ++attempt) {
        const BlockPos at = pos[detail::uniform_int(rng, 0, int(pos.size()) - 1)];
        const LayerSpec layer = pool[detail::uniform_int(rng, 0, int(pool.size()) - 1)];
        int n = spec.block(at).num_layers;
        if (cfg.mutate_layers) n = detail::uniform_int(rng, cfg.layers_min, cfg.layers_max);
        if (layer == spec.block(at).layer && n == spec.block(at).num_layers) continue;
        NetworkSpec child = spec;
        if (apply_modification(child, cfg, at, layer, n)) return child;
    }
    throw MutationFailed("no valid modification within " + std::to_string(kMutationRetries) + " attempts");
}

} // namespace ldpnas

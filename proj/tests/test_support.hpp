#pragma once

#include "ldpnas/search_space.hpp"

namespace ldpnas::fixtures {

/// Narrow space that keeps graphs tiny while still exercising every op.
inline SpaceConfig small_space() {
    SpaceConfig cfg;
    cfg.scales_min = 1;
    cfg.scales_max = 3;
    cfg.layers_min = 1;
    cfg.layers_max = 2;
    cfg.channels = {4, 8, 12, 16};
    cfg.budget.per_block_cap = 300;
    cfg.budget.param_cap = 60000;
    return cfg;
}

inline NetworkSpec uniform_spec(int scales, const LayerSpec& layer, int num_layers = 1) {
    NetworkSpec s;
    s.num_scales = scales;
    s.scales.resize(scales);
    for (int i = 1; i <= scales; ++i)
        for (int j = 1; j <= blocks_at_scale(i); ++j) s.scales[i - 1].push_back({layer, num_layers, block_kind_at(j)});
    return s;
}

} // namespace ldpnas::fixtures

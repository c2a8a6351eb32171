#pragma once

#include <cmath>
#include <span>

#include "ldpnas/engine.hpp"

namespace ldpnas {

struct AdamHyper {
    double lr = 7e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One bias-corrected Adam update at step t (t >= 1), in place on the store.
template <class Scalar>
void adam_step(ParamStore<Scalar>& store, std::span<const Scalar> grads, const AdamHyper& h, std::int64_t t) {
    if (t < 1) throw ConfigError("adam step index must be >= 1");
    if (grads.size() != store.values.size()) throw ShapeError("gradient length does not match parameter store");
    const double c1 = 1.0 - std::pow(h.beta1, double(t));
    const double c2 = 1.0 - std::pow(h.beta2, double(t));
    for (std::size_t k = 0; k < grads.size(); ++k) {
        const double g = grads[k];
        const double m = h.beta1 * store.m[k] + (1.0 - h.beta1) * g;
        const double v = h.beta2 * store.v[k] + (1.0 - h.beta2) * g * g;
        store.m[k] = Scalar(m);
        store.v[k] = Scalar(v);
        store.values[k] = Scalar(store.values[k] - h.lr * (m / c1) / (std::sqrt(v / c2) + h.eps));
    }
    store.step = t;
}

/// Constant base rate for epochs 0..9, then x0.95 at epochs 10, 15, 20, ...
inline double lr_schedule(int epoch, double base_lr = 7e-4) {
    if (epoch < 10) return base_lr;
    return base_lr * std::pow(0.95, double((epoch - 10) / 5 + 1));
}

} // namespace ldpnas

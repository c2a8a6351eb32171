#pragma once

// Training-free architecture score: log |K_H|, where K_H[i][j] = N_A - hamming(c_i, c_j)
// over the binary ReLU sign codes c_i of each probe sample at initialisation.

#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include <Eigen/Core>

#include "ldpnas/engine.hpp"
#include "ldpnas/search_space.hpp"

namespace ldpnas {

struct BinaryCode {
    std::int64_t length = 0;
    std::vector<std::uint64_t> words;

    friend bool operator==(const BinaryCode&, const BinaryCode&) = default;
};

enum class ProbeSource { Task, Noise };

struct ProbeBatch {
    Tensor4<float> inputs;
    ProbeSource source = ProbeSource::Task;

    int size() const { return inputs.n(); }
    Shape3 shape() const { return {inputs.c(), inputs.h(), inputs.w()}; }

    /// Seeded standard-normal inputs.
    static ProbeBatch noise(int n, Shape3 s, std::uint64_t seed) {
        if (n < 1) throw ConfigError("probe batch needs at least one sample");
        ProbeBatch p;
        p.source = ProbeSource::Noise;
        p.inputs = Tensor4<float>(n, s.c, s.h, s.w);
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> normal(0.0, 1.0);
        for (auto& v : p.inputs.vec()) v = float(normal(rng));
        return p;
    }
};

inline std::vector<BinaryCode> binary_codes(const ActivationTrace& trace) {
    std::vector<BinaryCode> out;
    out.reserve(trace.batch);
    for (int n = 0; n < trace.batch; ++n) out.push_back({trace.units, trace.bits[n]});
    return out;
}

inline std::int64_t hamming_distance(const BinaryCode& a, const BinaryCode& b) {
    if (a.length != b.length || a.words.size() != b.words.size()) throw ShapeError("codes differ in length");
    std::int64_t d = 0;
    for (std::size_t k = 0; k < a.words.size(); ++k) d += std::popcount(a.words[k] ^ b.words[k]);
    return d;
}

inline Eigen::MatrixXd hamming_kernel(const std::vector<BinaryCode>& codes) {
    const int n = int(codes.size());
    Eigen::MatrixXd k(n, n);
    if (n == 0) return k;
    const double units = double(codes.front().length);
    for (int i = 0; i < n; ++i) {
        k(i, i) = units - double(hamming_distance(codes[i], codes[i]));
        for (int j = i + 1; j < n; ++j) k(i, j) = k(j, i) = units - double(hamming_distance(codes[i], codes[j]));
    }
    return k;
}

struct LogDet {
    double value = -std::numeric_limits<double>::infinity();
    bool degenerate = true;
};

/// log |det K| by LU with partial pivoting. Degenerate when a pivot falls
/// below tol_scale * 1e-12 in magnitude (tol_scale is N_A for Hamming kernels).
inline LogDet log_abs_det(const Eigen::MatrixXd& k, double tol_scale = 1.0) {
    if (k.rows() != k.cols()) throw ShapeError("determinant of a non-square matrix");
    const int n = int(k.rows());
    Eigen::MatrixXd a = k;
    const double tol = 1e-12 * tol_scale;
    LogDet out;
    out.value = 0.0;
    for (int c = 0; c < n; ++c) {
        int piv = c;
        for (int r = c + 1; r < n; ++r)
            if (std::abs(a(r, c)) > std::abs(a(piv, c))) piv = r;
        if (std::abs(a(piv, c)) < tol) {
            out.value = -std::numeric_limits<double>::infinity();
            return out;
        }
        if (piv != c) a.row(piv).swap(a.row(c));
        const double p = a(c, c);
        out.value += std::log(std::abs(p));
        for (int r = c + 1; r < n; ++r) {
            const double f = a(r, c) / p;
            if (f != 0.0) a.row(r).tail(n - c - 1) -= f * a.row(c).tail(n - c - 1);
        }
    }
    out.degenerate = false;
    return out;
}

struct ScoreReport {
    double score = -std::numeric_limits<double>::infinity(); // -inf when degenerate
    Eigen::MatrixXd kernel;
    std::int64_t units = 0; // N_A
    bool degenerate = true;
};

/// Scores the kernel built from already-captured codes.
inline ScoreReport score_codes(const std::vector<BinaryCode>& codes) {
    ScoreReport r;
    r.kernel = hamming_kernel(codes);
    r.units = codes.empty() ? 0 : codes.front().length;
    const LogDet ld = log_abs_det(r.kernel, double(std::max<std::int64_t>(r.units, 1)));
    r.degenerate = ld.degenerate || r.units == 0;
    r.score = r.degenerate ? -std::numeric_limits<double>::infinity() : ld.value;
    return r;
}

/// instantiate -> init -> forward with sign capture -> codes -> kernel -> log |K_H|.
/// Normalisation uses probe-batch statistics.
inline ScoreReport score_network(const NetworkSpec& spec, const ProbeBatch& probe, std::uint64_t init_seed) {
    const GraphPlan plan = instantiate(spec, probe.shape());
    const ParamStore<float> params = init_params<float>(plan, init_seed);
    ForwardOptions opt;
    opt.capture = true;
    opt.keep = false;
    const ForwardResult<float> fwd = forward(plan, params, probe.inputs, opt);
    return score_codes(binary_codes(*fwd.trace));
}

/// Mean score over several init seeds; any degenerate draw makes the result degenerate.
inline ScoreReport score_network(const NetworkSpec& spec, const ProbeBatch& probe,
                                 const std::vector<std::uint64_t>& init_seeds) {
    if (init_seeds.empty()) throw ConfigError("at least one init seed required");
    ScoreReport first = score_network(spec, probe, init_seeds.front());
    if (first.degenerate || init_seeds.size() == 1) return first;
    double sum = first.score;
    for (std::size_t i = 1; i < init_seeds.size(); ++i) {
        const ScoreReport r = score_network(spec, probe, init_seeds[i]);
        if (r.degenerate) return r;
        sum += r.score;
    }
    first.score = sum / double(init_seeds.size());
    return first;
}

} // namespace ldpnas

#pragma once

// Architecture genotype: the per-block layer choices that populate the fixed
// multi-scale encoder/decoder backbone, plus its canonical text form and hash.

#include <cstdint>
#include <cstdio>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ldpnas/errors.hpp"

namespace ldpnas {

enum class ConvKind { Vanilla, DepthwiseSeparable, InvertedBottleneck, MicroBlock };

struct ConvOp {
    ConvKind kind = ConvKind::Vanilla;
    int expansion = 6; // only meaningful for InvertedBottleneck

    friend bool operator==(const ConvOp& a, const ConvOp& b) {
        if (a.kind != b.kind) return false;
        return a.kind != ConvKind::InvertedBottleneck || a.expansion == b.expansion;
    }
};

enum class SeRatio { None, Quarter };
enum class SkipOp { None, Residual };
enum class BlockKind { Encoder, Decoder, Refine, Downsample, Upsample };
enum class HeadKind { Regress, Classify, SuperRes };

inline double se_value(SeRatio r) { return r == SeRatio::Quarter ? 0.25 : 0.0; }

/// Hidden width of a squeeze-excitation stage on `channels` inputs: ceil(ratio * C).
inline int se_hidden(SeRatio r, int channels) {
    return r == SeRatio::Quarter ? (channels + 3) / 4 : 0;
}

struct LayerSpec {
    ConvOp op;
    int kernel = 3;
    SeRatio se = SeRatio::None;
    SkipOp skip = SkipOp::None;
    int out_channels = 8;

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct BlockSpec {
    LayerSpec layer;
    int num_layers = 1;
    BlockKind kind = BlockKind::Encoder;

    friend bool operator==(const BlockSpec&, const BlockSpec&) = default;
};

struct TaskHead {
    HeadKind kind = HeadKind::Regress;
    int classes = 1; // Classify only
    int factor = 1;  // SuperRes only

    friend bool operator==(const TaskHead&, const TaskHead&) = default;
};

/// Block j (1-based) at any scale: 1,2 encoder; 3,4 decoder; 5 refine; 6 downsample; 7 upsample.
/// Scale 1 carries blocks 1..5, every deeper scale carries 1..7.
inline BlockKind block_kind_at(int j) {
    switch (j) {
    case 1:
    case 2: return BlockKind::Encoder;
    case 3:
    case 4: return BlockKind::Decoder;
    case 5: return BlockKind::Refine;
    case 6: return BlockKind::Downsample;
    default: return BlockKind::Upsample;
    }
}

inline int blocks_at_scale(int scale) { return scale == 1 ? 5 : 7; }

struct BlockPos {
    int scale = 1; // 1-based
    int index = 1; // 1-based
    friend bool operator==(const BlockPos&, const BlockPos&) = default;
};

struct NetworkSpec {
    int num_scales = 1;
    std::vector<std::vector<BlockSpec>> scales; // scales[i-1][j-1]
    TaskHead head;

    const BlockSpec& block(BlockPos p) const { return scales.at(p.scale - 1).at(p.index - 1); }
    BlockSpec& block(BlockPos p) { return scales.at(p.scale - 1).at(p.index - 1); }

    std::vector<BlockPos> positions() const {
        std::vector<BlockPos> out;
        for (int i = 1; i <= static_cast<int>(scales.size()); ++i)
            for (int j = 1; j <= static_cast<int>(scales[i - 1].size()); ++j) out.push_back({i, j});
        return out;
    }

    std::size_t block_count() const {
        std::size_t n = 0;
        for (const auto& s : scales) n += s.size();
        return n;
    }

    friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

// ---------------------------------------------------------------------------
// names

inline std::string_view to_string(ConvKind k) {
    switch (k) {
    case ConvKind::Vanilla: return "vanilla";
    case ConvKind::DepthwiseSeparable: return "depthwise_separable";
    case ConvKind::InvertedBottleneck: return "inverted_bottleneck";
    case ConvKind::MicroBlock: return "micro_block";
    }
    return "?";
}

inline std::string_view to_string(BlockKind k) {
    switch (k) {
    case BlockKind::Encoder: return "encoder";
    case BlockKind::Decoder: return "decoder";
    case BlockKind::Refine: return "refine";
    case BlockKind::Downsample: return "downsample";
    case BlockKind::Upsample: return "upsample";
    }
    return "?";
}

inline std::string_view to_string(SkipOp s) { return s == SkipOp::Residual ? "residual" : "none"; }

inline bool parse_conv_kind(std::string_view s, ConvKind& out) {
    for (ConvKind k : {ConvKind::Vanilla, ConvKind::DepthwiseSeparable, ConvKind::InvertedBottleneck,
                       ConvKind::MicroBlock}) {
        if (s == to_string(k)) {
            out = k;
            return true;
        }
    }
    return false;
}

inline bool parse_block_kind(std::string_view s, BlockKind& out) {
    for (BlockKind k : {BlockKind::Encoder, BlockKind::Decoder, BlockKind::Refine, BlockKind::Downsample,
                        BlockKind::Upsample}) {
        if (s == to_string(k)) {
            out = k;
            return true;
        }
    }
    return false;
}

inline std::string head_to_string(const TaskHead& h) {
    switch (h.kind) {
    case HeadKind::Regress: return "regress";
    case HeadKind::Classify: return "class:" + std::to_string(h.classes);
    case HeadKind::SuperRes: return "superres:" + std::to_string(h.factor);
    }
    return "?";
}

// ---------------------------------------------------------------------------
// canonical text form
//
//   ldpnas-spec v1
//   scales=2
//   head=regress
//   block=1.1 kind=encoder op=vanilla k=3 se=0 skip=none f=16 n=2
//   ...
//
// One block line per (scale, index) in row-major order. Inverted bottlenecks
// carry their expansion as op=inverted_bottleneck:6.

inline std::string serialize(const NetworkSpec& spec) {
    std::ostringstream os;
    os << "ldpnas-spec v1\n";
    os << "scales=" << spec.num_scales << "\n";
    os << "head=" << head_to_string(spec.head) << "\n";
    for (const BlockPos p : spec.positions()) {
        const BlockSpec& b = spec.block(p);
        const LayerSpec& l = b.layer;
        os << "block=" << p.scale << "." << p.index << " kind=" << to_string(b.kind) << " op=" << to_string(l.op.kind);
        if (l.op.kind == ConvKind::InvertedBottleneck) os << ":" << l.op.expansion;
        os << " k=" << l.kernel << " se=" << (l.se == SeRatio::Quarter ? "0.25" : "0") << " skip=" << to_string(l.skip)
           << " f=" << l.out_channels << " n=" << b.num_layers << "\n";
    }
    return os.str();
}

namespace detail {

struct LineCursor {
    std::string_view text;
    std::size_t line_no;

    [[noreturn]] void fail(std::size_t col, const std::string& what) const { throw ParseError(line_no, col, what); }
};

inline bool parse_int(std::string_view s, int& out) {
    if (s.empty() || s.size() > 9) return false;
    int v = 0;
    for (char c : s) {
        if (c < '0' || c > '9') return false;
        v = v * 10 + (c - '0');
    }
    out = v;
    return true;
}

inline bool parse_head(std::string_view s, TaskHead& out) {
    if (s == "regress") {
        out = TaskHead{HeadKind::Regress, 1, 1};
        return true;
    }
    auto colon = s.find(':');
    if (colon == std::string_view::npos) return false;
    int v = 0;
    if (!parse_int(s.substr(colon + 1), v) || v < 1) return false;
    if (s.substr(0, colon) == "class") {
        out = TaskHead{HeadKind::Classify, v, 1};
        return true;
    }
    if (s.substr(0, colon) == "superres") {
        out = TaskHead{HeadKind::SuperRes, 1, v};
        return true;
    }
    return false;
}

} // namespace detail

/// Parses the canonical text form. Structural checks only (block layout and
/// field domains); space-specific limits are the job of check_constraints.
inline NetworkSpec deserialize(std::string_view text) {
    std::vector<std::string_view> lines;
    {
        std::size_t start = 0;
        while (start < text.size()) {
            std::size_t end = text.find('\n', start);
            if (end == std::string_view::npos) end = text.size();
            lines.push_back(text.substr(start, end - start));
            start = end + 1;
        }
    }
    auto line_at = [&](std::size_t i) -> std::string_view {
        if (i >= lines.size())
            throw ParseError(i + 1, 1, "unexpected end of input");
        return lines[i];
    };

    if (line_at(0) != "ldpnas-spec v1") throw ParseError(1, 1, "expected header 'ldpnas-spec v1'");

    NetworkSpec spec;
    {
        std::string_view l = line_at(1);
        if (l.substr(0, 7) != "scales=") throw ParseError(2, 1, "expected 'scales='");
        if (!detail::parse_int(l.substr(7), spec.num_scales) || spec.num_scales < 1)
            throw ParseError(2, 8, "invalid scale count");
    }
    {
        std::string_view l = line_at(2);
        if (l.substr(0, 5) != "head=") throw ParseError(3, 1, "expected 'head='");
        if (!detail::parse_head(l.substr(5), spec.head)) throw ParseError(3, 6, "invalid head");
    }

    std::size_t li = 3;
    spec.scales.resize(spec.num_scales);
    for (int i = 1; i <= spec.num_scales; ++i) {
        for (int j = 1; j <= blocks_at_scale(i); ++j, ++li) {
            std::string_view l = line_at(li);
            detail::LineCursor cur{l, li + 1};
            BlockSpec b;
            bool seen[9] = {};
            static constexpr std::string_view keys[9] = {"block", "kind", "op", "k", "se", "skip", "f", "n", ""};
            std::size_t pos = 0;
            while (pos < l.size()) {
                std::size_t end = l.find(' ', pos);
                if (end == std::string_view::npos) end = l.size();
                std::string_view tok = l.substr(pos, end - pos);
                std::size_t eq = tok.find('=');
                if (eq == std::string_view::npos) cur.fail(pos + 1, "expected key=value");
                std::string_view key = tok.substr(0, eq);
                std::string_view val = tok.substr(eq + 1);
                std::size_t col = pos + eq + 2;
                int ki = 0;
                while (ki < 8 && keys[ki] != key) ++ki;
                if (ki == 8) cur.fail(pos + 1, "unknown key '" + std::string(key) + "'");
                if (seen[ki]) cur.fail(pos + 1, "duplicate key '" + std::string(key) + "'");
                seen[ki] = true;
                int v = 0;
                switch (ki) {
                case 0: {
                    auto dot = val.find('.');
                    int si = 0, bj = 0;
                    if (dot == std::string_view::npos || !detail::parse_int(val.substr(0, dot), si) ||
                        !detail::parse_int(val.substr(dot + 1), bj))
                        cur.fail(col, "invalid block position");
                    if (si != i || bj != j)
                        cur.fail(col, "expected block " + std::to_string(i) + "." + std::to_string(j));
                    break;
                }
                case 1:
                    if (!parse_block_kind(val, b.kind)) cur.fail(col, "invalid block kind");
                    if (b.kind != block_kind_at(j)) cur.fail(col, "block kind does not match position");
                    break;
                case 2: {
                    auto colon = val.find(':');
                    if (!parse_conv_kind(val.substr(0, colon), b.layer.op.kind)) cur.fail(col, "invalid op");
                    if (b.layer.op.kind == ConvKind::InvertedBottleneck) {
                        if (colon == std::string_view::npos ||
                            !detail::parse_int(val.substr(colon + 1), b.layer.op.expansion) ||
                            b.layer.op.expansion < 1)
                            cur.fail(col, "inverted_bottleneck needs an expansion >= 1");
                    } else if (colon != std::string_view::npos) {
                        cur.fail(col + colon, "unexpected op argument");
                    }
                    break;
                }
                case 3:
                    if (!detail::parse_int(val, v) || (v != 3 && v != 5)) cur.fail(col, "kernel must be 3 or 5");
                    b.layer.kernel = v;
                    break;
                case 4:
                    if (val == "0") b.layer.se = SeRatio::None;
                    else if (val == "0.25") b.layer.se = SeRatio::Quarter;
                    else cur.fail(col, "se must be 0 or 0.25");
                    break;
                case 5:
                    if (val == "none") b.layer.skip = SkipOp::None;
                    else if (val == "residual") b.layer.skip = SkipOp::Residual;
                    else cur.fail(col, "skip must be none or residual");
                    break;
                case 6:
                    if (!detail::parse_int(val, v) || v < 1) cur.fail(col, "invalid channel count");
                    b.layer.out_channels = v;
                    break;
                case 7:
                    if (!detail::parse_int(val, v) || v < 1) cur.fail(col, "invalid layer count");
                    b.num_layers = v;
                    break;
                }
                pos = end + 1;
            }
            for (int ki = 0; ki < 8; ++ki)
                if (!seen[ki]) cur.fail(l.size() + 1, "missing key '" + std::string(keys[ki]) + "'");
            spec.scales[i - 1].push_back(b);
        }
    }
    for (; li < lines.size(); ++li)
        if (!lines[li].empty()) throw ParseError(li + 1, 1, "trailing content");
    return spec;
}

/// FNV-1a over the canonical text form.
inline std::uint64_t spec_hash(const NetworkSpec& spec) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : serialize(spec)) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hash_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

/// SplitMix64 finaliser; derives independent stream seeds from structured keys.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

template <class... Rest>
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c, Rest... rest) {
    return mix_seed(mix_seed(a, b), c, std::uint64_t(rest)...);
}

} // namespace ldpnas

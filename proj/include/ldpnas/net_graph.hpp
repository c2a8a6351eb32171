#pragma once

// Expansion of a NetworkSpec into a concrete node graph over the fixed
// backbone, with shape inference and analytic parameter accounting.
//
// Wiring per scale s of S:
//   x   = (s > 1) ? Downsample_s(encoder output of s-1) : image
//   enc = Encoder_s2(Encoder_s1(x))
//   if s < S: enc = enc + proj(Upsample_{s+1}(output of scale s+1))
//   out = Refine_s(Decoder_s2(Decoder_s1(enc)))
// The head reads the scale-1 output. A Downsample block runs its first layer at
// stride 2; an Upsample block doubles resolution (nearest) before its first layer.

#include <cstdint>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "ldpnas/errors.hpp"
#include "ldpnas/spec.hpp"

namespace ldpnas {

struct Shape3 {
    int c = 0, h = 0, w = 0;
    std::int64_t size() const { return std::int64_t(c) * h * w; }
    friend bool operator==(const Shape3&, const Shape3&) = default;
};

enum class NodeKind { Conv, Norm, Relu, SqueezeExcite, Add, Upsample2x, Subsample2x, PixelShuffle };

inline std::string_view to_string(NodeKind k) {
    switch (k) {
    case NodeKind::Conv: return "conv";
    case NodeKind::Norm: return "norm";
    case NodeKind::Relu: return "relu";
    case NodeKind::SqueezeExcite: return "se";
    case NodeKind::Add: return "add";
    case NodeKind::Upsample2x: return "upsample2x";
    case NodeKind::Subsample2x: return "subsample2x";
    case NodeKind::PixelShuffle: return "pixel_shuffle";
    }
    return "?";
}

/// Index of the graph input in LayerNode::inputs.
inline constexpr int kGraphInput = -1;

struct LayerNode {
    std::string name;
    NodeKind kind = NodeKind::Relu;
    std::vector<int> inputs;
    Shape3 in_shape, out_shape;
    // Conv
    int kh = 1, kw = 1, stride = 1, groups = 1;
    // SqueezeExcite hidden width, PixelShuffle factor
    int hidden = 0;
    int factor = 1;

    /// Scalar ReLU outputs per batch element (relu nodes and the SE bottleneck).
    std::int64_t relu_units() const {
        if (kind == NodeKind::Relu) return out_shape.size();
        if (kind == NodeKind::SqueezeExcite) return hidden;
        return 0;
    }
};

/// One searched layer after channel/stride resolution. The unit of the
/// closed-form parameter count.
struct LayerInstance {
    BlockPos block;
    int replica = 0;
    LayerSpec spec;
    int in_channels = 0;
    int stride = 1;
};

struct GraphPlan {
    NetworkSpec spec;
    Shape3 input;
    std::vector<LayerNode> nodes;
    int output = 0;
    std::vector<LayerInstance> layers;
    std::vector<std::pair<int, int>> fusion_projections; // (cin, cout) of 1x1 fusion convs
    int head_in = 0, head_out = 0;
    std::int64_t total_params = 0;
    std::int64_t relu_unit_count = 0;

    const Shape3& output_shape() const { return nodes.at(output).out_shape; }
};

// ---------------------------------------------------------------------------
// closed-form parameter counts (biases included, 2 scalars per channel per norm)

/// Micro-block pointwise groups: 4 when both widths divide, else dense.
inline int micro_groups(int cin, int cout) { return (cin % 4 == 0 && cout % 4 == 0) ? 4 : 1; }

inline std::int64_t layer_param_count(const LayerSpec& l, std::int64_t cin) {
    const std::int64_t k = l.kernel;
    const std::int64_t cout = l.out_channels;
    std::int64_t p = 0;
    switch (l.op.kind) {
    case ConvKind::Vanilla:
        p = k * k * cin * cout + cout + 2 * cout;
        break;
    case ConvKind::DepthwiseSeparable:
        p = k * k * cin + cin + cin * cout + cout + 2 * cin + 2 * cout;
        break;
    case ConvKind::InvertedBottleneck: {
        const std::int64_t hid = l.op.expansion * cin;
        p = cin * hid + hid + k * k * hid + hid + hid * cout + cout + 2 * hid + 2 * hid + 2 * cout;
        break;
    }
    case ConvKind::MicroBlock: {
        const std::int64_t g = micro_groups(int(cin), int(cout));
        p = 2 * k * cin + 2 * cin + cin * cout / g + cout + 2 * cin + 2 * cin + 2 * cout;
        break;
    }
    }
    if (l.se == SeRatio::Quarter) {
        const std::int64_t s = se_hidden(l.se, int(cout));
        p += cout * s + s + s * cout + cout;
    }
    if (l.skip == SkipOp::Residual && cin != cout) p += cin * cout + cout;
    return p;
}

inline std::int64_t count_params(const GraphPlan& plan) {
    std::int64_t total = 0;
    for (const LayerInstance& li : plan.layers) total += layer_param_count(li.spec, li.in_channels);
    for (auto [cin, cout] : plan.fusion_projections) total += std::int64_t(cin) * cout + cout;
    total += 9LL * plan.head_in * plan.head_out + plan.head_out;
    return total;
}

/// Parameter slot size of a single node, derived from its weight tensor shapes.
inline std::int64_t node_param_count(const LayerNode& n) {
    switch (n.kind) {
    case NodeKind::Conv:
        return std::int64_t(n.out_shape.c) * (n.in_shape.c / n.groups) * n.kh * n.kw + n.out_shape.c;
    case NodeKind::Norm: return 2LL * n.out_shape.c;
    case NodeKind::SqueezeExcite: {
        const std::int64_t c = n.out_shape.c;
        return c * n.hidden + n.hidden + n.hidden * c + c;
    }
    default: return 0;
    }
}

// ---------------------------------------------------------------------------

/// Appends nodes to a plan with shape inference. instantiate() drives it from a
/// spec; tests use the primitive methods directly to build micro-graphs.
class GraphBuilder {
public:
    explicit GraphBuilder(GraphPlan& plan) : plan_(plan) {}

    const Shape3& shape(int id) const { return id == kGraphInput ? plan_.input : plan_.nodes[id].out_shape; }

    int conv(const std::string& name, int in, int cout, int kh, int kw, int stride, int groups) {
        const Shape3 s = shape(in);
        if (s.c % groups != 0 || cout % groups != 0) throw ShapeError("conv groups do not divide channels: " + name);
        LayerNode n;
        n.name = name;
        n.kind = NodeKind::Conv;
        n.inputs = {in};
        n.in_shape = s;
        n.kh = kh;
        n.kw = kw;
        n.stride = stride;
        n.groups = groups;
        const int ph = kh / 2, pw = kw / 2;
        n.out_shape = {cout, (s.h + 2 * ph - kh) / stride + 1, (s.w + 2 * pw - kw) / stride + 1};
        return push(std::move(n));
    }

    int unary(const std::string& name, NodeKind kind, int in) {
        LayerNode n;
        n.name = name;
        n.kind = kind;
        n.inputs = {in};
        n.in_shape = n.out_shape = shape(in);
        if (kind == NodeKind::Upsample2x) n.out_shape = {n.in_shape.c, n.in_shape.h * 2, n.in_shape.w * 2};
        if (kind == NodeKind::Subsample2x) n.out_shape = {n.in_shape.c, n.in_shape.h / 2, n.in_shape.w / 2};
        return push(std::move(n));
    }

    int se(const std::string& name, int in, int hidden) {
        LayerNode n;
        n.name = name;
        n.kind = NodeKind::SqueezeExcite;
        n.inputs = {in};
        n.in_shape = n.out_shape = shape(in);
        n.hidden = hidden;
        return push(std::move(n));
    }

    int add(const std::string& name, int a, int b) {
        if (!(shape(a) == shape(b))) throw ShapeError("add operands disagree: " + name);
        LayerNode n;
        n.name = name;
        n.kind = NodeKind::Add;
        n.inputs = {a, b};
        n.in_shape = n.out_shape = shape(a);
        return push(std::move(n));
    }

    int pixel_shuffle(const std::string& name, int in, int factor) {
        const Shape3 s = shape(in);
        LayerNode n;
        n.name = name;
        n.kind = NodeKind::PixelShuffle;
        n.inputs = {in};
        n.in_shape = s;
        n.factor = factor;
        n.out_shape = {s.c / (factor * factor), s.h * factor, s.w * factor};
        return push(std::move(n));
    }

    int conv_norm(const std::string& name, int in, int cout, int kh, int kw, int stride, int groups, bool relu) {
        int x = conv(name + ".conv", in, cout, kh, kw, stride, groups);
        x = unary(name + ".norm", NodeKind::Norm, x);
        if (relu) x = unary(name + ".relu", NodeKind::Relu, x);
        return x;
    }

    int layer(const std::string& name, int in, const LayerSpec& l, int stride) {
        const int cin = shape(in).c;
        const int cout = l.out_channels;
        const int k = l.kernel;
        int x = in;
        switch (l.op.kind) {
        case ConvKind::Vanilla:
            x = conv_norm(name + ".full", x, cout, k, k, stride, 1, true);
            break;
        case ConvKind::DepthwiseSeparable:
            x = conv_norm(name + ".dw", x, cin, k, k, stride, cin, true);
            x = conv_norm(name + ".pw", x, cout, 1, 1, 1, 1, true);
            break;
        case ConvKind::InvertedBottleneck: {
            const int hid = l.op.expansion * cin;
            x = conv_norm(name + ".expand", x, hid, 1, 1, 1, 1, true);
            x = conv_norm(name + ".dw", x, hid, k, k, stride, hid, true);
            x = conv_norm(name + ".project", x, cout, 1, 1, 1, 1, false);
            break;
        }
        case ConvKind::MicroBlock:
            x = conv_norm(name + ".dwv", x, cin, k, 1, stride, cin, false);
            x = conv_norm(name + ".dwh", x, cin, 1, k, 1, cin, true);
            x = conv_norm(name + ".gpw", x, cout, 1, 1, 1, micro_groups(cin, cout), true);
            break;
        }
        if (l.se == SeRatio::Quarter) x = se(name + ".se", x, se_hidden(l.se, cout));
        if (l.skip == SkipOp::Residual) {
            int skip = in;
            if (cin != cout) skip = conv(name + ".skip_proj", in, cout, 1, 1, stride, 1);
            else if (stride == 2) skip = unary(name + ".skip_sub", NodeKind::Subsample2x, in);
            x = add(name + ".residual", x, skip);
        }
        return x;
    }

    int block(BlockPos p, int in) {
        const BlockSpec& b = plan_.spec.block(p);
        const std::string base = "b" + std::to_string(p.scale) + "." + std::to_string(p.index);
        int x = in;
        for (int r = 0; r < b.num_layers; ++r) {
            int stride = 1;
            if (r == 0 && b.kind == BlockKind::Downsample) stride = 2;
            if (r == 0 && b.kind == BlockKind::Upsample) x = unary(base + ".up", NodeKind::Upsample2x, x);
            const std::string lname = base + ".l" + std::to_string(r + 1);
            plan_.layers.push_back({p, r, b.layer, shape(x).c, stride});
            x = layer(lname, x, b.layer, stride);
        }
        return x;
    }

    // Returns the node carrying the scale-s output at scale-s resolution, or
    // after the Upsample block for s > 1.
    int scale(int s, int in) {
        int x = in;
        if (s > 1) x = block({s, 6}, x);
        x = block({s, 1}, x);
        x = block({s, 2}, x);
        if (s < plan_.spec.num_scales) {
            int deeper = scale(s + 1, x);
            const int want = shape(x).c;
            if (shape(deeper).c != want) {
                plan_.fusion_projections.emplace_back(shape(deeper).c, want);
                deeper = conv("fuse" + std::to_string(s) + ".proj", deeper, want, 1, 1, 1, 1);
            }
            x = add("fuse" + std::to_string(s), x, deeper);
        }
        x = block({s, 3}, x);
        x = block({s, 4}, x);
        x = block({s, 5}, x);
        if (s > 1) x = block({s, 7}, x);
        return x;
    }

    /// Seals a hand-built graph: marks the output and totals node slots.
    void finish(int output) {
        plan_.output = output;
        plan_.total_params = 0;
        plan_.relu_unit_count = 0;
        for (const LayerNode& n : plan_.nodes) {
            plan_.total_params += node_param_count(n);
            plan_.relu_unit_count += n.relu_units();
        }
    }

private:
    int push(LayerNode n) {
        plan_.nodes.push_back(std::move(n));
        return static_cast<int>(plan_.nodes.size()) - 1;
    }

    GraphPlan& plan_;
};

/// Checks the block layout of a spec (counts and kinds per scale). Empty when sound.
inline std::vector<std::string> structural_violations(const NetworkSpec& spec) {
    std::vector<std::string> v;
    if (spec.num_scales < 1) v.push_back("scale count must be >= 1");
    if (static_cast<int>(spec.scales.size()) != spec.num_scales) {
        v.push_back("scale table has " + std::to_string(spec.scales.size()) + " rows, expected " +
                    std::to_string(spec.num_scales));
        return v;
    }
    for (int i = 1; i <= spec.num_scales; ++i) {
        const auto& row = spec.scales[i - 1];
        if (static_cast<int>(row.size()) != blocks_at_scale(i)) {
            v.push_back("scale " + std::to_string(i) + " has " + std::to_string(row.size()) + " blocks, expected " +
                        std::to_string(blocks_at_scale(i)));
            continue;
        }
        for (int j = 1; j <= blocks_at_scale(i); ++j) {
            const BlockSpec& b = row[j - 1];
            const std::string at = "block " + std::to_string(i) + "." + std::to_string(j);
            if (b.kind != block_kind_at(j))
                v.push_back(at + ": kind " + std::string(to_string(b.kind)) + " not allowed here");
            if (b.num_layers < 1) v.push_back(at + ": num_layers < 1");
            if (b.layer.kernel != 3 && b.layer.kernel != 5) v.push_back(at + ": kernel must be 3 or 5");
            if (b.layer.out_channels < 1) v.push_back(at + ": out_channels < 1");
            if (b.layer.op.kind == ConvKind::InvertedBottleneck && b.layer.op.expansion < 1)
                v.push_back(at + ": expansion < 1");
        }
    }
    if (spec.head.kind == HeadKind::Classify && spec.head.classes < 1) v.push_back("head: classes < 1");
    if (spec.head.kind == HeadKind::SuperRes && spec.head.factor < 1) v.push_back("head: factor < 1");
    return v;
}

/// Builds the node graph for `spec` on inputs of shape `input` (channels, height, width).
inline GraphPlan instantiate(const NetworkSpec& spec, Shape3 input) {
    if (auto v = structural_violations(spec); !v.empty()) throw ShapeError("malformed spec: " + v.front());
    const int div = 1 << (spec.num_scales - 1);
    if (input.c < 1 || input.h < 1 || input.w < 1) throw ShapeError("input shape must be positive");
    if (input.h % div != 0 || input.w % div != 0)
        throw ShapeError("input " + std::to_string(input.h) + "x" + std::to_string(input.w) +
                         " not divisible by " + std::to_string(div));

    GraphPlan plan;
    plan.spec = spec;
    plan.input = input;
    GraphBuilder b(plan);
    int x = b.scale(1, kGraphInput);

    plan.head_in = b.shape(x).c;
    switch (spec.head.kind) {
    case HeadKind::Regress:
        plan.head_out = 1;
        x = b.conv("head.conv", x, 1, 3, 3, 1, 1);
        break;
    case HeadKind::Classify:
        plan.head_out = spec.head.classes;
        x = b.conv("head.conv", x, spec.head.classes, 3, 3, 1, 1);
        break;
    case HeadKind::SuperRes: {
        const int r = spec.head.factor;
        plan.head_out = r * r * input.c;
        x = b.conv("head.conv", x, plan.head_out, 3, 3, 1, 1);
        x = b.pixel_shuffle("head.shuffle", x, r);
        break;
    }
    }
    plan.output = x;
    plan.total_params = count_params(plan);
    plan.relu_unit_count = 0;
    for (const LayerNode& n : plan.nodes) plan.relu_unit_count += n.relu_units();
    return plan;
}

/// Total ReLU units N_A when the plan's spec runs on `probe` inputs.
inline std::int64_t relu_units(const GraphPlan& plan, Shape3 probe) {
    if (probe == plan.input) return plan.relu_unit_count;
    return instantiate(plan.spec, probe).relu_unit_count;
}

/// Parameter count of a spec without committing to a resolution.
inline std::int64_t analytic_params(const NetworkSpec& spec, int in_channels) {
    const int side = 1 << (spec.num_scales - 1);
    return instantiate(spec, {in_channels, side, side}).total_params;
}

/// Per-node table: name, op, input shape, output shape, params; trailing total.
inline std::string describe(const GraphPlan& plan) {
    auto fmt = [](const Shape3& s) {
        return std::to_string(s.c) + "x" + std::to_string(s.h) + "x" + std::to_string(s.w);
    };
    std::ostringstream os;
    os << std::left << std::setw(28) << "name" << std::setw(15) << "op" << std::setw(14) << "in" << std::setw(14)
       << "out" << "params\n";
    std::int64_t total = 0;
    for (const LayerNode& n : plan.nodes) {
        const std::int64_t p = node_param_count(n);
        total += p;
        os << std::left << std::setw(28) << n.name << std::setw(15) << to_string(n.kind) << std::setw(14)
           << fmt(n.in_shape) << std::setw(14) << fmt(n.out_shape) << p << "\n";
    }
    os << "total " << total << "\n";
    return os.str();
}

} // namespace ldpnas

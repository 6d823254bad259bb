#include "kinds.hpp"

#include <algorithm>
#include <set>

namespace litedet::kinds {

namespace {

int req_int(const GraphNode& n, const char* key) {
    if (!n.attrs.contains(key) || !n.attrs[key].is_number_integer())
        throw ConfigError("node '" + n.id + "' (" + n.kind + "): missing integer attr '" + key +
                          "'");
    return n.attrs[key].get<int>();
}

int opt_int(const GraphNode& n, const char* key, int def) {
    if (!n.attrs.contains(key)) return def;
    if (!n.attrs[key].is_number_integer())
        throw ConfigError("node '" + n.id + "': attr '" + key + "' must be an integer");
    return n.attrs[key].get<int>();
}

bool opt_bool(const GraphNode& n, const char* key, bool def) {
    if (!n.attrs.contains(key)) return def;
    if (!n.attrs[key].is_boolean())
        throw ConfigError("node '" + n.id + "': attr '" + key + "' must be a boolean");
    return n.attrs[key].get<bool>();
}

std::array<int, 3> req_channels3(const GraphNode& n) {
    if (!n.attrs.contains("in_channels") || !n.attrs["in_channels"].is_array() ||
        n.attrs["in_channels"].size() != 3)
        throw ConfigError("node '" + n.id + "' (" + n.kind +
                          "): attr 'in_channels' must be a 3-element array");
    std::array<int, 3> out{};
    for (int i = 0; i < 3; ++i) out[i] = n.attrs["in_channels"][i].get<int>();
    return out;
}

void want_inputs(const std::vector<Shape>& in, std::size_t n, const char* kind) {
    if (in.size() != n)
        throw ShapeError(std::string(kind) + ": expected " + std::to_string(n) + " input(s), got " +
                         std::to_string(in.size()));
}

Shape conv_shape(const ConvParams& p, const Shape& in, const char* what) {
    if (in[1] != p.c_in)
        throw ShapeError(std::string(what) + ": input has " + std::to_string(in[1]) +
                         " channels, conv declares c_in=" + std::to_string(p.c_in));
    if (in[2] + 2 * p.pad_h < p.k_h || in[3] + 2 * p.pad_w < p.k_w)
        throw ShapeError(std::string(what) + ": spatial dims too small for kernel");
    return Shape{in[0], p.c_out, p.out_h(in[2]), p.out_w(in[3])};
}

}  // namespace

bool known_kind(const std::string& kind) {
    static const std::set<std::string> kinds = {
        "conv",       "ghost_conv", "ghost_hgblock", "hgstem",  "faster_block",
        "c2f_faster", "c2f",        "sppf",          "maxpool", "upsample2x",
        "concat",     "add",        "gcdetect",      "plain_detect"};
    return kinds.count(kind) != 0;
}

BlockVar make_block(const GraphNode& n) {
    try {
        if (n.kind == "conv")
            return ConvBNAct(req_int(n, "c_in"), req_int(n, "c_out"), req_int(n, "k"),
                             opt_int(n, "stride", 1), opt_int(n, "pad", -1),
                             opt_bool(n, "act", true));
        if (n.kind == "ghost_conv")
            return GhostConvBlock(req_int(n, "c_in"), req_int(n, "c_out"), opt_int(n, "k", 1));
        if (n.kind == "ghost_hgblock")
            return GhostHGBlock(req_int(n, "c"), opt_int(n, "k", 1));
        if (n.kind == "hgstem")
            return HGStemBlock(req_int(n, "c_in"), req_int(n, "c_mid"), req_int(n, "c_out"));
        if (n.kind == "faster_block")
            return FasterBlock(req_int(n, "c"), opt_int(n, "c_p", -1));
        if (n.kind == "c2f_faster")
            return C2fFasterBlock(req_int(n, "c_in"), req_int(n, "c_out"), req_int(n, "n"),
                                  opt_int(n, "hidden", -1), opt_bool(n, "eq5_literal", false));
        if (n.kind == "c2f")
            return C2fBlock(req_int(n, "c_in"), req_int(n, "c_out"), req_int(n, "n"),
                            opt_int(n, "hidden", -1));
        if (n.kind == "sppf")
            return SPPFBlock(req_int(n, "c_in"), req_int(n, "c_out"), opt_int(n, "c_mid", -1));
        if (n.kind == "maxpool")
            return MaxPoolOp{req_int(n, "k"), opt_int(n, "stride", 1), opt_int(n, "pad", 0)};
        if (n.kind == "upsample2x") return UpsampleOp{};
        if (n.kind == "concat") return ConcatOp{};
        if (n.kind == "add") return AddOp{};
        if (n.kind == "gcdetect")
            return GCDetectHead(req_channels3(n), req_int(n, "num_classes"),
                                opt_int(n, "w_head", 64), opt_int(n, "groups", 16));
        if (n.kind == "plain_detect")
            return PlainDetectHead(req_channels3(n), req_int(n, "num_classes"),
                                   req_int(n, "width"));
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError("node '" + n.id + "' (" + n.kind + "): " + e.what());
    }
    throw ConfigError("node '" + n.id + "': unknown kind '" + n.kind + "'");
}

std::vector<std::string> port_names(const BlockVar& b) {
    if (std::holds_alternative<GCDetectHead>(b) || std::holds_alternative<PlainDetectHead>(b))
        return {"cls0", "box0", "cls1", "box1", "cls2", "box2"};
    return {""};
}

std::vector<Shape> output_shapes(const BlockVar& b, const std::vector<Shape>& in) {
    return std::visit(
        [&](const auto& blk) -> std::vector<Shape> {
            using T = std::decay_t<decltype(blk)>;
            if constexpr (std::is_same_v<T, ConvBNAct>) {
                want_inputs(in, 1, "conv");
                return {conv_shape(blk.conv, in[0], "conv")};
            } else if constexpr (std::is_same_v<T, GhostConvBlock>) {
                want_inputs(in, 1, "ghost_conv");
                Shape s = conv_shape(blk.primary, in[0], "ghost_conv");
                s[1] = blk.c_out;
                return {s};
            } else if constexpr (std::is_same_v<T, GhostHGBlock>) {
                want_inputs(in, 1, "ghost_hgblock");
                if (in[0][1] != blk.c)
                    throw ShapeError("ghost_hgblock: input has " + std::to_string(in[0][1]) +
                                     " channels, block declares c=" + std::to_string(blk.c));
                return {in[0]};
            } else if constexpr (std::is_same_v<T, HGStemBlock>) {
                want_inputs(in, 1, "hgstem");
                if (in[0][1] != blk.c_in)
                    throw ShapeError("hgstem: input has " + std::to_string(in[0][1]) +
                                     " channels, block declares c_in=" +
                                     std::to_string(blk.c_in));
                if (in[0][2] % 4 != 0 || in[0][3] % 4 != 0)
                    throw ShapeError("hgstem: spatial dims not divisible by 4");
                return {Shape{in[0][0], blk.c_out, in[0][2] / 4, in[0][3] / 4}};
            } else if constexpr (std::is_same_v<T, FasterBlock>) {
                want_inputs(in, 1, "faster_block");
                if (in[0][1] != blk.c)
                    throw ShapeError("faster_block: input has " + std::to_string(in[0][1]) +
                                     " channels, block declares c=" + std::to_string(blk.c));
                return {in[0]};
            } else if constexpr (std::is_same_v<T, C2fFasterBlock> ||
                                 std::is_same_v<T, C2fBlock>) {
                want_inputs(in, 1, "c2f");
                if (in[0][1] != blk.c_in)
                    throw ShapeError("c2f: input has " + std::to_string(in[0][1]) +
                                     " channels, block declares c_in=" +
                                     std::to_string(blk.c_in));
                return {Shape{in[0][0], blk.c_out, in[0][2], in[0][3]}};
            } else if constexpr (std::is_same_v<T, SPPFBlock>) {
                want_inputs(in, 1, "sppf");
                if (in[0][1] != blk.c_in)
                    throw ShapeError("sppf: input has " + std::to_string(in[0][1]) +
                                     " channels, block declares c_in=" +
                                     std::to_string(blk.c_in));
                return {Shape{in[0][0], blk.c_out, in[0][2], in[0][3]}};
            } else if constexpr (std::is_same_v<T, MaxPoolOp>) {
                want_inputs(in, 1, "maxpool");
                const int oh = (in[0][2] + 2 * blk.pad - blk.k) / blk.stride + 1;
                const int ow = (in[0][3] + 2 * blk.pad - blk.k) / blk.stride + 1;
                if (oh < 1 || ow < 1) throw ShapeError("maxpool: window larger than padded input");
                return {Shape{in[0][0], in[0][1], oh, ow}};
            } else if constexpr (std::is_same_v<T, UpsampleOp>) {
                want_inputs(in, 1, "upsample2x");
                return {Shape{in[0][0], in[0][1], in[0][2] * 2, in[0][3] * 2}};
            } else if constexpr (std::is_same_v<T, ConcatOp>) {
                if (in.empty()) throw ShapeError("concat: needs at least one input");
                Shape s = in[0];
                for (std::size_t i = 1; i < in.size(); ++i) {
                    if (in[i][0] != s[0] || in[i][2] != s[2] || in[i][3] != s[3])
                        throw ShapeError("concat: batch/spatial mismatch between inputs");
                    s[1] += in[i][1];
                }
                return {s};
            } else if constexpr (std::is_same_v<T, AddOp>) {
                if (in.size() < 2) throw ShapeError("add: needs at least two inputs");
                for (std::size_t i = 1; i < in.size(); ++i)
                    if (in[i] != in[0]) throw ShapeError("add: input shapes differ");
                return {in[0]};
            } else {  // detect heads
                want_inputs(in, 3, "detect head");
                int nc = 0;
                if constexpr (std::is_same_v<T, GCDetectHead>)
                    nc = blk.num_classes;
                else
                    nc = blk.num_classes;
                std::vector<Shape> out;
                for (int s = 0; s < 3; ++s) {
                    const int declared = blk.scales[std::size_t(s)].c_in;
                    if (in[std::size_t(s)][1] != declared)
                        throw ShapeError("detect head: scale " + std::to_string(s) + " input has " +
                                         std::to_string(in[std::size_t(s)][1]) +
                                         " channels, head declares " + std::to_string(declared));
                    out.push_back(Shape{in[std::size_t(s)][0], nc, in[std::size_t(s)][2],
                                        in[std::size_t(s)][3]});
                    out.push_back(Shape{in[std::size_t(s)][0], 4, in[std::size_t(s)][2],
                                        in[std::size_t(s)][3]});
                }
                return out;
            }
        },
        b);
}

std::vector<ParamRef> block_params(BlockVar& b) {
    return std::visit(
        [](auto& blk) -> std::vector<ParamRef> {
            using T = std::decay_t<decltype(blk)>;
            if constexpr (std::is_same_v<T, MaxPoolOp> || std::is_same_v<T, UpsampleOp> ||
                          std::is_same_v<T, ConcatOp> || std::is_same_v<T, AddOp>)
                return {};
            else
                return blk.params();
        },
        b);
}

std::vector<Tensor4> block_forward(const BlockVar& b, const std::vector<const Tensor4*>& in) {
    return std::visit(
        [&](const auto& blk) -> std::vector<Tensor4> {
            using T = std::decay_t<decltype(blk)>;
            if constexpr (std::is_same_v<T, MaxPoolOp>) {
                return {maxpool2d(*in.at(0), blk.k, blk.stride, blk.pad)};
            } else if constexpr (std::is_same_v<T, UpsampleOp>) {
                return {upsample_nearest2x(*in.at(0))};
            } else if constexpr (std::is_same_v<T, ConcatOp>) {
                return {concat_channels(in)};
            } else if constexpr (std::is_same_v<T, AddOp>) {
                Tensor4 acc = *in.at(0);
                for (std::size_t i = 1; i < in.size(); ++i) acc = add(acc, *in[i]);
                return {acc};
            } else if constexpr (std::is_same_v<T, GCDetectHead> ||
                                 std::is_same_v<T, PlainDetectHead>) {
                std::vector<Tensor4> out;
                for (auto& [cls, box] : blk.forward(in)) {
                    out.push_back(std::move(cls));
                    out.push_back(std::move(box));
                }
                return out;
            } else {
                return {blk.forward(*in.at(0))};
            }
        },
        b);
}

std::vector<ConvVisit> conv_visits(const BlockVar& b, const std::vector<Shape>& in) {
    std::vector<ConvVisit> out;
    auto visit_conv = [&](const std::string& name, const ConvParams& p, int h, int w) {
        out.push_back(ConvVisit{name, &p, p.out_h(h), p.out_w(w)});
    };
    std::visit(
        [&](const auto& blk) {
            using T = std::decay_t<decltype(blk)>;
            if constexpr (std::is_same_v<T, ConvBNAct>) {
                visit_conv("conv", blk.conv, in.at(0)[2], in.at(0)[3]);
            } else if constexpr (std::is_same_v<T, GhostConvBlock>) {
                const int h = in.at(0)[2], w = in.at(0)[3];
                visit_conv("primary", blk.primary, h, w);
                visit_conv("cheap", blk.cheap, blk.primary.out_h(h), blk.primary.out_w(w));
            } else if constexpr (std::is_same_v<T, GhostHGBlock>) {
                const int h = in.at(0)[2], w = in.at(0)[3];
                auto ghost = [&](const char* p, const GhostConvBlock& g) {
                    visit_conv(std::string(p) + ".primary", g.primary, h, w);
                    visit_conv(std::string(p) + ".cheap", g.cheap, h, w);
                };
                ghost("ghost1", blk.ghost1);
                ghost("ghost2", blk.ghost2);
                ghost("ghost3", blk.ghost3);
                visit_conv("fuse", blk.fuse, h, w);
            } else if constexpr (std::is_same_v<T, HGStemBlock>) {
                const int h = in.at(0)[2], w = in.at(0)[3];
                visit_conv("stage1", blk.stage1, h, w);
                visit_conv("stage2a", blk.stage2a, h / 2, w / 2);
                visit_conv("stage2b", blk.stage2b, h / 2, w / 2);
                visit_conv("stage3", blk.stage3, h / 4, w / 4);
            } else if constexpr (std::is_same_v<T, FasterBlock>) {
                const int h = in.at(0)[2], w = in.at(0)[3];
                visit_conv("pconv", blk.pconv, h, w);
                visit_conv("fuse", blk.fuse, h, w);
            } else if constexpr (std::is_same_v<T, C2fFasterBlock>) {
                const int h = in.at(0)[2], w = in.at(0)[3];
                visit_conv("entry", blk.entry, h, w);
                for (int i = 0; i < blk.n; ++i) {
                    const std::string p = "blocks." + std::to_string(i);
                    visit_conv(p + ".pconv", blk.blocks[std::size_t(i)].pconv, h, w);
                    visit_conv(p + ".fuse", blk.blocks[std::size_t(i)].fuse, h, w);
                }
                visit_conv("exit", blk.exit_conv, h, w);
            } else if constexpr (std::is_same_v<T, C2fBlock>) {
                const int h = in.at(0)[2], w = in.at(0)[3];
                visit_conv("entry", blk.entry, h, w);
                for (int i = 0; i < blk.n; ++i) {
                    const std::string p = "blocks." + std::to_string(i);
                    visit_conv(p + ".conv1", blk.blocks[std::size_t(i)].conv1, h, w);
                    visit_conv(p + ".conv2", blk.blocks[std::size_t(i)].conv2, h, w);
                }
                visit_conv("exit", blk.exit_conv, h, w);
            } else if constexpr (std::is_same_v<T, SPPFBlock>) {
                const int h = in.at(0)[2], w = in.at(0)[3];
                visit_conv("reduce", blk.reduce, h, w);
                visit_conv("fuse", blk.fuse, h, w);
            } else if constexpr (std::is_same_v<T, GCDetectHead>) {
                for (int s = 0; s < 3; ++s) {
                    const auto& sc = blk.scales[std::size_t(s)];
                    const int h = in.at(std::size_t(s))[2], w = in.at(std::size_t(s))[3];
                    const std::string p = "s" + std::to_string(s) + ".";
                    visit_conv(p + "align", sc.align, h, w);
                    visit_conv(p + "gconv1", sc.gconv1, h, w);
                    visit_conv(p + "gconv2", sc.gconv2, h, w);
                    visit_conv(p + "cls", sc.cls_out, h, w);
                    visit_conv(p + "box", sc.box_out, h, w);
                }
            } else if constexpr (std::is_same_v<T, PlainDetectHead>) {
                for (int s = 0; s < 3; ++s) {
                    const auto& sc = blk.scales[std::size_t(s)];
                    const int h = in.at(std::size_t(s))[2], w = in.at(std::size_t(s))[3];
                    const std::string p = "s" + std::to_string(s) + ".";
                    visit_conv(p + "cls1", sc.cls1, h, w);
                    visit_conv(p + "cls2", sc.cls2, h, w);
                    visit_conv(p + "cls", sc.cls_out, h, w);
                    visit_conv(p + "box1", sc.box1, h, w);
                    visit_conv(p + "box2", sc.box2, h, w);
                    visit_conv(p + "box", sc.box_out, h, w);
                }
            }
            // pooling / upsample / concat / add contribute nothing
        },
        b);
    return out;
}

}  // namespace litedet::kinds

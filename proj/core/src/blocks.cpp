#include "litedet/blocks.hpp"

namespace litedet {

namespace {

Tensor4 conv_act(const Tensor4& x, const ConvParams& p, bool act) {
    Tensor4 y = conv2d(x, p);
    return act ? silu(y) : std::move(y);
}

}  // namespace

// ---------------------------------------------------------------- ConvBNAct

ConvBNAct::ConvBNAct(int c_in_, int c_out_, int k_, int stride_, int pad_, bool act_)
    : c_in(c_in_),
      c_out(c_out_),
      k(k_),
      stride(stride_),
      pad(pad_ < 0 ? k_ / 2 : pad_),
      act(act_),
      conv(c_in_, c_out_, k_, stride_, pad_ < 0 ? k_ / 2 : pad_) {}

Tensor4 ConvBNAct::forward(const Tensor4& x) const { return conv_act(x, conv, act); }

std::vector<ParamRef> ConvBNAct::params() { return {{"conv", &conv}}; }

nlohmann::json ConvBNAct::describe() const {
    return {{"c_in", c_in}, {"c_out", c_out}, {"k", k}, {"stride", stride},
            {"pad", pad},   {"act", act}};
}

// ----------------------------------------------------------- GhostConvBlock

GhostConvBlock::GhostConvBlock(int c_in_, int c_out_, int k_, bool act_)
    : c_in(c_in_), c_out(c_out_), k(k_), act(act_) {
    if (c_out < 2 || c_out % 2 != 0)
        throw ConfigError("ghost_conv: c_out must be even and >= 2, got " +
                          std::to_string(c_out));
    if (k < 1 || k % 2 == 0)
        throw ConfigError("ghost_conv: primary kernel must be odd, got " + std::to_string(k));
    const int half = c_out / 2;
    primary = ConvParams(c_in, half, k, 1, k / 2);
    cheap = ConvParams(half, half, 5, 1, 2, half);
}

Tensor4 GhostConvBlock::forward(const Tensor4& x) const {
    if (x.c != c_in)
        throw ShapeError("ghost_conv: input has " + std::to_string(x.c) +
                         " channels, block declares c_in=" + std::to_string(c_in));
    Tensor4 y1 = conv_act(x, primary, act);
    Tensor4 y2 = conv_act(y1, cheap, act);
    return concat_channels(std::vector<const Tensor4*>{&y1, &y2});
}

std::vector<ParamRef> GhostConvBlock::params() {
    return {{"primary", &primary}, {"cheap", &cheap}};
}

nlohmann::json GhostConvBlock::describe() const {
    return {{"c_in", c_in}, {"c_out", c_out}, {"k", k}};
}

// ------------------------------------------------------------- GhostHGBlock

GhostHGBlock::GhostHGBlock(int c_, int k_)
    : c(c_), k(k_), ghost1(c_, c_, k_), ghost2(c_, c_, k_), ghost3(c_, c_, k_),
      fuse(3 * c_, c_, 1) {}

Tensor4 GhostHGBlock::forward_with(
    const Tensor4& x, const std::function<Tensor4(const Tensor4&, int)>& stage) const {
    if (x.c != c)
        throw ShapeError("ghost_hgblock: input has " + std::to_string(x.c) +
                         " channels, block declares c=" + std::to_string(c));
    Tensor4 g1 = stage(x, 1);
    Tensor4 g2 = stage(g1, 2);
    Tensor4 g3 = stage(g2, 3);
    Tensor4 cat = concat_channels(std::vector<const Tensor4*>{&g1, &g2, &g3});
    return add(conv_act(cat, fuse, true), x);
}

Tensor4 GhostHGBlock::forward(const Tensor4& x) const {
    return forward_with(x, [this](const Tensor4& t, int i) {
        switch (i) {
            case 1: return ghost1.forward(t);
            case 2: return ghost2.forward(t);
            default: return ghost3.forward(t);
        }
    });
}

std::vector<ParamRef> GhostHGBlock::params() {
    return {{"ghost1.primary", &ghost1.primary}, {"ghost1.cheap", &ghost1.cheap},
            {"ghost2.primary", &ghost2.primary}, {"ghost2.cheap", &ghost2.cheap},
            {"ghost3.primary", &ghost3.primary}, {"ghost3.cheap", &ghost3.cheap},
            {"fuse", &fuse}};
}

nlohmann::json GhostHGBlock::describe() const { return {{"c", c}, {"k", k}}; }

// -------------------------------------------------------------- HGStemBlock

HGStemBlock::HGStemBlock(int c_in_, int c_mid_, int c_out_)
    : c_in(c_in_),
      c_mid(c_mid_),
      c_out(c_out_),
      stage1(c_in_, c_mid_, 2, 2, 0),
      stage2a(c_mid_, c_mid_, 1),
      stage2b(c_mid_, c_mid_, 5, 1, 2, c_mid_),
      stage3(c_mid_, c_out_, 1) {}

Tensor4 HGStemBlock::forward(const Tensor4& x) const {
    if (x.c != c_in)
        throw ShapeError("hgstem: input has " + std::to_string(x.c) +
                         " channels, block declares c_in=" + std::to_string(c_in));
    if (x.h % 4 != 0 || x.w % 4 != 0)
        throw ShapeError("hgstem: spatial dims " + std::to_string(x.h) + "x" +
                         std::to_string(x.w) + " not divisible by total stride 4");
    Tensor4 s1 = conv_act(x, stage1, true);
    Tensor4 s2 = conv_act(s1, stage2a, true);
    Tensor4 s3 = conv_act(s2, stage2b, true);
    Tensor4 p = maxpool2d(s3, 2, 2, 0);
    return conv_act(p, stage3, true);
}

std::vector<ParamRef> HGStemBlock::params() {
    return {{"stage1", &stage1}, {"stage2a", &stage2a}, {"stage2b", &stage2b},
            {"stage3", &stage3}};
}

nlohmann::json HGStemBlock::describe() const {
    return {{"c_in", c_in}, {"c_mid", c_mid}, {"c_out", c_out}};
}

// -------------------------------------------------------------- FasterBlock

FasterBlock::FasterBlock(int c_, int c_p_) : c(c_), c_p(c_p_ < 0 ? c_ / 4 : c_p_) {
    if (c_p_ < 0 && c < 4)
        throw ConfigError("faster_block: c must be >= 4 so the partial slice is non-empty, got " +
                          std::to_string(c));
    if (c_p < 1 || c_p > c)
        throw ConfigError("faster_block: partial width " + std::to_string(c_p) +
                          " invalid for c=" + std::to_string(c));
    pconv = ConvParams(c_p, c_p, 3, 1, 1);
    fuse = ConvParams(c, c, 1);
}

Tensor4 FasterBlock::pconv_partial(const Tensor4& x) const {
    if (x.c != c)
        throw ShapeError("faster_block: input has " + std::to_string(x.c) +
                         " channels, block declares c=" + std::to_string(c));
    Tensor4 out = x;  // channels [c_p, c) pass through untouched
    std::vector<Tensor4> parts = c_p < c ? split_channels(x, {c_p, c - c_p})
                                         : std::vector<Tensor4>{x};
    Tensor4 head = conv_act(parts[0], pconv, true);
    for (int in = 0; in < x.n; ++in) {
        for (int ic = 0; ic < c_p; ++ic)
            for (int iy = 0; iy < x.h; ++iy)
                for (int ix = 0; ix < x.w; ++ix)
                    out.at(in, ic, iy, ix) = head.at(in, ic, iy, ix);
    }
    return out;
}

Tensor4 FasterBlock::forward(const Tensor4& x) const {
    return add(x, conv_act(pconv_partial(x), fuse, true));
}

std::vector<ParamRef> FasterBlock::params() { return {{"pconv", &pconv}, {"fuse", &fuse}}; }

nlohmann::json FasterBlock::describe() const {
    nlohmann::json j{{"c", c}};
    if (c_p != c / 4) j["c_p"] = c_p;
    return j;
}

// ----------------------------------------------------------- C2fFasterBlock

C2fFasterBlock::C2fFasterBlock(int c_in_, int c_out_, int n_, int hidden_, bool literal)
    : c_in(c_in_),
      c_out(c_out_),
      hidden(hidden_ < 0 ? c_out_ / 2 : hidden_),
      n(n_),
      eq5_literal(literal) {
    if (n < 1) throw ConfigError("c2f_faster: n must be >= 1");
    entry = ConvParams(c_in, 2 * hidden, 1);
    for (int i = 0; i < n; ++i) blocks.emplace_back(hidden);
    exit_conv = ConvParams(2 * hidden, c_out, 1);
}

Tensor4 C2fFasterBlock::forward(const Tensor4& x) const {
    if (x.c != c_in)
        throw ShapeError("c2f_faster: input has " + std::to_string(x.c) +
                         " channels, block declares c_in=" + std::to_string(c_in));
    Tensor4 t = conv_act(x, entry, true);
    std::vector<Tensor4> parts = split_channels(t, {hidden, hidden});
    Tensor4 y = parts[0];
    for (const FasterBlock& b : blocks) y = b.forward(y);
    const Tensor4& bypass = eq5_literal ? parts[0] : parts[1];
    Tensor4 cat = concat_channels(std::vector<const Tensor4*>{&bypass, &y});
    return conv_act(cat, exit_conv, true);
}

std::vector<ParamRef> C2fFasterBlock::params() {
    std::vector<ParamRef> out{{"entry", &entry}};
    for (int i = 0; i < n; ++i) {
        out.push_back({"blocks." + std::to_string(i) + ".pconv", &blocks[i].pconv});
        out.push_back({"blocks." + std::to_string(i) + ".fuse", &blocks[i].fuse});
    }
    out.push_back({"exit", &exit_conv});
    return out;
}

nlohmann::json C2fFasterBlock::describe() const {
    nlohmann::json j{{"c_in", c_in}, {"c_out", c_out}, {"n", n}};
    if (hidden != c_out / 2) j["hidden"] = hidden;
    if (eq5_literal) j["eq5_literal"] = true;
    return j;
}

// ---------------------------------------------------- BottleneckBlock / C2f

BottleneckBlock::BottleneckBlock(int c_)
    : c(c_), conv1(c_, c_, 3, 1, 1), conv2(c_, c_, 3, 1, 1) {}

Tensor4 BottleneckBlock::forward(const Tensor4& x) const {
    return add(x, conv_act(conv_act(x, conv1, true), conv2, true));
}

C2fBlock::C2fBlock(int c_in_, int c_out_, int n_, int hidden_)
    : c_in(c_in_), c_out(c_out_), hidden(hidden_ < 0 ? c_out_ / 2 : hidden_), n(n_) {
    if (n < 1) throw ConfigError("c2f: n must be >= 1");
    entry = ConvParams(c_in, 2 * hidden, 1);
    for (int i = 0; i < n; ++i) blocks.emplace_back(hidden);
    exit_conv = ConvParams(2 * hidden, c_out, 1);
}

Tensor4 C2fBlock::forward(const Tensor4& x) const {
    if (x.c != c_in)
        throw ShapeError("c2f: input has " + std::to_string(x.c) +
                         " channels, block declares c_in=" + std::to_string(c_in));
    Tensor4 t = conv_act(x, entry, true);
    std::vector<Tensor4> parts = split_channels(t, {hidden, hidden});
    Tensor4 y = parts[0];
    for (const BottleneckBlock& b : blocks) y = b.forward(y);
    Tensor4 cat = concat_channels(std::vector<const Tensor4*>{&parts[1], &y});
    return conv_act(cat, exit_conv, true);
}

std::vector<ParamRef> C2fBlock::params() {
    std::vector<ParamRef> out{{"entry", &entry}};
    for (int i = 0; i < n; ++i) {
        out.push_back({"blocks." + std::to_string(i) + ".conv1", &blocks[i].conv1});
        out.push_back({"blocks." + std::to_string(i) + ".conv2", &blocks[i].conv2});
    }
    out.push_back({"exit", &exit_conv});
    return out;
}

nlohmann::json C2fBlock::describe() const {
    nlohmann::json j{{"c_in", c_in}, {"c_out", c_out}, {"n", n}};
    if (hidden != c_out / 2) j["hidden"] = hidden;
    return j;
}

// ---------------------------------------------------------------- SPPFBlock

SPPFBlock::SPPFBlock(int c_in_, int c_out_, int c_mid_)
    : c_in(c_in_), c_mid(c_mid_ < 0 ? c_in_ / 2 : c_mid_), c_out(c_out_) {
    if (c_mid_ < 0 && c_in % 2 != 0)
        throw ConfigError("sppf: c_in must be even, got " + std::to_string(c_in));
    if (c_mid < 1) throw ConfigError("sppf: mid width must be >= 1");
    reduce = ConvParams(c_in, c_mid, 1);
    fuse = ConvParams(4 * c_mid, c_out, 1);
}

Tensor4 SPPFBlock::forward(const Tensor4& x) const {
    if (x.c != c_in)
        throw ShapeError("sppf: input has " + std::to_string(x.c) +
                         " channels, block declares c_in=" + std::to_string(c_in));
    Tensor4 r = conv_act(x, reduce, true);
    Tensor4 p1 = maxpool2d(r, pool_k, 1, pool_k / 2);
    Tensor4 p2 = maxpool2d(p1, pool_k, 1, pool_k / 2);
    Tensor4 p3 = maxpool2d(p2, pool_k, 1, pool_k / 2);
    Tensor4 cat = concat_channels(std::vector<const Tensor4*>{&r, &p1, &p2, &p3});
    return conv_act(cat, fuse, true);
}

std::vector<ParamRef> SPPFBlock::params() { return {{"reduce", &reduce}, {"fuse", &fuse}}; }

nlohmann::json SPPFBlock::describe() const {
    nlohmann::json j{{"c_in", c_in}, {"c_out", c_out}};
    if (c_mid != c_in / 2) j["c_mid"] = c_mid;
    return j;
}

// -------------------------------------------------------------- GCDetectHead

GCDetectHead::GCDetectHead(const std::array<int, 3>& in_channels, int num_classes_, int w_head_,
                           int groups_)
    : num_classes(num_classes_), w_head(w_head_), groups(groups_) {
    if (num_classes < 1) throw ConfigError("gcdetect: num_classes must be >= 1");
    if (groups < 1 || w_head % groups != 0)
        throw ConfigError("gcdetect: head width " + std::to_string(w_head) +
                          " not divisible by " + std::to_string(groups) + " groups");
    for (int s = 0; s < 3; ++s) {
        Scale& sc = scales[s];
        sc.c_in = in_channels[s];
        sc.align = ConvParams(sc.c_in, w_head, 1);
        sc.gconv1 = ConvParams(w_head, w_head, 3, 1, 1, groups);
        sc.gconv2 = ConvParams(w_head, w_head, 3, 1, 1, groups);
        sc.cls_out = ConvParams(w_head, num_classes, 1);
        sc.box_out = ConvParams(w_head, 4, 1);
    }
}

std::vector<std::pair<Tensor4, Tensor4>> GCDetectHead::forward(
    const std::vector<const Tensor4*>& features) const {
    if (features.size() != 3)
        throw ShapeError("gcdetect: expected 3 feature scales, got " +
                         std::to_string(features.size()));
    std::vector<std::pair<Tensor4, Tensor4>> out;
    out.reserve(3);
    for (int s = 0; s < 3; ++s) {
        const Scale& sc = scales[s];
        const Tensor4& x = *features[s];
        if (x.c != sc.c_in)
            throw ShapeError("gcdetect: scale " + std::to_string(s) + " input has " +
                             std::to_string(x.c) + " channels, head declares " +
                             std::to_string(sc.c_in));
        Tensor4 a = conv_act(x, sc.align, true);
        Tensor4 t = conv_act(a, sc.gconv1, true);
        t = conv_act(t, sc.gconv2, true);  // trunk shared by both outputs
        out.emplace_back(conv2d(t, sc.cls_out), conv2d(t, sc.box_out));
    }
    return out;
}

std::vector<ParamRef> GCDetectHead::params() {
    std::vector<ParamRef> out;
    for (int s = 0; s < 3; ++s) {
        const std::string p = "s" + std::to_string(s) + ".";
        out.push_back({p + "align", &scales[s].align});
        out.push_back({p + "gconv1", &scales[s].gconv1});
        out.push_back({p + "gconv2", &scales[s].gconv2});
        out.push_back({p + "cls", &scales[s].cls_out});
        out.push_back({p + "box", &scales[s].box_out});
    }
    return out;
}

nlohmann::json GCDetectHead::describe() const {
    return {{"in_channels", {scales[0].c_in, scales[1].c_in, scales[2].c_in}},
            {"w_head", w_head},
            {"num_classes", num_classes},
            {"groups", groups}};
}

// ----------------------------------------------------------- PlainDetectHead

PlainDetectHead::PlainDetectHead(const std::array<int, 3>& in_channels, int num_classes_,
                                 int width_)
    : num_classes(num_classes_), width(width_) {
    if (num_classes < 1) throw ConfigError("plain_detect: num_classes must be >= 1");
    if (width < 1) throw ConfigError("plain_detect: width must be >= 1");
    for (int s = 0; s < 3; ++s) {
        Scale& sc = scales[s];
        sc.c_in = in_channels[s];
        sc.cls1 = ConvParams(sc.c_in, width, 3, 1, 1);
        sc.cls2 = ConvParams(width, width, 3, 1, 1);
        sc.cls_out = ConvParams(width, num_classes, 1);
        sc.box1 = ConvParams(sc.c_in, width, 3, 1, 1);
        sc.box2 = ConvParams(width, width, 3, 1, 1);
        sc.box_out = ConvParams(width, 4, 1);
    }
}

std::vector<std::pair<Tensor4, Tensor4>> PlainDetectHead::forward(
    const std::vector<const Tensor4*>& features) const {
    if (features.size() != 3)
        throw ShapeError("plain_detect: expected 3 feature scales, got " +
                         std::to_string(features.size()));
    std::vector<std::pair<Tensor4, Tensor4>> out;
    out.reserve(3);
    for (int s = 0; s < 3; ++s) {
        const Scale& sc = scales[s];
        const Tensor4& x = *features[s];
        if (x.c != sc.c_in)
            throw ShapeError("plain_detect: scale " + std::to_string(s) + " input has " +
                             std::to_string(x.c) + " channels, head declares " +
                             std::to_string(sc.c_in));
        Tensor4 tc = conv_act(conv_act(x, sc.cls1, true), sc.cls2, true);
        Tensor4 tb = conv_act(conv_act(x, sc.box1, true), sc.box2, true);
        out.emplace_back(conv2d(tc, sc.cls_out), conv2d(tb, sc.box_out));
    }
    return out;
}

std::vector<ParamRef> PlainDetectHead::params() {
    std::vector<ParamRef> out;
    for (int s = 0; s < 3; ++s) {
        const std::string p = "s" + std::to_string(s) + ".";
        out.push_back({p + "cls1", &scales[s].cls1});
        out.push_back({p + "cls2", &scales[s].cls2});
        out.push_back({p + "cls", &scales[s].cls_out});
        out.push_back({p + "box1", &scales[s].box1});
        out.push_back({p + "box2", &scales[s].box2});
        out.push_back({p + "box", &scales[s].box_out});
    }
    return out;
}

nlohmann::json PlainDetectHead::describe() const {
    return {{"in_channels", {scales[0].c_in, scales[1].c_in, scales[2].c_in}},
            {"width", width},
            {"num_classes", num_classes}};
}

}  // namespace litedet

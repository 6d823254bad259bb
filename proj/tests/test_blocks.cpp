#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "litedet/blocks.hpp"
#include "litedet/cost.hpp"
#include "litedet/graph.hpp"

using namespace litedet;
using testutil::max_abs_diff;

namespace {

GraphNode node_of(const std::string& id, const std::string& kind, const nlohmann::json& attrs) {
    GraphNode n;
    n.id = id;
    n.kind = kind;
    n.attrs = attrs;
    return n;
}

long long direct_param_count(std::vector<ParamRef> refs) {
    long long total = 0;
    for (const ParamRef& r : refs) total += r.conv->param_count();
    return total;
}

}  // namespace

TEST_CASE("ghost conv shape and parameter accounting") {
    Rng rng(3);
    GhostConvBlock b(4, 8, 1);
    for (ParamRef& r : b.params()) testutil::randomize(*r.conv, rng);

    Tensor4 x = testutil::random_tensor(rng, 1, 4, 8, 8);
    Tensor4 y = b.forward(x);
    CHECK(y.n == 1);
    CHECK(y.c == 8);
    CHECK(y.h == 8);
    CHECK(y.w == 8);

    // primary 4*4+4 = 20, cheap 4*25+4 = 104
    CHECK(b.primary.param_count() == 20);
    CHECK(b.cheap.param_count() == 104);
    CHECK(direct_param_count(b.params()) == 124);

    GhostConvBlock zeros(4, 8, 1);
    Tensor4 z = zeros.forward(x);
    for (float v : z.data) CHECK(v == 0.0f);

    CHECK_THROWS_AS(GhostConvBlock(4, 7, 1), ConfigError);
    CHECK_THROWS_AS(GhostConvBlock(4, 8, 2), ConfigError);
}

TEST_CASE("ghost hgblock reduces to the skip path with zero fuse weights") {
    Rng rng(5);
    GhostHGBlock b(16, 1);
    for (ParamRef& r : b.params()) testutil::randomize(*r.conv, rng);
    std::fill(b.fuse.weight.begin(), b.fuse.weight.end(), 0.0f);
    std::fill(b.fuse.bias.begin(), b.fuse.bias.end(), 0.0f);

    Tensor4 x = testutil::random_tensor(rng, 1, 16, 8, 8, 0.1f, 1.0f);
    Tensor4 y = b.forward(x);
    CHECK(y.data == x.data);
}

TEST_CASE("ghost hgblock keeps width and wires g1,g2,g3 into the fuse") {
    Rng rng(6);
    GhostHGBlock b(16, 1);
    for (ParamRef& r : b.params()) testutil::randomize(*r.conv, rng);

    Tensor4 x = testutil::random_tensor(rng, 1, 16, 8, 8);
    Tensor4 y = b.forward(x);
    CHECK(y.c == 16);
    CHECK(y.h == 8);

    // identity ghost stages expose the wiring: fuse(concat(x,x,x)) + x
    Tensor4 via_stub = b.forward_with(x, [](const Tensor4& t, int) { return t; });
    Tensor4 cat = concat_channels({x, x, x});
    Tensor4 manual = add(silu(conv2d(cat, b.fuse)), x);
    CHECK(via_stub.data == manual.data);
}

TEST_CASE("hgstem stride-4 geometry") {
    Rng rng(8);
    HGStemBlock b(3, 8, 32);
    for (ParamRef& r : b.params()) testutil::randomize(*r.conv, rng);

    Tensor4 x = testutil::random_tensor(rng, 1, 3, 64, 64);
    Tensor4 y = b.forward(x);
    CHECK(y.c == 32);
    CHECK(y.h == 16);
    CHECK(y.w == 16);

    HGStemBlock zeros(3, 8, 32);
    Tensor4 z = zeros.forward(x);
    for (float v : z.data) CHECK(v == 0.0f);

    Tensor4 odd(1, 3, 66, 64);
    CHECK_THROWS_AS(b.forward(odd), ShapeError);
}

TEST_CASE("depthwise 5x5 identity kernel preserves constants") {
    HGStemBlock b(3, 8, 32);
    ConvParams dw = b.stage2b;  // depthwise 5x5 pad 2, zero weights
    for (int ch = 0; ch < 8; ++ch) dw.weight[std::size_t(ch) * 25 + 12] = 1.0f;  // center tap
    Tensor4 c = Tensor4::filled(1, 8, 6, 6, 0.75f);
    Tensor4 y = conv2d(c, dw);
    CHECK(y.data == c.data);
}

TEST_CASE("faster block passes non-partial channels through bit-exactly") {
    Rng rng(10);
    FasterBlock b(8);
    CHECK(b.c_p == 2);
    for (ParamRef& r : b.params()) testutil::randomize(*r.conv, rng);

    Tensor4 x = testutil::random_tensor(rng, 1, 8, 4, 4);
    Tensor4 part = b.pconv_partial(x);
    for (int ic = b.c_p; ic < 8; ++ic)
        for (int iy = 0; iy < 4; ++iy)
            for (int ix = 0; ix < 4; ++ix)
                CHECK(part.at(0, ic, iy, ix) == x.at(0, ic, iy, ix));

    FasterBlock zeros(8);
    Tensor4 y = zeros.forward(x);
    CHECK(y.data == x.data);

    CHECK_THROWS_AS(FasterBlock(3), ConfigError);
}

TEST_CASE("faster block partial conv costs 1/16 of the dense equivalent") {
    GraphNode fb = node_of("fb", "faster_block", {{"c", 64}});
    LayerCost fc = layer_cost(fb, {1, 64, 16, 16});
    long long pconv_macs = 0;
    for (const SubCost& sc : fc.breakdown)
        if (sc.name == "pconv") pconv_macs = sc.macs;

    GraphNode dense = node_of("d", "conv", {{"c_in", 64}, {"c_out", 64}, {"k", 3}});
    const LayerCost dc = layer_cost(dense, {1, 64, 16, 16});
    CHECK(pconv_macs > 0);
    CHECK(dc.macs == 16 * pconv_macs);
}

TEST_CASE("c2f-faster symbolic reduction and shapes") {
    Rng rng(12);
    C2fFasterBlock b(32, 32, 1);
    for (ParamRef& r : b.params()) testutil::randomize(*r.conv, rng);
    // zero the faster block so Y_1 == split1
    for (ParamRef& r : b.blocks[0].params()) {
        std::fill(r.conv->weight.begin(), r.conv->weight.end(), 0.0f);
        std::fill(r.conv->bias.begin(), r.conv->bias.end(), 0.0f);
    }

    Tensor4 x = testutil::random_tensor(rng, 1, 32, 8, 8);
    Tensor4 y = b.forward(x);
    CHECK(y.c == 32);
    CHECK(y.h == 8);

    Tensor4 t = silu(conv2d(x, b.entry));
    std::vector<Tensor4> parts = split_channels(t, {16, 16});
    Tensor4 manual = silu(conv2d(concat_channels({parts[1], parts[0]}), b.exit_conv));
    CHECK(y.data == manual.data);

    C2fFasterBlock zeros(32, 32, 2);
    for (ParamRef& r : zeros.params()) testutil::randomize(*r.conv, rng);
    std::fill(zeros.exit_conv.weight.begin(), zeros.exit_conv.weight.end(), 0.0f);
    std::fill(zeros.exit_conv.bias.begin(), zeros.exit_conv.bias.end(), 0.0f);
    for (float v : zeros.forward(x).data) CHECK(v == 0.0f);
}

TEST_CASE("c2f-faster literal concat variant keeps the transformed half twice") {
    Rng rng(14);
    C2fFasterBlock b(16, 16, 1, -1, true);
    for (ParamRef& r : b.params()) testutil::randomize(*r.conv, rng);
    for (ParamRef& r : b.blocks[0].params()) {
        std::fill(r.conv->weight.begin(), r.conv->weight.end(), 0.0f);
        std::fill(r.conv->bias.begin(), r.conv->bias.end(), 0.0f);
    }
    Tensor4 x = testutil::random_tensor(rng, 1, 16, 4, 4);
    Tensor4 t = silu(conv2d(x, b.entry));
    std::vector<Tensor4> parts = split_channels(t, {8, 8});
    Tensor4 manual = silu(conv2d(concat_channels({parts[0], parts[0]}), b.exit_conv));
    CHECK(b.forward(x).data == manual.data);
}

TEST_CASE("gcdetect head shapes and trunk sharing") {
    Rng rng(16);
    GCDetectHead head({64, 128, 256}, 6, 64);
    for (ParamRef& r : head.params()) testutil::randomize(*r.conv, rng, 0.2f);

    Tensor4 p3 = testutil::random_tensor(rng, 1, 64, 16, 16);
    Tensor4 p4 = testutil::random_tensor(rng, 1, 128, 8, 8);
    Tensor4 p5 = testutil::random_tensor(rng, 1, 256, 4, 4);
    auto out = head.forward({&p3, &p4, &p5});
    REQUIRE(out.size() == 3);
    CHECK(out[0].first.c == 6);
    CHECK(out[0].second.c == 4);
    CHECK(out[0].first.h == 16);
    CHECK(out[2].first.h == 4);

    // mutating classification weights never changes the box output
    GCDetectHead mutated = head;
    for (auto& sc : mutated.scales)
        for (float& v : sc.cls_out.weight) v += 1.5f;
    auto out2 = mutated.forward({&p3, &p4, &p5});
    for (int s = 0; s < 3; ++s) {
        CHECK(out2[std::size_t(s)].second.data == out[std::size_t(s)].second.data);
        CHECK(out2[std::size_t(s)].first.data != out[std::size_t(s)].first.data);
    }

    CHECK_THROWS_AS(GCDetectHead({64, 128, 256}, 6, 60), ConfigError);  // 60 % 16 != 0
}

TEST_CASE("gcdetect with one group equals a dense-conv oracle") {
    Rng rng(18);
    GCDetectHead head({16, 24, 32}, 3, 32, /*groups=*/1);
    for (ParamRef& r : head.params()) testutil::randomize(*r.conv, rng, 0.3f);

    Tensor4 p3 = testutil::random_tensor(rng, 1, 16, 8, 8);
    Tensor4 p4 = testutil::random_tensor(rng, 1, 24, 4, 4);
    Tensor4 p5 = testutil::random_tensor(rng, 1, 32, 2, 2);
    auto out = head.forward({&p3, &p4, &p5});

    const Tensor4* feats[3] = {&p3, &p4, &p5};
    for (int s = 0; s < 3; ++s) {
        const auto& sc = head.scales[std::size_t(s)];
        Tensor4 t = silu(conv2d(*feats[s], sc.align));
        t = silu(conv2d(t, sc.gconv1));
        t = silu(conv2d(t, sc.gconv2));
        CHECK(max_abs_diff(conv2d(t, sc.cls_out), out[std::size_t(s)].first) < 1e-6f);
        CHECK(max_abs_diff(conv2d(t, sc.box_out), out[std::size_t(s)].second) < 1e-6f);
    }
}

TEST_CASE("grouped 3x3 uses 16x fewer weights than dense") {
    ConvParams grouped(64, 64, 3, 1, 1, 16);
    ConvParams dense(64, 64, 3, 1, 1, 1);
    CHECK(grouped.weight_count() == 2304);
    CHECK(dense.weight_count() == 36864);
    CHECK(dense.weight_count() == 16 * grouped.weight_count());
}

TEST_CASE("sppf maps constant inputs to constant outputs") {
    Rng rng(20);
    SPPFBlock b(8, 12);
    for (ParamRef& r : b.params()) testutil::randomize(*r.conv, rng);
    Tensor4 x = Tensor4::filled(1, 8, 8, 8, 0.4f);
    Tensor4 y = b.forward(x);
    CHECK(y.c == 12);
    for (int ch = 0; ch < y.c; ++ch) {
        const float v0 = y.at(0, ch, 0, 0);
        for (int iy = 0; iy < y.h; ++iy)
            for (int ix = 0; ix < y.w; ++ix) CHECK(y.at(0, ch, iy, ix) == v0);
    }
}

TEST_CASE("baseline c2f with zero bottlenecks reduces to exit of the splits") {
    Rng rng(22);
    C2fBlock b(16, 16, 1);
    for (ParamRef& r : b.params()) testutil::randomize(*r.conv, rng);
    std::fill(b.blocks[0].conv1.weight.begin(), b.blocks[0].conv1.weight.end(), 0.0f);
    std::fill(b.blocks[0].conv1.bias.begin(), b.blocks[0].conv1.bias.end(), 0.0f);
    std::fill(b.blocks[0].conv2.weight.begin(), b.blocks[0].conv2.weight.end(), 0.0f);
    std::fill(b.blocks[0].conv2.bias.begin(), b.blocks[0].conv2.bias.end(), 0.0f);

    Tensor4 x = testutil::random_tensor(rng, 1, 16, 4, 4);
    Tensor4 t = silu(conv2d(x, b.entry));
    std::vector<Tensor4> parts = split_channels(t, {8, 8});
    Tensor4 manual = silu(conv2d(concat_channels({parts[1], parts[0]}), b.exit_conv));
    CHECK(b.forward(x).data == manual.data);
}

TEST_CASE("plain detect head outweighs gcdetect at equal widths") {
    GraphNode plain = node_of("p", "plain_detect",
                              {{"in_channels", {64, 128, 256}}, {"width", 64}, {"num_classes", 6}});
    GraphNode gc = node_of("g", "gcdetect",
                           {{"in_channels", {64, 128, 256}}, {"w_head", 64}, {"num_classes", 6}});
    std::vector<std::array<int, 4>> shapes = {
        {1, 64, 16, 16}, {1, 128, 8, 8}, {1, 256, 4, 4}};
    CHECK(layer_cost(plain, shapes).params > layer_cost(gc, shapes).params);
}

TEST_CASE("block describe fragments round-trip through graph nodes") {
    GhostHGBlock hg(24, 1);
    GraphNode n = node_of("x", "ghost_hgblock", hg.describe());
    const LayerCost lc = layer_cost(n, {1, 24, 8, 8});
    CHECK(lc.params == direct_param_count(hg.params()));

    C2fFasterBlock cf(48, 32, 2);
    GraphNode m = node_of("y", "c2f_faster", cf.describe());
    CHECK(layer_cost(m, {1, 48, 8, 8}).params == direct_param_count(cf.params()));
}

TEST_CASE("blocks preserve batch and declared channel contracts") {
    Rng rng(24);
    Tensor4 x = testutil::random_tensor(rng, 3, 16, 8, 8);

    GhostConvBlock g(16, 16, 1);
    for (ParamRef& r : g.params()) testutil::randomize(*r.conv, rng);
    CHECK(g.forward(x).n == 3);
    CHECK(g.forward(x).c == 16);

    C2fBlock c(16, 24, 1);
    for (ParamRef& r : c.params()) testutil::randomize(*r.conv, rng);
    CHECK(c.forward(x).c == 24);

    CHECK_THROWS_AS(g.forward(testutil::random_tensor(rng, 1, 8, 4, 4)), ShapeError);
}

#include "doctest.h"
#include "helpers.hpp"
#include "litedet/cost.hpp"
#include "litedet/graph.hpp"

using namespace litedet;
using testutil::fixture;

namespace {

GraphNode conv_node(int c_in, int c_out, int k, int stride = 1, int pad = -1, int groups = 1) {
    GraphNode n;
    n.id = "c";
    n.kind = "conv";
    n.attrs = {{"c_in", c_in}, {"c_out", c_out}, {"k", k}, {"stride", stride}};
    if (pad >= 0) n.attrs["pad"] = pad;
    if (groups != 1) n.attrs["groups"] = groups;
    return n;
}

}  // namespace

TEST_CASE("conv layer cost: exact params and per-cell MACs") {
    const LayerCost lc = layer_cost(conv_node(16, 32, 3), {1, 16, 64, 64});
    CHECK(lc.params == 4640);  // 16*32*9 + 32
    CHECK(lc.bias_params == 32);
    CHECK(lc.macs == 4608LL * 64 * 64);
    CHECK(lc.macs == 18874368);
    REQUIRE(lc.out_shapes.size() == 1);
    CHECK(lc.out_shapes[0] == std::array<int, 4>{1, 32, 64, 64});
}

TEST_CASE("grouped conv reduces weights and MACs by exactly G") {
    const LayerCost grouped = layer_cost(conv_node(64, 64, 3, 1, -1, 16), {1, 64, 32, 32});
    const LayerCost dense = layer_cost(conv_node(64, 64, 3), {1, 64, 32, 32});
    CHECK(grouped.weight_params() == 2304);
    CHECK(dense.weight_params() == 36864);
    CHECK(dense.weight_params() == 16 * grouped.weight_params());
    CHECK(dense.macs == 16 * grouped.macs);
}

TEST_CASE("MACs scale linearly with batch and spatial area for stride-1 convs") {
    const LayerCost base = layer_cost(conv_node(8, 8, 3), {1, 8, 16, 16});
    const LayerCost batch4 = layer_cost(conv_node(8, 8, 3), {4, 8, 16, 16});
    const LayerCost area4 = layer_cost(conv_node(8, 8, 3), {1, 8, 32, 32});
    CHECK(batch4.macs == 4 * base.macs);
    CHECK(area4.macs == 4 * base.macs);
    CHECK(batch4.params == base.params);
}

TEST_CASE("empty graph costs nothing") {
    nlohmann::json doc = {{"meta", {{"input_shape", {1, 3, 8, 8}}, {"num_classes", 1}}},
                          {"nodes", nlohmann::json::array()},
                          {"outputs", nlohmann::json::array()}};
    ModelGraph g = ModelGraph::from_json(doc);
    const CostReport r = graph_cost(g);
    CHECK(r.total_params == 0);
    CHECK(r.total_macs == 0);
    CHECK(r.layers.empty());
}

TEST_CASE("graph totals equal the sum of layer entries") {
    ModelGraph g = ModelGraph::load(fixture("improved-lite.json"));
    const CostReport r = graph_cost(g);
    long long p = 0, m = 0;
    for (const LayerCost& lc : r.layers) {
        p += lc.params;
        m += lc.macs;
    }
    CHECK(p == r.total_params);
    CHECK(m == r.total_macs);
    CHECK(r.gflops() == doctest::Approx(2.0 * double(m) / 1e9));
}

TEST_CASE("analyzer params equal direct enumeration of the weight store") {
    for (const std::string& name : {"improved-lite.json", "baseline-lite.json"}) {
        ModelGraph g = ModelGraph::load(fixture(name));
        WeightStore w = init_weights(g, 0);
        long long stored = 0;
        for (const auto& [key, entry] : w.entries) stored += (long long)entry.length;
        CHECK(graph_cost(g).total_params == stored);
    }
}

TEST_CASE("block swap direction: improved fixture is strictly cheaper") {
    const CostReport improved = graph_cost(ModelGraph::load(fixture("improved-lite.json")));
    const CostReport baseline = graph_cost(ModelGraph::load(fixture("baseline-lite.json")));
    CHECK(improved.total_params < baseline.total_params);
    CHECK(improved.total_macs < baseline.total_macs);

    auto neck_params = [](const CostReport& r) {
        long long total = 0;
        for (const LayerCost& lc : r.layers)
            if (lc.node.rfind("neck.", 0) == 0) total += lc.params;
        return total;
    };
    const long long nb = neck_params(baseline), ni = neck_params(improved);
    CHECK(ni < nb);
    CHECK(double(nb - ni) / double(nb) >= 0.10);
}

TEST_CASE("compare_reports deltas and error paths") {
    ModelGraph g = ModelGraph::load(fixture("improved-lite.json"));
    const CostReport a = graph_cost(g);

    const CompareReport same = compare_reports(a, a);
    CHECK(same.total_params_a == same.total_params_b);
    for (const CompareRow& row : same.rows) {
        CHECK(row.dparams() == 0);
        CHECK(row.dmacs() == 0);
    }

    CostReport other = a;
    other.input_shape = {1, 3, 128, 128};
    CHECK_THROWS_AS(compare_reports(a, other), ValidationError);
}

TEST_CASE("cost report JSON round-trips byte-stably") {
    ModelGraph g = ModelGraph::load(fixture("improved-lite.json"));
    const CostReport r = graph_cost(g);
    const std::string once = r.to_json().dump();
    const CostReport back = CostReport::from_json(nlohmann::json::parse(once));
    CHECK(back.to_json().dump() == once);
    CHECK(back.total_params == r.total_params);
    CHECK(back.total_macs == r.total_macs);
}

TEST_CASE("pooling, concat, add and upsample are free") {
    GraphNode mp;
    mp.id = "m";
    mp.kind = "maxpool";
    mp.attrs = {{"k", 5}, {"stride", 1}, {"pad", 2}};
    const LayerCost lc = layer_cost(mp, {1, 8, 16, 16});
    CHECK(lc.params == 0);
    CHECK(lc.macs == 0);
}

TEST_CASE("cost propagation failure names the node") {
    nlohmann::json doc = {{"meta", {{"input_shape", {1, 3, 8, 8}}, {"num_classes", 1}}},
                          {"nodes",
                           {{{"id", "c1"},
                             {"kind", "conv"},
                             {"attrs", {{"c_in", 3}, {"c_out", 4}, {"k", 3}}},
                             {"inputs", nlohmann::json::array()}}}},
                          {"outputs", {"c1"}}};
    ModelGraph g = ModelGraph::from_json(doc);
    CHECK_THROWS_WITH_AS(graph_cost(g, {1, 5, 8, 8}), doctest::Contains("c1"), ValidationError);
}

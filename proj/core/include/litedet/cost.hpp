#pragma once

#include <array>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "litedet/graph.hpp"

namespace litedet {

struct SubCost {
    std::string name;  // constituent conv, e.g. "blocks.0.pconv"
    long long params = 0;
    long long bias_params = 0;
    long long macs = 0;
};

/// Exact per-node accounting at a concrete input shape. `params` includes
/// biases; `macs` counts multiply-accumulates of the convolutions only
/// (pooling, activations, concat and add are free by convention).
struct LayerCost {
    std::string node;
    std::string kind;
    long long params = 0;
    long long bias_params = 0;
    long long macs = 0;
    std::vector<std::array<int, 4>> out_shapes;  // one per output port
    std::vector<SubCost> breakdown;

    long long weight_params() const { return params - bias_params; }
};

struct CostReport {
    std::array<int, 4> input_shape{};
    std::vector<LayerCost> layers;
    long long total_params = 0;
    long long total_macs = 0;

    // FLOPs = 2 * MACs, elementwise ops excluded.
    double gflops() const { return 2.0 * double(total_macs) / 1e9; }

    nlohmann::json to_json() const;
    static CostReport from_json(const nlohmann::json& doc);
    std::string text_table() const;
};

LayerCost layer_cost(const GraphNode& node, const std::vector<std::array<int, 4>>& input_shapes);
LayerCost layer_cost(const GraphNode& node, const std::array<int, 4>& input_shape);

CostReport graph_cost(const ModelGraph& g, const std::array<int, 4>& input_shape);
CostReport graph_cost(const ModelGraph& g);  // at meta.input_shape

struct CompareRow {
    std::string node;
    long long params_a = 0, params_b = 0;
    long long macs_a = 0, macs_b = 0;
    bool in_a = false, in_b = false;

    long long dparams() const { return params_b - params_a; }
    long long dmacs() const { return macs_b - macs_a; }
};

struct CompareReport {
    std::array<int, 4> input_shape{};
    std::vector<CompareRow> rows;  // report-a layer order, then b-only layers
    long long total_params_a = 0, total_params_b = 0;
    long long total_macs_a = 0, total_macs_b = 0;

    nlohmann::json to_json() const;
    std::string text_table() const;
};

// Requires both reports computed at the same input shape.
CompareReport compare_reports(const CostReport& a, const CostReport& b);

}  // namespace litedet

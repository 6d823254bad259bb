#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "litedet/tensor.hpp"

namespace litedet {

struct GraphNode {
    std::string id;
    std::string kind;
    nlohmann::json attrs = nlohmann::json::object();
    // Producer refs: "nodeId", "nodeId:port", or "@input" for the model input.
    std::vector<std::string> inputs;
};

struct GraphMeta {
    std::vector<int> input_shape;  // n, c, h, w; batch is advisory
    int num_classes = 1;
};

/// Declarative block DAG. Immutable after load; validation computes the
/// topological order and checks every channel contract.
struct ModelGraph {
    GraphMeta meta;
    std::vector<GraphNode> nodes;
    std::vector<std::string> outputs;  // refs into node outputs

    std::vector<int> topo_order;  // indices into nodes, producers first

    static ModelGraph from_json(const nlohmann::json& doc);
    static ModelGraph load(const std::string& path);
    nlohmann::json to_json() const;
    void save(const std::string& path) const;

    void validate();

    bool has_node(const std::string& id) const;
    const GraphNode& node(const std::string& id) const;
    int node_index(const std::string& id) const;

    // CRC-32 of the canonical JSON dump; used to match plans to graphs.
    std::string digest() const;
};

struct WeightEntry {
    std::vector<int> shape;
    std::size_t offset = 0;  // in floats
    std::size_t length = 0;
};

/// Keyed flat container of learned parameters. Entries are addressed as
/// "nodeId.paramName.weight" / ".bias".
struct WeightStore {
    std::map<std::string, WeightEntry> entries;
    std::vector<float> blob;

    bool has(const std::string& name) const { return entries.count(name) != 0; }
    float* add(const std::string& name, const std::vector<int>& shape);
    const float* view(const std::string& name, std::size_t expected_len) const;
    std::uint32_t checksum() const;
};

// Every weight drawn uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)] from a
// single SplitMix64 stream, visiting nodes in topological order and params
// in declaration order; biases are zero. Bit-reproducible across platforms.
WeightStore init_weights(const ModelGraph& g, std::uint64_t seed);

// File format: magic "LDW0", u32 manifest length, JSON manifest, raw
// little-endian float32 blob, u32 CRC-32 of the blob bytes.
void save_weights(const WeightStore& w, const std::string& path);
WeightStore load_weights(const std::string& path);

// Evaluates every node exactly once in topological order. The result maps
// each single-output node id (and each "id:port" of multi-output nodes) to
// its tensor.
std::map<std::string, Tensor4> forward_graph(const ModelGraph& g, const WeightStore& w,
                                             const Tensor4& input);

}  // namespace litedet

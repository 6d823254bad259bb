#pragma once

// Internal per-kind registry: one place that knows how to construct a node's
// block, derive its output shapes, enumerate its parameters and convolutions,
// and run it. Shared by the graph executor, the cost analyzer and the pruner.

#include <array>
#include <string>
#include <variant>
#include <vector>

#include "litedet/blocks.hpp"
#include "litedet/graph.hpp"

namespace litedet::kinds {

struct MaxPoolOp {
    int k = 2, stride = 2, pad = 0;
};
struct UpsampleOp {};
struct ConcatOp {};
struct AddOp {};

using BlockVar = std::variant<ConvBNAct, GhostConvBlock, GhostHGBlock, HGStemBlock, FasterBlock,
                              C2fFasterBlock, C2fBlock, SPPFBlock, GCDetectHead, PlainDetectHead,
                              MaxPoolOp, UpsampleOp, ConcatOp, AddOp>;

using Shape = std::array<int, 4>;  // n, c, h, w

bool known_kind(const std::string& kind);

// Throws ConfigError on unknown kind or bad attrs; messages carry the node id.
BlockVar make_block(const GraphNode& node);

// Output port names; single-output kinds return {""}.
std::vector<std::string> port_names(const BlockVar& b);

// Shape algebra without running tensors. Throws ShapeError on violations.
std::vector<Shape> output_shapes(const BlockVar& b, const std::vector<Shape>& in);

std::vector<ParamRef> block_params(BlockVar& b);

std::vector<Tensor4> block_forward(const BlockVar& b, const std::vector<const Tensor4*>& in);

// Visits every convolution with its operating output resolution, for exact
// parameter/MAC accounting.
struct ConvVisit {
    std::string name;
    const ConvParams* conv;
    int out_h, out_w;
};
std::vector<ConvVisit> conv_visits(const BlockVar& b, const std::vector<Shape>& in);

}  // namespace litedet::kinds

#pragma once

#include <array>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "litedet/tensor.hpp"

namespace litedet {

// Named handle on a block's convolution parameters, in declaration order.
// Weight stores key entries as "<node>.<name>.weight" / "<node>.<name>.bias".
struct ParamRef {
    std::string name;
    ConvParams* conv;
};

/// k x k convolution with folded batch-norm and optional SiLU.
struct ConvBNAct {
    int c_in, c_out, k, stride, pad;
    bool act;
    ConvParams conv;

    // pad < 0 selects same-padding k/2.
    ConvBNAct(int c_in, int c_out, int k, int stride = 1, int pad = -1, bool act = true);

    Tensor4 forward(const Tensor4& x) const;
    std::vector<ParamRef> params();
    nlohmann::json describe() const;
};

/// Half the output channels from a dense k x k conv, the other half from a
/// cheap depthwise 5x5 transform of the first half, concatenated.
struct GhostConvBlock {
    int c_in, c_out, k;
    bool act;
    ConvParams primary;  // c_in -> c_out/2
    ConvParams cheap;    // depthwise 5x5 on c_out/2

    GhostConvBlock(int c_in, int c_out, int k = 1, bool act = true);

    Tensor4 forward(const Tensor4& x) const;
    std::vector<ParamRef> params();
    nlohmann::json describe() const;
};

/// Three chained GhostConvs, their outputs concatenated, fused by a 1x1 conv
/// and added back to the block input.
struct GhostHGBlock {
    int c;  // width (input == output == ghost chain)
    int k;
    GhostConvBlock ghost1, ghost2, ghost3;
    ConvParams fuse;  // 3c -> c

    explicit GhostHGBlock(int c, int k = 1);

    Tensor4 forward(const Tensor4& x) const;
    // Wiring with the ghost chain replaced by an arbitrary stage function;
    // lets tests substitute identity stages.
    Tensor4 forward_with(const Tensor4& x,
                         const std::function<Tensor4(const Tensor4&, int)>& stage) const;
    std::vector<ParamRef> params();
    nlohmann::json describe() const;
};

/// Stride-4 stem: 2x2/s2 conv, pointwise + depthwise-5x5 pair, 2x2/s2 max
/// pool, then a 1x1 projection.
struct HGStemBlock {
    int c_in, c_mid, c_out;
    ConvParams stage1;   // 2x2 stride 2
    ConvParams stage2a;  // 1x1
    ConvParams stage2b;  // depthwise 5x5 pad 2
    ConvParams stage3;   // 1x1

    HGStemBlock(int c_in, int c_mid, int c_out);

    Tensor4 forward(const Tensor4& x) const;
    std::vector<ParamRef> params();
    nlohmann::json describe() const;
};

/// Residual block that convolves only the first c_p channels (3x3) and
/// passes the rest through untouched before a 1x1 fuse.
struct FasterBlock {
    int c;
    int c_p;  // partial width; floor(c/4) unless pruned
    ConvParams pconv;  // c_p -> c_p, 3x3 pad 1
    ConvParams fuse;   // c -> c, 1x1

    explicit FasterBlock(int c, int c_p = -1);

    // Convolved first slice (with activation) plus bit-exact pass-through of
    // channels [c_p, c).
    Tensor4 pconv_partial(const Tensor4& x) const;
    Tensor4 forward(const Tensor4& x) const;
    std::vector<ParamRef> params();
    nlohmann::json describe() const;
};

/// Split-transform-concat block whose transform chain is n FasterBlocks.
struct C2fFasterBlock {
    int c_in, c_out, hidden, n;
    bool eq5_literal;  // concatenate the transformed half with itself instead
                       // of with the bypass half
    ConvParams entry;  // c_in -> 2*hidden, 1x1
    std::vector<FasterBlock> blocks;
    ConvParams exit_conv;  // 2*hidden -> c_out, 1x1

    C2fFasterBlock(int c_in, int c_out, int n, int hidden = -1, bool eq5_literal = false);

    Tensor4 forward(const Tensor4& x) const;
    std::vector<ParamRef> params();
    nlohmann::json describe() const;
};

/// Standard bottleneck: two 3x3 convs with a residual add.
struct BottleneckBlock {
    int c;
    ConvParams conv1, conv2;

    explicit BottleneckBlock(int c);

    Tensor4 forward(const Tensor4& x) const;
};

/// Baseline split-transform-concat block with BottleneckBlock transforms;
/// channel math mirrors C2fFasterBlock.
struct C2fBlock {
    int c_in, c_out, hidden, n;
    ConvParams entry;
    std::vector<BottleneckBlock> blocks;
    ConvParams exit_conv;

    C2fBlock(int c_in, int c_out, int n, int hidden = -1);

    Tensor4 forward(const Tensor4& x) const;
    std::vector<ParamRef> params();
    nlohmann::json describe() const;
};

/// 1x1 reduce, three chained 5x5/s1 max pools, concat of all four stages,
/// 1x1 fuse.
struct SPPFBlock {
    int c_in, c_mid, c_out;
    int pool_k = 5;
    ConvParams reduce;  // c_in -> c_mid
    ConvParams fuse;    // 4*c_mid -> c_out

    SPPFBlock(int c_in, int c_out, int c_mid = -1);

    Tensor4 forward(const Tensor4& x) const;
    std::vector<ParamRef> params();
    nlohmann::json describe() const;
};

/// Detection head with a shared grouped-conv trunk per scale: a 1x1 align
/// conv, two 3x3 group convs (16 groups), then separate 1x1 classification
/// and box projections off the same trunk tensor.
struct GCDetectHead {
    struct Scale {
        int c_in;
        ConvParams align;   // c_in -> w_head, 1x1
        ConvParams gconv1;  // w_head -> w_head, 3x3, groups
        ConvParams gconv2;
        ConvParams cls_out;  // w_head -> num_classes, 1x1, no activation
        ConvParams box_out;  // w_head -> 4, 1x1, no activation
    };

    int num_classes, w_head, groups;
    std::array<Scale, 3> scales;

    GCDetectHead(const std::array<int, 3>& in_channels, int num_classes, int w_head = 64,
                 int groups = 16);

    // Per scale: (classification logits, box offsets). The grouped trunk is
    // evaluated once and feeds both outputs.
    std::vector<std::pair<Tensor4, Tensor4>> forward(
        const std::vector<const Tensor4*>& features) const;
    std::vector<ParamRef> params();
    nlohmann::json describe() const;
};

/// Baseline head: two dense 3x3 convs per branch with separate
/// classification and box trunks.
struct PlainDetectHead {
    struct Scale {
        int c_in;
        ConvParams cls1, cls2, cls_out;
        ConvParams box1, box2, box_out;
    };

    int num_classes, width;
    std::array<Scale, 3> scales;

    PlainDetectHead(const std::array<int, 3>& in_channels, int num_classes, int width);

    std::vector<std::pair<Tensor4, Tensor4>> forward(
        const std::vector<const Tensor4*>& features) const;
    std::vector<ParamRef> params();
    nlohmann::json describe() const;
};

}  // namespace litedet

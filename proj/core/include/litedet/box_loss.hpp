#pragma once

#include <array>

#include "litedet/error.hpp"

namespace litedet {

/// Center/width/height box in pixels. Width and height must be positive.
struct BoxCWH {
    double cx = 0, cy = 0, w = 1, h = 1;
};

/// Edge-coordinate box (left, top, right, bottom).
struct CornerBox {
    double l = 0, t = 0, r = 0, b = 0;
};

/// Image dimensions plus the auxiliary-box scale factor.
struct LossContext {
    double img_w = 1, img_h = 1;
    double ratio = 1.0;  // auxiliary-box scale, valid range [0.5, 1.5]
    // When set, the corner-distance penalties are taken between the unscaled
    // boxes instead of the ratio-scaled ones.
    bool distances_on_original = false;

    void validate() const;
};

void validate_box(const BoxCWH& b, const char* what);

// Auxiliary box scaled about the center by `ratio`.
CornerBox inner_box(const BoxCWH& box, double ratio);

struct MpdDistances {
    double d1_sq = 0;  // squared top-left corner offset
    double d2_sq = 0;  // squared bottom-right corner offset
};
MpdDistances mpd_distances(const CornerBox& a, const CornerBox& g);

struct Overlap {
    double inter = 0;
    double uni = 0;
};
// Clamped overlap and union of the ratio-scaled boxes.
Overlap inner_overlap(const BoxCWH& pred, const BoxCWH& gt, double ratio);

// Scaled-box IoU term minus the two normalized corner-distance penalties.
double inner_mpdiou(const BoxCWH& pred, const BoxCWH& gt, const LossContext& ctx);

struct LossGrad {
    double loss = 0;
    std::array<double, 4> grad{};  // d(loss)/d(cx, cy, w, h) of the prediction
};
// loss = 1 - inner_mpdiou. At min/max corner ties the two one-sided slopes
// are averaged (so identical boxes get zero center gradient); at the
// zero-overlap clamp the right-hand slope is used.
LossGrad inner_mpdiou_loss_grad(const BoxCWH& pred, const BoxCWH& gt, const LossContext& ctx);

double iou(const BoxCWH& a, const BoxCWH& b);

// Standard complete-IoU: iou - rho^2/c^2 - alpha*v.
double ciou(const BoxCWH& pred, const BoxCWH& gt, const LossContext& ctx);

}  // namespace litedet

#include "litedet/box_loss.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace litedet {

namespace {

constexpr double kPi = 3.14159265358979323846;

CornerBox corners(const BoxCWH& b) {
    return CornerBox{b.cx - b.w / 2, b.cy - b.h / 2, b.cx + b.w / 2, b.cy + b.h / 2};
}

double clamped_overlap(const CornerBox& a, const CornerBox& g) {
    const double iw = std::min(g.r, a.r) - std::max(g.l, a.l);
    const double ih = std::min(g.b, a.b) - std::max(g.t, a.t);
    return std::max(0.0, iw) * std::max(0.0, ih);
}

}  // namespace

void LossContext::validate() const {
    if (!(img_w > 0) || !(img_h > 0))
        throw DomainError("LossContext: image dims must be positive, got " +
                          std::to_string(img_w) + "x" + std::to_string(img_h));
    if (!(ratio >= 0.5 && ratio <= 1.5))
        throw DomainError("LossContext: ratio " + std::to_string(ratio) +
                          " outside [0.5, 1.5]");
}

void validate_box(const BoxCWH& b, const char* what) {
    if (!(b.w > 0) || !(b.h > 0) || !std::isfinite(b.cx) || !std::isfinite(b.cy) ||
        !std::isfinite(b.w) || !std::isfinite(b.h))
        throw DomainError(std::string(what) + ": box must be finite with w > 0 and h > 0");
}

CornerBox inner_box(const BoxCWH& box, double ratio) {
    validate_box(box, "inner_box");
    if (!(ratio >= 0.5 && ratio <= 1.5))
        throw DomainError("inner_box: ratio " + std::to_string(ratio) + " outside [0.5, 1.5]");
    const double hw = box.w * ratio / 2, hh = box.h * ratio / 2;
    return CornerBox{box.cx - hw, box.cy - hh, box.cx + hw, box.cy + hh};
}

MpdDistances mpd_distances(const CornerBox& a, const CornerBox& g) {
    MpdDistances d;
    d.d1_sq = (g.l - a.l) * (g.l - a.l) + (g.t - a.t) * (g.t - a.t);
    d.d2_sq = (g.r - a.r) * (g.r - a.r) + (g.b - a.b) * (g.b - a.b);
    return d;
}

Overlap inner_overlap(const BoxCWH& pred, const BoxCWH& gt, double ratio) {
    const CornerBox p = inner_box(pred, ratio);
    const CornerBox g = inner_box(gt, ratio);
    Overlap o;
    o.inter = clamped_overlap(p, g);
    o.uni = gt.w * gt.h * ratio * ratio + pred.w * pred.h * ratio * ratio - o.inter;
    return o;
}

double inner_mpdiou(const BoxCWH& pred, const BoxCWH& gt, const LossContext& ctx) {
    ctx.validate();
    validate_box(pred, "inner_mpdiou pred");
    validate_box(gt, "inner_mpdiou gt");
    const Overlap o = inner_overlap(pred, gt, ctx.ratio);
    const CornerBox p = ctx.distances_on_original ? corners(pred) : inner_box(pred, ctx.ratio);
    const CornerBox g = ctx.distances_on_original ? corners(gt) : inner_box(gt, ctx.ratio);
    const MpdDistances d = mpd_distances(p, g);
    const double diag = ctx.img_h * ctx.img_h + ctx.img_w * ctx.img_w;
    return o.inter / o.uni - d.d1_sq / diag - d.d2_sq / diag;
}

LossGrad inner_mpdiou_loss_grad(const BoxCWH& pred, const BoxCWH& gt, const LossContext& ctx) {
    ctx.validate();
    validate_box(pred, "inner_mpdiou_loss_grad pred");
    validate_box(gt, "inner_mpdiou_loss_grad gt");

    const double r = ctx.ratio;
    const CornerBox P = inner_box(pred, r);
    const CornerBox G = inner_box(gt, r);

    // d min(g, p)/dp and d max(g, p)/dp; ties take the average of the
    // one-sided slopes.
    auto dmin = [](double g, double p) { return p < g ? 1.0 : (p == g ? 0.5 : 0.0); };
    auto dmax = [](double g, double p) { return p > g ? 1.0 : (p == g ? 0.5 : 0.0); };
    // Right-hand slope at the zero-overlap clamp.
    auto dclamp = [](double raw, double slope) {
        if (raw > 0) return slope;
        if (raw == 0) return std::max(0.0, slope);
        return 0.0;
    };

    const double iw_raw = std::min(G.r, P.r) - std::max(G.l, P.l);
    const double ih_raw = std::min(G.b, P.b) - std::max(G.t, P.t);
    const double iw = std::max(0.0, iw_raw);
    const double ih = std::max(0.0, ih_raw);
    const double inter = iw * ih;

    const double diw_dPl = dclamp(iw_raw, -dmax(G.l, P.l));
    const double diw_dPr = dclamp(iw_raw, dmin(G.r, P.r));
    const double dih_dPt = dclamp(ih_raw, -dmax(G.t, P.t));
    const double dih_dPb = dclamp(ih_raw, dmin(G.b, P.b));

    // d(inter)/d(P.l, P.t, P.r, P.b)
    const double dI[4] = {ih * diw_dPl, iw * dih_dPt, ih * diw_dPr, iw * dih_dPb};

    // Corner jacobian w.r.t. (cx, cy, w, h): each row is one corner coord.
    const double J[4][4] = {
        {1, 0, -r / 2, 0},  // P.l
        {0, 1, 0, -r / 2},  // P.t
        {1, 0, r / 2, 0},   // P.r
        {0, 1, 0, r / 2},   // P.b
    };

    const double area_p = pred.w * pred.h * r * r;
    const double area_g = gt.w * gt.h * r * r;
    const double uni = area_g + area_p - inter;
    const double dAp[4] = {0, 0, pred.h * r * r, pred.w * r * r};

    const double diag = ctx.img_h * ctx.img_h + ctx.img_w * ctx.img_w;
    const CornerBox Pd = ctx.distances_on_original ? corners(pred) : P;
    const CornerBox Gd = ctx.distances_on_original ? corners(gt) : G;
    const double s = ctx.distances_on_original ? 0.5 : r / 2;

    LossGrad out;
    const MpdDistances d = mpd_distances(Pd, Gd);
    const double value = inter / uni - (d.d1_sq + d.d2_sq) / diag;
    out.loss = 1.0 - value;

    const double dT[4] = {
        2 * ((Pd.l - Gd.l) + (Pd.r - Gd.r)) / diag,
        2 * ((Pd.t - Gd.t) + (Pd.b - Gd.b)) / diag,
        2 * ((Pd.l - Gd.l) * (-s) + (Pd.r - Gd.r) * s) / diag,
        2 * ((Pd.t - Gd.t) * (-s) + (Pd.b - Gd.b) * s) / diag,
    };

    for (int t = 0; t < 4; ++t) {
        double inter_t = 0;
        for (int q = 0; q < 4; ++q) inter_t += dI[q] * J[q][t];
        const double uni_t = dAp[t] - inter_t;
        const double v_t = (inter_t * uni - inter * uni_t) / (uni * uni);
        out.grad[t] = -(v_t - dT[t]);
    }
    return out;
}

double iou(const BoxCWH& a, const BoxCWH& b) {
    validate_box(a, "iou a");
    validate_box(b, "iou b");
    const double inter = clamped_overlap(corners(a), corners(b));
    return inter / (a.w * a.h + b.w * b.h - inter);
}

double ciou(const BoxCWH& pred, const BoxCWH& gt, const LossContext& ctx) {
    ctx.validate();
    const double base = iou(pred, gt);
    const double rho2 =
        (pred.cx - gt.cx) * (pred.cx - gt.cx) + (pred.cy - gt.cy) * (pred.cy - gt.cy);
    const CornerBox p = corners(pred), g = corners(gt);
    const double ew = std::max(p.r, g.r) - std::min(p.l, g.l);
    const double eh = std::max(p.b, g.b) - std::min(p.t, g.t);
    const double c2 = ew * ew + eh * eh;
    const double dv = std::atan(gt.w / gt.h) - std::atan(pred.w / pred.h);
    const double v = 4.0 / (kPi * kPi) * dv * dv;
    const double denom = 1.0 - base + v;
    const double alpha = denom > 0 ? v / denom : 0.0;
    return base - rho2 / c2 - alpha * v;
}

}  // namespace litedet

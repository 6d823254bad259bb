#include <cmath>

#include "doctest.h"
#include "litedet/box_loss.hpp"
#include "litedet/rng.hpp"

using namespace litedet;

namespace {

BoxCWH random_box(Rng& rng) {
    return BoxCWH{rng.uniform(15, 85), rng.uniform(15, 85), rng.uniform(5, 40),
                  rng.uniform(5, 40)};
}

// Jittered-grid hit counting over the pair's joint bounding rectangle.
struct McEstimate {
    double inter = 0, uni = 0;
};
McEstimate mc_overlap(const BoxCWH& a, const BoxCWH& b, int grid, Rng& rng) {
    const CornerBox ca = inner_box(a, 1.0), cb = inner_box(b, 1.0);
    const double lo_x = std::min(ca.l, cb.l), hi_x = std::max(ca.r, cb.r);
    const double lo_y = std::min(ca.t, cb.t), hi_y = std::max(ca.b, cb.b);
    const double cell_x = (hi_x - lo_x) / grid, cell_y = (hi_y - lo_y) / grid;
    long long inter_hits = 0, union_hits = 0;
    for (int gy = 0; gy < grid; ++gy)
        for (int gx = 0; gx < grid; ++gx) {
            const double x = lo_x + (gx + rng.next_u01()) * cell_x;
            const double y = lo_y + (gy + rng.next_u01()) * cell_y;
            const bool in_a = x >= ca.l && x <= ca.r && y >= ca.t && y <= ca.b;
            const bool in_b = x >= cb.l && x <= cb.r && y >= cb.t && y <= cb.b;
            inter_hits += in_a && in_b;
            union_hits += in_a || in_b;
        }
    const double area = (hi_x - lo_x) * (hi_y - lo_y);
    const double per_pt = area / (double(grid) * grid);
    return McEstimate{double(inter_hits) * per_pt, double(union_hits) * per_pt};
}

}  // namespace

TEST_CASE("inner_box scales about the center") {
    const BoxCWH b{1, 1, 2, 2};
    CornerBox r1 = inner_box(b, 1.0);
    CHECK(r1.l == 0.0);
    CHECK(r1.t == 0.0);
    CHECK(r1.r == 2.0);
    CHECK(r1.b == 2.0);

    CornerBox rh = inner_box(b, 0.5);
    CHECK(rh.l == 0.5);
    CHECK(rh.t == 0.5);
    CHECK(rh.r == 1.5);
    CHECK(rh.b == 1.5);

    Rng rng(1);
    for (int i = 0; i < 50; ++i) {
        const BoxCWH x = random_box(rng);
        const double ratio = rng.uniform(0.5, 1.5);
        const CornerBox c = inner_box(x, ratio);
        CHECK((c.l + c.r) / 2 == doctest::Approx(x.cx).epsilon(1e-12));
        CHECK((c.t + c.b) / 2 == doctest::Approx(x.cy).epsilon(1e-12));
    }

    CHECK_THROWS_AS(inner_box(b, 0.4), DomainError);
    CHECK_THROWS_AS(inner_box(b, 1.6), DomainError);
    CHECK_THROWS_AS(inner_box(BoxCWH{0, 0, -1, 2}, 1.0), DomainError);
}

TEST_CASE("mpd_distances measures corner offsets") {
    const CornerBox a{0, 0, 2, 2};
    MpdDistances same = mpd_distances(a, a);
    CHECK(same.d1_sq == 0.0);
    CHECK(same.d2_sq == 0.0);

    const CornerBox g{1, 1, 3, 3};
    MpdDistances d = mpd_distances(a, g);
    CHECK(d.d1_sq == 2.0);
    CHECK(d.d2_sq == 2.0);

    // translation of both boxes leaves the distances unchanged
    const double t = 7.25;
    const CornerBox at{a.l + t, a.t + t, a.r + t, a.b + t};
    const CornerBox gt{g.l + t, g.t + t, g.r + t, g.b + t};
    MpdDistances dt = mpd_distances(at, gt);
    CHECK(dt.d1_sq == doctest::Approx(d.d1_sq).epsilon(1e-12));
    CHECK(dt.d2_sq == doctest::Approx(d.d2_sq).epsilon(1e-12));
}

TEST_CASE("inner_mpdiou worked examples") {
    const LossContext ctx{10, 10, 1.0, false};
    const BoxCWH a{1, 1, 2, 2}, g{2, 2, 2, 2};

    CHECK(inner_mpdiou(g, g, ctx) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(inner_mpdiou(a, g, ctx) == doctest::Approx(1.0 / 7 - 0.02).epsilon(1e-9));

    LossContext half = ctx;
    half.ratio = 0.5;
    CHECK(inner_mpdiou(a, g, half) == doctest::Approx(-0.02).epsilon(1e-9));
}

TEST_CASE("ratio 1 reduces the overlap term to plain IoU") {
    Rng rng(3);
    for (int i = 0; i < 1000; ++i) {
        const BoxCWH a = random_box(rng), b = random_box(rng);
        const Overlap o = inner_overlap(a, b, 1.0);
        const double from_inner = o.inter / o.uni;
        CHECK(std::abs(from_inner - iou(a, b)) < 1e-9);
    }
}

TEST_CASE("inner_mpdiou is symmetric and translation invariant") {
    Rng rng(5);
    const LossContext ctx{100, 100, 1.25, false};
    for (int i = 0; i < 200; ++i) {
        const BoxCWH a = random_box(rng), b = random_box(rng);
        CHECK(inner_mpdiou(a, b, ctx) ==
              doctest::Approx(inner_mpdiou(b, a, ctx)).epsilon(1e-12));

        const double dx = rng.uniform(-5, 5), dy = rng.uniform(-5, 5);
        const BoxCWH at{a.cx + dx, a.cy + dy, a.w, a.h};
        const BoxCWH bt{b.cx + dx, b.cy + dy, b.w, b.h};
        CHECK(std::abs(inner_mpdiou(at, bt, ctx) - inner_mpdiou(a, b, ctx)) < 1e-9);
    }
}

TEST_CASE("larger corner distances strictly decrease the value at fixed overlap") {
    const LossContext ctx{100, 100, 1.0, false};
    const BoxCWH gt{50, 50, 40, 40};
    // pred stays fully inside gt, so the overlap term is constant
    double prev = inner_mpdiou(BoxCWH{50, 50, 10, 10}, gt, ctx);
    for (double off : {2.0, 4.0, 6.0, 8.0}) {
        const double v = inner_mpdiou(BoxCWH{50 + off, 50 + off, 10, 10}, gt, ctx);
        CHECK(v < prev);
        prev = v;
    }
}

TEST_CASE("overlap matches a Monte-Carlo area oracle") {
    Rng rng(7);
    int checked = 0;
    while (checked < 40) {
        const BoxCWH a = random_box(rng), b = random_box(rng);
        const Overlap o = inner_overlap(a, b, 1.0);
        const CornerBox ca = inner_box(a, 1.0), cb = inner_box(b, 1.0);
        const double rect = (std::max(ca.r, cb.r) - std::min(ca.l, cb.l)) *
                            (std::max(ca.b, cb.b) - std::min(ca.t, cb.t));
        if (o.inter > 0 && o.inter < 0.01 * rect) continue;  // vanishing slivers: skip
        const McEstimate mc = mc_overlap(a, b, 400, rng);
        if (o.inter == 0)
            CHECK(mc.inter == 0.0);
        else
            CHECK(std::abs(mc.inter - o.inter) / o.inter < 1e-2);
        CHECK(std::abs(mc.uni - o.uni) / o.uni < 1e-2);
        ++checked;
    }
}

TEST_CASE("loss gradient at the symmetric minimum") {
    const LossContext ctx{100, 100, 1.0, false};
    const BoxCWH b{40, 60, 20, 10};
    const LossGrad lg = inner_mpdiou_loss_grad(b, b, ctx);
    CHECK(lg.loss == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(lg.grad[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(lg.grad[1] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("analytic gradients match central finite differences") {
    Rng rng(9);
    const double eps = 1e-4;
    int done = 0;
    double max_rel = 0;
    while (done < 200) {
        const BoxCWH pred = random_box(rng), gt = random_box(rng);
        LossContext ctx{100, 100, rng.uniform(0.5, 1.5), false};

        // keep away from kinks so the differences are two-sided smooth
        const CornerBox p = inner_box(pred, ctx.ratio), g = inner_box(gt, ctx.ratio);
        bool safe = true;
        for (double gap : {p.l - g.l, p.r - g.r, p.t - g.t, p.b - g.b})
            safe = safe && std::abs(gap) > 20 * eps;
        const double iw = std::min(g.r, p.r) - std::max(g.l, p.l);
        const double ih = std::min(g.b, p.b) - std::max(g.t, p.t);
        safe = safe && std::abs(iw) > 20 * eps && std::abs(ih) > 20 * eps;
        if (!safe) continue;

        const LossGrad lg = inner_mpdiou_loss_grad(pred, gt, ctx);
        double diff = 0, scale = 0;
        for (int i = 0; i < 4; ++i) {
            auto at = [&](double delta) {
                BoxCWH q = pred;
                (i == 0 ? q.cx : i == 1 ? q.cy : i == 2 ? q.w : q.h) += delta;
                return inner_mpdiou_loss_grad(q, gt, ctx).loss;
            };
            const double fd = (at(eps) - at(-eps)) / (2 * eps);
            diff = std::max(diff, std::abs(fd - lg.grad[std::size_t(i)]));
            scale = std::max({scale, std::abs(fd), std::abs(lg.grad[std::size_t(i)])});
        }
        max_rel = std::max(max_rel, diff / std::max(scale, 1e-12));
        ++done;
    }
    CHECK(max_rel < 1e-4);
}

TEST_CASE("gradient pushes a disjoint prediction toward the target") {
    const LossContext ctx{100, 100, 1.0, false};
    const BoxCWH pred{20, 50, 10, 10}, gt{70, 50, 10, 10};  // pred left of gt
    const LossGrad lg = inner_mpdiou_loss_grad(pred, gt, ctx);
    CHECK(lg.grad[0] < 0.0);  // increasing cx lowers the loss

    const double eps = 1e-3;
    auto loss_at = [&](double cx) {
        return inner_mpdiou_loss_grad(BoxCWH{cx, 50, 10, 10}, gt, ctx).loss;
    };
    CHECK(loss_at(20 + eps) < loss_at(20));
}

TEST_CASE("corner distances on the original boxes behind the flag") {
    LossContext ctx{10, 10, 0.5, false};
    LossContext orig = ctx;
    orig.distances_on_original = true;

    const BoxCWH a{1, 1, 2, 2}, g{2, 2, 2, 2};
    // scaled corners: d1=d2=0.5 -> penalty (0.5+0.5)/200; original: 2+2 over 200
    CHECK(inner_mpdiou(a, g, ctx) == doctest::Approx(-(0.5 + 0.5) / 200).epsilon(1e-12));
    CHECK(inner_mpdiou(a, g, orig) == doctest::Approx(-(2.0 + 2.0) / 200).epsilon(1e-12));

    // gradients stay consistent with finite differences in that mode
    const LossGrad lg = inner_mpdiou_loss_grad(BoxCWH{30, 40, 12, 9}, BoxCWH{36, 44, 10, 14},
                                               LossContext{100, 100, 0.8, true});
    auto at = [&](double d) {
        return inner_mpdiou_loss_grad(BoxCWH{30 + d, 40, 12, 9}, BoxCWH{36, 44, 10, 14},
                                      LossContext{100, 100, 0.8, true})
            .loss;
    };
    const double fd = (at(1e-4) - at(-1e-4)) / 2e-4;
    CHECK(lg.grad[0] == doctest::Approx(fd).epsilon(1e-5));
}

TEST_CASE("iou and ciou baselines") {
    const LossContext ctx{100, 100, 1.0, false};
    const BoxCWH a{10, 10, 4, 4};
    CHECK(iou(a, a) == 1.0);
    CHECK(ciou(a, a, ctx) == doctest::Approx(1.0).epsilon(1e-12));

    const BoxCWH far{50, 50, 4, 4};
    CHECK(iou(a, far) == 0.0);

    const BoxCWH inner2{10, 10, 2, 2}, outer4{10, 10, 4, 4};
    CHECK(iou(inner2, outer4) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(ciou(inner2, outer4, ctx) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("context validation") {
    CHECK_THROWS_AS((LossContext{0, 10, 1.0, false}.validate()), DomainError);
    CHECK_THROWS_AS((LossContext{10, 10, 0.2, false}.validate()), DomainError);
    CHECK_THROWS_AS(inner_mpdiou(BoxCWH{0, 0, 0, 1}, BoxCWH{0, 0, 1, 1},
                                 LossContext{10, 10, 1.0, false}),
                    DomainError);
}

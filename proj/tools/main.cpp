// litedet: batch CLI over the graph, cost, box-loss and pruning libraries.
//
// Exit codes: 0 success, 1 verification failure, 2 input/usage error.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "litedet/box_loss.hpp"
#include "litedet/cost.hpp"
#include "litedet/graph.hpp"
#include "litedet/prune.hpp"
#include "litedet/rng.hpp"
#include "litedet/tensor.hpp"

namespace {

using namespace litedet;

std::array<int, 4> parse_shape(const std::string& text) {
    std::array<int, 4> s{};
    char x1, x2, x3;
    std::istringstream in(text);
    if (!(in >> s[0] >> x1 >> s[1] >> x2 >> s[2] >> x3 >> s[3]) || x1 != 'x' || x2 != 'x' ||
        x3 != 'x' || s[0] < 1 || s[1] < 1 || s[2] < 1 || s[3] < 1)
        throw ConfigError("bad shape '" + text + "', expected NxCxHxW");
    std::string rest;
    if (in >> rest) throw ConfigError("bad shape '" + text + "', expected NxCxHxW");
    return s;
}

void emit(const std::string& text, const std::string& out_path) {
    if (out_path.empty()) {
        std::cout << text;
        return;
    }
    std::ofstream f(out_path);
    if (!f) throw IoError("cannot open '" + out_path + "' for writing");
    f << text;
}

struct AnalyzeArgs {
    std::string graph, input_shape, format = "table", out;
};

int cmd_analyze(const AnalyzeArgs& args) {
    ModelGraph g = ModelGraph::load(args.graph);
    CostReport report = args.input_shape.empty() ? graph_cost(g)
                                                 : graph_cost(g, parse_shape(args.input_shape));
    if (args.format == "json")
        emit(report.to_json().dump(2) + "\n", args.out);
    else
        emit(report.text_table(), args.out);
    return 0;
}

struct ForwardArgs {
    std::string graph, weights, input, input_shape, nodes, out_dir = ".";
    std::uint64_t seed = 0;
};

int cmd_forward(const ForwardArgs& args) {
    ModelGraph g = ModelGraph::load(args.graph);
    WeightStore w = args.weights.empty() ? init_weights(g, args.seed)
                                         : load_weights(args.weights);

    Tensor4 input;
    if (!args.input.empty()) {
        input = load_tensor(args.input);
    } else {
        std::array<int, 4> s{g.meta.input_shape[0], g.meta.input_shape[1], g.meta.input_shape[2],
                             g.meta.input_shape[3]};
        if (!args.input_shape.empty()) s = parse_shape(args.input_shape);
        input = Tensor4(s[0], s[1], s[2], s[3]);
        Rng rng(args.seed + 1);  // input stream independent of the weight stream
        fill_uniform(input, rng, 0.0f, 1.0f);
    }

    std::map<std::string, Tensor4> values = forward_graph(g, w, input);

    std::vector<std::string> dump_refs;
    if (args.nodes.empty()) {
        dump_refs = g.outputs;
    } else {
        std::istringstream in(args.nodes);
        std::string ref;
        while (std::getline(in, ref, ',')) dump_refs.push_back(ref);
    }
    for (const std::string& ref : dump_refs) {
        auto it = values.find(ref);
        if (it == values.end()) throw ConfigError("no node output named '" + ref + "'");
        save_tensor(it->second, args.out_dir + "/" + ref + ".t4f0");
        std::cout << ref << " " << it->second.shape_str() << "\n";
    }
    return 0;
}

struct LossArgs {
    std::string boxes, kind = "inner_mpdiou";
    double img_w = 0, img_h = 0, ratio = 1.0;
    bool grad = false, on_original = false;
};

int cmd_loss(const LossArgs& args) {
    LossContext ctx{args.img_w, args.img_h, args.ratio, args.on_original};
    ctx.validate();
    if (args.grad && args.kind != "inner_mpdiou")
        throw ConfigError("--grad is only available for --kind inner_mpdiou");

    std::ifstream f(args.boxes);
    if (!f) throw IoError("cannot open boxes file '" + args.boxes + "'");
    std::string line;
    if (!std::getline(f, line) ||
        line != "pred_cx,pred_cy,pred_w,pred_h,gt_cx,gt_cy,gt_w,gt_h")
        throw IoError("boxes file must start with header "
                      "pred_cx,pred_cy,pred_w,pred_h,gt_cx,gt_cy,gt_w,gt_h");

    if (args.grad)
        std::cout << "index,value,loss,dcx,dcy,dw,dh\n";
    else
        std::cout << "index,value,loss\n";

    char out[256];
    int row = 0;
    double sum_value = 0, sum_loss = 0;
    std::array<double, 4> sum_grad{};
    for (; std::getline(f, line); ++row) {
        if (line.empty()) continue;
        double v[8];
        char comma;
        std::istringstream in(line);
        bool ok = true;
        for (int i = 0; i < 8 && ok; ++i) {
            if (!(in >> v[i])) ok = false;
            if (i < 7 && ok && !(in >> comma && comma == ',')) ok = false;
        }
        std::string rest;
        if (in >> rest) ok = false;
        if (!ok) throw IoError("boxes row " + std::to_string(row + 1) + " is malformed: " + line);
        const BoxCWH pred{v[0], v[1], v[2], v[3]}, gt{v[4], v[5], v[6], v[7]};

        double value = 0;
        std::array<double, 4> grad{};
        if (args.kind == "inner_mpdiou") {
            if (args.grad) {
                const LossGrad lg = inner_mpdiou_loss_grad(pred, gt, ctx);
                value = 1.0 - lg.loss;
                grad = lg.grad;
            } else {
                value = inner_mpdiou(pred, gt, ctx);
            }
        } else if (args.kind == "iou") {
            value = iou(pred, gt);
        } else if (args.kind == "ciou") {
            value = ciou(pred, gt, ctx);
        } else {
            throw ConfigError("unknown --kind '" + args.kind + "'");
        }
        const double loss = 1.0 - value;
        sum_value += value;
        sum_loss += loss;
        if (args.grad) {
            for (int i = 0; i < 4; ++i) sum_grad[std::size_t(i)] += grad[std::size_t(i)];
            std::snprintf(out, sizeof(out), "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", row, value,
                          loss, grad[0], grad[1], grad[2], grad[3]);
        } else {
            std::snprintf(out, sizeof(out), "%d,%.9g,%.9g\n", row, value, loss);
        }
        std::cout << out;
    }
    const double inv = row > 0 ? 1.0 / row : 0.0;
    if (args.grad)
        std::snprintf(out, sizeof(out), "mean,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", sum_value * inv,
                      sum_loss * inv, sum_grad[0] * inv, sum_grad[1] * inv, sum_grad[2] * inv,
                      sum_grad[3] * inv);
    else
        std::snprintf(out, sizeof(out), "mean,%.9g,%.9g\n", sum_value * inv, sum_loss * inv);
    std::cout << out;
    return 0;
}

struct GradcheckArgs {
    int samples = 500;
    double eps = 1e-4;
    std::uint64_t seed = 0;
    bool corrupt = false;  // test hook: perturbs the analytic gradient
};

// Skip configurations close to a min/max tie or the zero-overlap clamp,
// where central differences straddle a kink.
bool safely_differentiable(const BoxCWH& pred, const BoxCWH& gt, const LossContext& ctx,
                           double margin) {
    const CornerBox p = inner_box(pred, ctx.ratio);
    const CornerBox g = inner_box(gt, ctx.ratio);
    for (double gap : {p.l - g.l, p.r - g.r, p.t - g.t, p.b - g.b})
        if (std::abs(gap) < margin) return false;
    const double iw = std::min(g.r, p.r) - std::max(g.l, p.l);
    const double ih = std::min(g.b, p.b) - std::max(g.t, p.t);
    if (std::abs(iw) < margin || std::abs(ih) < margin) return false;
    return true;
}

int cmd_gradcheck(const GradcheckArgs& args) {
    if (args.samples == 0) {
        std::cout << "gradcheck: 0 samples requested, vacuous pass (warning)\n";
        return 0;
    }
    Rng rng(args.seed);
    auto random_box = [&]() {
        BoxCWH b;
        b.cx = rng.uniform(15, 85);
        b.cy = rng.uniform(15, 85);
        b.w = rng.uniform(5, 40);
        b.h = rng.uniform(5, 40);
        return b;
    };

    double max_rel = 0;
    int done = 0;
    while (done < args.samples) {
        const BoxCWH pred = random_box(), gt = random_box();
        LossContext ctx{100, 100, rng.uniform(0.5, 1.5), false};
        if (!safely_differentiable(pred, gt, ctx, 20 * args.eps)) continue;

        LossGrad lg = inner_mpdiou_loss_grad(pred, gt, ctx);
        if (args.corrupt) lg.grad[0] += 0.01;

        std::array<double, 4> fd{};
        for (int i = 0; i < 4; ++i) {
            auto shifted = [&](double delta) {
                BoxCWH p = pred;
                (i == 0 ? p.cx : i == 1 ? p.cy : i == 2 ? p.w : p.h) += delta;
                return inner_mpdiou_loss_grad(p, gt, ctx).loss;
            };
            fd[std::size_t(i)] = (shifted(args.eps) - shifted(-args.eps)) / (2 * args.eps);
        }

        double diff = 0, scale = 0;
        for (int i = 0; i < 4; ++i) {
            diff = std::max(diff, std::abs(lg.grad[std::size_t(i)] - fd[std::size_t(i)]));
            scale = std::max({scale, std::abs(lg.grad[std::size_t(i)]),
                              std::abs(fd[std::size_t(i)])});
        }
        max_rel = std::max(max_rel, diff / std::max(scale, 1e-12));
        ++done;
    }
    std::printf("gradcheck: %d samples, eps=%g, max relative error %.3e\n", done, args.eps,
                max_rel);
    return max_rel < 1e-3 ? 0 : 1;
}

struct PruneArgs {
    std::string graph, weights, out_graph, out_weights, out_plan;
    double target = 1.5, tolerance = 0.02;
    std::uint64_t seed = 0;
};

int cmd_prune(const PruneArgs& args) {
    ModelGraph g = ModelGraph::load(args.graph);
    WeightStore w = args.weights.empty() ? init_weights(g, args.seed)
                                         : load_weights(args.weights);

    const PrunePlan plan = search_speedup(g, w, args.target, args.tolerance,
                                          default_protected(g));
    auto [pg, pw] = apply_prune(g, w, plan);

    if (!args.out_graph.empty()) pg.save(args.out_graph);
    if (!args.out_weights.empty()) save_weights(pw, args.out_weights);
    if (!args.out_plan.empty()) plan.save(args.out_plan);

    const CostReport before = graph_cost(g);
    const CostReport after = graph_cost(pg);
    std::cout << compare_reports(before, after).text_table();
    std::printf("achieved MAC speed-up %.4f (target %.2f), removed parameter fraction %.4f\n",
                plan.achieved_mac_ratio, args.target, plan.achieved_sparsity);
    if (!plan.warning.empty()) std::cout << "warning: " << plan.warning << "\n";
    return 0;
}

struct CompareArgs {
    std::string a, b, format = "table", out;
};

int cmd_compare(const CompareArgs& args) {
    auto load_report = [](const std::string& path) {
        std::ifstream f(path);
        if (!f) throw IoError("cannot open report '" + path + "'");
        nlohmann::json doc;
        try {
            f >> doc;
        } catch (const nlohmann::json::exception& e) {
            throw IoError("report '" + path + "' is not valid JSON: " + e.what());
        }
        return CostReport::from_json(doc);
    };
    const CompareReport cr = compare_reports(load_report(args.a), load_report(args.b));
    if (args.format == "json")
        emit(cr.to_json().dump(2) + "\n", args.out);
    else
        emit(cr.text_table(), args.out);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"litedet: lightweight detector blocks, box-loss geometry, LAMP channel "
                 "pruning and exact cost analysis"};
    app.require_subcommand(1);

    AnalyzeArgs an;
    CLI::App* analyze = app.add_subcommand("analyze", "Parameter/MAC report for a graph");
    analyze->add_option("--graph", an.graph, "graph JSON")->required();
    analyze->add_option("--input-shape", an.input_shape, "NxCxHxW override");
    analyze->add_option("--format", an.format)->check(CLI::IsMember({"table", "json"}));
    analyze->add_option("--out", an.out, "write to file instead of stdout");

    ForwardArgs fw;
    CLI::App* forward = app.add_subcommand("forward", "Run a graph and dump node outputs");
    forward->add_option("--graph", fw.graph, "graph JSON")->required();
    forward->add_option("--weights", fw.weights, "LDW0 weights (default: init from --seed)");
    forward->add_option("--seed", fw.seed, "seed for weight init and random input");
    forward->add_option("--input", fw.input, "T4F0 input tensor (default: seeded random)");
    forward->add_option("--input-shape", fw.input_shape, "NxCxHxW for the random input");
    forward->add_option("--nodes", fw.nodes, "comma-separated output refs (default: graph outputs)");
    forward->add_option("--out-dir", fw.out_dir, "directory for T4F0 dumps");

    LossArgs lo;
    CLI::App* loss = app.add_subcommand("loss", "Evaluate box losses over a CSV batch");
    loss->add_option("--boxes", lo.boxes, "CSV of box pairs")->required();
    loss->add_option("--img-w", lo.img_w, "image width")->required();
    loss->add_option("--img-h", lo.img_h, "image height")->required();
    loss->add_option("--ratio", lo.ratio, "auxiliary box scale in [0.5, 1.5]");
    loss->add_option("--kind", lo.kind)->check(CLI::IsMember({"inner_mpdiou", "iou", "ciou"}));
    loss->add_flag("--grad", lo.grad, "also print d(loss)/d(cx,cy,w,h)");
    loss->add_flag("--distances-on-original", lo.on_original,
                   "corner penalties on unscaled boxes");

    GradcheckArgs gc;
    CLI::App* gradcheck = app.add_subcommand("gradcheck",
                                             "Verify analytic gradients against central differences");
    gradcheck->add_option("--samples", gc.samples)->check(CLI::NonNegativeNumber);
    gradcheck->add_option("--eps", gc.eps)->check(CLI::PositiveNumber);
    gradcheck->add_option("--seed", gc.seed);
    gradcheck->add_flag("--corrupt-grad", gc.corrupt)->group("");  // harness self-test

    PruneArgs pr;
    CLI::App* prune = app.add_subcommand("prune", "LAMP channel pruning to a MAC speed-up target");
    prune->add_option("--graph", pr.graph, "graph JSON")->required();
    prune->add_option("--weights", pr.weights, "LDW0 weights (default: init from --seed)");
    prune->add_option("--seed", pr.seed, "seed when no weights file is given");
    prune->add_option("--target-speedup", pr.target, "baseline/pruned MAC ratio")
        ->required()
        ->check(CLI::Range(1.0, 1e9));
    prune->add_option("--tolerance", pr.tolerance, "relative tolerance on the target")
        ->check(CLI::PositiveNumber);
    prune->add_option("--out-graph", pr.out_graph, "pruned graph JSON path");
    prune->add_option("--out-weights", pr.out_weights, "pruned LDW0 path");
    prune->add_option("--out-plan", pr.out_plan, "plan JSON path");

    CompareArgs cm;
    CLI::App* compare = app.add_subcommand("compare", "Delta table between two cost reports");
    compare->add_option("--a", cm.a, "report JSON")->required();
    compare->add_option("--b", cm.b, "report JSON")->required();
    compare->add_option("--format", cm.format)->check(CLI::IsMember({"table", "json"}));
    compare->add_option("--out", cm.out, "write to file instead of stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*analyze) return cmd_analyze(an);
        if (*forward) return cmd_forward(fw);
        if (*loss) return cmd_loss(lo);
        if (*gradcheck) return cmd_gradcheck(gc);
        if (*prune) return cmd_prune(pr);
        if (*compare) return cmd_compare(cm);
    } catch (const litedet::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}

#include "litedet/cost.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "kinds.hpp"

namespace litedet {

namespace {

std::string shape_text(const std::array<int, 4>& s) {
    return std::to_string(s[0]) + "x" + std::to_string(s[1]) + "x" + std::to_string(s[2]) + "x" +
           std::to_string(s[3]);
}

LayerCost cost_of(const GraphNode& node, kinds::BlockVar& blk,
                  const std::vector<kinds::Shape>& ins) {
    LayerCost lc;
    lc.node = node.id;
    lc.kind = node.kind;
    const int batch = ins.empty() ? 1 : ins[0][0];
    for (const kinds::ConvVisit& v : kinds::conv_visits(blk, ins)) {
        SubCost sc;
        sc.name = v.name;
        sc.bias_params = (long long)v.conv->c_out;  // all convs carry a bias
        sc.params = v.conv->weight_count() + sc.bias_params;
        sc.macs = v.conv->weight_count() * v.out_h * v.out_w * batch;
        lc.params += sc.params;
        lc.bias_params += sc.bias_params;
        lc.macs += sc.macs;
        lc.breakdown.push_back(std::move(sc));
    }
    for (const kinds::Shape& s : kinds::output_shapes(blk, ins)) lc.out_shapes.push_back(s);
    return lc;
}

}  // namespace

LayerCost layer_cost(const GraphNode& node, const std::vector<std::array<int, 4>>& input_shapes) {
    kinds::BlockVar blk = kinds::make_block(node);
    std::vector<kinds::Shape> ins;
    for (const auto& s : input_shapes) ins.push_back(kinds::Shape{s[0], s[1], s[2], s[3]});
    return cost_of(node, blk, ins);
}

LayerCost layer_cost(const GraphNode& node, const std::array<int, 4>& input_shape) {
    return layer_cost(node, std::vector<std::array<int, 4>>{input_shape});
}

CostReport graph_cost(const ModelGraph& g, const std::array<int, 4>& input_shape) {
    CostReport report;
    report.input_shape = input_shape;
    std::map<std::string, kinds::Shape> shapes;
    const kinds::Shape in_shape{input_shape[0], input_shape[1], input_shape[2], input_shape[3]};
    for (int idx : g.topo_order) {
        const GraphNode& n = g.nodes[std::size_t(idx)];
        std::vector<kinds::Shape> ins;
        for (const std::string& ref : n.inputs) {
            if (ref == "@input") {
                ins.push_back(in_shape);
                continue;
            }
            auto it = shapes.find(ref);
            if (it == shapes.end())
                throw ValidationError("graph_cost: node '" + n.id +
                                      "' references missing output '" + ref + "'");
            ins.push_back(it->second);
        }
        kinds::BlockVar blk = kinds::make_block(n);
        LayerCost lc;
        try {
            lc = cost_of(n, blk, ins);
        } catch (const ShapeError& e) {
            throw ValidationError("graph_cost: node '" + n.id + "': " + e.what());
        }
        const std::vector<std::string> ports = kinds::port_names(blk);
        const std::vector<kinds::Shape> outs = kinds::output_shapes(blk, ins);
        for (std::size_t p = 0; p < outs.size(); ++p)
            shapes[ports.size() == 1 ? n.id : n.id + ":" + ports[p]] = outs[p];
        report.total_params += lc.params;
        report.total_macs += lc.macs;
        report.layers.push_back(std::move(lc));
    }
    return report;
}

CostReport graph_cost(const ModelGraph& g) {
    return graph_cost(g, {g.meta.input_shape[0], g.meta.input_shape[1], g.meta.input_shape[2],
                          g.meta.input_shape[3]});
}

nlohmann::json CostReport::to_json() const {
    nlohmann::json doc;
    doc["input_shape"] = input_shape;
    doc["flops_convention"] = "2*macs, elementwise excluded";
    doc["layers"] = nlohmann::json::array();
    for (const LayerCost& lc : layers) {
        nlohmann::json jl{{"node", lc.node},
                          {"kind", lc.kind},
                          {"params", lc.params},
                          {"bias_params", lc.bias_params},
                          {"macs", lc.macs}};
        jl["out_shapes"] = lc.out_shapes;
        jl["breakdown"] = nlohmann::json::array();
        for (const SubCost& sc : lc.breakdown)
            jl["breakdown"].push_back({{"name", sc.name},
                                       {"params", sc.params},
                                       {"bias_params", sc.bias_params},
                                       {"macs", sc.macs}});
        doc["layers"].push_back(std::move(jl));
    }
    doc["total_params"] = total_params;
    doc["total_macs"] = total_macs;
    doc["gflops"] = gflops();
    return doc;
}

CostReport CostReport::from_json(const nlohmann::json& doc) {
    CostReport r;
    if (!doc.contains("input_shape") || !doc["input_shape"].is_array() ||
        doc["input_shape"].size() != 4)
        throw IoError("cost report: missing input_shape");
    for (int i = 0; i < 4; ++i) r.input_shape[std::size_t(i)] = doc["input_shape"][i].get<int>();
    for (const auto& jl : doc.value("layers", nlohmann::json::array())) {
        LayerCost lc;
        lc.node = jl.value("node", "");
        lc.kind = jl.value("kind", "");
        lc.params = jl.value("params", 0LL);
        lc.bias_params = jl.value("bias_params", 0LL);
        lc.macs = jl.value("macs", 0LL);
        for (const auto& js : jl.value("out_shapes", nlohmann::json::array())) {
            std::array<int, 4> s{};
            for (int i = 0; i < 4; ++i) s[std::size_t(i)] = js[i].get<int>();
            lc.out_shapes.push_back(s);
        }
        for (const auto& jb : jl.value("breakdown", nlohmann::json::array())) {
            SubCost sc;
            sc.name = jb.value("name", "");
            sc.params = jb.value("params", 0LL);
            sc.bias_params = jb.value("bias_params", 0LL);
            sc.macs = jb.value("macs", 0LL);
            lc.breakdown.push_back(std::move(sc));
        }
        r.layers.push_back(std::move(lc));
    }
    r.total_params = doc.value("total_params", 0LL);
    r.total_macs = doc.value("total_macs", 0LL);
    return r;
}

std::string CostReport::text_table() const {
    std::ostringstream out;
    char line[256];
    std::snprintf(line, sizeof(line), "%-24s %-14s %14s %16s  %s\n", "node", "kind", "params",
                  "macs", "out");
    out << line;
    for (const LayerCost& lc : layers) {
        std::string shapes;
        for (std::size_t i = 0; i < lc.out_shapes.size(); ++i)
            shapes += (i ? " " : "") + shape_text(lc.out_shapes[i]);
        std::snprintf(line, sizeof(line), "%-24s %-14s %14lld %16lld  %s\n", lc.node.c_str(),
                      lc.kind.c_str(), lc.params, lc.macs, shapes.c_str());
        out << line;
    }
    std::snprintf(line, sizeof(line), "%-24s %-14s %14lld %16lld  GFLOPs %.4f\n", "total", "",
                  total_params, total_macs, gflops());
    out << line;
    return out.str();
}

CompareReport compare_reports(const CostReport& a, const CostReport& b) {
    if (a.input_shape != b.input_shape)
        throw ValidationError("compare_reports: input shapes differ (" +
                              shape_text(a.input_shape) + " vs " + shape_text(b.input_shape) +
                              ")");
    CompareReport cr;
    cr.input_shape = a.input_shape;
    cr.total_params_a = a.total_params;
    cr.total_params_b = b.total_params;
    cr.total_macs_a = a.total_macs;
    cr.total_macs_b = b.total_macs;

    std::map<std::string, const LayerCost*> in_b;
    for (const LayerCost& lc : b.layers) in_b[lc.node] = &lc;
    std::map<std::string, bool> seen;
    for (const LayerCost& lc : a.layers) {
        CompareRow row;
        row.node = lc.node;
        row.in_a = true;
        row.params_a = lc.params;
        row.macs_a = lc.macs;
        auto it = in_b.find(lc.node);
        if (it != in_b.end()) {
            row.in_b = true;
            row.params_b = it->second->params;
            row.macs_b = it->second->macs;
            seen[lc.node] = true;
        }
        cr.rows.push_back(row);
    }
    for (const LayerCost& lc : b.layers) {
        if (seen.count(lc.node)) continue;
        CompareRow row;
        row.node = lc.node;
        row.in_b = true;
        row.params_b = lc.params;
        row.macs_b = lc.macs;
        cr.rows.push_back(row);
    }
    return cr;
}

namespace {

double pct(long long from, long long delta) {
    return from == 0 ? 0.0 : 100.0 * double(delta) / double(from);
}

}  // namespace

nlohmann::json CompareReport::to_json() const {
    nlohmann::json doc;
    doc["input_shape"] = input_shape;
    doc["rows"] = nlohmann::json::array();
    for (const CompareRow& r : rows)
        doc["rows"].push_back({{"node", r.node},
                               {"params_a", r.params_a},
                               {"params_b", r.params_b},
                               {"params_delta", r.dparams()},
                               {"params_delta_pct", pct(r.params_a, r.dparams())},
                               {"macs_a", r.macs_a},
                               {"macs_b", r.macs_b},
                               {"macs_delta", r.dmacs()},
                               {"macs_delta_pct", pct(r.macs_a, r.dmacs())}});
    doc["total_params_a"] = total_params_a;
    doc["total_params_b"] = total_params_b;
    doc["total_params_delta"] = total_params_b - total_params_a;
    doc["total_params_delta_pct"] = pct(total_params_a, total_params_b - total_params_a);
    doc["total_macs_a"] = total_macs_a;
    doc["total_macs_b"] = total_macs_b;
    doc["total_macs_delta"] = total_macs_b - total_macs_a;
    doc["total_macs_delta_pct"] = pct(total_macs_a, total_macs_b - total_macs_a);
    return doc;
}

std::string CompareReport::text_table() const {
    std::ostringstream out;
    char line[256];
    std::snprintf(line, sizeof(line), "%-24s %12s %12s %11s %8s %14s %14s %8s\n", "node",
                  "params_a", "params_b", "dparams", "d%", "macs_a", "macs_b", "d%");
    out << line;
    for (const CompareRow& r : rows) {
        std::snprintf(line, sizeof(line), "%-24s %12lld %12lld %11lld %7.2f%% %14lld %14lld %7.2f%%\n",
                      r.node.c_str(), r.params_a, r.params_b, r.dparams(),
                      pct(r.params_a, r.dparams()), r.macs_a, r.macs_b, pct(r.macs_a, r.dmacs()));
        out << line;
    }
    std::snprintf(line, sizeof(line), "%-24s %12lld %12lld %11lld %7.2f%% %14lld %14lld %7.2f%%\n",
                  "total", total_params_a, total_params_b, total_params_b - total_params_a,
                  pct(total_params_a, total_params_b - total_params_a), total_macs_a,
                  total_macs_b, pct(total_macs_a, total_macs_b - total_macs_a));
    out << line;
    return out.str();
}

}  // namespace litedet

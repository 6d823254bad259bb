#include "litedet/prune.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>

#include "kinds.hpp"
#include "litedet/cost.hpp"

namespace litedet {

// ------------------------------------------------------------- lamp_scores

LampScores lamp_scores(std::span<const float> weights) {
    if (weights.empty()) throw ConfigError("lamp_scores: empty weight array");
    const std::size_t n = weights.size();
    std::vector<double> sq(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(weights[i]))
            throw DomainError("lamp_scores: non-finite weight at index " + std::to_string(i));
        sq[i] = double(weights[i]) * double(weights[i]);
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    // ascending by squared magnitude; stable sort keeps original-index ties
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return sq[a] < sq[b]; });

    LampScores out;
    out.scores.assign(n, 0.0);
    std::vector<double> suffix(n, 0.0);
    double run = 0.0;
    for (std::size_t i = n; i-- > 0;) {
        run += sq[order[i]];
        suffix[i] = run;
    }
    if (run == 0.0) {
        out.all_zero = true;
        return out;
    }
    for (std::size_t i = 0; i < n; ++i) out.scores[order[i]] = sq[order[i]] / suffix[i];
    return out;
}

// --------------------------------------------------------- graph analysis

namespace {

constexpr const char* kInputRef = "@input";

bool is_passthrough(const std::string& kind) { return kind == "maxpool" || kind == "upsample2x"; }
bool is_head(const std::string& kind) { return kind == "gcdetect" || kind == "plain_detect"; }
bool is_coupled(const std::string& kind) {
    return kind == "faster_block" || kind == "ghost_hgblock";
}
bool bears_importance(const std::string& kind) {
    return kind == "conv" || kind == "ghost_conv" || kind == "hgstem" || kind == "faster_block" ||
           kind == "ghost_hgblock" || kind == "c2f_faster" || kind == "c2f" || kind == "sppf";
}

struct SourceRef {
    enum Kind { InputFull, Port, Rooted, Concat } kind = InputFull;
    std::string node;
};

struct Analysis {
    const ModelGraph* g = nullptr;
    std::vector<std::string> topo_ids;                  // single-output nodes, topo order
    std::map<std::string, int> width;                   // output channels
    std::map<std::string, const GraphNode*> by_id;      // all nodes
    std::map<std::string, std::string> parent;          // union-find over rooted nodes
    std::set<std::string> frozen_marks;                 // nodes whose group must stay full

    std::string find(const std::string& x) {
        std::string r = x;
        while (parent.at(r) != r) r = parent.at(r);
        // path compression
        std::string c = x;
        while (parent.at(c) != r) {
            std::string next = parent.at(c);
            parent[c] = r;
            c = next;
        }
        return r;
    }
    void unite(const std::string& a, const std::string& b) { parent[find(a)] = find(b); }

    bool rooted(const std::string& id) const {
        const std::string& kind = by_id.at(id)->kind;
        return !is_passthrough(kind) && kind != "concat" && !is_head(kind);
    }

    SourceRef resolve(const std::string& ref) const {
        if (ref == kInputRef) return {SourceRef::InputFull, ""};
        if (ref.find(':') != std::string::npos) return {SourceRef::Port, ref};
        const GraphNode* n = by_id.at(ref);
        if (is_passthrough(n->kind)) return resolve(n->inputs.at(0));
        if (n->kind == "concat") return {SourceRef::Concat, ref};
        return {SourceRef::Rooted, ref};
    }

    void freeze_source(const SourceRef& s) {
        if (s.kind == SourceRef::Rooted) {
            frozen_marks.insert(s.node);
        } else if (s.kind == SourceRef::Concat) {
            for (const std::string& ref : by_id.at(s.node)->inputs) freeze_source(resolve(ref));
        }
    }

    std::set<std::string> frozen_roots() {
        std::set<std::string> out;
        for (const std::string& m : frozen_marks) out.insert(find(m));
        return out;
    }

    // United rooted nodes per root.
    std::map<std::string, std::vector<std::string>> root_sets() {
        std::map<std::string, std::vector<std::string>> out;
        for (const std::string& id : topo_ids)
            if (rooted(id)) out[find(id)].push_back(id);
        return out;
    }
};

Analysis analyze(const ModelGraph& g) {
    Analysis a;
    a.g = &g;
    for (const GraphNode& n : g.nodes) a.by_id[n.id] = &n;

    // Widths via shape propagation at the meta shape.
    std::map<std::string, kinds::Shape> shapes;
    const kinds::Shape in_shape{g.meta.input_shape[0], g.meta.input_shape[1],
                                g.meta.input_shape[2], g.meta.input_shape[3]};
    for (int idx : g.topo_order) {
        const GraphNode& n = g.nodes[std::size_t(idx)];
        std::vector<kinds::Shape> ins;
        for (const std::string& ref : n.inputs)
            ins.push_back(ref == kInputRef ? in_shape : shapes.at(ref));
        kinds::BlockVar blk = kinds::make_block(n);
        const std::vector<kinds::Shape> outs = kinds::output_shapes(blk, ins);
        const std::vector<std::string> ports = kinds::port_names(blk);
        for (std::size_t p = 0; p < outs.size(); ++p)
            shapes[ports.size() == 1 ? n.id : n.id + ":" + ports[p]] = outs[p];
        if (ports.size() == 1) {
            a.topo_ids.push_back(n.id);
            a.width[n.id] = outs[0][1];
            if (a.rooted(n.id)) a.parent[n.id] = n.id;
        }
    }

    // Structural couplings and freezes.
    for (const std::string& id : a.topo_ids) {
        const GraphNode& n = *a.by_id.at(id);
        if (n.kind == "conv") {
            kinds::BlockVar blk = kinds::make_block(n);
            const ConvParams& cp = std::get<ConvBNAct>(blk).conv;
            if (cp.depthwise() && cp.groups > 1) {
                // depthwise follows its producer channel-for-channel
                SourceRef s = a.resolve(n.inputs.at(0));
                if (s.kind == SourceRef::Rooted)
                    a.unite(id, s.node);
                else {
                    a.frozen_marks.insert(id);
                    a.freeze_source(s);
                }
            } else if (cp.groups > 1) {
                // fixed group structure: neither the conv nor its producer
                // can lose channels without breaking group slicing
                a.frozen_marks.insert(id);
                a.freeze_source(a.resolve(n.inputs.at(0)));
            }
        } else if (is_coupled(n.kind)) {
            SourceRef s = a.resolve(n.inputs.at(0));
            if (s.kind == SourceRef::Rooted)
                a.unite(id, s.node);
            else {
                a.frozen_marks.insert(id);
                a.freeze_source(s);
            }
        } else if (n.kind == "add") {
            std::vector<SourceRef> srcs;
            bool all_rooted = true;
            for (const std::string& ref : n.inputs) {
                srcs.push_back(a.resolve(ref));
                all_rooted = all_rooted && srcs.back().kind == SourceRef::Rooted;
            }
            if (all_rooted) {
                for (const SourceRef& s : srcs) a.unite(id, s.node);
            } else {
                a.frozen_marks.insert(id);
                for (const SourceRef& s : srcs) a.freeze_source(s);
            }
        }
    }

    // Graph outputs keep their declared arity.
    for (const std::string& ref : g.outputs) a.freeze_source(a.resolve(ref));

    // Coupled widths must agree.
    for (const auto& [root, members] : a.root_sets()) {
        const int w0 = a.width.at(root);
        for (const std::string& m : members)
            if (a.width.at(m) != w0)
                throw ValidationError("coupling: node '" + m + "' (" +
                                      std::to_string(a.width.at(m)) + " channels) cannot share a "
                                      "mask with '" + root + "' (" + std::to_string(w0) + ")");
    }
    return a;
}

// Mask for an input ref given the per-node masks.
std::vector<std::uint8_t> mask_of_ref(const Analysis& a, const ModelGraph& g,
                                      const std::map<std::string, std::vector<std::uint8_t>>& keep,
                                      const std::string& ref) {
    if (ref == kInputRef)
        return std::vector<std::uint8_t>(std::size_t(g.meta.input_shape[1]), 1);
    if (ref.find(':') != std::string::npos) {
        // head ports are never pruned; derive width lazily (unused in practice)
        return {};
    }
    return keep.at(ref);
}

int count_kept(const std::vector<std::uint8_t>& m) {
    return (int)std::count(m.begin(), m.end(), std::uint8_t(1));
}

std::vector<int> kept_indices(const std::vector<std::uint8_t>& m) {
    std::vector<int> out;
    for (std::size_t i = 0; i < m.size(); ++i)
        if (m[i]) out.push_back((int)i);
    return out;
}

// Derive passthrough/concat masks from producers; owners/coupled come from
// the root masks already present in `keep`.
void finalize_masks(const Analysis& a, const ModelGraph& g,
                    std::map<std::string, std::vector<std::uint8_t>>& keep) {
    for (const std::string& id : a.topo_ids) {
        const GraphNode& n = *a.by_id.at(id);
        if (is_passthrough(n.kind)) {
            keep[id] = mask_of_ref(a, g, keep, n.inputs.at(0));
        } else if (n.kind == "concat") {
            std::vector<std::uint8_t> m;
            for (const std::string& ref : n.inputs) {
                const std::vector<std::uint8_t> part = mask_of_ref(a, g, keep, ref);
                m.insert(m.end(), part.begin(), part.end());
            }
            keep[id] = std::move(m);
        }
    }
}

// Exact parameter count of the graph under the given masks; mirrors what
// apply_prune followed by the analyzer would report.
long long plan_params(const Analysis& a, const ModelGraph& g,
                      const std::map<std::string, std::vector<std::uint8_t>>& keep) {
    long long total = 0;
    auto conv_params = [](long long rows, long long cols_per_group, long long kh, long long kw) {
        return rows * cols_per_group * kh * kw + rows;  // + bias
    };
    for (const GraphNode& n : g.nodes) {
        kinds::BlockVar blk = kinds::make_block(n);
        const bool single = kinds::port_names(blk).size() == 1;
        const int kout = single ? count_kept(keep.at(n.id)) : 0;
        std::vector<int> kins;
        for (const std::string& ref : n.inputs) {
            const std::vector<std::uint8_t> m = mask_of_ref(a, g, keep, ref);
            kins.push_back(m.empty() ? 0 : count_kept(m));
        }
        const int kin = kins.empty() ? 0 : kins[0];

        if (n.kind == "conv") {
            const ConvParams& cp = std::get<ConvBNAct>(blk).conv;
            if (cp.depthwise() && cp.groups > 1)
                total += conv_params(kout, 1, cp.k_h, cp.k_w);
            else if (cp.groups > 1)
                total += conv_params(kout, cp.c_in / cp.groups, cp.k_h, cp.k_w);
            else
                total += conv_params(kout, kin, cp.k_h, cp.k_w);
        } else if (n.kind == "ghost_conv") {
            const auto& b = std::get<GhostConvBlock>(blk);
            const int half = kout / 2;
            total += conv_params(half, kin, b.k, b.k);
            total += conv_params(half, 1, 5, 5);
        } else if (n.kind == "ghost_hgblock") {
            // the ghost chain shrinks with the block mask (pair-tied)
            const auto& b = std::get<GhostHGBlock>(blk);
            const int half = kout / 2;
            total += 3 * (conv_params(half, kout, b.k, b.k) + conv_params(half, 1, 5, 5));
            total += conv_params(kout, 3 * kout, 1, 1);  // fuse
        } else if (n.kind == "hgstem") {
            const auto& b = std::get<HGStemBlock>(blk);
            total += conv_params(b.c_mid, kin, 2, 2);
            total += conv_params(b.c_mid, b.c_mid, 1, 1);
            total += conv_params(b.c_mid, 1, 5, 5);
            total += conv_params(kout, b.c_mid, 1, 1);
        } else if (n.kind == "faster_block") {
            const auto& b = std::get<FasterBlock>(blk);
            const std::vector<std::uint8_t>& m = keep.at(n.id);
            int cp_kept = 0;
            for (int j = 0; j < b.c_p; ++j) cp_kept += m[std::size_t(j)] ? 1 : 0;
            total += conv_params(cp_kept, cp_kept, 3, 3);
            total += conv_params(kout, kout, 1, 1);
        } else if (n.kind == "c2f_faster") {
            const auto& b = std::get<C2fFasterBlock>(blk);
            total += conv_params(2 * b.hidden, kin, 1, 1);
            for (int i = 0; i < b.n; ++i) {
                total += conv_params(b.blocks[std::size_t(i)].c_p, b.blocks[std::size_t(i)].c_p, 3, 3);
                total += conv_params(b.hidden, b.hidden, 1, 1);
            }
            total += conv_params(kout, 2 * b.hidden, 1, 1);
        } else if (n.kind == "c2f") {
            const auto& b = std::get<C2fBlock>(blk);
            total += conv_params(2 * b.hidden, kin, 1, 1);
            total += 2LL * b.n * conv_params(b.hidden, b.hidden, 3, 3);
            total += conv_params(kout, 2 * b.hidden, 1, 1);
        } else if (n.kind == "sppf") {
            const auto& b = std::get<SPPFBlock>(blk);
            total += conv_params(b.c_mid, kin, 1, 1);
            total += conv_params(kout, 4 * b.c_mid, 1, 1);
        } else if (n.kind == "gcdetect") {
            const auto& b = std::get<GCDetectHead>(blk);
            for (int s = 0; s < 3; ++s) {
                total += conv_params(b.w_head, kins[std::size_t(s)], 1, 1);
                total += 2 * conv_params(b.w_head, b.w_head / b.groups, 3, 3);
                total += conv_params(b.num_classes, b.w_head, 1, 1);
                total += conv_params(4, b.w_head, 1, 1);
            }
        } else if (n.kind == "plain_detect") {
            const auto& b = std::get<PlainDetectHead>(blk);
            for (int s = 0; s < 3; ++s) {
                total += 2 * conv_params(b.width, kins[std::size_t(s)], 3, 3);
                total += 2 * conv_params(b.width, b.width, 3, 3);
                total += conv_params(b.num_classes, b.width, 1, 1);
                total += conv_params(4, b.width, 1, 1);
            }
        }
        // maxpool / upsample2x / concat / add carry no parameters
    }
    return total;
}

}  // namespace

// ------------------------------------------------------ channel_importance

std::vector<ChannelScore> channel_importance(const ModelGraph& g, const WeightStore& w,
                                             const std::string& node_id) {
    const GraphNode& n = g.node(node_id);
    if (!bears_importance(n.kind)) return {};

    kinds::BlockVar blk = kinds::make_block(n);

    // Flattened output-projection weights plus each element's output channel.
    std::vector<float> flat;
    std::vector<int> chan;
    auto take = [&](const std::string& pname, const ConvParams& cp,
                    const std::function<int(int)>& row_to_channel) {
        const std::string key = node_id + "." + pname + ".weight";
        const float* v = w.view(key, (std::size_t)cp.weight_count());
        const long long per_row = cp.weight_count() / cp.c_out;
        for (long long i = 0; i < cp.weight_count(); ++i) {
            flat.push_back(v[i]);
            chan.push_back(row_to_channel(int(i / per_row)));
        }
    };
    auto ident = [](int r) { return r; };

    int channels = 0;
    if (n.kind == "conv") {
        const ConvParams& cp = std::get<ConvBNAct>(blk).conv;
        channels = cp.c_out;
        take("conv", cp, ident);
    } else if (n.kind == "ghost_conv") {
        const auto& b = std::get<GhostConvBlock>(blk);
        channels = b.c_out;
        const int half = b.c_out / 2;
        take("primary", b.primary, ident);
        take("cheap", b.cheap, [half](int r) { return half + r; });
    } else if (n.kind == "hgstem") {
        const auto& b = std::get<HGStemBlock>(blk);
        channels = b.c_out;
        take("stage3", b.stage3, ident);
    } else if (n.kind == "faster_block") {
        const auto& b = std::get<FasterBlock>(blk);
        channels = b.c;
        take("fuse", b.fuse, ident);
    } else if (n.kind == "ghost_hgblock") {
        const auto& b = std::get<GhostHGBlock>(blk);
        channels = b.c;
        take("fuse", b.fuse, ident);
    } else if (n.kind == "c2f_faster") {
        const auto& b = std::get<C2fFasterBlock>(blk);
        channels = b.c_out;
        take("exit", b.exit_conv, ident);
    } else if (n.kind == "c2f") {
        const auto& b = std::get<C2fBlock>(blk);
        channels = b.c_out;
        take("exit", b.exit_conv, ident);
    } else if (n.kind == "sppf") {
        const auto& b = std::get<SPPFBlock>(blk);
        channels = b.c_out;
        take("fuse", b.fuse, ident);
    }

    const LampScores ls = lamp_scores(flat);
    std::vector<ChannelScore> out;
    out.resize(std::size_t(channels));
    for (int j = 0; j < channels; ++j) out[std::size_t(j)] = ChannelScore{node_id, j, 0.0};
    for (std::size_t i = 0; i < flat.size(); ++i)
        out[std::size_t(chan[i])].importance += ls.scores[i];
    return out;
}

// --------------------------------------------------- build_coupling_groups

std::vector<CouplingGroup> build_coupling_groups(const ModelGraph& g) {
    Analysis a = analyze(g);
    std::vector<CouplingGroup> out;
    for (auto& [root, members] : a.root_sets()) {
        std::vector<std::string> named;
        for (const std::string& m : members)
            if (bears_importance(a.by_id.at(m)->kind)) named.push_back(m);
        if (named.size() >= 2) {
            std::sort(named.begin(), named.end());
            out.push_back(CouplingGroup{std::move(named)});
        }
    }
    std::sort(out.begin(), out.end(), [](const CouplingGroup& x, const CouplingGroup& y) {
        return x.members.front() < y.members.front();
    });
    return out;
}

// ---------------------------------------------------------- select_channels

std::set<std::string> default_protected(const ModelGraph& g) {
    std::set<std::string> out;
    for (const GraphNode& n : g.nodes)
        if (is_head(n.kind)) out.insert(n.id);
    return out;
}

namespace {

struct Group {
    std::string root;
    int channels = 0;
    std::vector<std::string> members;  // importance-bearing united nodes
    std::vector<std::vector<int>> units;
    std::vector<double> importance;                       // per channel
    std::vector<std::pair<std::string, int>> faster_cps;  // member, partial width
    bool has_ghost = false;
};

struct Candidate {
    double importance = 0;
    std::string root;
    int unit = 0;
    int min_channel = 0;
};

bool can_remove(const Group& grp, const std::vector<int>& unit,
                const std::vector<std::uint8_t>& mask, int kept) {
    const int kept_after = kept - (int)unit.size();
    if (kept_after < 1) return false;
    if (grp.has_ghost && kept_after < 2) return false;
    for (const auto& [member, cp] : grp.faster_cps) {
        int head_kept = 0;
        for (int j = 0; j < cp; ++j)
            if (mask[std::size_t(j)]) ++head_kept;
        for (int j : unit)
            if (j < cp) --head_kept;
        if (head_kept < 1) return false;
    }
    return true;
}

struct Measured {
    double sparsity = 0;
    double mac_ratio = 1;
};

Measured measure_plan(const ModelGraph& g, const WeightStore& w, const PrunePlan& plan,
                      const CostReport& base) {
    auto [pg, pw] = apply_prune(g, w, plan);
    const CostReport pruned = graph_cost(pg);
    Measured m;
    m.sparsity = 1.0 - double(pruned.total_params) / double(base.total_params);
    m.mac_ratio = double(base.total_macs) / double(pruned.total_macs);
    return m;
}

}  // namespace

PrunePlan select_channels(const ModelGraph& g, const WeightStore& w, double sparsity,
                          const std::set<std::string>& protected_nodes) {
    if (!(sparsity >= 0.0) || sparsity >= 1.0)
        throw ConfigError("select_channels: sparsity must be in [0, 1), got " +
                          std::to_string(sparsity));

    Analysis a = analyze(g);
    PrunePlan plan;
    plan.graph_digest = g.digest();
    for (const std::string& id : a.topo_ids)
        plan.keep[id] = std::vector<std::uint8_t>(std::size_t(a.width.at(id)), 1);

    const CostReport base = graph_cost(g);

    if (sparsity > 0.0) {
        const std::set<std::string> frozen = a.frozen_roots();
        std::map<std::string, Group> groups;
        for (auto& [root, united] : a.root_sets()) {
            if (frozen.count(root)) continue;
            bool prot = false;
            for (const std::string& m : united) prot = prot || protected_nodes.count(m) != 0;
            if (prot) continue;

            Group grp;
            grp.root = root;
            grp.channels = a.width.at(root);
            grp.importance.assign(std::size_t(grp.channels), 0.0);
            for (const std::string& m : united) {
                const std::string& kind = a.by_id.at(m)->kind;
                if (!bears_importance(kind)) continue;
                grp.members.push_back(m);
                // ghost structure ties channel j to j + c/2 (primary feeds
                // its depthwise cheap map), so these prune in pairs
                if (kind == "ghost_conv" || kind == "ghost_hgblock") grp.has_ghost = true;
                if (kind == "faster_block") {
                    kinds::BlockVar blk = kinds::make_block(*a.by_id.at(m));
                    grp.faster_cps.emplace_back(m, std::get<FasterBlock>(blk).c_p);
                }
                for (const ChannelScore& cs : channel_importance(g, w, m))
                    grp.importance[std::size_t(cs.channel)] += cs.importance;
            }
            if (grp.members.empty()) continue;

            // Channel units: singletons, except ghost halves tied pairwise.
            std::vector<int> unit_of(std::size_t(grp.channels));
            std::iota(unit_of.begin(), unit_of.end(), 0);
            if (grp.has_ghost) {
                const int half = grp.channels / 2;
                for (int j = 0; j < half; ++j) unit_of[std::size_t(half + j)] = j;
            }
            std::map<int, std::vector<int>> by_unit;
            for (int j = 0; j < grp.channels; ++j) by_unit[unit_of[std::size_t(j)]].push_back(j);
            for (auto& [u, chans] : by_unit) grp.units.push_back(chans);
            groups[root] = std::move(grp);
        }

        std::vector<Candidate> cands;
        for (const auto& [root, grp] : groups) {
            for (std::size_t u = 0; u < grp.units.size(); ++u) {
                Candidate c;
                c.root = root;
                c.unit = (int)u;
                c.min_channel = grp.units[u].front();
                for (int j : grp.units[u]) c.importance += grp.importance[std::size_t(j)];
                cands.push_back(c);
            }
        }
        std::sort(cands.begin(), cands.end(), [](const Candidate& x, const Candidate& y) {
            if (x.importance != y.importance) return x.importance < y.importance;
            if (x.root != y.root) return x.root < y.root;
            return x.min_channel < y.min_channel;
        });

        std::map<std::string, std::vector<std::uint8_t>> root_mask;
        std::map<std::string, int> root_kept;
        for (const auto& [root, grp] : groups) {
            root_mask[root] = std::vector<std::uint8_t>(std::size_t(grp.channels), 1);
            root_kept[root] = grp.channels;
        }

        auto masks_from_roots = [&]() {
            for (const auto& [root, grp] : groups)
                for (const std::string& id : a.topo_ids)
                    if (a.rooted(id) && a.find(id) == root) plan.keep[id] = root_mask[root];
            finalize_masks(a, g, plan.keep);
        };

        masks_from_roots();
        const long long p0 = plan_params(a, g, plan.keep);
        long long removed = 0;
        for (const Candidate& c : cands) {
            if (double(removed) / double(p0) >= sparsity) break;
            Group& grp = groups[c.root];
            const std::vector<int>& unit = grp.units[std::size_t(c.unit)];
            if (!can_remove(grp, unit, root_mask[c.root], root_kept[c.root])) continue;
            for (int j : unit) root_mask[c.root][std::size_t(j)] = 0;
            root_kept[c.root] -= (int)unit.size();
            masks_from_roots();
            removed = p0 - plan_params(a, g, plan.keep);
        }
        if (double(removed) / double(p0) < sparsity)
            plan.warning = "requested sparsity " + std::to_string(sparsity) +
                           " unreachable; structural floors stop at " +
                           std::to_string(double(removed) / double(p0));
    }

    const Measured m = measure_plan(g, w, plan, base);
    plan.achieved_sparsity = m.sparsity;
    plan.achieved_mac_ratio = m.mac_ratio;
    return plan;
}

// -------------------------------------------------------------- apply_prune

namespace {

std::vector<float> slice_weight(const float* w, int cin_g, int kh, int kw,
                                const std::vector<int>& rows, const std::vector<int>& cols) {
    const std::size_t kk = std::size_t(kh) * kw;
    std::vector<float> out;
    out.reserve(rows.size() * cols.size() * kk);
    for (int r : rows)
        for (int c : cols) {
            const float* src = w + (std::size_t(r) * cin_g + c) * kk;
            out.insert(out.end(), src, src + kk);
        }
    return out;
}

std::vector<int> all_indices(int n) {
    std::vector<int> out;
    out.resize(std::size_t(n));
    std::iota(out.begin(), out.end(), 0);
    return out;
}

void set_or_erase(nlohmann::json& attrs, const char* key, int value, int default_value) {
    if (value == default_value)
        attrs.erase(key);
    else
        attrs[key] = value;
}

}  // namespace

std::pair<ModelGraph, WeightStore> apply_prune(const ModelGraph& g, const WeightStore& w,
                                               const PrunePlan& plan) {
    if (plan.graph_digest != g.digest())
        throw ValidationError("apply_prune: plan was built for a different graph (digest " +
                              plan.graph_digest + " != " + g.digest() + ")");

    Analysis a = analyze(g);
    // Plan sanity: coverage, widths, coupling identity, frozen groups intact.
    for (const std::string& id : a.topo_ids) {
        auto it = plan.keep.find(id);
        if (it == plan.keep.end())
            throw ValidationError("apply_prune: plan has no mask for node '" + id + "'");
        if ((int)it->second.size() != a.width.at(id))
            throw ValidationError("apply_prune: mask for '" + id + "' has " +
                                  std::to_string(it->second.size()) + " entries, node has " +
                                  std::to_string(a.width.at(id)) + " channels");
        if (count_kept(it->second) < 1)
            throw ValidationError("apply_prune: mask for '" + id + "' keeps no channels");
    }
    for (const auto& [root, united] : a.root_sets())
        for (const std::string& m : united)
            if (plan.keep.at(m) != plan.keep.at(root))
                throw ValidationError("apply_prune: coupled nodes '" + m + "' and '" + root +
                                      "' have different masks");
    for (const std::string& root : a.frozen_roots())
        if (count_kept(plan.keep.at(root)) != a.width.at(root))
            throw ValidationError("apply_prune: node '" + root +
                                  "' is structurally frozen but its mask drops channels");

    // Derived masks must match what the producers imply.
    {
        std::map<std::string, std::vector<std::uint8_t>> derived;
        for (const auto& [id, m] : plan.keep) derived[id] = m;
        finalize_masks(a, g, derived);
        for (const std::string& id : a.topo_ids)
            if (derived.at(id) != plan.keep.at(id))
                throw ValidationError("apply_prune: mask for '" + id +
                                      "' disagrees with its producers");
    }

    ModelGraph pruned;
    pruned.meta = g.meta;
    pruned.outputs = g.outputs;
    WeightStore out;

    // Gather per-node input masks, rewrite weights and attrs.
    std::map<int, std::vector<std::vector<std::uint8_t>>> in_masks;
    for (int idx : g.topo_order) {
        const GraphNode& n = g.nodes[std::size_t(idx)];
        std::vector<std::vector<std::uint8_t>> ins;
        for (const std::string& ref : n.inputs) ins.push_back(mask_of_ref(a, g, plan.keep, ref));
        in_masks[idx] = std::move(ins);
    }

    pruned.nodes = g.nodes;
    for (int idx : g.topo_order) {
        const GraphNode& n = g.nodes[std::size_t(idx)];
        GraphNode& pn = pruned.nodes[std::size_t(idx)];
        kinds::BlockVar blk = kinds::make_block(n);
        const bool single = kinds::port_names(blk).size() == 1;
        const std::vector<std::vector<std::uint8_t>>& ins = in_masks[idx];
        const std::vector<int> kin =
            ins.empty() || ins[0].empty() ? std::vector<int>{} : kept_indices(ins[0]);
        const std::vector<int> kout = single ? kept_indices(plan.keep.at(n.id)) : std::vector<int>{};

        auto copy_conv = [&](const std::string& pname, const ConvParams& cp,
                             const std::vector<int>& rows, const std::vector<int>& cols,
                             int cin_g_new) {
            const std::string base = n.id + "." + pname;
            const float* wt = w.view(base + ".weight", (std::size_t)cp.weight_count());
            const float* bs = w.view(base + ".bias", (std::size_t)cp.c_out);
            std::vector<float> nw = slice_weight(wt, cp.c_in / cp.groups, cp.k_h, cp.k_w, rows, cols);
            float* dst = out.add(base + ".weight", {(int)rows.size(), cin_g_new, cp.k_h, cp.k_w});
            std::copy(nw.begin(), nw.end(), dst);
            float* bdst = out.add(base + ".bias", {(int)rows.size()});
            for (std::size_t i = 0; i < rows.size(); ++i) bdst[i] = bs[rows[i]];
        };

        if (n.kind == "conv") {
            const ConvParams& cp = std::get<ConvBNAct>(blk).conv;
            if (cp.depthwise() && cp.groups > 1) {
                copy_conv("conv", cp, kout, {0}, 1);
                pn.attrs["groups"] = (int)kout.size();
            } else if (cp.groups > 1) {
                // frozen by analysis; masks are full
                copy_conv("conv", cp, kout, all_indices(cp.c_in / cp.groups), cp.c_in / cp.groups);
            } else {
                copy_conv("conv", cp, kout, kin, (int)kin.size());
            }
            pn.attrs["c_in"] = (int)kin.size();
            pn.attrs["c_out"] = (int)kout.size();
        } else if (n.kind == "ghost_conv") {
            const auto& b = std::get<GhostConvBlock>(blk);
            const int half = b.c_out / 2;
            const std::vector<std::uint8_t>& m = plan.keep.at(n.id);
            std::vector<int> pair_rows;
            for (int j = 0; j < half; ++j) {
                if (m[std::size_t(j)] != m[std::size_t(half + j)])
                    throw ValidationError("apply_prune: ghost_conv '" + n.id +
                                          "' mask breaks primary/cheap pairing at channel " +
                                          std::to_string(j));
                if (m[std::size_t(j)]) pair_rows.push_back(j);
            }
            copy_conv("primary", b.primary, pair_rows, kin, (int)kin.size());
            copy_conv("cheap", b.cheap, pair_rows, {0}, 1);
            pn.attrs["c_in"] = (int)kin.size();
            pn.attrs["c_out"] = (int)pair_rows.size() * 2;
        } else if (n.kind == "ghost_hgblock") {
            // Channel j of every ghost stage is identified with block channel
            // j, so the whole chain shrinks by the (pair-symmetric) mask.
            const auto& b = std::get<GhostHGBlock>(blk);
            const std::vector<std::uint8_t>& m = plan.keep.at(n.id);
            const int half = b.c / 2;
            std::vector<int> pair_rows;
            for (int j = 0; j < half; ++j) {
                if (m[std::size_t(j)] != m[std::size_t(half + j)])
                    throw ValidationError("apply_prune: ghost_hgblock '" + n.id +
                                          "' mask breaks primary/cheap pairing at channel " +
                                          std::to_string(j));
                if (m[std::size_t(j)]) pair_rows.push_back(j);
            }
            auto ghost = [&](const char* p, const GhostConvBlock& gc) {
                copy_conv(std::string(p) + ".primary", gc.primary, pair_rows, kout,
                          (int)kout.size());
                copy_conv(std::string(p) + ".cheap", gc.cheap, pair_rows, {0}, 1);
            };
            ghost("ghost1", b.ghost1);
            ghost("ghost2", b.ghost2);
            ghost("ghost3", b.ghost3);
            std::vector<int> fuse_cols;  // mask repeated across the 3 concat slots
            for (int rep = 0; rep < 3; ++rep)
                for (int j : kout) fuse_cols.push_back(rep * b.c + j);
            copy_conv("fuse", b.fuse, kout, fuse_cols, 3 * (int)kout.size());
            pn.attrs["c"] = (int)kout.size();
        } else if (n.kind == "hgstem") {
            const auto& b = std::get<HGStemBlock>(blk);
            copy_conv("stage1", b.stage1, all_indices(b.c_mid), kin, (int)kin.size());
            copy_conv("stage2a", b.stage2a, all_indices(b.c_mid), all_indices(b.c_mid), b.c_mid);
            copy_conv("stage2b", b.stage2b, all_indices(b.c_mid), {0}, 1);
            copy_conv("stage3", b.stage3, kout, all_indices(b.c_mid), b.c_mid);
            pn.attrs["c_in"] = (int)kin.size();
            pn.attrs["c_out"] = (int)kout.size();
        } else if (n.kind == "faster_block") {
            const auto& b = std::get<FasterBlock>(blk);
            const std::vector<std::uint8_t>& m = plan.keep.at(n.id);
            std::vector<int> head_rows;  // kept channels inside the partial slice
            for (int j = 0; j < b.c_p; ++j)
                if (m[std::size_t(j)]) head_rows.push_back(j);
            copy_conv("pconv", b.pconv, head_rows, head_rows, (int)head_rows.size());
            copy_conv("fuse", b.fuse, kout, kout, (int)kout.size());
            pn.attrs["c"] = (int)kout.size();
            set_or_erase(pn.attrs, "c_p", (int)head_rows.size(), (int)kout.size() / 4);
        } else if (n.kind == "c2f_faster" || n.kind == "c2f") {
            int hidden = 0, nblocks = 0;
            if (n.kind == "c2f_faster") {
                const auto& b = std::get<C2fFasterBlock>(blk);
                hidden = b.hidden;
                nblocks = b.n;
                copy_conv("entry", b.entry, all_indices(2 * hidden), kin, (int)kin.size());
                for (int i = 0; i < nblocks; ++i) {
                    const auto& fb = b.blocks[std::size_t(i)];
                    const std::string p = "blocks." + std::to_string(i);
                    copy_conv(p + ".pconv", fb.pconv, all_indices(fb.c_p), all_indices(fb.c_p),
                              fb.c_p);
                    copy_conv(p + ".fuse", fb.fuse, all_indices(hidden), all_indices(hidden),
                              hidden);
                }
                copy_conv("exit", b.exit_conv, kout, all_indices(2 * hidden), 2 * hidden);
            } else {
                const auto& b = std::get<C2fBlock>(blk);
                hidden = b.hidden;
                nblocks = b.n;
                copy_conv("entry", b.entry, all_indices(2 * hidden), kin, (int)kin.size());
                for (int i = 0; i < nblocks; ++i) {
                    const std::string p = "blocks." + std::to_string(i);
                    copy_conv(p + ".conv1", b.blocks[std::size_t(i)].conv1, all_indices(hidden),
                              all_indices(hidden), hidden);
                    copy_conv(p + ".conv2", b.blocks[std::size_t(i)].conv2, all_indices(hidden),
                              all_indices(hidden), hidden);
                }
                copy_conv("exit", b.exit_conv, kout, all_indices(2 * hidden), 2 * hidden);
            }
            pn.attrs["c_in"] = (int)kin.size();
            pn.attrs["c_out"] = (int)kout.size();
            set_or_erase(pn.attrs, "hidden", hidden, (int)kout.size() / 2);
        } else if (n.kind == "sppf") {
            const auto& b = std::get<SPPFBlock>(blk);
            copy_conv("reduce", b.reduce, all_indices(b.c_mid), kin, (int)kin.size());
            copy_conv("fuse", b.fuse, kout, all_indices(4 * b.c_mid), 4 * b.c_mid);
            pn.attrs["c_in"] = (int)kin.size();
            pn.attrs["c_out"] = (int)kout.size();
            set_or_erase(pn.attrs, "c_mid", b.c_mid, (int)kin.size() / 2);
        } else if (n.kind == "gcdetect") {
            const auto& b = std::get<GCDetectHead>(blk);
            nlohmann::json in_ch = nlohmann::json::array();
            for (int s = 0; s < 3; ++s) {
                const std::vector<int> cols = kept_indices(ins[std::size_t(s)]);
                const std::string p = "s" + std::to_string(s) + ".";
                const auto& sc = b.scales[std::size_t(s)];
                copy_conv(p + "align", sc.align, all_indices(b.w_head), cols, (int)cols.size());
                copy_conv(p + "gconv1", sc.gconv1, all_indices(b.w_head),
                          all_indices(b.w_head / b.groups), b.w_head / b.groups);
                copy_conv(p + "gconv2", sc.gconv2, all_indices(b.w_head),
                          all_indices(b.w_head / b.groups), b.w_head / b.groups);
                copy_conv(p + "cls", sc.cls_out, all_indices(b.num_classes),
                          all_indices(b.w_head), b.w_head);
                copy_conv(p + "box", sc.box_out, all_indices(4), all_indices(b.w_head), b.w_head);
                in_ch.push_back((int)cols.size());
            }
            pn.attrs["in_channels"] = in_ch;
        } else if (n.kind == "plain_detect") {
            const auto& b = std::get<PlainDetectHead>(blk);
            nlohmann::json in_ch = nlohmann::json::array();
            for (int s = 0; s < 3; ++s) {
                const std::vector<int> cols = kept_indices(ins[std::size_t(s)]);
                const std::string p = "s" + std::to_string(s) + ".";
                const auto& sc = b.scales[std::size_t(s)];
                copy_conv(p + "cls1", sc.cls1, all_indices(b.width), cols, (int)cols.size());
                copy_conv(p + "cls2", sc.cls2, all_indices(b.width), all_indices(b.width),
                          b.width);
                copy_conv(p + "cls", sc.cls_out, all_indices(b.num_classes),
                          all_indices(b.width), b.width);
                copy_conv(p + "box1", sc.box1, all_indices(b.width), cols, (int)cols.size());
                copy_conv(p + "box2", sc.box2, all_indices(b.width), all_indices(b.width),
                          b.width);
                copy_conv(p + "box", sc.box_out, all_indices(4), all_indices(b.width), b.width);
                in_ch.push_back((int)cols.size());
            }
            pn.attrs["in_channels"] = in_ch;
        }
        // maxpool / upsample2x / concat / add keep their attrs
    }

    pruned.validate();
    return {std::move(pruned), std::move(out)};
}

// ------------------------------------------------------------ search_speedup

PrunePlan search_speedup(const ModelGraph& g, const WeightStore& w, double target, double tol,
                         const std::set<std::string>& protected_nodes) {
    if (!(target >= 1.0))
        throw ConfigError("search_speedup: target speed-up must be >= 1, got " +
                          std::to_string(target));
    if (!(tol > 0)) throw ConfigError("search_speedup: tolerance must be positive");

    auto within = [&](const PrunePlan& p) {
        return std::abs(p.achieved_mac_ratio - target) <= tol * target;
    };

    PrunePlan best = select_channels(g, w, 0.0, protected_nodes);
    if (within(best)) return best;

    double lo = 0.0, hi = 0.99;
    PrunePlan top = select_channels(g, w, hi, protected_nodes);
    if (within(top)) return top;
    if (std::abs(top.achieved_mac_ratio - target) < std::abs(best.achieved_mac_ratio - target))
        best = top;
    if (top.achieved_mac_ratio < target) {
        best.warning = "target speed-up " + std::to_string(target) +
                       " unreachable; closest achieved " +
                       std::to_string(best.achieved_mac_ratio);
        return best;
    }

    for (int iter = 0; iter < 48; ++iter) {
        const double mid = (lo + hi) / 2;
        PrunePlan p = select_channels(g, w, mid, protected_nodes);
        if (within(p)) return p;
        if (std::abs(p.achieved_mac_ratio - target) < std::abs(best.achieved_mac_ratio - target))
            best = p;
        if (p.achieved_mac_ratio < target)
            lo = mid;
        else
            hi = mid;
    }
    best.warning = "target speed-up " + std::to_string(target) +
                   " not reached within tolerance; closest achieved " +
                   std::to_string(best.achieved_mac_ratio);
    return best;
}

// ---------------------------------------------------------- plan serialization

nlohmann::json PrunePlan::to_json() const {
    nlohmann::json doc;
    doc["masks"] = nlohmann::json::object();
    for (const auto& [id, m] : keep) {
        nlohmann::json arr = nlohmann::json::array();
        for (std::uint8_t v : m) arr.push_back((int)v);
        doc["masks"][id] = std::move(arr);
    }
    doc["achieved_sparsity"] = achieved_sparsity;
    doc["achieved_mac_ratio"] = achieved_mac_ratio;
    doc["graph_digest"] = graph_digest;
    if (!warning.empty()) doc["warning"] = warning;
    return doc;
}

PrunePlan PrunePlan::from_json(const nlohmann::json& doc) {
    PrunePlan p;
    if (!doc.contains("masks") || !doc["masks"].is_object())
        throw IoError("prune plan: missing masks object");
    for (const auto& [id, arr] : doc["masks"].items()) {
        std::vector<std::uint8_t> m;
        for (const auto& v : arr) m.push_back(v.get<int>() ? 1 : 0);
        p.keep[id] = std::move(m);
    }
    p.achieved_sparsity = doc.value("achieved_sparsity", 0.0);
    p.achieved_mac_ratio = doc.value("achieved_mac_ratio", 1.0);
    p.graph_digest = doc.value("graph_digest", "");
    p.warning = doc.value("warning", "");
    return p;
}

void PrunePlan::save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw IoError("prune plan: cannot open '" + path + "' for writing");
    f << to_json().dump(2) << "\n";
}

PrunePlan PrunePlan::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("prune plan: cannot open '" + path + "'");
    nlohmann::json doc;
    try {
        f >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("prune plan: '" + path + "' is not valid JSON: " + e.what());
    }
    return from_json(doc);
}

}  // namespace litedet

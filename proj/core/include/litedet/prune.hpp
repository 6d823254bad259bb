#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "litedet/graph.hpp"

namespace litedet {

struct LampScores {
    std::vector<double> scores;  // original index order
    bool all_zero = false;       // denominator guard fired
};

// Layer-adaptive magnitude score: sort ascending by squared magnitude (ties
// by original index), score at sorted position u is W[u]^2 / sum_{v>=u} W[v]^2.
LampScores lamp_scores(std::span<const float> weights);

struct ChannelScore {
    std::string node;
    int channel = 0;
    double importance = 0;  // sum of member-weight scores for this channel
};

// Importance of each output channel of a prunable node; empty for kinds with
// no prunable output projection (heads, pooling, concat, add).
std::vector<ChannelScore> channel_importance(const ModelGraph& g, const WeightStore& w,
                                             const std::string& node_id);

/// Nodes whose output-channel masks must be identical: producers feeding a
/// common elementwise add, residual blocks tied to their producers, a conv
/// and its depthwise follower.
struct CouplingGroup {
    std::vector<std::string> members;
};

std::vector<CouplingGroup> build_coupling_groups(const ModelGraph& g);

struct PrunePlan {
    // 1 = keep, 0 = drop; one vector per single-output node, covering its
    // output channels. Masks of a coupling group are identical.
    std::map<std::string, std::vector<std::uint8_t>> keep;
    double achieved_sparsity = 0.0;
    double achieved_mac_ratio = 1.0;
    std::string warning;       // non-empty when the request was unreachable
    std::string graph_digest;  // must match the graph the plan was built for

    nlohmann::json to_json() const;
    static PrunePlan from_json(const nlohmann::json& doc);
    void save(const std::string& path) const;
    static PrunePlan load(const std::string& path);
};

// Detection heads; protected from output pruning by default.
std::set<std::string> default_protected(const ModelGraph& g);

// Globally rank prunable channels by aggregated LAMP importance (ascending)
// and remove the lowest until the removed-parameter fraction reaches
// `sparsity` or structural floors stop progress.
PrunePlan select_channels(const ModelGraph& g, const WeightStore& w, double sparsity,
                          const std::set<std::string>& protected_nodes);

// Rewrites weights and attrs so the pruned graph validates and forwards;
// consumers lose the matching input slices through concat offsets.
std::pair<ModelGraph, WeightStore> apply_prune(const ModelGraph& g, const WeightStore& w,
                                               const PrunePlan& plan);

// Bisection over sparsity until baseline/pruned MACs is within tol*target of
// `target`; returns the closest achievable plan (with a warning) otherwise.
PrunePlan search_speedup(const ModelGraph& g, const WeightStore& w, double target, double tol,
                         const std::set<std::string>& protected_nodes);

}  // namespace litedet

#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "onp/nn/engine.hpp"

namespace onp {

// Connection strength of each output channel to the previous layer's
// channels: q[i][j] = l1-norm (sum of absolute entries) of kernel theta_ij.
struct ConnectionProfile {
    std::vector<std::vector<double>> q;  // [c_out][c_in]

    int channels() const { return static_cast<int>(q.size()); }
    double inf_norm(int i) const {
        double m = 0.0;
        for (double v : q[static_cast<size_t>(i)]) m = std::max(m, v);
        return m;
    }
};

inline ConnectionProfile connection_profile(const Tensor& layer_weights) {
    if (layer_weights.ndim() != 4) throw InputError("connection_profile expects a 4-d weight");
    const int c_out = layer_weights.dim(0), c_in = layer_weights.dim(1);
    const int khw = layer_weights.dim(2) * layer_weights.dim(3);
    ConnectionProfile p;
    p.q.assign(static_cast<size_t>(c_out), std::vector<double>(static_cast<size_t>(c_in), 0.0));
    for (int i = 0; i < c_out; ++i)
        for (int j = 0; j < c_in; ++j) {
            const float* k = layer_weights.ptr() + (static_cast<size_t>(i) * c_in + j) * khw;
            double s = 0.0;
            for (int t = 0; t < khw; ++t) s += std::fabs(k[t]);
            p.q[static_cast<size_t>(i)][static_cast<size_t>(j)] = s;
        }
    return p;
}

namespace detail {

// Channels identically zero under the mask, per slot. A masked conv channel
// is zero; relu keeps zeros; an add output channel is zero only when both
// inputs are. (An unmasked conv of zero input is still nonzero through the
// normalization shift, so only masks create zeros.)
inline std::vector<std::vector<bool>> zero_channel_analysis(const nn::ConvModel& model,
                                                            const nn::PruneMask* mask) {
    std::vector<std::vector<bool>> zero(static_cast<size_t>(model.num_slots));
    zero[0].assign(static_cast<size_t>(model.input_channels), false);
    for (const auto& op : model.ops) {
        switch (op.kind) {
            case nn::OpKind::conv: {
                const auto& l = model.layers[static_cast<size_t>(op.layer)];
                std::vector<bool> z(static_cast<size_t>(l.c_out), false);
                if (mask)
                    for (int c = 0; c < l.c_out; ++c) z[static_cast<size_t>(c)] = !mask->keeps(l.name, c);
                zero[static_cast<size_t>(op.out)] = z;
                break;
            }
            case nn::OpKind::relu:
            case nn::OpKind::global_avg_pool:
                zero[static_cast<size_t>(op.out)] = zero[static_cast<size_t>(op.in0)];
                break;
            case nn::OpKind::add: {
                const auto& a = zero[static_cast<size_t>(op.in0)];
                const auto& b = zero[static_cast<size_t>(op.in1)];
                std::vector<bool> z(a.size());
                for (size_t i = 0; i < a.size(); ++i) z[i] = a[i] && b[i];
                zero[static_cast<size_t>(op.out)] = z;
                break;
            }
        }
    }
    return zero;
}

inline std::string profile_layer_of_unit(const nn::ConvModel& model, const std::string& unit) {
    if (const nn::GroupSpec* g = model.find_group(unit)) {
        if (g->member_layers.empty()) throw ConfigError("group " + unit + " has no member layers");
        return g->member_layers.back();
    }
    if (model.has_layer(unit)) return unit;
    throw IndexError("unknown unit: " + unit);
}

}  // namespace detail

// Profile for a unit under the current mask: kernels reading a masked-out
// upstream channel contribute zero, and the profile is taken from the last
// member layer for groups (one graph per group).
inline ConnectionProfile unit_connection_profile(const nn::ConvModel& model,
                                                 const std::string& unit,
                                                 const nn::PruneMask* mask = nullptr) {
    const std::string lname = detail::profile_layer_of_unit(model, unit);
    ConnectionProfile p = connection_profile(model.param(lname + ".weight"));
    if (mask) {
        const auto zero = detail::zero_channel_analysis(model, mask);
        const int conv_slot = model.conv_out_slot.at(model.layer_index.at(lname));
        // the conv's input slot
        int in_slot = -1;
        for (const auto& op : model.ops)
            if (op.kind == nn::OpKind::conv && op.out == conv_slot) in_slot = op.in0;
        const auto& zin = zero[static_cast<size_t>(in_slot)];
        for (auto& row : p.q)
            for (size_t j = 0; j < row.size(); ++j)
                if (zin[j]) row[j] = 0.0;
    }
    return p;
}

inline ConnectionProfile group_connection_profile(const nn::ConvModel& model,
                                                  const nn::GroupSpec& group,
                                                  const nn::PruneMask* mask = nullptr) {
    if (group.member_layers.empty()) throw ConfigError("empty group " + group.group_id);
    return unit_connection_profile(model, group.group_id, mask);
}

struct GraphConfig {
    double node_keep = 0.5;
    double edge_keep = 0.05;
    int bins = 32;               // s
    double u_quantile = 0.995;   // sampling-interval upper bound percentile
};

struct LayerGraph {
    std::string unit;
    std::vector<int> nodes;                        // ascending channel ids
    std::vector<std::pair<int, int>> edges;        // a < b, both in nodes
    std::map<int, std::vector<double>> features;   // channel -> histogram, length s
    double epsilon = 0.0;                          // realized edge cutoff
    double delta = 0.0;                            // realized node cutoff
    double u_max = 0.0;
    int bins = 0;

    int node_count() const { return static_cast<int>(nodes.size()); }
    int edge_count() const { return static_cast<int>(edges.size()); }
    bool has_node(int ch) const {
        return std::binary_search(nodes.begin(), nodes.end(), ch);
    }
    int degree(int ch) const {
        int d = 0;
        for (const auto& e : edges)
            if (e.first == ch || e.second == ch) ++d;
        return d;
    }
};

struct Thresholds {
    double epsilon = 0.0;
    double delta = 0.0;
    std::vector<int> nodes;  // surviving channels, ascending
    int edge_target = 0;
};

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

// Node cutoff: keep exactly ceil(node_keep * candidates) channels by
// (inf-norm desc, index asc); delta reported as the largest excluded norm.
// Edge cutoff: keep ceil(edge_keep * pairs) pairs by (cosine desc, pair asc);
// epsilon reported as the smallest selected similarity. Zero-norm channels
// (fully pruned upstream) never enter: cosine with a zero vector is
// undefined.
inline Thresholds adaptive_thresholds(const ConnectionProfile& profile,
                                      const std::vector<int>& candidates, double node_keep,
                                      double edge_keep) {
    if (node_keep <= 0.0 || node_keep > 1.0 || edge_keep <= 0.0 || edge_keep > 1.0)
        throw ConfigError("node_keep and edge_keep must be in (0,1]");
    std::vector<std::pair<double, int>> norms;
    for (int c : candidates) {
        const double n = profile.inf_norm(c);
        if (n > 0.0) norms.push_back({n, c});
    }
    if (norms.size() < 2) throw DegenerateGraphError("fewer than 2 live channels");
    std::sort(norms.begin(), norms.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    const size_t keep = static_cast<size_t>(
        std::ceil(node_keep * static_cast<double>(norms.size()) - 1e-12));
    Thresholds th;
    th.delta = keep < norms.size() ? norms[keep].first : 0.0;
    for (size_t i = 0; i < keep; ++i) th.nodes.push_back(norms[i].second);
    std::sort(th.nodes.begin(), th.nodes.end());
    if (th.nodes.size() < 2) throw DegenerateGraphError("fewer than 2 surviving nodes");

    const size_t pairs = th.nodes.size() * (th.nodes.size() - 1) / 2;
    th.edge_target = static_cast<int>(
        std::ceil(edge_keep * static_cast<double>(pairs) - 1e-12));
    return th;
}

struct ScoredEdge {
    double sim;
    int a, b;
};

inline std::vector<ScoredEdge> scored_pairs(const ConnectionProfile& profile,
                                            const std::vector<int>& nodes) {
    std::vector<ScoredEdge> out;
    for (size_t i = 0; i < nodes.size(); ++i)
        for (size_t j = i + 1; j < nodes.size(); ++j)
            out.push_back({cosine(profile.q[static_cast<size_t>(nodes[i])],
                                  profile.q[static_cast<size_t>(nodes[j])]),
                           nodes[i], nodes[j]});
    std::sort(out.begin(), out.end(), [](const ScoredEdge& x, const ScoredEdge& y) {
        if (x.sim != y.sim) return x.sim > y.sim;
        if (x.a != y.a) return x.a < y.a;
        return x.b < y.b;
    });
    return out;
}

// Histogram of the n per-image mean activations over s open sub-intervals of
// [0,u], normalized by n. Samples at bin boundaries or above u fall outside
// every bin, so entries sum to at most 1.
inline std::vector<double> activation_histogram(const float* samples, int n, double u, int s) {
    std::vector<double> p(static_cast<size_t>(s), 0.0);
    if (u <= 0.0) return p;
    const double w = u / s;
    for (int i = 0; i < n; ++i) {
        const double m = samples[i];
        for (int j = 0; j < s; ++j) {
            if (m > j * w && m < (j + 1) * w) {
                p[static_cast<size_t>(j)] += 1.0;
                break;
            }
        }
    }
    for (double& v : p) v /= n;
    return p;
}

// Build the connectivity graph for a unit of the (possibly partially
// pruned) model: nodes = surviving channels, edges = most-similar connection
// profiles, features = activation histograms on the defense data.
inline LayerGraph build_graph(nn::ConvModel& model, const std::string& unit,
                              const Dataset& defense_data, const GraphConfig& cfg,
                              const nn::PruneMask* mask = nullptr) {
    if (defense_data.size() == 0) throw InputError("build_graph: empty defense data");
    const ConnectionProfile profile = unit_connection_profile(model, unit, mask);
    const std::string profile_layer = detail::profile_layer_of_unit(model, unit);

    std::vector<int> candidates;
    for (int c = 0; c < profile.channels(); ++c)
        if (!mask || mask->keeps(profile_layer, c)) candidates.push_back(c);
    if (candidates.size() < 2) throw DegenerateGraphError(unit + ": not enough live channels");

    Thresholds th = adaptive_thresholds(profile, candidates, cfg.node_keep, cfg.edge_keep);

    LayerGraph g;
    g.unit = unit;
    g.nodes = th.nodes;
    g.delta = th.delta;
    g.bins = cfg.bins;

    // q vectors are nonnegative, so cosines land in [0,1]; pairs at exactly 0
    // share no support and never become edges.
    auto pairs = scored_pairs(profile, g.nodes);
    size_t positive = 0;
    while (positive < pairs.size() && pairs[positive].sim > 0.0) ++positive;
    const size_t take = std::min(static_cast<size_t>(th.edge_target), positive);
    g.epsilon = take > 0 ? pairs[take - 1].sim : 1.0;
    for (size_t i = 0; i < take; ++i) g.edges.push_back({pairs[i].a, pairs[i].b});
    std::sort(g.edges.begin(), g.edges.end());

    // node features: histogram of per-image mean activations over [0, u]
    auto acts = nn::record_activations(model, defense_data, mask, {unit});
    const Tensor& samples = acts.at(unit);  // [width x n]
    std::vector<float> all;
    all.reserve(samples.numel());
    for (int c = 0; c < samples.dim(0); ++c)
        for (int i = 0; i < defense_data.size(); ++i) all.push_back(samples.at(c, i));
    std::sort(all.begin(), all.end());
    const size_t rank = all.empty() ? 0
                                    : std::min(all.size() - 1,
                                               static_cast<size_t>(cfg.u_quantile *
                                                                   static_cast<double>(all.size())));
    g.u_max = all.empty() ? 0.0 : static_cast<double>(all[rank]);
    for (int c : g.nodes)
        g.features[c] = activation_histogram(samples.ptr() + static_cast<size_t>(c) * defense_data.size(),
                                             defense_data.size(), g.u_max, cfg.bins);
    return g;
}

// Remove a node and its incident edges; other nodes untouched.
inline void remove_node(LayerGraph& g, int channel) {
    auto it = std::find(g.nodes.begin(), g.nodes.end(), channel);
    if (it == g.nodes.end()) throw IndexError("remove_node: channel not in graph");
    g.nodes.erase(it);
    g.edges.erase(std::remove_if(g.edges.begin(), g.edges.end(),
                                 [channel](const std::pair<int, int>& e) {
                                     return e.first == channel || e.second == channel;
                                 }),
                  g.edges.end());
    g.features.erase(channel);
}

// Unweighted shortest-path distances from src over the graph (-1 when
// unreachable).
inline std::map<int, int> graph_distances(const LayerGraph& g, int src) {
    std::map<int, std::vector<int>> adj;
    for (const auto& e : g.edges) {
        adj[e.first].push_back(e.second);
        adj[e.second].push_back(e.first);
    }
    std::map<int, int> dist;
    for (int n : g.nodes) dist[n] = -1;
    dist[src] = 0;
    std::deque<int> q{src};
    while (!q.empty()) {
        const int v = q.front();
        q.pop_front();
        for (int w : adj[v])
            if (dist[w] < 0) {
                dist[w] = dist[v] + 1;
                q.push_back(w);
            }
    }
    return dist;
}

// Mean pairwise distance within a node subset; unreachable pairs count as
// (#nodes), one past any realizable path length.
inline double mean_pairwise_distance(const LayerGraph& g, const std::vector<int>& subset) {
    if (subset.size() < 2) return 0.0;
    double total = 0.0;
    int count = 0;
    for (size_t i = 0; i < subset.size(); ++i) {
        auto dist = graph_distances(g, subset[i]);
        for (size_t j = i + 1; j < subset.size(); ++j) {
            const int d = dist.at(subset[j]);
            total += d < 0 ? static_cast<double>(g.node_count()) : d;
            ++count;
        }
    }
    return total / count;
}

inline void save_graph(const LayerGraph& g, const std::string& path) {
    namespace fs = std::filesystem;
    if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
    nlohmann::json j;
    j["unit"] = g.unit;
    j["thresholds"] = {{"epsilon", g.epsilon}, {"delta", g.delta}};
    j["bin_config"] = {{"u", g.u_max}, {"s", g.bins}};
    for (int n : g.nodes)
        j["nodes"].push_back({{"id", n}, {"feature", g.features.at(n)}});
    j["edges"] = nlohmann::json::array();
    for (const auto& e : g.edges) j["edges"].push_back({e.first, e.second});
    std::ofstream out(path);
    if (!out) throw IoError("cannot write graph " + path);
    out << j.dump(2) << "\n";
}

inline LayerGraph load_graph(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("missing graph file " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw LoadError("corrupt graph file: " + std::string(e.what()));
    }
    LayerGraph g;
    g.unit = j["unit"].get<std::string>();
    g.epsilon = j["thresholds"]["epsilon"].get<double>();
    g.delta = j["thresholds"]["delta"].get<double>();
    g.u_max = j["bin_config"]["u"].get<double>();
    g.bins = j["bin_config"]["s"].get<int>();
    for (const auto& n : j["nodes"]) {
        g.nodes.push_back(n["id"].get<int>());
        g.features[n["id"].get<int>()] = n["feature"].get<std::vector<double>>();
    }
    for (const auto& e : j["edges"]) g.edges.push_back({e[0].get<int>(), e[1].get<int>()});
    return g;
}

}  // namespace onp

#include "nsreg/nsr.hpp"

#include <algorithm>

namespace nsreg {

NsrParams::NsrParams(Eigen::Index width, std::mt19937_64& rng)
    : w_r("nsr.w_r", width, width),
      f1("nsr.f1", width, width),
      fb1("nsr.fb1", 1, width),
      f2("nsr.f2", width, 1),
      fb2("nsr.fb2", 1, 1) {
    for (auto* g : {&w_r, &f1, &f2}) glorot_init(*g, rng);
}

std::vector<ParamGroup*> NsrParams::groups() { return {&w_r, &f1, &fb1, &f2, &fb2}; }

double label_relation(const AttributedGraph& g, NodeId v, NodeId u,
                      const std::unordered_set<NodeId>& labelled_normals,
                      const std::unordered_set<NodeId>& labelled_anomalies, double alpha) {
    if (v == u || !labelled_normals.count(v)) {
        throw std::domain_error("label_relation: v must be a labelled normal distinct from u");
    }
    const bool edge = g.has_edge(v, u);
    if (labelled_normals.count(u)) return edge ? 1.0 : alpha;
    if (!labelled_anomalies.count(u) && !edge) return 0.0;
    throw std::domain_error("label_relation: pair (" + std::to_string(v) + "," +
                            std::to_string(u) + ") is outside the three relation kinds");
}

namespace {

struct PairHash {
    std::size_t operator()(const std::pair<NodeId, NodeId>& p) const {
        return std::hash<NodeId>()(p.first) * 1000003u ^ std::hash<NodeId>()(p.second);
    }
};

}  // namespace

std::vector<RelationSample> sample_relations(const AttributedGraph& g,
                                             const std::vector<NodeId>& labelled_normals,
                                             const std::vector<NodeId>& labelled_anomalies,
                                             const NsrConfig& cfg, std::uint64_t rng_seed) {
    if (labelled_normals.empty()) throw ConfigError("sample_relations: no labelled normals");
    std::mt19937_64 rng(rng_seed);
    std::unordered_set<NodeId> normal_set(labelled_normals.begin(), labelled_normals.end());
    std::unordered_set<NodeId> anomaly_set(labelled_anomalies.begin(), labelled_anomalies.end());

    // kind-1 pool: edges among labelled normals
    std::vector<std::pair<NodeId, NodeId>> connected;
    for (NodeId v : labelled_normals)
        for (auto it = g.neighbours_begin(v); it != g.neighbours_end(v); ++it)
            if (v < *it && normal_set.count(*it)) connected.emplace_back(v, *it);

    const int kinds = cfg.use_unconnected_normal ? 3 : 2;
    const int per = cfg.batch_relations / kinds;
    const int take1 = std::min<int>(per, static_cast<int>(connected.size()));
    std::shuffle(connected.begin(), connected.end(), rng);

    std::vector<RelationSample> out;
    for (int i = 0; i < take1; ++i) {
        out.push_back({connected[i].first, connected[i].second, RelationKind::ConnectedNormal,
                       label_relation(g, connected[i].first, connected[i].second, normal_set,
                                      anomaly_set, cfg.alpha)});
    }

    // shortfall from kind 1 redistributed equally to the remaining kinds
    const int shortfall = per - take1;
    const int extra = cfg.use_unconnected_normal ? shortfall / 2 : shortfall;
    int quota2 = cfg.use_unconnected_normal ? per + extra : 0;
    int quota3 = cfg.batch_relations - take1 - quota2;

    std::uniform_int_distribution<std::size_t> pick_normal(0, labelled_normals.size() - 1);

    // kind-2: unconnected labelled-normal pairs
    if (cfg.use_unconnected_normal && labelled_normals.size() >= 2) {
        std::unordered_set<std::pair<NodeId, NodeId>, PairHash> used;
        const std::size_t max_pairs =
            labelled_normals.size() * (labelled_normals.size() - 1) / 2;
        int attempts = 0;
        int got = 0;
        while (got < quota2 && used.size() < max_pairs && attempts < quota2 * 200) {
            ++attempts;
            NodeId v = labelled_normals[pick_normal(rng)];
            NodeId u = labelled_normals[pick_normal(rng)];
            if (v == u || g.has_edge(v, u)) continue;
            auto key = std::minmax(v, u);
            if (!used.insert({key.first, key.second}).second) continue;
            out.push_back({v, u, RelationKind::UnconnectedNormal,
                           label_relation(g, v, u, normal_set, anomaly_set, cfg.alpha)});
            ++got;
        }
    }

    // kind-3: labelled normal to unconnected unlabelled node
    std::vector<NodeId> unlabelled;
    for (NodeId u = 0; u < g.num_nodes(); ++u)
        if (!normal_set.count(u) && !anomaly_set.count(u)) unlabelled.push_back(u);
    if (!unlabelled.empty()) {
        std::uniform_int_distribution<std::size_t> pick_u(0, unlabelled.size() - 1);
        std::unordered_set<std::pair<NodeId, NodeId>, PairHash> used;
        int attempts = 0;
        int got = 0;
        while (got < quota3 && attempts < quota3 * 200) {
            ++attempts;
            NodeId v = labelled_normals[pick_normal(rng)];
            NodeId u = unlabelled[pick_u(rng)];
            if (g.has_edge(v, u)) continue;
            if (!used.insert({v, u}).second) continue;
            out.push_back({v, u, RelationKind::UnconnectedNormalToUnlabelled,
                           label_relation(g, v, u, normal_set, anomaly_set, cfg.alpha)});
            ++got;
        }
    }
    return out;
}

ad::Var relation_embed(const ad::Var& z_v, const ad::Var& z_u, const ad::Var& w_r,
                       ad::Tape& tape) {
    return tape.cwise_mul(tape.matmul(tape.sigmoid(z_v), w_r), tape.sigmoid(z_u));
}

ad::Var relation_predict(const ad::Var& h, NsrParams& params, ad::Tape& tape) {
    auto f1 = tape.param(params.f1);
    auto fb1 = tape.param(params.fb1);
    auto f2 = tape.param(params.f2);
    auto fb2 = tape.param(params.fb2);
    auto hidden = tape.relu(tape.add_rowvec(tape.matmul(h, f1), fb1));
    return tape.sigmoid(tape.add_rowvec(tape.matmul(hidden, f2), fb2));
}

ad::Var nsr_loss(const ad::Var& p, const std::vector<RelationSample>& relations, ad::Tape& tape) {
    Matrix targets(static_cast<Eigen::Index>(relations.size()), 1);
    for (std::size_t i = 0; i < relations.size(); ++i)
        targets(static_cast<Eigen::Index>(i), 0) = relations[i].c;
    return tape.mean_soft_bce(p, std::move(targets));
}

}  // namespace nsreg

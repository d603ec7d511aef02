#pragma once

#include "nsreg/graph.hpp"
#include "nsreg/param.hpp"
#include "nsreg/tape.hpp"

#include <random>
#include <unordered_set>
#include <vector>

namespace nsreg {

enum class RelationKind {
    ConnectedNormal,              // c = 1
    UnconnectedNormal,            // c = alpha
    UnconnectedNormalToUnlabelled // c = 0
};

struct RelationSample {
    NodeId v = 0;  // labelled normal
    NodeId u = 0;
    RelationKind kind = RelationKind::ConnectedNormal;
    double c = 1.0;
};

struct NsrConfig {
    double alpha = 0.8;
    int batch_relations = 512;
    bool use_unconnected_normal = true;
};

/// Relation head: fusion matrix W_r plus a two-layer prediction network F
/// with sigmoid output.
struct NsrParams {
    ParamGroup w_r;
    ParamGroup f1, fb1, f2, fb2;

    NsrParams() = default;
    NsrParams(Eigen::Index width, std::mt19937_64& rng);
    std::vector<ParamGroup*> groups();
};

/// Normality label for a normal-oriented pair: 1 for connected labelled
/// normals, alpha for unconnected labelled normals, 0 for a labelled normal
/// paired with an unconnected unlabelled node. Anything else is out of
/// domain and throws.
double label_relation(const AttributedGraph& g, NodeId v, NodeId u,
                      const std::unordered_set<NodeId>& labelled_normals,
                      const std::unordered_set<NodeId>& labelled_anomalies, double alpha);

/// Samples up to cfg.batch_relations normal-oriented pairs across the three
/// kinds (equal per-kind shares; kind-1 shortfall is redistributed).
/// Without replacement within a batch per kind; deterministic per seed.
std::vector<RelationSample> sample_relations(const AttributedGraph& g,
                                             const std::vector<NodeId>& labelled_normals,
                                             const std::vector<NodeId>& labelled_anomalies,
                                             const NsrConfig& cfg, std::uint64_t rng_seed);

/// Fused relation embeddings for a batch: (sigmoid(Z_v) W_r) ∘ sigmoid(Z_u).
ad::Var relation_embed(const ad::Var& z_v, const ad::Var& z_u, const ad::Var& w_r,
                       ad::Tape& tape);

/// Predicted normality F(h_r) in (0,1) for each relation row.
ad::Var relation_predict(const ad::Var& h, NsrParams& params, ad::Tape& tape);

/// Mean soft-label BCE of predictions p against relation labels c.
ad::Var nsr_loss(const ad::Var& p, const std::vector<RelationSample>& relations, ad::Tape& tape);

}  // namespace nsreg

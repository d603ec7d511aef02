#pragma once

#include "nsreg/types.hpp"

#include <filesystem>
#include <random>
#include <utility>
#include <vector>

namespace nsreg {

/// Immutable node-attributed graph in compressed adjacency form.
/// Undirected: every edge is stored in both directions. Class 0 is normal,
/// class k >= 1 is anomaly class k.
class AttributedGraph {
public:
    AttributedGraph() = default;

    /// Builds from an edge list; edges are deduplicated, symmetrised and
    /// self-loops dropped.
    AttributedGraph(NodeId n, const std::vector<std::pair<NodeId, NodeId>>& edges,
                    Matrix features, std::vector<int> node_class);

    NodeId num_nodes() const { return n_; }
    Eigen::Index feature_dim() const { return features_.cols(); }
    const Matrix& features() const { return features_; }
    const std::vector<int>& node_class() const { return node_class_; }

    NodeId degree(NodeId v) const { return offsets_[v + 1] - offsets_[v]; }
    const NodeId* neighbours_begin(NodeId v) const { return targets_.data() + offsets_[v]; }
    const NodeId* neighbours_end(NodeId v) const { return targets_.data() + offsets_[v + 1]; }
    std::int64_t num_undirected_edges() const { return static_cast<std::int64_t>(targets_.size()) / 2; }

    bool has_edge(NodeId u, NodeId v) const;

    NodeId max_degree() const;

private:
    NodeId n_ = 0;
    std::vector<NodeId> offsets_;  // size n+1
    std::vector<NodeId> targets_;  // sorted per node
    Matrix features_;
    std::vector<int> node_class_;
};

/// Per-layer sampled neighbourhood for a batch of root nodes, flattened for
/// two aggregation levels. Indices reference rows of the level below.
struct NeighbourSample {
    std::vector<int> fanouts;
    std::vector<NodeId> roots;

    // level-1 frontier: unique nodes whose layer-1 hidden state is needed
    std::vector<NodeId> frontier;
    std::vector<int> root_self;                 // per root: its row in frontier
    std::vector<std::vector<int>> root_neigh;   // per root: sampled rows in frontier

    // base: unique nodes whose raw features are needed
    std::vector<NodeId> base;
    std::vector<int> frontier_self;                 // per frontier node: row in base
    std::vector<std::vector<int>> frontier_neigh;   // per frontier node: sampled rows in base
};

/// Uniform without-replacement neighbour sampling, deterministic per seed.
NeighbourSample sample_neighbours(const AttributedGraph& g, const std::vector<NodeId>& roots,
                                  const std::vector<int>& fanouts, std::uint64_t rng_seed);

// --- file I/O ------------------------------------------------------------

AttributedGraph load_graph(const std::filesystem::path& edge_file,
                           const std::filesystem::path& feature_file,
                           const std::filesystem::path& label_file);

void save_graph(const AttributedGraph& g, const std::filesystem::path& edge_file,
                const std::filesystem::path& feature_file,
                const std::filesystem::path& label_file, bool binary_features = false);

/// Binary feature matrix: magic "NSRG", u32 version, u64 n, u64 d, row-major
/// little-endian f32 values.
Matrix load_feature_matrix(const std::filesystem::path& path);
void save_feature_matrix_binary(const Matrix& features, const std::filesystem::path& path);

// --- synthetic benchmark -------------------------------------------------

struct SynthConfig {
    NodeId n_normal = 2000;
    NodeId n_anomaly_per_class = 100;
    int n_anomaly_classes = 2;
    Eigen::Index feature_dim = 16;
    double offset_scale = 6.0;   // magnitude of each anomaly class's mean shift
    int n_normal_modes = 3;      // normal sub-communities with distinct means
    double mode_scale = 3.5;     // magnitude of each normal mode's mean shift
    double normal_noise = 1.0;   // feature noise std for normal nodes (anomalies use 1)
    double p_nn = 0.05;          // intra-mode normal edge probability
    double p_nn_cross = 0.0005;  // cross-mode normal edge probability
    double p_na = 0.015;         // anomaly-to-straddled-mode edge probability
    double p_aa = 0.0005;        // intra-anomaly-class edge probability
};

/// Planted open-set benchmark: one dense normal community plus anomaly
/// classes with distinct feature offsets and sparser connectivity.
/// Bit-deterministic given (cfg, seed).
AttributedGraph generate_synthetic(const SynthConfig& cfg, std::uint64_t seed);

/// Trains a logistic regression on raw features (all anomaly classes
/// positive) and returns its AUC-ROC; certifies generator separability.
double raw_feature_logistic_auc(const AttributedGraph& g);

}  // namespace nsreg

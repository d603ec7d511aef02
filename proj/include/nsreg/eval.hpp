#pragma once

#include "nsreg/detectors.hpp"
#include "nsreg/graph.hpp"
#include "nsreg/metrics.hpp"

#include <filesystem>
#include <vector>

namespace nsreg {

/// One seen/unseen anomaly-class rotation.
struct OpenSetSplit {
    int seen_class = 1;
    std::vector<NodeId> labelled_anomalies;  // subset of the seen class
    std::vector<NodeId> labelled_normals;
    std::vector<NodeId> test_all;     // V minus all labelled nodes
    std::vector<NodeId> test_unseen;  // unlabelled normals + unseen-class anomalies
};

struct SplitConfig {
    int n_labelled_anomalies = 50;
    double labelled_normal_fraction = 0.05;
    std::uint64_t seed = 0;
};

/// One split per anomaly class playing the seen role; labelled sets are
/// resampled per rotation, deterministic per seed.
std::vector<OpenSetSplit> make_rotations(const AttributedGraph& g, const SplitConfig& cfg);

/// Lloyd's algorithm with k-means++ seeding; empty clusters are re-seeded at
/// the farthest point. Returns a cluster id per row.
std::vector<int> kmeans_split(const Matrix& points, int k, std::uint64_t seed,
                              int max_iters = 300);

struct EvalRow {
    int rotation = 0;
    std::uint64_t seed = 0;
    double auc_roc_all = 0.0;
    double auc_pr_all = 0.0;
    double auc_roc_unseen = 0.0;
    double auc_pr_unseen = 0.0;
};

struct EvalAggregate {
    double mean = 0.0;
    double std_dev = 0.0;  // over seeds; valid only when n_seeds >= 2
    bool has_std = false;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    EvalAggregate auc_roc_all, auc_pr_all, auc_roc_unseen, auc_pr_unseen;

    /// Per-rotation seed-means averaged over rotations; std over seeds of
    /// rotation-averaged values.
    void aggregate();
    void write_json(const std::filesystem::path& path) const;
    void write_csv(const std::filesystem::path& path) const;
};

/// Scores the split's test sets with the trained detector and computes all
/// four metrics. Anomaly ground truth is node_class >= 1.
EvalRow evaluate(Detector& det, const AttributedGraph& g, const OpenSetSplit& split);

/// Inference scores for an explicit node list (full-neighbourhood encode).
std::vector<double> score_nodes(Detector& det, const AttributedGraph& g,
                                const std::vector<NodeId>& nodes);

}  // namespace nsreg

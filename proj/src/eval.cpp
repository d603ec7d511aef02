#include "nsreg/eval.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <unordered_set>

namespace nsreg {

std::vector<OpenSetSplit> make_rotations(const AttributedGraph& g, const SplitConfig& cfg) {
    std::set<int> classes;
    for (int c : g.node_class())
        if (c >= 1) classes.insert(c);
    if (classes.size() < 2) throw DataError("make_rotations: need >= 2 anomaly classes");

    std::vector<OpenSetSplit> splits;
    int rotation_index = 0;
    for (int seen : classes) {
        // per-rotation RNG so labelled sets are resampled each rotation
        std::mt19937_64 rng(cfg.seed * 1000003ULL + static_cast<std::uint64_t>(rotation_index));
        OpenSetSplit s;
        s.seen_class = seen;

        std::vector<NodeId> seen_pool, normal_pool;
        for (NodeId v = 0; v < g.num_nodes(); ++v) {
            if (g.node_class()[v] == seen) seen_pool.push_back(v);
            else if (g.node_class()[v] == 0) normal_pool.push_back(v);
        }
        std::shuffle(seen_pool.begin(), seen_pool.end(), rng);
        const auto n_anom = std::min<std::size_t>(seen_pool.size(),
                                                  static_cast<std::size_t>(cfg.n_labelled_anomalies));
        s.labelled_anomalies.assign(seen_pool.begin(), seen_pool.begin() + n_anom);
        std::sort(s.labelled_anomalies.begin(), s.labelled_anomalies.end());

        std::shuffle(normal_pool.begin(), normal_pool.end(), rng);
        const auto n_norm = std::max<std::size_t>(
            1, static_cast<std::size_t>(cfg.labelled_normal_fraction *
                                        static_cast<double>(normal_pool.size())));
        s.labelled_normals.assign(normal_pool.begin(), normal_pool.begin() + n_norm);
        std::sort(s.labelled_normals.begin(), s.labelled_normals.end());

        std::unordered_set<NodeId> labelled(s.labelled_anomalies.begin(),
                                            s.labelled_anomalies.end());
        labelled.insert(s.labelled_normals.begin(), s.labelled_normals.end());
        for (NodeId v = 0; v < g.num_nodes(); ++v) {
            if (labelled.count(v)) continue;
            s.test_all.push_back(v);
            if (g.node_class()[v] != seen) s.test_unseen.push_back(v);
        }
        splits.push_back(std::move(s));
        ++rotation_index;
    }
    return splits;
}

std::vector<int> kmeans_split(const Matrix& points, int k, std::uint64_t seed, int max_iters) {
    const Eigen::Index n = points.rows();
    if (k < 2) throw ConfigError("kmeans_split: k must be >= 2");
    if (n < k) throw ConfigError("kmeans_split: fewer rows than clusters");
    std::mt19937_64 rng(seed);

    // k-means++ seeding
    Matrix centres(k, points.cols());
    std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
    centres.row(0) = points.row(first(rng));
    Vector d2 = (points.rowwise() - centres.row(0)).rowwise().squaredNorm();
    for (int c = 1; c < k; ++c) {
        const double total = d2.sum();
        Eigen::Index chosen = 0;
        if (total > 0.0) {
            std::uniform_real_distribution<double> u(0.0, total);
            double r = u(rng), acc = 0.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                acc += d2(i);
                if (acc >= r) { chosen = i; break; }
            }
        } else {
            chosen = first(rng);  // all points identical
        }
        centres.row(c) = points.row(chosen);
        d2 = d2.cwiseMin((points.rowwise() - centres.row(c)).rowwise().squaredNorm());
    }

    std::vector<int> assign(n, -1);
    for (int it = 0; it < max_iters; ++it) {
        bool changed = false;
        for (Eigen::Index i = 0; i < n; ++i) {
            int best = 0;
            double best_d = (points.row(i) - centres.row(0)).squaredNorm();
            for (int c = 1; c < k; ++c) {
                const double d = (points.row(i) - centres.row(c)).squaredNorm();
                if (d < best_d) { best_d = d; best = c; }
            }
            if (assign[i] != best) { assign[i] = best; changed = true; }
        }
        if (!changed) break;

        Matrix sums = Matrix::Zero(k, points.cols());
        std::vector<Eigen::Index> counts(k, 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            sums.row(assign[i]) += points.row(i);
            counts[assign[i]]++;
        }
        for (int c = 0; c < k; ++c) {
            if (counts[c] > 0) {
                centres.row(c) = sums.row(c) / static_cast<double>(counts[c]);
            } else {
                // re-seed an empty cluster at the farthest point
                Eigen::Index far = 0;
                double far_d = -1.0;
                for (Eigen::Index i = 0; i < n; ++i) {
                    const double d = (points.row(i) - centres.row(assign[i])).squaredNorm();
                    if (d > far_d) { far_d = d; far = i; }
                }
                centres.row(c) = points.row(far);
            }
        }
    }
    return assign;
}

std::vector<double> score_nodes(Detector& det, const AttributedGraph& g,
                                const std::vector<NodeId>& nodes) {
    std::vector<double> out;
    out.reserve(nodes.size());
    const std::size_t chunk = 1024;
    for (std::size_t start = 0; start < nodes.size(); start += chunk) {
        std::vector<NodeId> batch(nodes.begin() + start,
                                  nodes.begin() + std::min(nodes.size(), start + chunk));
        const int full = static_cast<int>(g.max_degree());
        NeighbourSample s = sample_neighbours(g, batch, {full, full}, 0);
        ad::Tape tape;
        auto z = encode(g, s, det.encoder, tape);
        auto sc = score(z, det.head, tape);
        for (Eigen::Index i = 0; i < sc->value.rows(); ++i) out.push_back(sc->value(i, 0));
    }
    return out;
}

EvalRow evaluate(Detector& det, const AttributedGraph& g, const OpenSetSplit& split) {
    EvalRow row;
    row.rotation = split.seen_class;
    auto run = [&](const std::vector<NodeId>& nodes, double& roc, double& pr) {
        std::vector<double> scores = score_nodes(det, g, nodes);
        std::vector<int> labels;
        labels.reserve(nodes.size());
        for (NodeId v : nodes) labels.push_back(g.node_class()[v] >= 1 ? 1 : 0);
        roc = auc_roc(scores, labels);
        pr = auc_pr(scores, labels);
    };
    run(split.test_all, row.auc_roc_all, row.auc_pr_all);
    run(split.test_unseen, row.auc_roc_unseen, row.auc_pr_unseen);
    return row;
}

namespace {

EvalAggregate aggregate_metric(const std::vector<EvalRow>& rows, double EvalRow::*field) {
    // mean over rotations of per-rotation seed means; std over seeds of
    // rotation-averaged values
    std::map<std::uint64_t, std::vector<double>> by_seed;
    for (const auto& r : rows) by_seed[r.seed].push_back(r.*field);
    std::vector<double> seed_means;
    for (auto& [seed, vals] : by_seed)
        seed_means.push_back(std::accumulate(vals.begin(), vals.end(), 0.0) /
                             static_cast<double>(vals.size()));
    EvalAggregate a;
    a.mean = std::accumulate(seed_means.begin(), seed_means.end(), 0.0) /
             static_cast<double>(seed_means.size());
    if (seed_means.size() >= 2) {
        double var = 0.0;
        for (double v : seed_means) var += (v - a.mean) * (v - a.mean);
        a.std_dev = std::sqrt(var / static_cast<double>(seed_means.size() - 1));
        a.has_std = true;
    }
    return a;
}

}  // namespace

void EvalReport::aggregate() {
    if (rows.empty()) throw DataError("EvalReport::aggregate: no rows");
    auc_roc_all = aggregate_metric(rows, &EvalRow::auc_roc_all);
    auc_pr_all = aggregate_metric(rows, &EvalRow::auc_pr_all);
    auc_roc_unseen = aggregate_metric(rows, &EvalRow::auc_roc_unseen);
    auc_pr_unseen = aggregate_metric(rows, &EvalRow::auc_pr_unseen);
}

void EvalReport::write_json(const std::filesystem::path& path) const {
    nlohmann::json j;
    j["rows"] = nlohmann::json::array();
    for (const auto& r : rows) {
        j["rows"].push_back({{"rotation", r.rotation},
                             {"seed", r.seed},
                             {"auc_roc_all", r.auc_roc_all},
                             {"auc_pr_all", r.auc_pr_all},
                             {"auc_roc_unseen", r.auc_roc_unseen},
                             {"auc_pr_unseen", r.auc_pr_unseen}});
    }
    auto agg = [](const EvalAggregate& a) {
        nlohmann::json o{{"mean", a.mean}};
        if (a.has_std) o["std"] = a.std_dev;
        return o;
    };
    j["aggregate"] = {{"auc_roc_all", agg(auc_roc_all)},
                      {"auc_pr_all", agg(auc_pr_all)},
                      {"auc_roc_unseen", agg(auc_roc_unseen)},
                      {"auc_pr_unseen", agg(auc_pr_unseen)}};
    j["labelled_normal_resampling"] = "per rotation and seed";
    std::ofstream os(path);
    os << j.dump(2) << "\n";
}

void EvalReport::write_csv(const std::filesystem::path& path) const {
    std::ofstream os(path);
    os.precision(17);
    os << "rotation,seed,auc_roc_all,auc_pr_all,auc_roc_unseen,auc_pr_unseen\n";
    for (const auto& r : rows) {
        os << r.rotation << "," << r.seed << "," << r.auc_roc_all << "," << r.auc_pr_all << ","
           << r.auc_roc_unseen << "," << r.auc_pr_unseen << "\n";
    }
    os << "aggregate,mean," << auc_roc_all.mean << "," << auc_pr_all.mean << ","
       << auc_roc_unseen.mean << "," << auc_pr_unseen.mean << "\n";
    if (auc_roc_all.has_std) {
        os << "aggregate,std," << auc_roc_all.std_dev << "," << auc_pr_all.std_dev << ","
           << auc_roc_unseen.std_dev << "," << auc_pr_unseen.std_dev << "\n";
    }
}

}  // namespace nsreg

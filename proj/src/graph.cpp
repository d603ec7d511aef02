#include "nsreg/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>

namespace nsreg {

AttributedGraph::AttributedGraph(NodeId n, const std::vector<std::pair<NodeId, NodeId>>& edges,
                                 Matrix features, std::vector<int> node_class)
    : n_(n), features_(std::move(features)), node_class_(std::move(node_class)) {
    if (features_.rows() != n_) {
        throw DataError("graph: feature rows " + std::to_string(features_.rows()) +
                        " != node count " + std::to_string(n_));
    }
    if (static_cast<NodeId>(node_class_.size()) != n_) {
        throw DataError("graph: node_class length != node count");
    }
    std::set<std::pair<NodeId, NodeId>> dedup;
    for (auto [u, v] : edges) {
        if (u < 0 || u >= n_ || v < 0 || v >= n_) {
            throw DataError("graph: edge endpoint out of range: " + std::to_string(u) + " " +
                            std::to_string(v));
        }
        if (u == v) continue;  // drop self-loops
        dedup.emplace(u, v);
        dedup.emplace(v, u);
    }
    offsets_.assign(static_cast<std::size_t>(n_) + 1, 0);
    for (auto& [u, v] : dedup) offsets_[u + 1]++;
    std::partial_sum(offsets_.begin(), offsets_.end(), offsets_.begin());
    targets_.resize(dedup.size());
    std::vector<NodeId> cursor(offsets_.begin(), offsets_.end() - 1);
    for (auto& [u, v] : dedup) targets_[cursor[u]++] = v;  // set order keeps lists sorted
}

bool AttributedGraph::has_edge(NodeId u, NodeId v) const {
    return std::binary_search(neighbours_begin(u), neighbours_end(u), v);
}

NodeId AttributedGraph::max_degree() const {
    NodeId m = 0;
    for (NodeId v = 0; v < n_; ++v) m = std::max(m, degree(v));
    return m;
}

namespace {

// Uniform sample of k distinct neighbours via partial Fisher-Yates.
std::vector<NodeId> sample_distinct(const AttributedGraph& g, NodeId v, int k,
                                    std::mt19937_64& rng) {
    const NodeId deg = g.degree(v);
    std::vector<NodeId> pool(g.neighbours_begin(v), g.neighbours_end(v));
    if (deg <= k) return pool;
    for (int i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> d(i, pool.size() - 1);
        std::swap(pool[i], pool[d(rng)]);
    }
    pool.resize(k);
    return pool;
}

struct UniqueIndexer {
    std::vector<NodeId> nodes;
    std::unordered_map<NodeId, int> index;
    int get(NodeId v) {
        auto it = index.find(v);
        if (it != index.end()) return it->second;
        int id = static_cast<int>(nodes.size());
        nodes.push_back(v);
        index.emplace(v, id);
        return id;
    }
};

}  // namespace

NeighbourSample sample_neighbours(const AttributedGraph& g, const std::vector<NodeId>& roots,
                                  const std::vector<int>& fanouts, std::uint64_t rng_seed) {
    if (fanouts.size() != 2) throw ConfigError("sample_neighbours: expected 2 fanouts");
    std::mt19937_64 rng(rng_seed);
    NeighbourSample s;
    s.fanouts = fanouts;
    s.roots = roots;

    UniqueIndexer frontier;
    s.root_self.reserve(roots.size());
    s.root_neigh.reserve(roots.size());
    for (NodeId r : roots) {
        s.root_self.push_back(frontier.get(r));
        std::vector<int> rows;
        for (NodeId u : sample_distinct(g, r, fanouts[0], rng)) rows.push_back(frontier.get(u));
        s.root_neigh.push_back(std::move(rows));
    }
    s.frontier = frontier.nodes;

    UniqueIndexer base;
    s.frontier_self.reserve(s.frontier.size());
    s.frontier_neigh.reserve(s.frontier.size());
    for (NodeId v : s.frontier) {
        s.frontier_self.push_back(base.get(v));
        std::vector<int> rows;
        for (NodeId u : sample_distinct(g, v, fanouts[1], rng)) rows.push_back(base.get(u));
        s.frontier_neigh.push_back(std::move(rows));
    }
    s.base = base.nodes;
    return s;
}

// --- file I/O ------------------------------------------------------------

namespace {

[[noreturn]] void load_fail(const std::filesystem::path& p, int line, const std::string& msg) {
    throw DataError(p.string() + ":" + std::to_string(line) + ": " + msg);
}

void write_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<char*>(&v), 4); }
void write_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<char*>(&v), 8); }
std::uint32_t read_u32(std::istream& is) {
    std::uint32_t v;
    is.read(reinterpret_cast<char*>(&v), 4);
    return v;
}
std::uint64_t read_u64(std::istream& is) {
    std::uint64_t v;
    is.read(reinterpret_cast<char*>(&v), 8);
    return v;
}

}  // namespace

Matrix load_feature_matrix(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open feature file " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (is && std::memcmp(magic, "NSRG", 4) == 0) {
        const std::uint32_t version = read_u32(is);
        if (version != 1) throw DataError("feature file " + path.string() + ": unsupported version");
        const std::uint64_t n = read_u64(is);
        const std::uint64_t d = read_u64(is);
        Matrix features(n, d);
        for (std::uint64_t i = 0; i < n; ++i)
            for (std::uint64_t j = 0; j < d; ++j) {
                float f;
                is.read(reinterpret_cast<char*>(&f), 4);
                features(i, j) = f;
            }
        if (!is) throw DataError("feature file " + path.string() + ": truncated");
        return features;
    }
    // CSV with header node_id,f0,...,f{d-1}
    is.close();
    std::ifstream csv(path);
    std::string line;
    int lineno = 0;
    if (!std::getline(csv, line)) load_fail(path, 1, "empty feature file");
    lineno = 1;
    const auto cols = static_cast<Eigen::Index>(std::count(line.begin(), line.end(), ',')); // d
    if (cols < 1) load_fail(path, 1, "feature header needs node_id plus at least one column");
    std::vector<std::vector<double>> rows;
    std::vector<NodeId> ids;
    while (std::getline(csv, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        if (!std::getline(ss, cell, ',')) load_fail(path, lineno, "missing node_id");
        ids.push_back(std::stoll(cell));
        std::vector<double> row;
        while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
        if (static_cast<Eigen::Index>(row.size()) != cols)
            load_fail(path, lineno, "non-rectangular feature row");
        rows.push_back(std::move(row));
    }
    const auto n = static_cast<NodeId>(rows.size());
    Matrix features(n, cols);
    std::vector<bool> seen(n, false);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const NodeId id = ids[i];
        if (id < 0 || id >= n) load_fail(path, static_cast<int>(i) + 2, "node_id out of range");
        if (seen[id]) load_fail(path, static_cast<int>(i) + 2, "duplicate node_id");
        seen[id] = true;
        for (Eigen::Index j = 0; j < cols; ++j) features(id, j) = rows[i][j];
    }
    return features;
}

void save_feature_matrix_binary(const Matrix& features, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    os.write("NSRG", 4);
    write_u32(os, 1);
    write_u64(os, static_cast<std::uint64_t>(features.rows()));
    write_u64(os, static_cast<std::uint64_t>(features.cols()));
    for (Eigen::Index i = 0; i < features.rows(); ++i)
        for (Eigen::Index j = 0; j < features.cols(); ++j) {
            const float f = static_cast<float>(features(i, j));
            os.write(reinterpret_cast<const char*>(&f), 4);
        }
}

AttributedGraph load_graph(const std::filesystem::path& edge_file,
                           const std::filesystem::path& feature_file,
                           const std::filesystem::path& label_file) {
    Matrix features = load_feature_matrix(feature_file);
    const NodeId n = features.rows();

    std::ifstream es(edge_file);
    if (!es) throw DataError("cannot open edge file " + edge_file.string());
    std::vector<std::pair<NodeId, NodeId>> edges;
    std::string line;
    int lineno = 0;
    while (std::getline(es, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        std::stringstream ss(line);
        NodeId u, v;
        if (!(ss >> u)) continue;  // blank line
        if (!(ss >> v)) load_fail(edge_file, lineno, "expected 'u v' pair");
        if (u < 0 || u >= n || v < 0 || v >= n)
            load_fail(edge_file, lineno, "dangling node id");
        edges.emplace_back(u, v);
    }

    std::ifstream ls(label_file);
    if (!ls) throw DataError("cannot open label file " + label_file.string());
    std::vector<int> node_class(n, -1);
    lineno = 0;
    while (std::getline(ls, line)) {
        ++lineno;
        if (line.empty() || line.rfind("node_id", 0) == 0) continue;
        std::stringstream ss(line);
        std::string cell;
        std::getline(ss, cell, ',');
        const NodeId id = std::stoll(cell);
        if (id < 0 || id >= n) load_fail(label_file, lineno, "dangling node id");
        if (node_class[id] != -1) load_fail(label_file, lineno, "duplicate label");
        std::getline(ss, cell, ',');
        node_class[id] = std::stoi(cell);
    }
    for (NodeId v = 0; v < n; ++v)
        if (node_class[v] == -1)
            throw DataError(label_file.string() + ": node " + std::to_string(v) + " unlabelled");

    return AttributedGraph(n, edges, std::move(features), std::move(node_class));
}

void save_graph(const AttributedGraph& g, const std::filesystem::path& edge_file,
                const std::filesystem::path& feature_file,
                const std::filesystem::path& label_file, bool binary_features) {
    {
        std::ofstream es(edge_file);
        es << "# u v\n";
        for (NodeId u = 0; u < g.num_nodes(); ++u)
            for (auto it = g.neighbours_begin(u); it != g.neighbours_end(u); ++it)
                if (u < *it) es << u << " " << *it << "\n";
    }
    if (binary_features) {
        save_feature_matrix_binary(g.features(), feature_file);
    } else {
        std::ofstream fs(feature_file);
        fs << "node_id";
        for (Eigen::Index j = 0; j < g.feature_dim(); ++j) fs << ",f" << j;
        fs << "\n";
        fs.precision(17);
        for (NodeId v = 0; v < g.num_nodes(); ++v) {
            fs << v;
            for (Eigen::Index j = 0; j < g.feature_dim(); ++j) fs << "," << g.features()(v, j);
            fs << "\n";
        }
    }
    {
        std::ofstream ls(label_file);
        ls << "node_id,class_id\n";
        for (NodeId v = 0; v < g.num_nodes(); ++v) ls << v << "," << g.node_class()[v] << "\n";
    }
}

// --- synthetic benchmark -------------------------------------------------

AttributedGraph generate_synthetic(const SynthConfig& cfg, std::uint64_t seed) {
    for (double p : {cfg.p_nn, cfg.p_nn_cross, cfg.p_na, cfg.p_aa}) {
        if (p < 0.0 || p > 1.0) throw ConfigError("generate_synthetic: edge probability outside [0,1]");
    }
    if (cfg.n_anomaly_classes < 0) throw ConfigError("generate_synthetic: negative class count");
    if (cfg.n_normal_modes < 1) throw ConfigError("generate_synthetic: need at least one normal mode");
    if (cfg.n_normal_modes + cfg.n_anomaly_classes > cfg.feature_dim)
        throw ConfigError("generate_synthetic: feature_dim too small for modes + classes");
    std::mt19937_64 rng(seed);
    const NodeId n = cfg.n_normal + cfg.n_anomaly_per_class * cfg.n_anomaly_classes;
    const Eigen::Index d = cfg.feature_dim;

    std::vector<int> node_class(n, 0);
    for (int k = 0; k < cfg.n_anomaly_classes; ++k)
        for (NodeId i = 0; i < cfg.n_anomaly_per_class; ++i)
            node_class[cfg.n_normal + static_cast<NodeId>(k) * cfg.n_anomaly_per_class + i] = k + 1;

    // normals split into contiguous modes; mode m's mean is mode_scale along
    // coordinate d-1-m, anomaly class k's mean is offset_scale along
    // coordinate k-1, so all sub-populations are pairwise near-orthogonal
    std::vector<int> normal_mode(cfg.n_normal, 0);
    for (NodeId v = 0; v < cfg.n_normal; ++v)
        normal_mode[v] = static_cast<int>(v * static_cast<NodeId>(cfg.n_normal_modes) /
                                          std::max<NodeId>(cfg.n_normal, 1));

    std::normal_distribution<double> gauss(0.0, 1.0);
    Matrix features(n, d);
    for (NodeId v = 0; v < n; ++v) {
        const int k = node_class[v];
        const double sd = k >= 1 ? 1.0 : cfg.normal_noise;
        for (Eigen::Index j = 0; j < d; ++j) features(v, j) = sd * gauss(rng);
        if (k >= 1) features(v, (k - 1) % d) += cfg.offset_scale;
        else features(v, d - 1 - normal_mode[v]) += cfg.mode_scale;
    }

    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<std::pair<NodeId, NodeId>> edges;
    for (NodeId u = 0; u < n; ++u) {
        for (NodeId v = u + 1; v < n; ++v) {
            const int cu = node_class[u], cv = node_class[v];
            double p;
            if (cu == 0 && cv == 0) p = normal_mode[u] == normal_mode[v] ? cfg.p_nn : cfg.p_nn_cross;
            else if (cu == cv) p = cfg.p_aa;
            else if (cu == 0 || cv == 0) {
                // each anomaly class straddles two adjacent modes, so its
                // structural footprint does not transfer across classes
                const int k = std::max(cu, cv);
                const int mode = cu == 0 ? normal_mode[u] : normal_mode[v];
                const int m = cfg.n_normal_modes;
                p = (mode == (k - 1) % m || mode == k % m) ? cfg.p_na : 0.0;
            } else p = 0.0;  // cross-anomaly-class
            if (unif(rng) < p) edges.emplace_back(u, v);
        }
    }
    return AttributedGraph(n, edges, std::move(features), std::move(node_class));
}

double raw_feature_logistic_auc(const AttributedGraph& g) {
    const NodeId n = g.num_nodes();
    const Eigen::Index d = g.feature_dim();
    // standardise features
    Matrix x = g.features();
    for (Eigen::Index j = 0; j < d; ++j) {
        const double mean = x.col(j).mean();
        const double sd = std::sqrt((x.col(j).array() - mean).square().mean()) + 1e-12;
        x.col(j) = (x.col(j).array() - mean) / sd;
    }
    Vector y(n);
    for (NodeId v = 0; v < n; ++v) y(v) = g.node_class()[v] >= 1 ? 1.0 : 0.0;

    Vector w = Vector::Zero(d);
    double b = 0.0;
    const double lr = 0.5;
    for (int it = 0; it < 300; ++it) {
        Vector logits = x * w;
        logits.array() += b;
        Vector p = (1.0 / (1.0 + (-logits.array()).exp())).matrix();
        Vector err = p - y;
        w -= (lr / static_cast<double>(n)) * (x.transpose() * err);
        b -= (lr / static_cast<double>(n)) * err.sum();
    }
    Vector scores = x * w;
    scores.array() += b;

    // rank-statistic AUC with average ranks for ties
    std::vector<NodeId> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](NodeId a, NodeId c) { return scores(a) < scores(c); });
    double rank_sum_pos = 0.0;
    std::int64_t n_pos = 0;
    for (NodeId i = 0; i < n;) {
        NodeId j = i;
        while (j < n && scores(idx[j]) == scores(idx[i])) ++j;
        const double avg_rank = (static_cast<double>(i) + static_cast<double>(j - 1)) / 2.0 + 1.0;
        for (NodeId k = i; k < j; ++k)
            if (y(idx[k]) > 0.5) {
                rank_sum_pos += avg_rank;
                ++n_pos;
            }
        i = j;
    }
    const std::int64_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) throw DataError("logistic oracle: single-class labels");
    return (rank_sum_pos - static_cast<double>(n_pos) * (n_pos + 1) / 2.0) /
           (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

}  // namespace nsreg

#include "nsreg/trainer.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

namespace nsreg {

std::vector<ParamGroup*> ModelState::trainable_groups() {
    std::vector<ParamGroup*> groups = det.encoder.groups();
    for (auto* g : det.head.groups()) groups.push_back(g);
    if (det.nsr_enabled)
        for (auto* g : det.nsr.groups()) groups.push_back(g);
    return groups;
}

ModelState init_model(const AttributedGraph& g, const TrainConfig& cfg_in) {
    TrainConfig cfg = cfg_in;
    cfg.in_dim = g.feature_dim();
    ModelState state;
    state.cfg = cfg;
    state.rng.seed(cfg.seed);
    state.det.encoder = EncoderParams(cfg.in_dim, cfg.hidden, state.rng);
    state.det.head = ScoringHead(cfg.head, cfg.hidden, state.rng);
    state.det.nsr = NsrParams(cfg.hidden, state.rng);
    state.det.nsr_enabled = cfg.nsr_enabled;
    return state;
}

int steps_per_epoch(const OpenSetSplit& split, const TrainConfig& cfg) {
    const int n = static_cast<int>(split.labelled_normals.size());
    const int b = std::min(cfg.b_ad_normals, std::max(1, n));
    return std::max(1, (n + b - 1) / b);
}

namespace {

void ensure_hypersphere_centre(const AttributedGraph& g, const OpenSetSplit& split,
                               ModelState& state) {
    if (state.det.head.variant != HeadVariant::Hypersphere || state.det.head.centre_set) return;
    // centre = mean labelled-normal embedding of the untrained encoder
    Matrix z = encode_full(g, split.labelled_normals, state.det.encoder);
    state.det.head.centre = z.colwise().mean();
    state.det.head.centre_set = true;
}

}  // namespace

StepLosses train_step(const AttributedGraph& g, const OpenSetSplit& split, ModelState& state) {
    TrainConfig& cfg = state.cfg;
    if (split.labelled_anomalies.empty() && cfg.head != HeadVariant::Hypersphere) {
        throw ConfigError("train_step: BCE/Deviation heads require labelled anomalies");
    }
    ensure_hypersphere_centre(g, split, state);

    // (1) AD batch: b^n_AD labelled normals plus all labelled anomalies
    const int b_n = std::min<int>(cfg.b_ad_normals, static_cast<int>(split.labelled_normals.size()));
    std::vector<NodeId> normals = split.labelled_normals;
    for (int i = 0; i < b_n; ++i) {
        std::uniform_int_distribution<std::size_t> d(i, normals.size() - 1);
        std::swap(normals[i], normals[d(state.rng)]);
    }
    normals.resize(b_n);

    std::vector<NodeId> ad_batch = normals;
    ad_batch.insert(ad_batch.end(), split.labelled_anomalies.begin(),
                    split.labelled_anomalies.end());
    std::vector<int> ad_labels(normals.size(), 0);
    ad_labels.insert(ad_labels.end(), split.labelled_anomalies.size(), 1);

    // (2) relation batch
    std::vector<RelationSample> relations;
    if (state.det.nsr_enabled) {
        NsrConfig ncfg;
        ncfg.alpha = cfg.alpha;
        ncfg.batch_relations = cfg.relation_cap;
        ncfg.use_unconnected_normal = cfg.use_unconnected_normal;
        relations = sample_relations(g, split.labelled_normals, split.labelled_anomalies, ncfg,
                                     state.rng());
    }

    // (3) forward over the union of involved nodes
    std::vector<NodeId> batch_nodes;
    std::unordered_map<NodeId, int> row_of;
    auto row = [&](NodeId v) {
        auto it = row_of.find(v);
        if (it != row_of.end()) return it->second;
        int r = static_cast<int>(batch_nodes.size());
        batch_nodes.push_back(v);
        row_of.emplace(v, r);
        return r;
    };
    std::vector<int> ad_rows;
    for (NodeId v : ad_batch) ad_rows.push_back(row(v));
    std::vector<int> rel_v_rows, rel_u_rows;
    for (const auto& r : relations) {
        rel_v_rows.push_back(row(r.v));
        rel_u_rows.push_back(row(r.u));
    }

    NeighbourSample sample =
        sample_neighbours(g, batch_nodes, {cfg.fanout1, cfg.fanout2}, state.rng());
    ad::Tape tape;
    auto z = encode(g, sample, state.det.encoder, tape);
    auto z_ad = tape.gather_rows(z, ad_rows);

    ad::Var loss_ad;
    if (cfg.head == HeadVariant::Hypersphere) {
        std::vector<int> n_rows(ad_rows.begin(), ad_rows.begin() + normals.size());
        std::vector<int> a_rows(ad_rows.begin() + normals.size(), ad_rows.end());
        auto z_n = tape.gather_rows(z, n_rows);
        auto z_a = tape.gather_rows(z, a_rows);
        loss_ad = ad_loss_hypersphere(z_n, z_a, state.det.head.centre, tape);
    } else {
        auto scores = score(z_ad, state.det.head, tape);
        if (cfg.head == HeadVariant::BCE) {
            loss_ad = ad_loss_bce(scores, ad_labels, tape);
        } else {
            DeviationPrior prior =
                deviation_prior(cfg.deviation_prior_draws, cfg.seed ^ 0x9e3779b97f4a7c15ULL);
            loss_ad = ad_loss_deviation(scores, ad_labels, prior, tape, cfg.deviation_margin);
        }
    }

    StepLosses losses;
    losses.ad_loss = loss_ad->value(0, 0);
    ad::Var total = loss_ad;
    if (state.det.nsr_enabled && !relations.empty()) {
        auto z_v = tape.gather_rows(z, rel_v_rows);
        auto z_u = tape.gather_rows(z, rel_u_rows);
        auto w_r = tape.param(state.det.nsr.w_r);
        auto h = relation_embed(z_v, z_u, w_r, tape);
        auto p = relation_predict(h, state.det.nsr, tape);
        auto loss_nsr = nsr_loss(p, relations, tape);
        losses.nsr_loss = loss_nsr->value(0, 0);
        total = tape.add(total, tape.affine(loss_nsr, cfg.nsr_weight, 0.0));
    }

    // (4) single combined backward; gradient routing follows the graph
    tape.backward(total);

    // (5) Adam updates
    AdamConfig adam;
    adam.learning_rate = cfg.learning_rate;
    for (auto* grp : state.trainable_groups()) adam_step(*grp, adam);

    state.iteration += 1;
    return losses;
}

std::vector<StepLosses> train(const AttributedGraph& g, const OpenSetSplit& split,
                              ModelState& state) {
    const int spe = steps_per_epoch(split, state.cfg);
    const std::uint64_t target =
        static_cast<std::uint64_t>(state.cfg.epochs) * static_cast<std::uint64_t>(spe);
    std::vector<StepLosses> history;
    while (state.iteration < target) history.push_back(train_step(g, split, state));
    return history;
}

// --- config JSON ---------------------------------------------------------

std::string config_to_canonical_json(const TrainConfig& cfg) {
    nlohmann::json j;
    j["alpha"] = cfg.alpha;
    j["b_ad_normals"] = cfg.b_ad_normals;
    j["deviation_margin"] = cfg.deviation_margin;
    j["deviation_prior_draws"] = cfg.deviation_prior_draws;
    j["epochs"] = cfg.epochs;
    j["fanout1"] = cfg.fanout1;
    j["fanout2"] = cfg.fanout2;
    j["head"] = to_string(cfg.head);
    j["hidden"] = cfg.hidden;
    j["in_dim"] = cfg.in_dim;
    j["labelled_normal_fraction"] = cfg.labelled_normal_fraction;
    j["learning_rate"] = cfg.learning_rate;
    j["n_labelled_anomalies"] = cfg.n_labelled_anomalies;
    j["nsr_enabled"] = cfg.nsr_enabled;
    j["nsr_weight"] = cfg.nsr_weight;
    j["relation_cap"] = cfg.relation_cap;
    j["seed"] = cfg.seed;
    j["use_unconnected_normal"] = cfg.use_unconnected_normal;
    return j.dump();
}

TrainConfig config_from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    TrainConfig cfg;
    const std::set<std::string> known = {
        "alpha",        "b_ad_normals",  "deviation_margin", "deviation_prior_draws",
        "epochs",       "fanout1",       "fanout2",          "head",
        "hidden",       "in_dim",        "labelled_normal_fraction", "learning_rate",
        "n_labelled_anomalies", "nsr_enabled", "nsr_weight", "relation_cap",
        "seed",         "use_unconnected_normal"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!known.count(it.key())) throw ConfigError("unknown config key '" + it.key() + "'");
    }
    if (j.contains("alpha")) cfg.alpha = j["alpha"];
    if (j.contains("b_ad_normals")) cfg.b_ad_normals = j["b_ad_normals"];
    if (j.contains("deviation_margin")) cfg.deviation_margin = j["deviation_margin"];
    if (j.contains("deviation_prior_draws")) cfg.deviation_prior_draws = j["deviation_prior_draws"];
    if (j.contains("epochs")) cfg.epochs = j["epochs"];
    if (j.contains("fanout1")) cfg.fanout1 = j["fanout1"];
    if (j.contains("fanout2")) cfg.fanout2 = j["fanout2"];
    if (j.contains("head")) cfg.head = head_variant_from_string(j["head"]);
    if (j.contains("hidden")) cfg.hidden = j["hidden"];
    if (j.contains("in_dim")) cfg.in_dim = j["in_dim"];
    if (j.contains("labelled_normal_fraction"))
        cfg.labelled_normal_fraction = j["labelled_normal_fraction"];
    if (j.contains("learning_rate")) cfg.learning_rate = j["learning_rate"];
    if (j.contains("n_labelled_anomalies")) cfg.n_labelled_anomalies = j["n_labelled_anomalies"];
    if (j.contains("nsr_enabled")) cfg.nsr_enabled = j["nsr_enabled"];
    if (j.contains("nsr_weight")) cfg.nsr_weight = j["nsr_weight"];
    if (j.contains("relation_cap")) cfg.relation_cap = j["relation_cap"];
    if (j.contains("seed")) cfg.seed = j["seed"];
    if (j.contains("use_unconnected_normal"))
        cfg.use_unconnected_normal = j["use_unconnected_normal"];
    return cfg;
}

// --- checkpoint ----------------------------------------------------------

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<char*>(&v), 4); }
void write_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<char*>(&v), 8); }
std::uint32_t read_u32(std::istream& is) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    return v;
}
std::uint64_t read_u64(std::istream& is) {
    std::uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 8);
    return v;
}

void write_matrix(std::ostream& os, const Matrix& m) {
    write_u64(os, static_cast<std::uint64_t>(m.rows()));
    write_u64(os, static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            const double d = m(i, j);
            os.write(reinterpret_cast<const char*>(&d), 8);
        }
}

Matrix read_matrix(std::istream& is) {
    const std::uint64_t rows = read_u64(is);
    const std::uint64_t cols = read_u64(is);
    Matrix m(rows, cols);
    for (std::uint64_t i = 0; i < rows; ++i)
        for (std::uint64_t j = 0; j < cols; ++j) {
            double d;
            is.read(reinterpret_cast<char*>(&d), 8);
            m(i, j) = d;
        }
    return m;
}

std::vector<ParamGroup*> all_groups(ModelState& state) {
    std::vector<ParamGroup*> groups = state.det.encoder.groups();
    for (auto* g : state.det.head.groups()) groups.push_back(g);
    for (auto* g : state.det.nsr.groups()) groups.push_back(g);
    return groups;
}

}  // namespace

void save_checkpoint(const ModelState& state, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open checkpoint for writing: " + path.string());
    os.write("NSRC", 4);
    write_u32(os, kCheckpointVersion);
    const std::string cfg_json = config_to_canonical_json(state.cfg);
    write_u64(os, cfg_json.size());
    os.write(cfg_json.data(), static_cast<std::streamsize>(cfg_json.size()));
    write_u64(os, state.iteration);

    os.put(state.det.head.centre_set ? 1 : 0);
    if (state.det.head.centre_set) write_matrix(os, state.det.head.centre);

    auto& mutable_state = const_cast<ModelState&>(state);
    auto groups = all_groups(mutable_state);
    write_u32(os, static_cast<std::uint32_t>(groups.size()));
    for (auto* g : groups) {
        write_u32(os, static_cast<std::uint32_t>(g->name.size()));
        os.write(g->name.data(), static_cast<std::streamsize>(g->name.size()));
        write_u64(os, g->step_count);
        write_matrix(os, g->value);
        write_matrix(os, g->adam_m);
        write_matrix(os, g->adam_v);
    }

    std::ostringstream rng_ss;
    rng_ss << state.rng;
    const std::string rng_state = rng_ss.str();
    write_u64(os, rng_state.size());
    os.write(rng_state.data(), static_cast<std::streamsize>(rng_state.size()));
}

ModelState load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint: " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "NSRC", 4) != 0)
        throw DataError("checkpoint " + path.string() + ": bad magic");
    const std::uint32_t version = read_u32(is);
    if (version != kCheckpointVersion)
        throw DataError("checkpoint " + path.string() + ": unsupported version " +
                        std::to_string(version));
    const std::uint64_t cfg_len = read_u64(is);
    std::string cfg_json(cfg_len, '\0');
    is.read(cfg_json.data(), static_cast<std::streamsize>(cfg_len));
    if (!is) throw DataError("checkpoint " + path.string() + ": truncated config");
    TrainConfig cfg = config_from_json(cfg_json);

    ModelState state;
    state.cfg = cfg;
    state.det.encoder = EncoderParams();
    // rebuild shapes via a throwaway init, then overwrite from blocks
    std::mt19937_64 scratch(0);
    state.det.encoder = EncoderParams(cfg.in_dim, cfg.hidden, scratch);
    state.det.head = ScoringHead(cfg.head, cfg.hidden, scratch);
    state.det.nsr = NsrParams(cfg.hidden, scratch);
    state.det.nsr_enabled = cfg.nsr_enabled;

    state.iteration = read_u64(is);
    const int centre_present = is.get();
    if (centre_present == 1) {
        state.det.head.centre = read_matrix(is);
        state.det.head.centre_set = true;
    }

    std::unordered_map<std::string, ParamGroup*> by_name;
    for (auto* g : all_groups(state)) by_name[g->name] = g;
    const std::uint32_t n_groups = read_u32(is);
    for (std::uint32_t i = 0; i < n_groups; ++i) {
        const std::uint32_t name_len = read_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw DataError("checkpoint " + path.string() + ": unknown parameter block '" + name +
                            "'");
        ParamGroup* g = it->second;
        g->step_count = read_u64(is);
        g->value = read_matrix(is);
        g->adam_m = read_matrix(is);
        g->adam_v = read_matrix(is);
        g->grad = Matrix::Zero(g->value.rows(), g->value.cols());
    }

    const std::uint64_t rng_len = read_u64(is);
    std::string rng_state(rng_len, '\0');
    is.read(rng_state.data(), static_cast<std::streamsize>(rng_len));
    if (!is) throw DataError("checkpoint " + path.string() + ": truncated");
    std::istringstream rng_ss(rng_state);
    rng_ss >> state.rng;
    return state;
}

}  // namespace nsreg

#include "nsreg/eval.hpp"
#include "nsreg/gradcheck.hpp"
#include "nsreg/trainer.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <fstream>
#include <future>
#include <iostream>
#include <sstream>

namespace {

using nsreg::AttributedGraph;
using nsreg::ModelState;
using nsreg::OpenSetSplit;
using nsreg::SplitConfig;
using nsreg::SynthConfig;
using nsreg::TrainConfig;

int worker_threads() {
    const char* env = std::getenv("NSREG_THREADS");
    if (!env) return 1;
    const int n = std::atoi(env);
    return n > 0 ? n : 1;
}

AttributedGraph load_data_dir(const std::filesystem::path& dir) {
    auto feat = dir / "features.csv";
    if (!std::filesystem::exists(feat)) feat = dir / "features.nsrg";
    return nsreg::load_graph(dir / "edges.txt", feat, dir / "labels.csv");
}

nlohmann::json split_config_json(const SplitConfig& s) {
    return {{"n_labelled_anomalies", s.n_labelled_anomalies},
            {"labelled_normal_fraction", s.labelled_normal_fraction},
            {"seed", s.seed}};
}

void write_resolved_config(const std::filesystem::path& out_dir, const nlohmann::json& j) {
    std::ofstream os(out_dir / "config.json");
    os << j.dump(2) << "\n";
}

// training config shared by train / sweep-alpha / gradcheck subcommands
struct TrainFlags {
    std::string data_dir;
    std::string out_dir = "run";
    std::string config_path;
    int rotation = 0;
    TrainConfig cfg;
    std::string head = "bce";
    bool nsr_off = false;
    bool no_unconnected_normal = false;
};

void add_train_flags(CLI::App* cmd, TrainFlags& f) {
    cmd->add_option("--data", f.data_dir, "data directory (edges.txt, features.csv|nsrg, labels.csv)")
        ->required();
    cmd->add_option("--out", f.out_dir, "output directory");
    cmd->add_option("--config", f.config_path, "JSON config file; flags override");
    cmd->add_option("--rotation", f.rotation, "which anomaly class plays the seen role (index)");
    cmd->add_option("--epochs", f.cfg.epochs);
    cmd->add_option("--lr", f.cfg.learning_rate);
    cmd->add_option("--alpha", f.cfg.alpha);
    cmd->add_option("--seed", f.cfg.seed);
    cmd->add_option("--head", f.head, "bce|deviation|hypersphere");
    cmd->add_flag("--nsr-off", f.nsr_off, "disable the NSR regulariser");
    cmd->add_flag("--no-unconnected-normal", f.no_unconnected_normal,
                  "drop kind-2 (alpha-labelled) relations");
    cmd->add_option("--b-ad-normals", f.cfg.b_ad_normals);
    cmd->add_option("--relation-cap", f.cfg.relation_cap);
    cmd->add_option("--n-labelled-anomalies", f.cfg.n_labelled_anomalies);
    cmd->add_option("--labelled-normal-fraction", f.cfg.labelled_normal_fraction);
    cmd->add_option("--nsr-weight", f.cfg.nsr_weight);
    cmd->add_option("--hidden", f.cfg.hidden);
    cmd->add_option("--fanout1", f.cfg.fanout1);
    cmd->add_option("--fanout2", f.cfg.fanout2);
}

TrainConfig resolve_config(const CLI::App* cmd, TrainFlags& f) {
    TrainConfig cfg = f.cfg;
    if (!f.config_path.empty()) {
        std::ifstream is(f.config_path);
        if (!is) throw nsreg::DataError("cannot open config " + f.config_path);
        std::stringstream ss;
        ss << is.rdbuf();
        TrainConfig from_file = nsreg::config_from_json(ss.str());
        // flags the user actually passed override the file
        TrainConfig defaults;
        auto pick = [&](auto member, const char* flag) {
            if (cmd->count(flag) == 0) cfg.*member = from_file.*member;
        };
        pick(&TrainConfig::epochs, "--epochs");
        pick(&TrainConfig::learning_rate, "--lr");
        pick(&TrainConfig::alpha, "--alpha");
        pick(&TrainConfig::seed, "--seed");
        pick(&TrainConfig::b_ad_normals, "--b-ad-normals");
        pick(&TrainConfig::relation_cap, "--relation-cap");
        pick(&TrainConfig::n_labelled_anomalies, "--n-labelled-anomalies");
        pick(&TrainConfig::labelled_normal_fraction, "--labelled-normal-fraction");
        pick(&TrainConfig::nsr_weight, "--nsr-weight");
        pick(&TrainConfig::hidden, "--hidden");
        pick(&TrainConfig::fanout1, "--fanout1");
        pick(&TrainConfig::fanout2, "--fanout2");
        if (cmd->count("--head") == 0) cfg.head = from_file.head;
        if (cmd->count("--nsr-off") == 0) cfg.nsr_enabled = from_file.nsr_enabled;
        if (cmd->count("--no-unconnected-normal") == 0)
            cfg.use_unconnected_normal = from_file.use_unconnected_normal;
    }
    if (cmd->count("--head") > 0) cfg.head = nsreg::head_variant_from_string(f.head);
    if (f.nsr_off) cfg.nsr_enabled = false;
    if (f.no_unconnected_normal) cfg.use_unconnected_normal = false;
    return cfg;
}

OpenSetSplit pick_rotation(const AttributedGraph& g, const TrainConfig& cfg, int rotation) {
    SplitConfig scfg;
    scfg.n_labelled_anomalies = cfg.n_labelled_anomalies;
    scfg.labelled_normal_fraction = cfg.labelled_normal_fraction;
    scfg.seed = cfg.seed;
    auto splits = nsreg::make_rotations(g, scfg);
    if (rotation < 0 || rotation >= static_cast<int>(splits.size()))
        throw nsreg::ConfigError("rotation index " + std::to_string(rotation) + " out of range");
    return splits[rotation];
}

int cmd_synth(const SynthConfig& scfg, std::uint64_t seed, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    AttributedGraph g = nsreg::generate_synthetic(scfg, seed);
    const std::filesystem::path dir(out_dir);
    nsreg::save_graph(g, dir / "edges.txt", dir / "features.csv", dir / "labels.csv");
    const double sep_auc = nsreg::raw_feature_logistic_auc(g);
    nlohmann::json manifest{{"seed", seed},
                            {"n_nodes", g.num_nodes()},
                            {"n_undirected_edges", g.num_undirected_edges()},
                            {"separability_auc_roc", sep_auc},
                            {"config",
                             {{"n_normal", scfg.n_normal},
                              {"n_anomaly_per_class", scfg.n_anomaly_per_class},
                              {"n_anomaly_classes", scfg.n_anomaly_classes},
                              {"feature_dim", scfg.feature_dim},
                              {"offset_scale", scfg.offset_scale},
                              {"n_normal_modes", scfg.n_normal_modes},
                              {"mode_scale", scfg.mode_scale},
                              {"normal_noise", scfg.normal_noise},
                              {"p_nn_cross", scfg.p_nn_cross},
                              {"p_nn", scfg.p_nn},
                              {"p_na", scfg.p_na},
                              {"p_aa", scfg.p_aa}}}};
    std::ofstream os(dir / "manifest.json");
    os << manifest.dump(2) << "\n";
    std::cout << "wrote " << out_dir << " (separability AUC-ROC " << sep_auc << ")\n";
    return 0;
}

int cmd_train(const CLI::App* cmd, TrainFlags& f) {
    TrainConfig cfg = resolve_config(cmd, f);
    AttributedGraph g = load_data_dir(f.data_dir);
    OpenSetSplit split = pick_rotation(g, cfg, f.rotation);

    ModelState state = nsreg::init_model(g, cfg);
    auto history = nsreg::train(g, split, state);

    std::filesystem::create_directories(f.out_dir);
    const std::filesystem::path dir(f.out_dir);
    nsreg::save_checkpoint(state, dir / "checkpoint.nsrc");
    {
        std::ofstream os(dir / "loss.csv");
        os.precision(17);
        os << "iteration,ad_loss,nsr_loss\n";
        for (std::size_t i = 0; i < history.size(); ++i)
            os << i << "," << history[i].ad_loss << "," << history[i].nsr_loss << "\n";
    }
    nlohmann::json resolved = nlohmann::json::parse(nsreg::config_to_canonical_json(state.cfg));
    resolved["rotation"] = f.rotation;
    write_resolved_config(dir, resolved);
    std::cout << "trained " << history.size() << " iterations -> " << f.out_dir << "\n";
    return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_dir,
             const std::string& out_dir, int rotation, std::uint64_t split_seed,
             bool split_seed_given) {
    ModelState state = nsreg::load_checkpoint(checkpoint);
    AttributedGraph g = load_data_dir(data_dir);
    if (g.feature_dim() != state.cfg.in_dim) {
        throw nsreg::DataError("feature dim " + std::to_string(g.feature_dim()) +
                               " does not match checkpoint input dim " +
                               std::to_string(state.cfg.in_dim));
    }
    TrainConfig cfg = state.cfg;
    if (split_seed_given) cfg.seed = split_seed;
    OpenSetSplit split = pick_rotation(g, cfg, rotation);

    nsreg::EvalReport report;
    nsreg::EvalRow row = nsreg::evaluate(state.det, g, split);
    row.rotation = rotation;
    row.seed = cfg.seed;
    report.rows.push_back(row);
    report.aggregate();

    std::filesystem::create_directories(out_dir);
    const std::filesystem::path dir(out_dir);
    report.write_json(dir / "report.json");
    report.write_csv(dir / "report.csv");
    nlohmann::json resolved = nlohmann::json::parse(nsreg::config_to_canonical_json(cfg));
    resolved["rotation"] = rotation;
    write_resolved_config(dir, resolved);
    std::cout << "auc_roc_all=" << row.auc_roc_all << " auc_roc_unseen=" << row.auc_roc_unseen
              << "\n";
    return 0;
}

int cmd_sweep_alpha(const CLI::App* cmd, TrainFlags& f, const std::vector<double>& alphas,
                    int n_seeds) {
    for (double a : alphas)
        if (a < 0.0 || a > 1.0) throw nsreg::ConfigError("alpha outside [0,1]");
    TrainConfig base = resolve_config(cmd, f);
    AttributedGraph g = load_data_dir(f.data_dir);

    struct Run {
        double alpha;
        int rotation;
        std::uint64_t seed;
    };
    SplitConfig probe;
    probe.n_labelled_anomalies = base.n_labelled_anomalies;
    probe.labelled_normal_fraction = base.labelled_normal_fraction;
    probe.seed = base.seed;
    const int n_rot = static_cast<int>(nsreg::make_rotations(g, probe).size());

    std::vector<Run> runs;
    for (double a : alphas)
        for (int r = 0; r < n_rot; ++r)
            for (int s = 0; s < n_seeds; ++s)
                runs.push_back({a, r, base.seed + static_cast<std::uint64_t>(s)});

    auto run_one = [&](const Run& r) {
        TrainConfig cfg = base;
        cfg.alpha = r.alpha;
        cfg.seed = r.seed;
        OpenSetSplit split = pick_rotation(g, cfg, r.rotation);
        ModelState state = nsreg::init_model(g, cfg);
        nsreg::train(g, split, state);
        nsreg::EvalRow row = nsreg::evaluate(state.det, g, split);
        row.rotation = r.rotation;
        row.seed = r.seed;
        return row;
    };

    const int threads = worker_threads();
    std::vector<nsreg::EvalRow> rows(runs.size());
    for (std::size_t start = 0; start < runs.size(); start += threads) {
        std::vector<std::future<nsreg::EvalRow>> batch;
        for (std::size_t i = start; i < std::min(runs.size(), start + threads); ++i)
            batch.push_back(std::async(std::launch::async, run_one, runs[i]));
        for (std::size_t i = 0; i < batch.size(); ++i) rows[start + i] = batch[i].get();
    }

    std::filesystem::create_directories(f.out_dir);
    const std::filesystem::path dir(f.out_dir);
    std::ofstream os(dir / "sweep.csv");
    os.precision(17);
    os << "alpha,rotation,seed,auc_roc_all,auc_pr_all,auc_roc_unseen,auc_pr_unseen\n";
    for (std::size_t i = 0; i < runs.size(); ++i) {
        const auto& row = rows[i];
        os << runs[i].alpha << "," << row.rotation << "," << row.seed << "," << row.auc_roc_all
           << "," << row.auc_pr_all << "," << row.auc_roc_unseen << "," << row.auc_pr_unseen
           << "\n";
    }
    nlohmann::json resolved = nlohmann::json::parse(nsreg::config_to_canonical_json(base));
    resolved["alphas"] = alphas;
    resolved["n_seeds"] = n_seeds;
    write_resolved_config(dir, resolved);
    std::cout << "wrote " << (dir / "sweep.csv") << " (" << runs.size() << " rows)\n";
    return 0;
}

int cmd_gradcheck(int n_nodes, std::uint64_t seed, bool nsr_enabled,
                  const std::string& corrupt_group) {
    if (n_nodes > 50) throw nsreg::ConfigError("gradcheck requires a small graph (<= 50 nodes)");
    SynthConfig scfg;
    scfg.n_normal = n_nodes - 10;
    scfg.n_anomaly_per_class = 5;
    scfg.n_anomaly_classes = 2;
    scfg.feature_dim = 8;
    scfg.p_nn = 0.2;
    scfg.p_na = 0.05;
    scfg.p_aa = 0.2;
    AttributedGraph g = nsreg::generate_synthetic(scfg, seed);

    TrainConfig cfg;
    cfg.hidden = 8;
    cfg.seed = seed;
    cfg.nsr_enabled = nsr_enabled;
    cfg.n_labelled_anomalies = 5;
    cfg.labelled_normal_fraction = 0.5;
    SplitConfig split_cfg{cfg.n_labelled_anomalies, cfg.labelled_normal_fraction, seed};
    OpenSetSplit split = nsreg::make_rotations(g, split_cfg)[0];
    ModelState state = nsreg::init_model(g, cfg);

    // check at a generic point: jitter every parameter (including the
    // zero-initialised biases) so no ReLU preactivation sits exactly on a
    // kink, where central differences are undefined
    {
        std::mt19937_64 jitter_rng(seed + 1);
        std::uniform_real_distribution<double> jitter(-0.05, 0.05);
        for (auto* grp : state.det.encoder.groups())
            for (Eigen::Index i = 0; i < grp->value.size(); ++i) grp->value(i) += jitter(jitter_rng);
        for (auto* grp : state.det.head.groups())
            for (Eigen::Index i = 0; i < grp->value.size(); ++i) grp->value(i) += jitter(jitter_rng);
        for (auto* grp : state.det.nsr.groups())
            for (Eigen::Index i = 0; i < grp->value.size(); ++i) grp->value(i) += jitter(jitter_rng);
    }

    // fixed batches and full neighbourhoods so the forward is deterministic
    std::vector<nsreg::NodeId> ad_batch = split.labelled_normals;
    ad_batch.insert(ad_batch.end(), split.labelled_anomalies.begin(),
                    split.labelled_anomalies.end());
    std::vector<int> ad_labels(split.labelled_normals.size(), 0);
    ad_labels.insert(ad_labels.end(), split.labelled_anomalies.size(), 1);

    std::vector<nsreg::RelationSample> relations;
    if (nsr_enabled) {
        nsreg::NsrConfig ncfg;
        ncfg.alpha = cfg.alpha;
        ncfg.batch_relations = 64;
        relations = nsreg::sample_relations(g, split.labelled_normals, split.labelled_anomalies,
                                            ncfg, seed);
    }

    std::vector<nsreg::NodeId> batch_nodes = ad_batch;
    std::unordered_map<nsreg::NodeId, int> row_of;
    for (std::size_t i = 0; i < batch_nodes.size(); ++i) row_of[batch_nodes[i]] = static_cast<int>(i);
    auto row = [&](nsreg::NodeId v) {
        auto it = row_of.find(v);
        if (it != row_of.end()) return it->second;
        int r = static_cast<int>(batch_nodes.size());
        batch_nodes.push_back(v);
        row_of.emplace(v, r);
        return r;
    };
    std::vector<int> ad_rows, rel_v_rows, rel_u_rows;
    for (std::size_t i = 0; i < ad_batch.size(); ++i) ad_rows.push_back(static_cast<int>(i));
    for (const auto& r : relations) {
        rel_v_rows.push_back(row(r.v));
        rel_u_rows.push_back(row(r.u));
    }
    const int full = static_cast<int>(g.max_degree());
    nsreg::NeighbourSample sample = nsreg::sample_neighbours(g, batch_nodes, {full, full}, 0);

    auto build_loss = [&](bool do_backward) {
        nsreg::ad::Tape tape;
        auto z = nsreg::encode(g, sample, state.det.encoder, tape);
        auto z_ad = tape.gather_rows(z, ad_rows);
        auto scores = nsreg::score(z_ad, state.det.head, tape);
        auto total = nsreg::ad_loss_bce(scores, ad_labels, tape);
        if (nsr_enabled && !relations.empty()) {
            auto z_v = tape.gather_rows(z, rel_v_rows);
            auto z_u = tape.gather_rows(z, rel_u_rows);
            auto w_r = tape.param(state.det.nsr.w_r);
            auto h = nsreg::relation_embed(z_v, z_u, w_r, tape);
            auto p = nsreg::relation_predict(h, state.det.nsr, tape);
            total = tape.add(total, nsreg::nsr_loss(p, relations, tape));
        }
        if (do_backward) tape.backward(total);
        return total->value(0, 0);
    };

    std::vector<nsreg::ParamGroup*> groups = state.det.encoder.groups();
    for (auto* grp : state.det.head.groups()) groups.push_back(grp);
    for (auto* grp : state.det.nsr.groups()) groups.push_back(grp);

    auto report = nsreg::grad_check(
        groups, [&] { return build_loss(false); },
        [&] {
            build_loss(true);
            if (!corrupt_group.empty()) {
                for (auto* grp : groups)
                    if (grp->name == corrupt_group) grp->grad.array() += 1e-2;
            }
        });

    bool ok = true;
    for (auto* grp : groups) {
        const auto& res = report.at(grp->name);
        if (!res.has_gradient_path) {
            std::cout << "group " << grp->name << ": no gradient path\n";
            continue;
        }
        const bool pass = res.max_rel_error < 1e-4;
        ok = ok && pass;
        std::cout << "group " << grp->name << ": max_rel_err=" << res.max_rel_error << " "
                  << (pass ? "PASS" : "FAIL") << "\n";
    }
    if (!ok) {
        std::cout << "gradcheck FAILED\n";
        return 3;
    }
    std::cout << "gradcheck passed\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"NSReg: open-set graph anomaly detection with normal structure regularisation"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic open-set benchmark graph");
    SynthConfig scfg;
    std::uint64_t synth_seed = 0;
    std::string synth_out = "data";
    synth->add_option("--out", synth_out, "output directory");
    synth->add_option("--seed", synth_seed);
    synth->add_option("--n-normal", scfg.n_normal);
    synth->add_option("--n-anomaly-per-class", scfg.n_anomaly_per_class);
    synth->add_option("--n-classes", scfg.n_anomaly_classes);
    synth->add_option("--dim", scfg.feature_dim);
    synth->add_option("--offset-scale", scfg.offset_scale);
    synth->add_option("--n-modes", scfg.n_normal_modes);
    synth->add_option("--mode-scale", scfg.mode_scale);
    synth->add_option("--normal-noise", scfg.normal_noise);
    synth->add_option("--p-nn-cross", scfg.p_nn_cross);
    synth->add_option("--p-nn", scfg.p_nn);
    synth->add_option("--p-na", scfg.p_na);
    synth->add_option("--p-aa", scfg.p_aa);

    // train
    auto* train = app.add_subcommand("train", "train a detector on one rotation");
    TrainFlags tf;
    add_train_flags(train, tf);

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string eval_checkpoint, eval_data, eval_out = "eval";
    int eval_rotation = 0;
    std::uint64_t eval_split_seed = 0;
    eval->add_option("--checkpoint", eval_checkpoint)->required();
    eval->add_option("--data", eval_data)->required();
    eval->add_option("--out", eval_out);
    eval->add_option("--rotation", eval_rotation);
    auto* split_seed_opt = eval->add_option("--split-seed", eval_split_seed,
                                            "override the split seed from the checkpoint");

    // sweep-alpha
    auto* sweep = app.add_subcommand("sweep-alpha", "train/evaluate across alpha values");
    TrainFlags sf;
    add_train_flags(sweep, sf);
    std::vector<double> alphas = {0.8};
    int sweep_seeds = 1;
    sweep->add_option("--alphas", alphas)->delimiter(',');
    sweep->add_option("--seeds", sweep_seeds, "number of seeds (base_seed + index)");

    // gradcheck
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of the objective");
    int gc_nodes = 30;
    std::uint64_t gc_seed = 0;
    bool gc_nsr_off = false;
    std::string gc_corrupt;
    gradcheck->add_option("--nodes", gc_nodes, "graph size (max 50)");
    gradcheck->add_option("--seed", gc_seed);
    gradcheck->add_flag("--nsr-off", gc_nsr_off);
    gradcheck->add_option("--corrupt-group", gc_corrupt)->group("");  // test hook, hidden

    try {
        app.parse(argc, argv);
        if (synth->parsed()) return cmd_synth(scfg, synth_seed, synth_out);
        if (train->parsed()) return cmd_train(train, tf);
        if (eval->parsed())
            return cmd_eval(eval_checkpoint, eval_data, eval_out, eval_rotation, eval_split_seed,
                            split_seed_opt->count() > 0);
        if (sweep->parsed()) return cmd_sweep_alpha(sweep, sf, alphas, sweep_seeds);
        if (gradcheck->parsed()) return cmd_gradcheck(gc_nodes, gc_seed, !gc_nsr_off, gc_corrupt);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    } catch (const nsreg::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const nsreg::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const nsreg::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

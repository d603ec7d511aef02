#pragma once

#include "nsreg/detectors.hpp"
#include "nsreg/eval.hpp"

#include <filesystem>
#include <utility>
#include <vector>

namespace nsreg {

struct TrainConfig {
    int epochs = 400;
    double learning_rate = 1e-3;
    int b_ad_normals = 512;  // labelled-normal batch cap
    int relation_cap = 512;
    int n_labelled_anomalies = 50;
    double labelled_normal_fraction = 0.05;
    double alpha = 0.8;
    std::uint64_t seed = 0;
    HeadVariant head = HeadVariant::BCE;
    bool nsr_enabled = true;
    bool use_unconnected_normal = true;
    double nsr_weight = 1.0;
    int hidden = 64;
    int fanout1 = 10;
    int fanout2 = 10;
    int deviation_prior_draws = 5000;
    double deviation_margin = 5.0;
    Eigen::Index in_dim = 0;  // filled from the graph at init
};

struct ModelState {
    TrainConfig cfg;
    Detector det;
    std::mt19937_64 rng;
    std::uint64_t iteration = 0;

    std::vector<ParamGroup*> trainable_groups();
};

struct StepLosses {
    double ad_loss = 0.0;
    double nsr_loss = 0.0;
};

ModelState init_model(const AttributedGraph& g, const TrainConfig& cfg);

/// One mini-batch iteration of the joint objective: AD loss on sampled
/// labelled normals plus all labelled anomalies, NSR loss on a sampled
/// relation batch, a single combined backward, then Adam updates.
StepLosses train_step(const AttributedGraph& g, const OpenSetSplit& split, ModelState& state);

/// Runs epochs x steps_per_epoch iterations from the state's current
/// iteration counter; steps_per_epoch is one pass over labelled normals.
std::vector<StepLosses> train(const AttributedGraph& g, const OpenSetSplit& split,
                              ModelState& state);

int steps_per_epoch(const OpenSetSplit& split, const TrainConfig& cfg);

void save_checkpoint(const ModelState& state, const std::filesystem::path& path);
ModelState load_checkpoint(const std::filesystem::path& path);

std::string config_to_canonical_json(const TrainConfig& cfg);
TrainConfig config_from_json(const std::string& json_text);

}  // namespace nsreg

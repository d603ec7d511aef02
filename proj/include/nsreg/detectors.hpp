#pragma once

#include "nsreg/encoder.hpp"
#include "nsreg/nsr.hpp"

#include <string>
#include <vector>

namespace nsreg {

enum class HeadVariant { BCE, Deviation, Hypersphere };

HeadVariant head_variant_from_string(const std::string& s);
std::string to_string(HeadVariant v);

/// Anomaly scoring head. BCE and Deviation carry a two-layer MLP;
/// Hypersphere has no trainable scoring parameters, only a fixed centre.
struct ScoringHead {
    HeadVariant variant = HeadVariant::BCE;
    ParamGroup a1, ab1, a2, ab2;
    Matrix centre;  // 1 x width, Hypersphere only; set once then frozen
    bool centre_set = false;

    ScoringHead() = default;
    ScoringHead(HeadVariant v, Eigen::Index width, std::mt19937_64& rng);
    std::vector<ParamGroup*> groups();
};

/// Anomaly scores, one row per node; higher means more anomalous for every
/// variant. BCE scores are in (0,1), Deviation scores are unbounded,
/// Hypersphere scores are squared distances to the centre.
ad::Var score(const ad::Var& z, ScoringHead& head, ad::Tape& tape);

/// Mean BCE over the AD batch; throws on an empty batch.
ad::Var ad_loss_bce(const ad::Var& scores, const std::vector<int>& labels, ad::Tape& tape);

struct DeviationPrior {
    double mu = 0.0;
    double sigma = 1.0;
};

/// Empirical mean/std of prior_draws standard-normal samples.
DeviationPrior deviation_prior(int prior_draws, std::uint64_t seed);

/// DevNet-style deviation loss: dev = (score - mu)/sigma; normals pay |dev|,
/// anomalies pay max(0, margin - dev).
ad::Var ad_loss_deviation(const ad::Var& scores, const std::vector<int>& labels,
                          const DeviationPrior& prior, ad::Tape& tape, double margin = 5.0);

/// Deep-SAD-style one-class loss: mean squared distance of normals to the
/// centre plus mean inverse distance of labelled anomalies.
ad::Var ad_loss_hypersphere(const ad::Var& z_normals, const ad::Var& z_anomalies,
                            const Matrix& centre, ad::Tape& tape, double eta_weight = 1.0,
                            double eps = 1e-6);

/// One detector = shared encoder + scoring head + optional NSR regulariser.
/// Inference never touches the NSR parameters.
struct Detector {
    EncoderParams encoder;
    ScoringHead head;
    NsrParams nsr;
    bool nsr_enabled = true;
};

Detector compose(EncoderParams encoder, ScoringHead head, NsrParams nsr, bool nsr_enabled);

}  // namespace nsreg

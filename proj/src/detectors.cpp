#include "nsreg/detectors.hpp"

#include <cmath>

namespace nsreg {

HeadVariant head_variant_from_string(const std::string& s) {
    if (s == "bce") return HeadVariant::BCE;
    if (s == "deviation") return HeadVariant::Deviation;
    if (s == "hypersphere") return HeadVariant::Hypersphere;
    throw ConfigError("unknown head variant '" + s + "'");
}

std::string to_string(HeadVariant v) {
    switch (v) {
        case HeadVariant::BCE: return "bce";
        case HeadVariant::Deviation: return "deviation";
        case HeadVariant::Hypersphere: return "hypersphere";
    }
    return "?";
}

ScoringHead::ScoringHead(HeadVariant v, Eigen::Index width, std::mt19937_64& rng) : variant(v) {
    if (v == HeadVariant::Hypersphere) {
        centre = Matrix::Zero(1, width);
        return;
    }
    a1 = ParamGroup("head.a1", width, width);
    ab1 = ParamGroup("head.ab1", 1, width);
    a2 = ParamGroup("head.a2", width, 1);
    ab2 = ParamGroup("head.ab2", 1, 1);
    glorot_init(a1, rng);
    glorot_init(a2, rng);
}

std::vector<ParamGroup*> ScoringHead::groups() {
    if (variant == HeadVariant::Hypersphere) return {};
    return {&a1, &ab1, &a2, &ab2};
}

ad::Var score(const ad::Var& z, ScoringHead& head, ad::Tape& tape) {
    if (head.variant == HeadVariant::Hypersphere) {
        if (z->value.cols() != head.centre.cols())
            throw ShapeError("score: embedding width != centre width");
        auto diff = tape.sub_rowvec(z, tape.constant(head.centre));
        return tape.rowsum(tape.cwise_mul(diff, diff));
    }
    if (z->value.cols() != head.a1.value.rows())
        throw ShapeError("score: embedding width != head input width");
    auto a1 = tape.param(head.a1);
    auto ab1 = tape.param(head.ab1);
    auto a2 = tape.param(head.a2);
    auto ab2 = tape.param(head.ab2);
    auto raw = tape.add_rowvec(tape.matmul(tape.relu(tape.add_rowvec(tape.matmul(z, a1), ab1)), a2),
                               ab2);
    return head.variant == HeadVariant::BCE ? tape.sigmoid(raw) : raw;
}

ad::Var ad_loss_bce(const ad::Var& scores, const std::vector<int>& labels, ad::Tape& tape) {
    if (labels.empty()) throw ConfigError("ad_loss_bce: empty AD batch");
    Matrix targets(static_cast<Eigen::Index>(labels.size()), 1);
    for (std::size_t i = 0; i < labels.size(); ++i)
        targets(static_cast<Eigen::Index>(i), 0) = labels[i];
    return tape.mean_soft_bce(scores, std::move(targets));
}

DeviationPrior deviation_prior(int prior_draws, std::uint64_t seed) {
    if (prior_draws < 1000) throw ConfigError("deviation_prior: prior_draws must be >= 1000");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Vector draws(prior_draws);
    for (int i = 0; i < prior_draws; ++i) draws(i) = gauss(rng);
    DeviationPrior p;
    p.mu = draws.mean();
    p.sigma = std::sqrt((draws.array() - p.mu).square().mean());
    if (p.sigma == 0.0) throw NumericError("deviation_prior: zero prior sigma");
    return p;
}

ad::Var ad_loss_deviation(const ad::Var& scores, const std::vector<int>& labels,
                          const DeviationPrior& prior, ad::Tape& tape, double margin) {
    if (labels.empty()) throw ConfigError("ad_loss_deviation: empty AD batch");
    if (prior.sigma == 0.0) throw NumericError("ad_loss_deviation: zero prior sigma");
    const auto m = static_cast<Eigen::Index>(labels.size());
    Matrix y(m, 1), ynot(m, 1);
    for (Eigen::Index i = 0; i < m; ++i) {
        y(i, 0) = labels[i];
        ynot(i, 0) = 1.0 - labels[i];
    }
    auto dev = tape.affine(scores, 1.0 / prior.sigma, -prior.mu / prior.sigma);
    auto normal_term = tape.mask(tape.abs(dev), std::move(ynot));
    auto anomaly_term = tape.mask(tape.relu(tape.affine(dev, -1.0, margin)), std::move(y));
    return tape.mean_all(tape.add(normal_term, anomaly_term));
}

ad::Var ad_loss_hypersphere(const ad::Var& z_normals, const ad::Var& z_anomalies,
                            const Matrix& centre, ad::Tape& tape, double eta_weight, double eps) {
    auto c = tape.constant(centre);
    auto dn = tape.sub_rowvec(z_normals, c);
    auto loss = tape.mean_all(tape.rowsum(tape.cwise_mul(dn, dn)));
    if (z_anomalies->value.rows() > 0) {
        auto da = tape.sub_rowvec(z_anomalies, c);
        auto inv = tape.reciprocal(tape.rowsum(tape.cwise_mul(da, da)), eps);
        loss = tape.add(loss, tape.affine(tape.mean_all(inv), eta_weight, 0.0));
    }
    return loss;
}

Detector compose(EncoderParams encoder, ScoringHead head, NsrParams nsr, bool nsr_enabled) {
    if (head.variant != HeadVariant::Hypersphere && encoder.out_dim() != head.a1.value.rows())
        throw ShapeError("compose: encoder output width != head input width");
    Detector d;
    d.encoder = std::move(encoder);
    d.head = std::move(head);
    d.nsr = std::move(nsr);
    d.nsr_enabled = nsr_enabled;
    return d;
}

}  // namespace nsreg

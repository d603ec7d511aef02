#include "nsreg/encoder.hpp"

namespace nsreg {

EncoderParams::EncoderParams(Eigen::Index in_dim, Eigen::Index hidden, std::mt19937_64& rng)
    : w1_self("enc.w1_self", in_dim, hidden),
      w1_neigh("enc.w1_neigh", in_dim, hidden),
      b1("enc.b1", 1, hidden),
      w2_self("enc.w2_self", hidden, hidden),
      w2_neigh("enc.w2_neigh", hidden, hidden),
      b2("enc.b2", 1, hidden),
      p1("enc.p1", hidden, hidden),
      pb1("enc.pb1", 1, hidden),
      p2("enc.p2", hidden, hidden),
      pb2("enc.pb2", 1, hidden) {
    for (auto* g : {&w1_self, &w1_neigh, &w2_self, &w2_neigh, &p1, &p2}) glorot_init(*g, rng);
}

std::vector<ParamGroup*> EncoderParams::groups() {
    return {&w1_self, &w1_neigh, &b1, &w2_self, &w2_neigh, &b2, &p1, &pb1, &p2, &pb2};
}

ad::Var encode(const AttributedGraph& g, const NeighbourSample& sample, EncoderParams& params,
               ad::Tape& tape) {
    if (g.feature_dim() != params.in_dim()) {
        throw ShapeError("encode: feature dim " + std::to_string(g.feature_dim()) +
                         " != encoder input dim " + std::to_string(params.in_dim()));
    }
    // raw features are constants, so layer-1 inputs can be precomputed
    const auto nf = static_cast<Eigen::Index>(sample.frontier.size());
    Matrix x_self(nf, g.feature_dim());
    Matrix x_nbar = Matrix::Zero(nf, g.feature_dim());
    for (Eigen::Index i = 0; i < nf; ++i) {
        x_self.row(i) = g.features().row(sample.base[sample.frontier_self[i]]);
        const auto& nb = sample.frontier_neigh[i];
        if (nb.empty()) continue;  // isolated: zero neighbour vector
        for (int r : nb) x_nbar.row(i) += g.features().row(sample.base[r]);
        x_nbar.row(i) /= static_cast<double>(nb.size());
    }

    auto w1s = tape.param(params.w1_self);
    auto w1n = tape.param(params.w1_neigh);
    auto b1 = tape.param(params.b1);
    auto w2s = tape.param(params.w2_self);
    auto w2n = tape.param(params.w2_neigh);
    auto b2 = tape.param(params.b2);
    auto p1 = tape.param(params.p1);
    auto pb1 = tape.param(params.pb1);
    auto p2 = tape.param(params.p2);
    auto pb2 = tape.param(params.pb2);

    auto h1 = tape.relu(tape.add_rowvec(
        tape.add(tape.matmul(tape.constant(x_self), w1s), tape.matmul(tape.constant(x_nbar), w1n)),
        b1));

    auto h1_self = tape.gather_rows(h1, sample.root_self);
    auto h1_nbar = tape.segment_mean(h1, sample.root_neigh);
    auto h2 = tape.relu(
        tape.add_rowvec(tape.add(tape.matmul(h1_self, w2s), tape.matmul(h1_nbar, w2n)), b2));

    auto proj = tape.relu(tape.add_rowvec(tape.matmul(h2, p1), pb1));
    return tape.add_rowvec(tape.matmul(proj, p2), pb2);
}

Matrix encode_full(const AttributedGraph& g, const std::vector<NodeId>& nodes,
                   EncoderParams& params) {
    const int full = static_cast<int>(g.max_degree());
    NeighbourSample s = sample_neighbours(g, nodes, {full, full}, 0);
    ad::Tape tape;
    return encode(g, s, params, tape)->value;
}

}  // namespace nsreg

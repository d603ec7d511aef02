#pragma once

#include "nsreg/graph.hpp"
#include "nsreg/param.hpp"
#include "nsreg/tape.hpp"

#include <random>
#include <vector>

namespace nsreg {

/// Two-layer mean-aggregator GraphSAGE followed by a two-layer projection
/// network. Self and neighbour paths use separate weight matrices summed
/// pre-activation; the projection output layer is linear.
struct EncoderParams {
    ParamGroup w1_self, w1_neigh, b1;
    ParamGroup w2_self, w2_neigh, b2;
    ParamGroup p1, pb1, p2, pb2;

    EncoderParams() = default;
    EncoderParams(Eigen::Index in_dim, Eigen::Index hidden, std::mt19937_64& rng);

    Eigen::Index in_dim() const { return w1_self.value.rows(); }
    Eigen::Index out_dim() const { return p2.value.cols(); }

    std::vector<ParamGroup*> groups();
};

/// Node representations z_v for the sampled batch; output rows follow
/// sample.roots order. Returns a tape Var so gradients can flow.
ad::Var encode(const AttributedGraph& g, const NeighbourSample& sample, EncoderParams& params,
               ad::Tape& tape);

/// Deterministic full-neighbourhood embeddings for inference (no sampling).
Matrix encode_full(const AttributedGraph& g, const std::vector<NodeId>& nodes,
                   EncoderParams& params);

}  // namespace nsreg

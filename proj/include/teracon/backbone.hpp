#pragma once
// Dilated-causal-convolution sequence encoder. Residual blocks follow the
// conv -> layer norm -> ReLU pattern twice, with an optional gating vector
// multiplied onto each ReLU output and a skip connection around the block.

#include <functional>
#include <span>
#include <vector>

#include "teracon/graph.hpp"
#include "teracon/rng.hpp"

namespace teracon {

struct BackboneConfig {
    std::size_t vocab{500};
    std::size_t dim{64};            // feature width f
    std::size_t blocks{4};          // residual blocks K
    std::size_t kernel_width{3};
    std::vector<int> dilations{1, 2, 4, 8};

    std::size_t mask_slots() const { return 2 * blocks; }
    void validate() const;
};

struct ResidualBlockParams {
    ad::Param conv1;      // (w, f, f)
    ad::Param ln1_gain;   // (f)
    ad::Param ln1_bias;   // (f)
    ad::Param conv2;
    ad::Param ln2_gain;
    ad::Param ln2_bias;
};

// Maps a Param to the graph node its consumers use. The default is a plain
// leaf; parameter-isolation training swaps in gated/masked variants.
using ParamNodeHook = std::function<ad::Node*(ad::Tape&, ad::Param&)>;

inline ParamNodeHook default_param_hook() {
    return [](ad::Tape& t, ad::Param& p) { return t.leaf(p); };
}

struct BackboneNet {
    BackboneConfig cfg;
    ad::Param item_embedding;  // (vocab, f)
    std::vector<ResidualBlockParams> blocks;

    explicit BackboneNet(BackboneConfig c);
    void init_params(Rng& rng);
    void for_each_param(const std::function<void(ad::Param&)>& fn);
};

struct TaskClassifier {
    std::size_t cardinality{0};
    ad::Param weight;  // (f, cardinality)
    ad::Param bias;    // (cardinality)

    void allocate(std::size_t dim, std::size_t card, const std::string& name);
    void init_params(std::size_t dim, Rng& rng);
};

// Graph builders. `items` is the concatenation of equal-length sequences;
// `seq_len` is the per-user length. Masks, when present, hold 2 nodes per
// block (one per ReLU) or may be empty for an unmasked pass.

ad::Node* embed_sequences(ad::Tape& tape, BackboneNet& net, std::span<const int> items,
                          const ParamNodeHook& hook);

ad::Node* residual_block(ad::Tape& tape, ResidualBlockParams& bp, ad::Node* x,
                         int dilation, std::size_t seq_len, ad::Node* mask1,
                         ad::Node* mask2, const ParamNodeHook& hook);

ad::Node* encode_sequences(ad::Tape& tape, BackboneNet& net, std::span<const int> items,
                           std::size_t seq_len, std::span<ad::Node* const> masks,
                           const ParamNodeHook& hook);

// Logits from the final row of each user's encoded block: (batch, cardinality).
ad::Node* classify_last_rows(ad::Tape& tape, ad::Node* encoded, std::size_t seq_len,
                             std::size_t batch, TaskClassifier& clf,
                             const ParamNodeHook& hook);

// Next-item logits: one row per position 0..seq_len-2 per user, predicting the
// following item. Shape ((seq_len-1)*batch, vocab).
ad::Node* autoregressive_logits(ad::Tape& tape, ad::Node* encoded, std::size_t seq_len,
                                std::size_t batch, TaskClassifier& out_layer,
                                const ParamNodeHook& hook);

// Targets aligned with autoregressive_logits rows.
std::vector<int> autoregressive_targets(std::span<const int> items, std::size_t seq_len);

}  // namespace teracon

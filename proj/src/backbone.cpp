#include "teracon/backbone.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace teracon {

void BackboneConfig::validate() const {
    if (blocks == 0) throw std::invalid_argument("backbone: at least one residual block required");
    if (dim == 0) throw std::invalid_argument("backbone: dim must be positive");
    if (vocab == 0) throw std::invalid_argument("backbone: vocab must be positive");
    if (kernel_width == 0) throw std::invalid_argument("backbone: kernel width must be >= 1");
    if (dilations.size() != blocks)
        throw std::invalid_argument("backbone: dilations must list one value per block");
    for (int d : dilations)
        if (d < 1) throw std::invalid_argument("backbone: dilation must be >= 1");
}

BackboneNet::BackboneNet(BackboneConfig c) : cfg(std::move(c)) {
    cfg.validate();
    item_embedding.name = "embedding";
    item_embedding.value = DenseArray({cfg.vocab, cfg.dim});
    blocks.resize(cfg.blocks);
    for (std::size_t k = 0; k < cfg.blocks; ++k) {
        auto& b = blocks[k];
        const std::string prefix = "block" + std::to_string(k) + ".";
        b.conv1.name = prefix + "conv1";
        b.conv1.value = DenseArray({cfg.kernel_width, cfg.dim, cfg.dim});
        b.ln1_gain.name = prefix + "ln1_gain";
        b.ln1_gain.value = DenseArray({cfg.dim}, 1.0);
        b.ln1_bias.name = prefix + "ln1_bias";
        b.ln1_bias.value = DenseArray({cfg.dim});
        b.conv2.name = prefix + "conv2";
        b.conv2.value = DenseArray({cfg.kernel_width, cfg.dim, cfg.dim});
        b.ln2_gain.name = prefix + "ln2_gain";
        b.ln2_gain.value = DenseArray({cfg.dim}, 1.0);
        b.ln2_bias.name = prefix + "ln2_bias";
        b.ln2_bias.value = DenseArray({cfg.dim});
    }
}

void BackboneNet::init_params(Rng& rng) {
    const double emb_bound = 1.0 / std::sqrt(static_cast<double>(cfg.dim));
    for (double& v : item_embedding.value.data) v = rng.uniform(-emb_bound, emb_bound);
    const double conv_bound =
        1.0 / std::sqrt(static_cast<double>(cfg.kernel_width * cfg.dim));
    for (auto& b : blocks) {
        for (double& v : b.conv1.value.data) v = rng.uniform(-conv_bound, conv_bound);
        b.ln1_gain.value.fill(1.0);
        b.ln1_bias.value.fill(0.0);
        for (double& v : b.conv2.value.data) v = rng.uniform(-conv_bound, conv_bound);
        b.ln2_gain.value.fill(1.0);
        b.ln2_bias.value.fill(0.0);
    }
}

void BackboneNet::for_each_param(const std::function<void(ad::Param&)>& fn) {
    fn(item_embedding);
    for (auto& b : blocks) {
        fn(b.conv1);
        fn(b.ln1_gain);
        fn(b.ln1_bias);
        fn(b.conv2);
        fn(b.ln2_gain);
        fn(b.ln2_bias);
    }
}

void TaskClassifier::allocate(std::size_t dim, std::size_t card, const std::string& name) {
    cardinality = card;
    weight.name = name + ".weight";
    weight.value = DenseArray({dim, card});
    bias.name = name + ".bias";
    bias.value = DenseArray({card});
}

void TaskClassifier::init_params(std::size_t dim, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
    for (double& v : weight.value.data) v = rng.uniform(-bound, bound);
    bias.value.fill(0.0);
}

ad::Node* embed_sequences(ad::Tape& tape, BackboneNet& net, std::span<const int> items,
                          const ParamNodeHook& hook) {
    std::vector<std::size_t> idx(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (items[i] < 0 || static_cast<std::size_t>(items[i]) >= net.cfg.vocab)
            throw std::out_of_range("embed_sequences: item " + std::to_string(items[i]) +
                                    " at position " + std::to_string(i) +
                                    " outside vocabulary of " + std::to_string(net.cfg.vocab));
        idx[i] = static_cast<std::size_t>(items[i]);
    }
    return tape.embed(hook(tape, net.item_embedding), std::move(idx));
}

ad::Node* residual_block(ad::Tape& tape, ResidualBlockParams& bp, ad::Node* x,
                         int dilation, std::size_t seq_len, ad::Node* mask1,
                         ad::Node* mask2, const ParamNodeHook& hook) {
    ad::Node* h = tape.causal_conv1d(x, hook(tape, bp.conv1), dilation, seq_len);
    h = tape.layer_norm(h, hook(tape, bp.ln1_gain), hook(tape, bp.ln1_bias));
    h = tape.relu(h);
    if (mask1 != nullptr) h = tape.row_broadcast_mul(h, mask1);
    h = tape.causal_conv1d(h, hook(tape, bp.conv2), dilation, seq_len);
    h = tape.layer_norm(h, hook(tape, bp.ln2_gain), hook(tape, bp.ln2_bias));
    h = tape.relu(h);
    if (mask2 != nullptr) h = tape.row_broadcast_mul(h, mask2);
    return tape.add(h, x);
}

ad::Node* encode_sequences(ad::Tape& tape, BackboneNet& net, std::span<const int> items,
                           std::size_t seq_len, std::span<ad::Node* const> masks,
                           const ParamNodeHook& hook) {
    if (!masks.empty() && masks.size() != net.cfg.mask_slots())
        throw std::invalid_argument("encode_sequences: expected " +
                                    std::to_string(net.cfg.mask_slots()) + " masks, got " +
                                    std::to_string(masks.size()));
    ad::Node* e = embed_sequences(tape, net, items, hook);
    for (std::size_t k = 0; k < net.cfg.blocks; ++k) {
        ad::Node* m1 = masks.empty() ? nullptr : masks[2 * k];
        ad::Node* m2 = masks.empty() ? nullptr : masks[2 * k + 1];
        e = residual_block(tape, net.blocks[k], e, net.cfg.dilations[k], seq_len, m1, m2,
                           hook);
    }
    return e;
}

ad::Node* classify_last_rows(ad::Tape& tape, ad::Node* encoded, std::size_t seq_len,
                             std::size_t batch, TaskClassifier& clf,
                             const ParamNodeHook& hook) {
    std::vector<std::size_t> last(batch);
    for (std::size_t u = 0; u < batch; ++u) last[u] = u * seq_len + seq_len - 1;
    ad::Node* rows = tape.select_rows(encoded, std::move(last));
    ad::Node* logits = tape.matmul(rows, hook(tape, clf.weight));
    return tape.add_row_broadcast(logits, hook(tape, clf.bias));
}

ad::Node* autoregressive_logits(ad::Tape& tape, ad::Node* encoded, std::size_t seq_len,
                                std::size_t batch, TaskClassifier& out_layer,
                                const ParamNodeHook& hook) {
    if (seq_len < 2)
        throw std::invalid_argument("autoregressive_logits: sequence shorter than 2");
    std::vector<std::size_t> rows;
    rows.reserve(batch * (seq_len - 1));
    for (std::size_t u = 0; u < batch; ++u)
        for (std::size_t t = 0; t + 1 < seq_len; ++t) rows.push_back(u * seq_len + t);
    ad::Node* picked = tape.select_rows(encoded, std::move(rows));
    ad::Node* logits = tape.matmul(picked, hook(tape, out_layer.weight));
    return tape.add_row_broadcast(logits, hook(tape, out_layer.bias));
}

std::vector<int> autoregressive_targets(std::span<const int> items, std::size_t seq_len) {
    if (seq_len < 2)
        throw std::invalid_argument("autoregressive_targets: sequence shorter than 2");
    if (items.size() % seq_len != 0)
        throw std::invalid_argument("autoregressive_targets: items not divisible by seq_len");
    const std::size_t batch = items.size() / seq_len;
    std::vector<int> out;
    out.reserve(batch * (seq_len - 1));
    for (std::size_t u = 0; u < batch; ++u)
        for (std::size_t t = 1; t < seq_len; ++t) out.push_back(items[u * seq_len + t]);
    return out;
}

}  // namespace teracon

#pragma once

#include <span>

#include "manrec/data.hpp"
#include "manrec/nn.hpp"

namespace manrec {

struct RecommenderConfig {
    std::size_t embed_dim = 50;
    std::size_t hidden_dim = 100;
    std::size_t epochs = 30;
    std::size_t batch_size = 512;
    double lr = 1e-3;          // Adam, pretraining only
    double init_scale = 0.1;
    std::uint64_t seed = 1;
    bool strict_finite = false;
};

struct TrainLogEntry {
    std::size_t epoch = 0;
    double train_loss = 0;
    double valid_loss = 0;
};

// Session encoder (GRU over item embeddings) plus a linear-softmax decoder
// over the current vocabulary. The vocabulary can grow at any time; new
// items get a freshly drawn embedding row and an all-zero decoder row, so
// they start from uniform odds against the other zero-logit directions.
class RecommenderModel {
public:
    RecommenderModel() = default;
    RecommenderModel(ItemVocabulary vocab, const RecommenderConfig& cfg);

    std::size_t n_items() const { return vocab_.size(); }
    std::size_t hidden_dim() const { return cfg_.hidden_dim; }
    const ItemVocabulary& vocab() const { return vocab_; }
    const RecommenderConfig& config() const { return cfg_; }

    // final GRU hidden state; throws on an empty prefix or unknown index
    std::vector<real> encode(std::span<const ItemId> prefix) const;
    std::vector<real> predict_from_context(const real* c) const;
    std::vector<real> predict(std::span<const ItemId> prefix) const;

    // registers an external id; known ids return their existing index
    ItemId ensure_item(const std::string& external_id);

    // Mini-batch Adam over all session prefixes, mean cross-entropy; keeps
    // the parameters from the best validation epoch. Sequences are model-id
    // encoded. valid may be empty (the final epoch wins then).
    std::vector<TrainLogEntry> pretrain(const std::vector<std::vector<ItemId>>& train,
                                        const std::vector<std::vector<ItemId>>& valid);

    // One plain SGD step on the mean cross-entropy of the given pairs.
    // lr == 0 leaves every parameter bit-identical. Returns the mean loss.
    double incremental_update(
        const std::vector<std::pair<std::vector<ItemId>, ItemId>>& pairs, double lr);

    double mean_loss(const std::vector<std::vector<ItemId>>& sequences) const;

    ParamSet collect_params();

    // Accumulates gradients for one (prefix, target) pair scaled by `scale`
    // and returns the loss; exposed for gradient checking.
    double pair_loss_and_grads(std::span<const ItemId> prefix, ItemId target, real scale);
    void zero_all_grads();

    void save(std::ostream& out) const;
    void load(std::istream& in);
    bool params_equal(const RecommenderModel& other) const;

private:
    RecommenderConfig cfg_;
    ItemVocabulary vocab_;
    Tensor embed_;  // n x embed_dim
    GruParams gru_;
    Tensor dec_w_;  // n x hidden_dim
    Tensor dec_b_;  // n x 1
    Rng item_rng_{1};  // embedding rows for items arriving after pretraining
    AdamState adam_;

    void check_prefix(std::span<const ItemId> prefix) const;
};

}  // namespace manrec

#pragma once

#include "manrec/index.hpp"

namespace manrec {

struct MemoryConfig {
    std::size_t dim = 0;
    std::size_t capacity = 0;     // 0: unbounded; otherwise a ring over insertion order
    bool store_raw_keys = true;   // needed for exact prediction and rebuild_index
    double dstar_floor = 1e-12;   // clamp for the adaptive bandwidth
};

struct ScoredItem {
    ItemId item = 0;
    real p = 0;
};

struct MemoryPrediction {
    std::vector<ScoredItem> probs;  // ascending item id; sums to 1 unless empty
    bool empty() const { return probs.empty(); }
    real prob_of(ItemId item) const;
};

// Gaussian kernel with the bandwidth set to the closest retrieved distance:
// weight = exp(-(d/dstar)^2 / 2). Exposed for oracle tests.
real kde_kernel(real dist_over_dstar);

// Turns a retrieved neighbor list and their stored labels into a
// distribution. values[i] pairs with nbrs[i].
MemoryPrediction kde_prediction(const NeighborSet& nbrs, const std::vector<ItemId>& values,
                                double dstar_floor);

// Unbounded key-value store of (context vector, next item) observations.
// Retrieval runs through the ANN index once one is built, and falls back to
// an exact scan before that. Bounded mode keeps the newest `capacity` slots
// live; stale index entries are masked at query time rather than deleted.
class MemoryStore {
public:
    MemoryStore() = default;
    explicit MemoryStore(const MemoryConfig& cfg);

    void insert(const real* key, ItemId value);

    NeighborSet neighbors(const real* q, std::size_t k, std::size_t nprobe = 0) const;
    MemoryPrediction predict(const real* q, std::size_t k, std::size_t nprobe = 0) const;

    // Fits coarse centroids and codebooks on the live keys, then re-adds
    // them. cfg.nlist == 0 sizes nlist from the live count. Quantizers are
    // frozen afterwards; future inserts only append codes.
    void rebuild_index(IndexConfig cfg);

    bool has_index() const { return index_built_; }
    const IvfPqIndex& index() const { return index_; }

    SlotId total_inserted() const { return total_; }
    SlotId first_live() const;
    std::size_t live_count() const { return static_cast<std::size_t>(total_ - first_live()); }
    ItemId value_of(SlotId slot) const { return values_.at(static_cast<std::size_t>(slot)); }
    // raw key of a live slot; requires store_raw_keys
    const real* key_ptr(SlotId slot) const;
    const MemoryConfig& config() const { return cfg_; }

    void save(std::ostream& out) const;
    void load(std::istream& in);
    bool operator==(const MemoryStore& other) const;

private:
    MemoryConfig cfg_;
    SlotId total_ = 0;
    std::vector<ItemId> values_;  // per slot, never shrinks
    std::vector<real> keys_;      // live raw keys; flat ring in bounded mode
    IvfPqIndex index_;
    bool index_built_ = false;

    const real* key_of(SlotId slot) const;
};

}  // namespace manrec

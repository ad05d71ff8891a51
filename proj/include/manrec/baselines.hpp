#pragma once

#include <deque>
#include <span>
#include <unordered_map>

#include "manrec/memory.hpp"

namespace manrec {

using SparseScores = std::vector<ScoredItem>;  // ascending item id, sums to 1

// Cosine similarity over binary per-session co-occurrence vectors, scored
// against the last item of the running session.
class ItemKnnBaseline {
public:
    void add_session(std::span<const ItemId> items);
    SparseScores predict(std::span<const ItemId> prefix) const;

    // cooc(a,b) / sqrt(sessions(a) * sessions(b)); 0 when either is unseen
    double similarity(ItemId a, ItemId b) const;
    std::int64_t cooc(ItemId a, ItemId b) const;
    std::int64_t session_count(ItemId a) const;

private:
    std::vector<std::int64_t> item_sessions_;
    std::unordered_map<std::uint64_t, std::int64_t> cooc_;
    std::unordered_map<ItemId, std::vector<ItemId>> partners_;
};

struct SknnConfig {
    std::size_t pool = 5000;        // most recent sessions retained
    std::size_t k_sessions = 500;   // neighbors blended per prediction
    bool sequential_weighting = false;  // S-SKNN position decay
};

// Neighborhood of whole past sessions. Cosine over binary item sets; with
// sequential weighting a neighbor is additionally scaled by how late in the
// current session its overlap occurs (latest matched position / length).
class SessionKnnBaseline {
public:
    SessionKnnBaseline() = default;
    explicit SessionKnnBaseline(const SknnConfig& cfg) : cfg_(cfg) {}

    void add_session(std::span<const ItemId> items);
    SparseScores predict(std::span<const ItemId> current) const;

    std::size_t pool_size() const { return pool_.size(); }
    const SknnConfig& config() const { return cfg_; }

private:
    SknnConfig cfg_;
    struct Entry {
        std::vector<ItemId> items;  // sorted unique
    };
    std::deque<Entry> pool_;
    std::uint64_t first_serial_ = 0;  // serial of pool_.front()
    std::unordered_map<ItemId, std::vector<std::uint64_t>> postings_;
    std::size_t posting_entries_ = 0;

    void compact_postings();
};

}  // namespace manrec

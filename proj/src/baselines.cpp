#include "manrec/baselines.hpp"

#include <algorithm>
#include <cmath>

namespace manrec {

namespace {

std::uint64_t pack_pair(ItemId a, ItemId b) {
    if (a > b) std::swap(a, b);
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
           static_cast<std::uint32_t>(b);
}

std::vector<ItemId> sorted_unique(std::span<const ItemId> items) {
    std::vector<ItemId> s(items.begin(), items.end());
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
    return s;
}

SparseScores normalize_scores(std::vector<ScoredItem> scores) {
    real total = 0;
    for (const auto& s : scores) total += s.p;
    if (!(total > 0)) return {};
    const real inv = real(1) / total;
    for (auto& s : scores) s.p *= inv;
    std::sort(scores.begin(), scores.end(),
              [](const ScoredItem& a, const ScoredItem& b) { return a.item < b.item; });
    return scores;
}

}  // namespace

// ---- ItemKnn ------------------------------------------------------------------

void ItemKnnBaseline::add_session(std::span<const ItemId> items) {
    const auto set = sorted_unique(items);
    for (ItemId a : set) {
        if (static_cast<std::size_t>(a) >= item_sessions_.size())
            item_sessions_.resize(static_cast<std::size_t>(a) + 1, 0);
        item_sessions_[static_cast<std::size_t>(a)] += 1;
    }
    for (std::size_t i = 0; i < set.size(); ++i)
        for (std::size_t j = i + 1; j < set.size(); ++j) {
            auto [it, fresh] = cooc_.try_emplace(pack_pair(set[i], set[j]), 0);
            it->second += 1;
            if (fresh) {
                partners_[set[i]].push_back(set[j]);
                partners_[set[j]].push_back(set[i]);
            }
        }
}

std::int64_t ItemKnnBaseline::session_count(ItemId a) const {
    if (a < 0 || static_cast<std::size_t>(a) >= item_sessions_.size()) return 0;
    return item_sessions_[static_cast<std::size_t>(a)];
}

std::int64_t ItemKnnBaseline::cooc(ItemId a, ItemId b) const {
    const auto it = cooc_.find(pack_pair(a, b));
    return it == cooc_.end() ? 0 : it->second;
}

double ItemKnnBaseline::similarity(ItemId a, ItemId b) const {
    const auto ca = session_count(a), cb = session_count(b);
    if (ca == 0 || cb == 0) return 0.0;
    const auto co = cooc(a, b);
    if (co == 0) return 0.0;
    return static_cast<double>(co) /
           std::sqrt(static_cast<double>(ca) * static_cast<double>(cb));
}

SparseScores ItemKnnBaseline::predict(std::span<const ItemId> prefix) const {
    if (prefix.empty()) throw Error("cannot predict from an empty prefix");
    const ItemId last = prefix.back();
    const auto it = partners_.find(last);
    if (it == partners_.end()) return {};
    std::vector<ScoredItem> scores;
    scores.reserve(it->second.size());
    for (ItemId p : it->second) {
        const double sim = similarity(last, p);
        if (sim > 0) scores.push_back({p, static_cast<real>(sim)});
    }
    return normalize_scores(std::move(scores));
}

// ---- SessionKnn ----------------------------------------------------------------

void SessionKnnBaseline::compact_postings() {
    for (auto it = postings_.begin(); it != postings_.end();) {
        auto& v = it->second;
        std::erase_if(v, [&](std::uint64_t s) { return s < first_serial_; });
        if (v.empty())
            it = postings_.erase(it);
        else
            ++it;
    }
    posting_entries_ = 0;
    for (const auto& [item, v] : postings_) posting_entries_ += v.size();
}

void SessionKnnBaseline::add_session(std::span<const ItemId> items) {
    Entry e;
    e.items = sorted_unique(items);
    if (e.items.empty()) return;
    const std::uint64_t serial = first_serial_ + pool_.size();
    for (ItemId it : e.items) postings_[it].push_back(serial);
    posting_entries_ += e.items.size();
    pool_.push_back(std::move(e));
    while (pool_.size() > cfg_.pool) {
        pool_.pop_front();
        first_serial_ += 1;
    }
    // stale serials are filtered at query time; rebuild once they dominate
    if (posting_entries_ > 4 * std::max<std::size_t>(cfg_.pool * 8, 1024))
        compact_postings();
}

SparseScores SessionKnnBaseline::predict(std::span<const ItemId> current) const {
    if (current.empty()) throw Error("cannot predict from an empty prefix");
    if (pool_.empty()) return {};

    const auto cur_set = sorted_unique(current);
    // latest 1-based position of each current item, for sequential weighting
    std::unordered_map<ItemId, std::size_t> last_pos;
    for (std::size_t i = 0; i < current.size(); ++i)
        last_pos[current[i]] = i + 1;

    std::unordered_map<std::uint64_t, std::uint32_t> overlap;
    for (ItemId it : cur_set) {
        const auto p = postings_.find(it);
        if (p == postings_.end()) continue;
        for (std::uint64_t serial : p->second)
            if (serial >= first_serial_) overlap[serial] += 1;
    }
    if (overlap.empty()) return {};

    struct Cand {
        std::uint64_t serial;
        double sim;
    };
    std::vector<Cand> cands;
    cands.reserve(overlap.size());
    const double cur_n = static_cast<double>(cur_set.size());
    for (const auto& [serial, ov] : overlap) {
        const auto& entry = pool_[static_cast<std::size_t>(serial - first_serial_)];
        cands.push_back({serial, static_cast<double>(ov) /
                                     std::sqrt(cur_n * static_cast<double>(entry.items.size()))});
    }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
        if (a.sim != b.sim) return a.sim > b.sim;
        return a.serial > b.serial;  // prefer the more recent session on ties
    });
    if (cands.size() > cfg_.k_sessions) cands.resize(cfg_.k_sessions);

    std::unordered_map<ItemId, real> acc;
    for (const auto& c : cands) {
        const auto& entry = pool_[static_cast<std::size_t>(c.serial - first_serial_)];
        double w = 1.0;
        if (cfg_.sequential_weighting) {
            std::size_t best_pos = 0;
            for (ItemId it : entry.items) {
                const auto lp = last_pos.find(it);
                if (lp != last_pos.end()) best_pos = std::max(best_pos, lp->second);
            }
            w = static_cast<double>(best_pos) / static_cast<double>(current.size());
        }
        const real contrib = static_cast<real>(c.sim * w);
        if (contrib <= 0) continue;
        for (ItemId it : entry.items) acc[it] += contrib;
    }
    std::vector<ScoredItem> scores;
    scores.reserve(acc.size());
    for (const auto& [item, p] : acc) scores.push_back({item, p});
    return normalize_scores(std::move(scores));
}

}  // namespace manrec

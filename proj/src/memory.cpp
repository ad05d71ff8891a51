#include "manrec/memory.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

namespace manrec {

real MemoryPrediction::prob_of(ItemId item) const {
    const auto it = std::lower_bound(probs.begin(), probs.end(), item,
                                     [](const ScoredItem& s, ItemId i) { return s.item < i; });
    if (it == probs.end() || it->item != item) return real(0);
    return it->p;
}

real kde_kernel(real dist_over_dstar) {
    return std::exp(real(-0.5) * dist_over_dstar * dist_over_dstar);
}

MemoryPrediction kde_prediction(const NeighborSet& nbrs, const std::vector<ItemId>& values,
                                double dstar_floor) {
    MemoryPrediction out;
    if (nbrs.empty()) return out;
    const real dstar = std::max(nbrs.front().dist, static_cast<real>(dstar_floor));

    std::vector<ScoredItem> acc;
    acc.reserve(nbrs.size());
    real total = 0;
    for (std::size_t i = 0; i < nbrs.size(); ++i) {
        const real w = kde_kernel(nbrs[i].dist / dstar);
        total += w;
        const ItemId label = values[i];
        auto it = std::find_if(acc.begin(), acc.end(),
                               [&](const ScoredItem& s) { return s.item == label; });
        if (it == acc.end())
            acc.push_back({label, w});
        else
            it->p += w;
    }
    if (!(total > 0) || !std::isfinite(total)) {
        // all kernels underflowed; fall back to uniform over retrieved labels
        const real u = real(1) / static_cast<real>(acc.size());
        for (auto& s : acc) s.p = u;
    } else {
        const real inv = real(1) / total;
        for (auto& s : acc) s.p *= inv;
    }
    std::sort(acc.begin(), acc.end(),
              [](const ScoredItem& a, const ScoredItem& b) { return a.item < b.item; });
    out.probs = std::move(acc);
    return out;
}

MemoryStore::MemoryStore(const MemoryConfig& cfg) : cfg_(cfg) {
    if (cfg_.dim == 0) throw Error("memory key dimension must be positive");
    if (cfg_.capacity > 0 && cfg_.store_raw_keys)
        keys_.assign(cfg_.capacity * cfg_.dim, real(0));
}

SlotId MemoryStore::first_live() const {
    if (cfg_.capacity == 0) return 0;
    const auto cap = static_cast<SlotId>(cfg_.capacity);
    return total_ > cap ? total_ - cap : 0;
}

const real* MemoryStore::key_of(SlotId slot) const {
    if (cfg_.capacity == 0) return keys_.data() + static_cast<std::size_t>(slot) * cfg_.dim;
    return keys_.data() +
           (static_cast<std::size_t>(slot) % cfg_.capacity) * cfg_.dim;
}

const real* MemoryStore::key_ptr(SlotId slot) const {
    if (!cfg_.store_raw_keys) throw Error("raw keys are not retained in this store");
    if (slot < first_live() || slot >= total_) throw Error("slot is not live");
    return key_of(slot);
}

void MemoryStore::insert(const real* key, ItemId value) {
    const SlotId slot = total_;
    values_.push_back(value);
    if (cfg_.store_raw_keys) {
        if (cfg_.capacity == 0)
            keys_.insert(keys_.end(), key, key + cfg_.dim);
        else
            std::copy(key, key + cfg_.dim,
                      keys_.begin() + static_cast<std::ptrdiff_t>(
                                          (static_cast<std::size_t>(slot) % cfg_.capacity) *
                                          cfg_.dim));
    }
    if (index_built_) index_.add(key, slot);
    total_ += 1;
}

NeighborSet MemoryStore::neighbors(const real* q, std::size_t k, std::size_t nprobe) const {
    if (live_count() == 0 || k == 0) return {};
    if (index_built_) return index_.query(q, k, nprobe, first_live());
    if (!cfg_.store_raw_keys)
        throw Error("memory has no index yet and raw keys are disabled");
    std::vector<Neighbor> heap;
    heap.reserve(k + 1);
    for (SlotId s = first_live(); s < total_; ++s)
        knn_offer(heap, k, s, l2_distance2(q, key_of(s), cfg_.dim));
    return knn_finish(std::move(heap));
}

MemoryPrediction MemoryStore::predict(const real* q, std::size_t k,
                                      std::size_t nprobe) const {
    const auto nbrs = neighbors(q, k, nprobe);
    std::vector<ItemId> vals(nbrs.size());
    for (std::size_t i = 0; i < nbrs.size(); ++i)
        vals[i] = values_[static_cast<std::size_t>(nbrs[i].id)];
    return kde_prediction(nbrs, vals, cfg_.dstar_floor);
}

void MemoryStore::rebuild_index(IndexConfig cfg) {
    if (!cfg_.store_raw_keys)
        throw Error("rebuild_index needs raw keys; construct with store_raw_keys");
    const std::size_t live = live_count();
    if (live == 0) throw Error("cannot build an index over an empty memory");

    std::vector<real> train;
    train.reserve(live * cfg_.dim);
    for (SlotId s = first_live(); s < total_; ++s)
        train.insert(train.end(), key_of(s), key_of(s) + cfg_.dim);

    index_ = IvfPqIndex();
    index_.fit(train.data(), live, cfg_.dim, cfg);
    for (SlotId s = first_live(); s < total_; ++s) index_.add(key_of(s), s);
    index_built_ = true;
}

namespace {

template <class T>
void put(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
void get(std::istream& in, T& v) {
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw Error("truncated memory snapshot");
}

template <class T>
void put_vec(std::ostream& out, const std::vector<T>& v) {
    put<std::uint64_t>(out, v.size());
    if (!v.empty())
        out.write(reinterpret_cast<const char*>(v.data()),
                  static_cast<std::streamsize>(v.size() * sizeof(T)));
}

template <class T>
void get_vec(std::istream& in, std::vector<T>& v) {
    std::uint64_t n = 0;
    get(in, n);
    v.resize(n);
    if (n) {
        in.read(reinterpret_cast<char*>(v.data()),
                static_cast<std::streamsize>(n * sizeof(T)));
        if (!in) throw Error("truncated memory snapshot");
    }
}

constexpr std::uint32_t kMemoryMagic = 0x4d454d31u;  // "MEM1"

}  // namespace

void MemoryStore::save(std::ostream& out) const {
    put(out, kMemoryMagic);
    put<std::uint64_t>(out, cfg_.dim);
    put<std::uint64_t>(out, cfg_.capacity);
    put<std::uint8_t>(out, cfg_.store_raw_keys);
    put(out, cfg_.dstar_floor);
    put<std::int64_t>(out, total_);
    put_vec(out, values_);
    put_vec(out, keys_);
    put<std::uint8_t>(out, index_built_);
    if (index_built_) index_.save(out);
}

void MemoryStore::load(std::istream& in) {
    std::uint32_t magic = 0;
    get(in, magic);
    if (magic != kMemoryMagic) throw Error("not a memory snapshot");
    std::uint64_t u;
    get(in, u); cfg_.dim = u;
    get(in, u); cfg_.capacity = u;
    std::uint8_t b;
    get(in, b); cfg_.store_raw_keys = b;
    get(in, cfg_.dstar_floor);
    get(in, total_);
    get_vec(in, values_);
    get_vec(in, keys_);
    get(in, b);
    index_built_ = b;
    if (index_built_) index_.load(in);
}

bool MemoryStore::operator==(const MemoryStore& other) const {
    return cfg_.dim == other.cfg_.dim && cfg_.capacity == other.cfg_.capacity &&
           total_ == other.total_ && values_ == other.values_ && keys_ == other.keys_ &&
           index_built_ == other.index_built_ &&
           (!index_built_ || index_ == other.index_);
}

}  // namespace manrec

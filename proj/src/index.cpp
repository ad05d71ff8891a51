#include "manrec/index.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <queue>

namespace manrec {

KmeansResult kmeans(const real* data, std::size_t n, std::size_t dim, std::size_t k,
                    std::size_t iters, std::uint64_t seed) {
    if (n == 0 || k == 0) throw Error("kmeans needs at least one point and one cluster");
    Rng rng(seed);
    KmeansResult res;
    res.k = k;
    res.dim = dim;
    res.centroids.assign(k * dim, real(0));
    res.assign.assign(n, 0);

    // k-means++ seeding
    std::vector<double> d2(n);
    {
        const std::size_t first = rng.index(n);
        std::copy(data + first * dim, data + (first + 1) * dim, res.centroids.begin());
        for (std::size_t i = 0; i < n; ++i)
            d2[i] = l2_distance2(data + i * dim, res.centroids.data(), dim);
        for (std::size_t c = 1; c < k; ++c) {
            double total = 0;
            for (std::size_t i = 0; i < n; ++i) total += d2[i];
            std::size_t pick;
            if (total <= 0) {
                pick = rng.index(n);
            } else {
                const double r = rng.uniform() * total;
                double acc = 0;
                pick = n - 1;
                for (std::size_t i = 0; i < n; ++i) {
                    acc += d2[i];
                    if (acc >= r) {
                        pick = i;
                        break;
                    }
                }
            }
            real* cent = res.centroids.data() + c * dim;
            std::copy(data + pick * dim, data + (pick + 1) * dim, cent);
            for (std::size_t i = 0; i < n; ++i)
                d2[i] = std::min(d2[i],
                                 static_cast<double>(l2_distance2(data + i * dim, cent, dim)));
        }
    }

    std::vector<double> sums(k * dim);
    std::vector<std::size_t> counts(k);
    for (std::size_t it = 0; it < iters; ++it) {
        // assignment (ties to the lowest centroid index)
        double objective = 0;
        bool moved = it == 0;
        for (std::size_t i = 0; i < n; ++i) {
            const real* x = data + i * dim;
            std::size_t best = 0;
            double best_d = l2_distance2(x, res.centroids.data(), dim);
            for (std::size_t c = 1; c < k; ++c) {
                const double d = l2_distance2(x, res.centroids.data() + c * dim, dim);
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            if (res.assign[i] != best) {
                res.assign[i] = static_cast<std::uint32_t>(best);
                moved = true;
            }
            d2[i] = best_d;
            objective += best_d;
        }
        res.objective.push_back(objective);
        if (!moved && it > 0) break;

        // update
        std::fill(sums.begin(), sums.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            double* s = sums.data() + res.assign[i] * dim;
            const real* x = data + i * dim;
            for (std::size_t j = 0; j < dim; ++j) s[j] += x[j];
            counts[res.assign[i]] += 1;
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) continue;
            real* cent = res.centroids.data() + c * dim;
            const double inv = 1.0 / static_cast<double>(counts[c]);
            for (std::size_t j = 0; j < dim; ++j)
                cent[j] = static_cast<real>(sums[c * dim + j] * inv);
        }
        // re-seed empty clusters at the worst-served point
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] != 0) continue;
            std::size_t far = 0;
            for (std::size_t i = 1; i < n; ++i)
                if (d2[i] > d2[far]) far = i;
            std::copy(data + far * dim, data + (far + 1) * dim,
                      res.centroids.begin() + static_cast<std::ptrdiff_t>(c * dim));
            d2[far] = 0;
        }
    }
    return res;
}

// ---- IvfPqIndex ---------------------------------------------------------------

std::vector<real> IvfPqIndex::pad(const real* x) const {
    std::vector<real> out(pdim_, real(0));
    std::copy(x, x + dim_, out.begin());
    return out;
}

std::size_t IvfPqIndex::nearest_centroid(const real* x) const {
    std::size_t best = 0;
    real best_d = l2_distance2(x, centroids_.data(), pdim_);
    for (std::size_t c = 1; c < cfg_.nlist; ++c) {
        const real d = l2_distance2(x, centroids_.data() + c * pdim_, pdim_);
        if (d < best_d) {
            best_d = d;
            best = c;
        }
    }
    return best;
}

void IvfPqIndex::encode(const real* residual, std::uint8_t* code_out) const {
    for (std::size_t j = 0; j < cfg_.m; ++j) {
        const real* sub = residual + j * dsub_;
        const real* book = codebooks_.data() + j * ksub_ * dsub_;
        std::size_t best = 0;
        real best_d = l2_distance2(sub, book, dsub_);
        for (std::size_t w = 1; w < ksub_; ++w) {
            const real d = l2_distance2(sub, book + w * dsub_, dsub_);
            if (d < best_d) {
                best_d = d;
                best = w;
            }
        }
        code_out[j] = static_cast<std::uint8_t>(best);
    }
}

void IvfPqIndex::fit(const real* keys, std::size_t n, std::size_t dim,
                     const IndexConfig& cfg) {
    if (n == 0) throw Error("cannot fit an index on zero vectors");
    if (dim == 0) throw Error("cannot fit an index on zero-dimensional vectors");
    cfg_ = cfg;
    if (cfg_.nlist == 0)
        cfg_.nlist = std::clamp<std::size_t>(
            static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(n)))), 1,
            65536);
    if (n < cfg_.nlist)
        throw Error("fit needs at least nlist=" + std::to_string(cfg_.nlist) +
                    " vectors, got " + std::to_string(n));
    if (cfg_.use_pq) {
        if (cfg_.m == 0 || cfg_.bits == 0 || cfg_.bits > 16)
            throw Error("bad product quantizer shape");
    }

    dim_ = dim;
    pdim_ = cfg_.use_pq ? (dim + cfg_.m - 1) / cfg_.m * cfg_.m : dim;
    dsub_ = cfg_.use_pq ? pdim_ / cfg_.m : 0;
    ksub_ = cfg_.use_pq ? (std::size_t(1) << cfg_.bits) : 0;

    // zero-padded copy; appended zeros leave every pairwise distance intact
    std::vector<real> padded(n * pdim_, real(0));
    for (std::size_t i = 0; i < n; ++i)
        std::copy(keys + i * dim, keys + (i + 1) * dim, padded.begin() + i * pdim_);

    auto coarse = kmeans(padded.data(), n, pdim_, cfg_.nlist, cfg_.kmeans_iters,
                         derive_seed(cfg_.seed, 0));
    centroids_ = std::move(coarse.centroids);

    if (cfg_.use_pq) {
        std::vector<real> residuals(n * pdim_);
        for (std::size_t i = 0; i < n; ++i) {
            const real* c = centroids_.data() + coarse.assign[i] * pdim_;
            for (std::size_t j = 0; j < pdim_; ++j)
                residuals[i * pdim_ + j] = padded[i * pdim_ + j] - c[j];
        }
        codebooks_.assign(cfg_.m * ksub_ * dsub_, real(0));
        std::vector<real> sub(n * dsub_);
        for (std::size_t j = 0; j < cfg_.m; ++j) {
            for (std::size_t i = 0; i < n; ++i)
                std::copy(residuals.begin() + (i * pdim_ + j * dsub_),
                          residuals.begin() + (i * pdim_ + (j + 1) * dsub_),
                          sub.begin() + i * dsub_);
            auto book = kmeans(sub.data(), n, dsub_, ksub_, cfg_.kmeans_iters,
                               derive_seed(cfg_.seed, 1 + j));
            std::copy(book.centroids.begin(), book.centroids.end(),
                      codebooks_.begin() + static_cast<std::ptrdiff_t>(j * ksub_ * dsub_));
        }
    }

    lists_.assign(cfg_.nlist, {});
    raw_keys_.clear();
    raw_ids_.clear();
    raw_pos_.clear();
    count_ = 0;
    fitted_ = true;
}

void IvfPqIndex::add(const real* key, SlotId payload) {
    if (!fitted_) throw Error("index must be fitted before add");
    const auto x = pad(key);
    const std::size_t l = nearest_centroid(x.data());
    List& list = lists_[l];
    list.ids.push_back(payload);
    if (cfg_.use_pq) {
        std::vector<real> residual(pdim_);
        const real* c = centroids_.data() + l * pdim_;
        for (std::size_t j = 0; j < pdim_; ++j) residual[j] = x[j] - c[j];
        const std::size_t off = list.codes.size();
        list.codes.resize(off + cfg_.m);
        encode(residual.data(), list.codes.data() + off);
    } else {
        list.raw.insert(list.raw.end(), x.begin(), x.end());
    }
    if (cfg_.keep_raw_keys) {
        raw_pos_[payload] = raw_ids_.size();
        raw_keys_.insert(raw_keys_.end(), x.begin(), x.end());
        raw_ids_.push_back(payload);
    }
    count_ += 1;
}

namespace {

// worst element on top: greater distance, then greater id
struct HeapCmp {
    bool operator()(const Neighbor& a, const Neighbor& b) const {
        if (a.dist != b.dist) return a.dist < b.dist;
        return a.id < b.id;
    }
};

}  // namespace

void knn_offer(std::vector<Neighbor>& heap, std::size_t k, SlotId id, real d2) {
    if (heap.size() < k) {
        heap.push_back({id, d2});
        std::push_heap(heap.begin(), heap.end(), HeapCmp{});
        return;
    }
    const Neighbor& top = heap.front();
    if (d2 > top.dist || (d2 == top.dist && id > top.id)) return;
    std::pop_heap(heap.begin(), heap.end(), HeapCmp{});
    heap.back() = {id, d2};
    std::push_heap(heap.begin(), heap.end(), HeapCmp{});
}

NeighborSet knn_finish(std::vector<Neighbor>&& heap) {
    std::sort(heap.begin(), heap.end(), [](const Neighbor& a, const Neighbor& b) {
        if (a.dist != b.dist) return a.dist < b.dist;
        return a.id < b.id;
    });
    for (auto& nb : heap) nb.dist = std::sqrt(nb.dist);
    return std::move(heap);
}

NeighborSet IvfPqIndex::query(const real* q, std::size_t k, std::size_t nprobe,
                              SlotId min_payload) const {
    if (!fitted_) throw Error("index must be fitted before query");
    if (k == 0) return {};
    if (nprobe == 0) nprobe = cfg_.default_nprobe;
    nprobe = std::min(nprobe, cfg_.nlist);

    const auto x = pad(q);
    std::vector<std::pair<real, std::uint32_t>> cd(cfg_.nlist);
    for (std::size_t c = 0; c < cfg_.nlist; ++c)
        cd[c] = {l2_distance2(x.data(), centroids_.data() + c * pdim_, pdim_),
                 static_cast<std::uint32_t>(c)};
    std::partial_sort(cd.begin(), cd.begin() + static_cast<std::ptrdiff_t>(nprobe),
                      cd.end());

    // ADC distances only shortlist candidates; when raw keys are retained the
    // final top k is decided by exact distances over a k*rerank pool.
    const bool refine = cfg_.use_pq && cfg_.keep_raw_keys && cfg_.rerank > 0;
    const std::size_t pool_k = refine ? k * cfg_.rerank : k;

    std::vector<Neighbor> heap;
    heap.reserve(pool_k + 1);
    std::vector<real> lut(cfg_.use_pq ? cfg_.m * ksub_ : 0);
    std::vector<real> qr(cfg_.use_pq ? pdim_ : 0);

    for (std::size_t p = 0; p < nprobe; ++p) {
        const List& list = lists_[cd[p].second];
        if (list.ids.empty()) continue;
        if (cfg_.use_pq) {
            const real* cent = centroids_.data() + cd[p].second * pdim_;
            for (std::size_t j = 0; j < pdim_; ++j) qr[j] = x[j] - cent[j];
            for (std::size_t j = 0; j < cfg_.m; ++j) {
                const real* book = codebooks_.data() + j * ksub_ * dsub_;
                for (std::size_t w = 0; w < ksub_; ++w)
                    lut[j * ksub_ + w] =
                        l2_distance2(qr.data() + j * dsub_, book + w * dsub_, dsub_);
            }
            for (std::size_t e = 0; e < list.ids.size(); ++e) {
                if (list.ids[e] < min_payload) continue;
                const std::uint8_t* code = list.codes.data() + e * cfg_.m;
                real d = 0;
                for (std::size_t j = 0; j < cfg_.m; ++j) d += lut[j * ksub_ + code[j]];
                knn_offer(heap, pool_k, list.ids[e], d);
            }
        } else {
            for (std::size_t e = 0; e < list.ids.size(); ++e) {
                if (list.ids[e] < min_payload) continue;
                const real d = l2_distance2(x.data(), list.raw.data() + e * pdim_, pdim_);
                knn_offer(heap, pool_k, list.ids[e], d);
            }
        }
    }
    if (!refine) return knn_finish(std::move(heap));

    std::vector<Neighbor> exact;
    exact.reserve(k + 1);
    for (const Neighbor& nb : heap) {
        const std::size_t row = raw_pos_.at(nb.id);
        knn_offer(exact, k, nb.id,
                  l2_distance2(x.data(), raw_keys_.data() + row * pdim_, pdim_));
    }
    return knn_finish(std::move(exact));
}

NeighborSet IvfPqIndex::exact_query(const real* q, std::size_t k,
                                    SlotId min_payload) const {
    if (!fitted_) throw Error("index must be fitted before query");
    if (!cfg_.keep_raw_keys) throw Error("exact_query needs keep_raw_keys");
    if (k == 0) return {};
    const auto x = pad(q);
    std::vector<Neighbor> heap;
    heap.reserve(k + 1);
    for (std::size_t i = 0; i < raw_ids_.size(); ++i) {
        if (raw_ids_[i] < min_payload) continue;
        knn_offer(heap, k, raw_ids_[i],
                   l2_distance2(x.data(), raw_keys_.data() + i * pdim_, pdim_));
    }
    return knn_finish(std::move(heap));
}

std::size_t IvfPqIndex::list_bytes() const {
    std::size_t total = 0;
    for (const auto& l : lists_)
        total += l.ids.size() * sizeof(SlotId) + l.codes.size() * sizeof(std::uint8_t) +
                 l.raw.size() * sizeof(real);
    return total;
}

std::vector<real> IvfPqIndex::reconstruct(SlotId payload) const {
    if (!cfg_.use_pq) throw Error("reconstruct is only defined for PQ storage");
    for (std::size_t l = 0; l < lists_.size(); ++l) {
        const List& list = lists_[l];
        for (std::size_t e = 0; e < list.ids.size(); ++e) {
            if (list.ids[e] != payload) continue;
            std::vector<real> out(centroids_.begin() + static_cast<std::ptrdiff_t>(l * pdim_),
                                  centroids_.begin() +
                                      static_cast<std::ptrdiff_t>((l + 1) * pdim_));
            const std::uint8_t* code = list.codes.data() + e * cfg_.m;
            for (std::size_t j = 0; j < cfg_.m; ++j)
                axpy(real(1), codebooks_.data() + (j * ksub_ + code[j]) * dsub_,
                     out.data() + j * dsub_, dsub_);
            return out;
        }
    }
    throw Error("payload not present in index");
}

// ---- binary snapshot ------------------------------------------------------------

namespace {

template <class T>
void put(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
void put_vec(std::ostream& out, const std::vector<T>& v) {
    put<std::uint64_t>(out, v.size());
    if (!v.empty())
        out.write(reinterpret_cast<const char*>(v.data()),
                  static_cast<std::streamsize>(v.size() * sizeof(T)));
}

template <class T>
void get(std::istream& in, T& v) {
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw Error("truncated index snapshot");
}

template <class T>
void get_vec(std::istream& in, std::vector<T>& v) {
    std::uint64_t n = 0;
    get(in, n);
    v.resize(n);
    if (n) {
        in.read(reinterpret_cast<char*>(v.data()),
                static_cast<std::streamsize>(n * sizeof(T)));
        if (!in) throw Error("truncated index snapshot");
    }
}

constexpr std::uint32_t kIndexMagic = 0x49564651u;  // "IVFQ"

}  // namespace

void IvfPqIndex::save(std::ostream& out) const {
    put(out, kIndexMagic);
    put<std::uint32_t>(out, fitted_ ? 1 : 0);
    if (!fitted_) return;
    put<std::uint64_t>(out, cfg_.nlist);
    put<std::uint64_t>(out, cfg_.m);
    put<std::uint64_t>(out, cfg_.bits);
    put<std::uint64_t>(out, cfg_.kmeans_iters);
    put<std::uint64_t>(out, cfg_.default_nprobe);
    put<std::uint64_t>(out, cfg_.rerank);
    put<std::uint64_t>(out, cfg_.seed);
    put<std::uint8_t>(out, cfg_.use_pq);
    put<std::uint8_t>(out, cfg_.keep_raw_keys);
    put<std::uint64_t>(out, dim_);
    put<std::uint64_t>(out, count_);
    put_vec(out, centroids_);
    put_vec(out, codebooks_);
    for (const auto& l : lists_) {
        put_vec(out, l.ids);
        put_vec(out, l.codes);
        put_vec(out, l.raw);
    }
    put_vec(out, raw_keys_);
    put_vec(out, raw_ids_);
}

void IvfPqIndex::load(std::istream& in) {
    std::uint32_t magic = 0;
    get(in, magic);
    if (magic != kIndexMagic) throw Error("not an index snapshot");
    std::uint32_t has = 0;
    get(in, has);
    if (!has) {
        *this = IvfPqIndex();
        return;
    }
    std::uint64_t u;
    get(in, u); cfg_.nlist = u;
    get(in, u); cfg_.m = u;
    get(in, u); cfg_.bits = u;
    get(in, u); cfg_.kmeans_iters = u;
    get(in, u); cfg_.default_nprobe = u;
    get(in, u); cfg_.rerank = u;
    get(in, cfg_.seed);
    std::uint8_t b;
    get(in, b); cfg_.use_pq = b;
    get(in, b); cfg_.keep_raw_keys = b;
    get(in, u); dim_ = u;
    get(in, u); count_ = u;
    pdim_ = cfg_.use_pq ? (dim_ + cfg_.m - 1) / cfg_.m * cfg_.m : dim_;
    dsub_ = cfg_.use_pq ? pdim_ / cfg_.m : 0;
    ksub_ = cfg_.use_pq ? (std::size_t(1) << cfg_.bits) : 0;
    get_vec(in, centroids_);
    get_vec(in, codebooks_);
    lists_.assign(cfg_.nlist, {});
    for (auto& l : lists_) {
        get_vec(in, l.ids);
        get_vec(in, l.codes);
        get_vec(in, l.raw);
    }
    get_vec(in, raw_keys_);
    get_vec(in, raw_ids_);
    raw_pos_.clear();
    for (std::size_t i = 0; i < raw_ids_.size(); ++i) raw_pos_[raw_ids_[i]] = i;
    if (centroids_.size() != cfg_.nlist * pdim_) throw Error("corrupt index snapshot");
    fitted_ = true;
}

bool IvfPqIndex::operator==(const IvfPqIndex& other) const {
    if (fitted_ != other.fitted_) return false;
    if (!fitted_) return true;
    if (dim_ != other.dim_ || count_ != other.count_ || centroids_ != other.centroids_ ||
        codebooks_ != other.codebooks_ || raw_keys_ != other.raw_keys_ ||
        raw_ids_ != other.raw_ids_)
        return false;
    for (std::size_t l = 0; l < lists_.size(); ++l)
        if (lists_[l].ids != other.lists_[l].ids || lists_[l].codes != other.lists_[l].codes ||
            lists_[l].raw != other.lists_[l].raw)
            return false;
    return true;
}

}  // namespace manrec

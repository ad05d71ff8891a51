#pragma once

#include <iosfwd>
#include <unordered_map>

#include "manrec/tensor.hpp"

namespace manrec {

// ---- k-means (k-means++ seeding, Lloyd refinement) ---------------------------

struct KmeansResult {
    std::size_t k = 0, dim = 0;
    std::vector<real> centroids;         // k x dim
    std::vector<std::uint32_t> assign;   // per input point
    std::vector<double> objective;       // sum of squared distances, per iteration
};

// Ties in assignment go to the lowest centroid index. Empty clusters are
// re-seeded at the point currently farthest from its centroid.
KmeansResult kmeans(const real* data, std::size_t n, std::size_t dim, std::size_t k,
                    std::size_t iters, std::uint64_t seed);

// ---- inverted-file index with product-quantized residuals --------------------

struct IndexConfig {
    std::size_t nlist = 0;       // 0: floor(sqrt(n_train)) clamped to [1, 65536]
    std::size_t m = 8;           // subspaces per code
    std::size_t bits = 8;        // log2 codewords per subspace
    std::size_t kmeans_iters = 25;
    std::size_t default_nprobe = 8;
    std::size_t rerank = 4;      // PQ queries re-rank k*rerank ADC candidates by exact
                                 // distance when raw keys are kept; 0 turns that off
    std::uint64_t seed = 1;
    bool use_pq = true;          // false: lists store raw vectors (exact scan)
    bool keep_raw_keys = true;   // retain originals for exact_query / recall audits
};

struct Neighbor {
    SlotId id = 0;
    real dist = 0;  // Euclidean
};

using NeighborSet = std::vector<Neighbor>;  // ascending (dist, id)

// Bounded top-k collection over squared distances with the shared tie rule
// (smaller distance wins, then smaller payload id). finish() sorts and takes
// square roots. Used by every retrieval path so orderings agree bit-for-bit.
void knn_offer(std::vector<Neighbor>& heap, std::size_t k, SlotId id, real dist2);
NeighborSet knn_finish(std::vector<Neighbor>&& heap);

// Coarse quantizer + per-list storage. Centroids and codebooks are frozen at
// fit() time; add() only appends. Vectors are zero-padded to a multiple of m
// internally, which leaves Euclidean distances unchanged.
class IvfPqIndex {
public:
    // keys: n x dim training sample. Does not add anything.
    void fit(const real* keys, std::size_t n, std::size_t dim, const IndexConfig& cfg);

    void add(const real* key, SlotId payload);

    // Scans the nprobe closest lists (0: config default). Entries with
    // payload < min_payload are skipped; ties order by ascending payload.
    NeighborSet query(const real* q, std::size_t k, std::size_t nprobe = 0,
                      SlotId min_payload = 0) const;

    // Brute force over the retained raw keys; ground truth for recall tests.
    NeighborSet exact_query(const real* q, std::size_t k, SlotId min_payload = 0) const;

    bool fitted() const { return fitted_; }
    std::size_t size() const { return count_; }
    std::size_t dim() const { return dim_; }
    std::size_t padded_dim() const { return pdim_; }
    std::size_t nlist() const { return cfg_.nlist; }
    const IndexConfig& config() const { return cfg_; }

    // Bytes held in list storage (codes/raw plus payload ids). The PQ budget
    // contract is m + 8 bytes per entry at bits=8.
    std::size_t list_bytes() const;

    // centroid + codeword sum for a stored entry (PQ mode; test hook)
    std::vector<real> reconstruct(SlotId payload) const;

    void save(std::ostream& out) const;
    void load(std::istream& in);

    bool operator==(const IvfPqIndex& other) const;

private:
    IndexConfig cfg_;
    bool fitted_ = false;
    std::size_t dim_ = 0, pdim_ = 0, dsub_ = 0, ksub_ = 0;
    std::size_t count_ = 0;
    std::vector<real> centroids_;  // nlist x pdim
    std::vector<real> codebooks_;  // m x ksub x dsub
    struct List {
        std::vector<SlotId> ids;
        std::vector<std::uint8_t> codes;  // m per entry (PQ mode)
        std::vector<real> raw;            // pdim per entry (exact mode)
    };
    std::vector<List> lists_;
    std::vector<real> raw_keys_;  // count_ x pdim, insertion order (optional)
    std::vector<SlotId> raw_ids_;
    std::unordered_map<SlotId, std::size_t> raw_pos_;  // payload -> raw_keys_ row

    std::vector<real> pad(const real* x) const;
    std::size_t nearest_centroid(const real* x_padded) const;
    void encode(const real* residual, std::uint8_t* code_out) const;
};

}  // namespace manrec

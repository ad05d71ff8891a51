#include <algorithm>
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "manrec/index.hpp"

using namespace manrec;

namespace {

std::vector<real> random_points(std::size_t n, std::size_t d, std::uint64_t seed,
                                double spread = 1.0) {
    Rng rng(seed);
    std::vector<real> out(n * d);
    for (auto& x : out) x = rng.uniform(-spread, spread);
    return out;
}

// points drifting along per-cluster directions, so near neighbors share a
// cluster and an inverted file keeps them in few lists
std::vector<real> clustered_points(std::size_t n, std::size_t d, std::size_t n_clusters,
                                   std::uint64_t seed) {
    Rng rng(seed);
    std::vector<real> centers(n_clusters * d), dirs(n_clusters * d);
    for (auto& x : centers) x = rng.uniform(-10, 10);
    for (auto& x : dirs) x = rng.uniform(-1, 1);
    std::vector<real> out(n * d);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = rng.index(n_clusters);
        const real t = static_cast<real>(rng.normal() * 0.7);
        for (std::size_t j = 0; j < d; ++j)
            out[i * d + j] = centers[c * d + j] + t * dirs[c * d + j] +
                             static_cast<real>(0.05 * rng.normal());
    }
    return out;
}

NeighborSet brute_force(const std::vector<real>& data, std::size_t d, const real* q,
                        std::size_t k, SlotId min_payload = 0) {
    std::vector<Neighbor> heap;
    const std::size_t n = data.size() / d;
    for (std::size_t i = 0; i < n; ++i) {
        if (static_cast<SlotId>(i) < min_payload) continue;
        knn_offer(heap, k, static_cast<SlotId>(i), l2_distance2(data.data() + i * d, q, d));
    }
    return knn_finish(std::move(heap));
}

IvfPqIndex build(const std::vector<real>& data, std::size_t d, IndexConfig cfg) {
    IvfPqIndex ix;
    const std::size_t n = data.size() / d;
    ix.fit(data.data(), n, d, cfg);
    for (std::size_t i = 0; i < n; ++i) ix.add(data.data() + i * d, static_cast<SlotId>(i));
    return ix;
}

}  // namespace

TEST_SUITE("index") {

TEST_CASE("lloyd iterations never increase the objective") {
    auto data = random_points(400, 8, 42);
    KmeansResult r = kmeans(data.data(), 400, 8, 7, 25, 1);
    REQUIRE(r.k == 7);
    REQUIRE(r.objective.size() >= 2);
    for (std::size_t i = 1; i < r.objective.size(); ++i)
        CHECK(r.objective[i] <= r.objective[i - 1] + 1e-9);
    REQUIRE(r.assign.size() == 400);
    for (auto a : r.assign) CHECK(a < 7);
}

TEST_CASE("kmeans survives heavy duplication and reseeds empty clusters") {
    // 3 distinct points, 150 copies; k = 5 forces empty clusters
    std::vector<real> base = {0, 0, 10, 10, -7, 3};
    std::vector<real> data;
    for (int rep = 0; rep < 50; ++rep)
        for (int p = 0; p < 3; ++p) {
            data.push_back(base[p * 2]);
            data.push_back(base[p * 2 + 1]);
        }
    KmeansResult r = kmeans(data.data(), 150, 2, 5, 25, 3);
    for (real c : r.centroids) CHECK(std::isfinite(c));
    // three point masses can always be covered exactly by five centroids
    CHECK(r.objective.back() == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("separated blobs are recovered exactly") {
    Rng rng(9);
    std::vector<real> data;
    const real centers[3][2] = {{0, 0}, {100, 0}, {0, 100}};
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 40; ++i) {
            data.push_back(centers[c][0] + static_cast<real>(rng.uniform(-1, 1)));
            data.push_back(centers[c][1] + static_cast<real>(rng.uniform(-1, 1)));
        }
    KmeansResult r = kmeans(data.data(), 120, 2, 3, 25, 17);
    // every blob maps to one distinct centroid
    CHECK(r.assign[0] == r.assign[39]);
    CHECK(r.assign[40] == r.assign[79]);
    CHECK(r.assign[80] == r.assign[119]);
    CHECK(r.assign[0] != r.assign[40]);
    CHECK(r.assign[40] != r.assign[80]);
}

TEST_CASE("the default list count follows the square root rule") {
    IndexConfig cfg;
    cfg.use_pq = false;
    auto data = random_points(10000, 4, 5);
    IvfPqIndex ix;
    ix.fit(data.data(), 10000, 4, cfg);
    CHECK(ix.nlist() == 100);

    IvfPqIndex tiny;
    auto two = random_points(2, 4, 6);
    tiny.fit(two.data(), 2, 4, cfg);
    CHECK(tiny.nlist() == 1);
}

TEST_CASE("an explicit list count is honored") {
    IndexConfig cfg;
    cfg.nlist = 13;
    cfg.use_pq = false;
    auto data = random_points(500, 4, 5);
    IvfPqIndex ix;
    ix.fit(data.data(), 500, 4, cfg);
    CHECK(ix.nlist() == 13);
}

TEST_CASE("exact-mode queries reproduce brute force bit for bit") {
    const std::size_t d = 9;  // deliberately not a multiple of the subspace count
    auto data = random_points(600, d, 21);
    IndexConfig cfg;
    cfg.use_pq = false;
    cfg.nlist = 16;
    IvfPqIndex ix = build(data, d, cfg);

    auto q = random_points(1, d, 77);
    NeighborSet got = ix.query(q.data(), 10, 16);  // probe everything
    NeighborSet want = brute_force(data, d, q.data(), 10);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
        CHECK(got[i].id == want[i].id);
        CHECK(got[i].dist == want[i].dist);
    }
    // exact_query must agree as well
    NeighborSet oracle = ix.exact_query(q.data(), 10);
    for (std::size_t i = 0; i < oracle.size(); ++i) CHECK(oracle[i].id == want[i].id);
}

TEST_CASE("equidistant entries rank by ascending payload id") {
    // many copies of the same point: every distance ties
    std::vector<real> data(40 * 3, real(2.5));
    IndexConfig cfg;
    cfg.use_pq = false;
    cfg.nlist = 4;
    IvfPqIndex ix = build(data, 3, cfg);
    const real q[3] = {2.5, 2.5, 2.5};
    NeighborSet got = ix.query(q, 7, 4);
    REQUIRE(got.size() == 7);
    for (std::size_t i = 0; i < got.size(); ++i) {
        CHECK(got[i].id == static_cast<SlotId>(i));
        CHECK(got[i].dist == doctest::Approx(0.0));
    }
}

TEST_CASE("min_payload hides older entries") {
    std::vector<real> data(10 * 2, real(1));
    IndexConfig cfg;
    cfg.use_pq = false;
    cfg.nlist = 1;
    IvfPqIndex ix = build(data, 2, cfg);
    const real q[2] = {1, 1};
    NeighborSet got = ix.query(q, 10, 1, /*min_payload=*/6);
    REQUIRE(got.size() == 4);
    for (const auto& nb : got) CHECK(nb.id >= 6);
    NeighborSet oracle = ix.exact_query(q, 10, 6);
    CHECK(oracle.size() == 4);
}

TEST_CASE("pq code storage costs sixteen bytes per entry") {
    const std::size_t d = 24;
    auto data = random_points(800, d, 31);
    IndexConfig cfg;
    cfg.nlist = 8;
    cfg.keep_raw_keys = false;
    IvfPqIndex ix = build(data, d, cfg);
    CHECK(ix.size() == 800);
    CHECK(ix.list_bytes() == 800 * (8 + 8));  // 8 code bytes + 8 id bytes
}

TEST_CASE("representable points reconstruct exactly through the codebooks") {
    // residual subvectors take few distinct values, so 256 codewords per
    // subspace cover them and quantization is lossless
    const std::size_t d = 8;
    Rng rng(13);
    std::vector<real> vocabv = {-3, -1, 0, 2, 5};
    std::vector<real> data(64 * d);
    for (auto& x : data) x = vocabv[rng.index(vocabv.size())];
    IndexConfig cfg;
    cfg.nlist = 1;
    cfg.m = 8;  // scalar subspaces: each needs at most 5 codewords
    IvfPqIndex ix = build(data, d, cfg);
    for (std::size_t i = 0; i < 64; ++i) {
        std::vector<real> rec = ix.reconstruct(static_cast<SlotId>(i));
        REQUIRE(rec.size() >= d);
        for (std::size_t j = 0; j < d; ++j)
            CHECK(rec[j] == doctest::Approx(data[i * d + j]).epsilon(1e-9));
    }
}

TEST_CASE("pq recall on trajectory-clustered data clears nine in ten") {
    const std::size_t d = 16, n = 3000, k = 10;
    auto data = clustered_points(n, d, 40, 4);
    IndexConfig cfg;
    cfg.nlist = 32;
    cfg.default_nprobe = 8;
    IvfPqIndex ix = build(data, d, cfg);

    auto queries = clustered_points(64, d, 40, 4);  // same distribution
    std::size_t hit = 0, total = 0;
    for (std::size_t qi = 0; qi < 64; ++qi) {
        const real* q = queries.data() + qi * d;
        NeighborSet approx = ix.query(q, k);
        NeighborSet exact = ix.exact_query(q, k);
        for (const auto& e : exact) {
            total += 1;
            for (const auto& a : approx)
                if (a.id == e.id) {
                    hit += 1;
                    break;
                }
        }
    }
    CHECK(total == 64 * k);
    CHECK(static_cast<double>(hit) / static_cast<double>(total) >= 0.9);
}

TEST_CASE("probing more lists never hurts recall") {
    const std::size_t d = 8, n = 1200;
    auto data = clustered_points(n, d, 25, 8);
    IndexConfig cfg;
    cfg.nlist = 25;
    IvfPqIndex ix = build(data, d, cfg);
    auto q = clustered_points(1, d, 25, 8);

    NeighborSet exact = ix.exact_query(q.data(), 5);
    double last = -1;
    for (std::size_t nprobe : {1u, 4u, 25u}) {
        NeighborSet got = ix.query(q.data(), 5, nprobe);
        std::size_t hit = 0;
        for (const auto& e : exact)
            for (const auto& a : got)
                if (a.id == e.id) ++hit;
        const double recall = static_cast<double>(hit) / 5.0;
        CHECK(recall >= last);
        last = recall;
    }
}

TEST_CASE("queries before fitting or on an empty index behave") {
    IvfPqIndex ix;
    const real q[4] = {0, 0, 0, 0};
    CHECK_THROWS_AS(ix.query(q, 5), Error);

    IndexConfig cfg;
    cfg.use_pq = false;
    auto data = random_points(50, 4, 2);
    ix.fit(data.data(), 50, 4, cfg);  // fit but nothing added
    CHECK(ix.query(q, 5).empty());
    CHECK(ix.size() == 0);
}

TEST_CASE("fitting on an empty sample is an error") {
    IvfPqIndex ix;
    IndexConfig cfg;
    CHECK_THROWS_AS(ix.fit(nullptr, 0, 8, cfg), Error);
}

TEST_CASE("snapshots round-trip and keep answering queries") {
    const std::size_t d = 12;
    auto data = clustered_points(500, d, 10, 19);
    IndexConfig cfg;
    cfg.nlist = 10;
    IvfPqIndex ix = build(data, d, cfg);

    std::stringstream buf;
    ix.save(buf);
    IvfPqIndex back;
    back.load(buf);
    CHECK(back == ix);

    auto q = clustered_points(1, d, 10, 19);
    NeighborSet a = ix.query(q.data(), 8);
    NeighborSet b = back.query(q.data(), 8);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].id == b[i].id);
        CHECK(a[i].dist == b[i].dist);
    }
}

TEST_CASE("a corrupted snapshot is rejected") {
    auto data = random_points(100, 4, 3);
    IndexConfig cfg;
    cfg.use_pq = false;
    IvfPqIndex ix = build(data, 4, cfg);
    std::stringstream buf;
    ix.save(buf);
    std::string bytes = buf.str();
    bytes[0] ^= 0x5a;  // break the magic
    std::stringstream bad(bytes);
    IvfPqIndex victim;
    CHECK_THROWS_AS(victim.load(bad), Error);
}

TEST_CASE("adding to an unfitted index is an error") {
    IvfPqIndex ix;
    const real x[4] = {1, 2, 3, 4};
    CHECK_THROWS_AS(ix.add(x, 0), Error);
}

TEST_CASE("the shared top-k helper orders by distance then id") {
    std::vector<Neighbor> heap;
    knn_offer(heap, 3, 5, 4.0);
    knn_offer(heap, 3, 2, 1.0);
    knn_offer(heap, 3, 9, 1.0);
    knn_offer(heap, 3, 1, 9.0);  // evicted by the next offer
    knn_offer(heap, 3, 0, 2.0);
    NeighborSet got = knn_finish(std::move(heap));
    REQUIRE(got.size() == 3);
    CHECK(got[0].id == 2);  // dist 1, lower id
    CHECK(got[1].id == 9);  // dist 1, higher id
    CHECK(got[2].id == 0);  // dist 2
    CHECK(got[0].dist == doctest::Approx(1.0));
    CHECK(got[2].dist == doctest::Approx(std::sqrt(2.0)));
}

TEST_CASE("tied candidates at the heap boundary prefer the lower id") {
    std::vector<Neighbor> heap;
    knn_offer(heap, 2, 7, 1.0);
    knn_offer(heap, 2, 3, 1.0);
    knn_offer(heap, 2, 1, 1.0);  // same distance, lower id: must displace 7
    NeighborSet got = knn_finish(std::move(heap));
    REQUIRE(got.size() == 2);
    CHECK(got[0].id == 1);
    CHECK(got[1].id == 3);
}

}  // TEST_SUITE

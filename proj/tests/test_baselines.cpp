#include <cmath>

#include "doctest.h"
#include "manrec/baselines.hpp"

using namespace manrec;

namespace {

real score_of(const SparseScores& s, ItemId item) {
    for (const auto& e : s)
        if (e.item == item) return e.p;
    return 0;
}

void check_normalized(const SparseScores& s) {
    real sum = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) CHECK(s[i].item > s[i - 1].item);
        CHECK(s[i].p > 0);
        sum += s[i].p;
    }
    if (!s.empty()) CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}

}  // namespace

TEST_SUITE("baselines") {

TEST_CASE("item co-occurrence counts and cosine similarities by hand") {
    ItemKnnBaseline knn;
    const std::vector<ItemId> s1 = {0, 1, 2};  // a b c
    const std::vector<ItemId> s2 = {0, 1};
    const std::vector<ItemId> s3 = {1, 2};
    knn.add_session(s1);
    knn.add_session(s2);
    knn.add_session(s3);

    CHECK(knn.session_count(0) == 2);
    CHECK(knn.session_count(1) == 3);
    CHECK(knn.session_count(2) == 2);
    CHECK(knn.cooc(0, 1) == 2);
    CHECK(knn.cooc(1, 0) == 2);  // symmetric
    CHECK(knn.cooc(0, 2) == 1);
    CHECK(knn.cooc(1, 2) == 2);

    CHECK(knn.similarity(0, 1) == doctest::Approx(2.0 / std::sqrt(6.0)).epsilon(1e-14));
    CHECK(knn.similarity(0, 2) == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(knn.similarity(1, 2) == knn.similarity(2, 1));
    CHECK(knn.similarity(0, 9) == 0.0);
}

TEST_CASE("repeated clicks inside one session count once") {
    ItemKnnBaseline knn;
    const std::vector<ItemId> s = {0, 0, 1, 0};
    knn.add_session(s);
    CHECK(knn.session_count(0) == 1);
    CHECK(knn.cooc(0, 1) == 1);
}

TEST_CASE("item scores are the normalized similarities of the last click's partners") {
    ItemKnnBaseline knn;
    const std::vector<ItemId> s1 = {0, 1, 2};
    const std::vector<ItemId> s2 = {0, 1};
    const std::vector<ItemId> s3 = {1, 2};
    knn.add_session(s1);
    knn.add_session(s2);
    knn.add_session(s3);

    const std::vector<ItemId> prefix = {2, 0};  // last click: item 0
    SparseScores got = knn.predict(prefix);
    check_normalized(got);
    const double sim_b = 2.0 / std::sqrt(6.0), sim_c = 0.5;
    CHECK(score_of(got, 1) == doctest::Approx(sim_b / (sim_b + sim_c)).epsilon(1e-12));
    CHECK(score_of(got, 2) == doctest::Approx(sim_c / (sim_b + sim_c)).epsilon(1e-12));
    CHECK(score_of(got, 0) == 0);  // the anchor item is not its own partner
}

TEST_CASE("an unseen anchor item yields no scores") {
    ItemKnnBaseline knn;
    const std::vector<ItemId> s = {0, 1};
    knn.add_session(s);
    const std::vector<ItemId> prefix = {42};
    CHECK(knn.predict(prefix).empty());
    CHECK_THROWS_AS(knn.predict({}), Error);
}

TEST_CASE("session neighborhood scores match the hand enumeration") {
    SknnConfig cfg;
    SessionKnnBaseline sknn(cfg);
    const std::vector<ItemId> s1 = {0, 1};  // a b
    const std::vector<ItemId> s2 = {1, 2};  // b c
    const std::vector<ItemId> s3 = {2, 3};  // c d
    sknn.add_session(s1);
    sknn.add_session(s2);
    sknn.add_session(s3);

    // current {b}: s1 and s2 overlap with cosine 1/sqrt(2) each, s3 not at
    // all; scores a:w, b:2w, c:w before normalizing
    const std::vector<ItemId> current = {1};
    SparseScores got = sknn.predict(current);
    check_normalized(got);
    CHECK(score_of(got, 0) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(score_of(got, 1) == doctest::Approx(0.50).epsilon(1e-12));
    CHECK(score_of(got, 2) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(score_of(got, 3) == 0);
}

TEST_CASE("only the k most similar sessions contribute, newest first on ties") {
    SknnConfig cfg;
    cfg.k_sessions = 1;
    SessionKnnBaseline sknn(cfg);
    const std::vector<ItemId> s1 = {0, 7};   // a x
    const std::vector<ItemId> s2 = {0, 9};   // a y, same similarity to {a}
    sknn.add_session(s1);
    sknn.add_session(s2);

    const std::vector<ItemId> current = {0};
    SparseScores got = sknn.predict(current);
    CHECK(score_of(got, 9) > 0);   // the newer tie wins
    CHECK(score_of(got, 7) == 0);  // the older one is cut
}

TEST_CASE("sequential weighting favors sessions matching recent clicks") {
    SknnConfig plain_cfg;
    SknnConfig seq_cfg;
    seq_cfg.sequential_weighting = true;
    SessionKnnBaseline plain(plain_cfg), seq(seq_cfg);
    const std::vector<ItemId> n1 = {0, 7};  // overlaps the current start
    const std::vector<ItemId> n2 = {1, 9};  // overlaps the current end
    for (auto* b : {&plain, &seq}) {
        b->add_session(n1);
        b->add_session(n2);
    }

    const std::vector<ItemId> current = {0, 1};
    // without weighting both neighbors tie, so their exclusive items tie
    SparseScores p = plain.predict(current);
    CHECK(score_of(p, 7) == doctest::Approx(score_of(p, 9)).epsilon(1e-12));
    CHECK(score_of(p, 7) == doctest::Approx(0.25).epsilon(1e-12));

    // with weighting, n1 is scaled by 1/2 and n2 by 1: y gets twice x's mass
    SparseScores s = seq.predict(current);
    check_normalized(s);
    CHECK(score_of(s, 7) == doctest::Approx(1.0 / 6).epsilon(1e-12));
    CHECK(score_of(s, 9) == doctest::Approx(1.0 / 3).epsilon(1e-12));
    CHECK(score_of(s, 9) == doctest::Approx(2 * score_of(s, 7)).epsilon(1e-12));
}

TEST_CASE("the pool forgets the oldest sessions") {
    SknnConfig cfg;
    cfg.pool = 2;
    SessionKnnBaseline sknn(cfg);
    const std::vector<ItemId> s1 = {0};
    const std::vector<ItemId> s2 = {1};
    const std::vector<ItemId> s3 = {2};
    sknn.add_session(s1);
    sknn.add_session(s2);
    sknn.add_session(s3);
    CHECK(sknn.pool_size() == 2);
    const std::vector<ItemId> current = {0};
    CHECK(sknn.predict(current).empty());  // the only match was evicted
    const std::vector<ItemId> current2 = {2};
    CHECK_FALSE(sknn.predict(current2).empty());
}

TEST_CASE("posting compaction does not change answers") {
    SknnConfig cfg;
    cfg.pool = 2;
    SessionKnnBaseline sknn(cfg);
    // enough churn with wide sessions to trip the rebuild threshold many
    // times over
    std::vector<ItemId> wide(20);
    for (int round = 0; round < 400; ++round) {
        for (int j = 0; j < 20; ++j) wide[static_cast<std::size_t>(j)] = round * 3 + j;
        sknn.add_session(wide);
    }
    CHECK(sknn.pool_size() == 2);
    // the last two sessions start at 399*3 and 398*3
    const std::vector<ItemId> current = {399 * 3 + 1};
    SparseScores got = sknn.predict(current);
    check_normalized(got);
    CHECK_FALSE(got.empty());
    const std::vector<ItemId> stale = {0};
    CHECK(sknn.predict(stale).empty());
}

TEST_CASE("an empty pool or empty prefix is handled") {
    SessionKnnBaseline sknn;
    const std::vector<ItemId> current = {0};
    CHECK(sknn.predict(current).empty());
    CHECK_THROWS_AS(sknn.predict({}), Error);
}

}  // TEST_SUITE

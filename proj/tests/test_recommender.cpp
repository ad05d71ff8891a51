#include <cmath>
#include <sstream>

#include "doctest.h"
#include "manrec/recommender.hpp"

using namespace manrec;

namespace {

ItemVocabulary vocab_of(std::initializer_list<const char*> ids) {
    ItemVocabulary v;
    for (const char* id : ids) v.ensure(id);
    return v;
}

RecommenderConfig tiny_cfg(std::uint64_t seed = 1) {
    RecommenderConfig cfg;
    cfg.embed_dim = 3;
    cfg.hidden_dim = 4;
    cfg.epochs = 5;
    cfg.batch_size = 8;
    cfg.seed = seed;
    return cfg;
}

}  // namespace

TEST_SUITE("recommender") {

TEST_CASE("analytic gradients of a full prefix step match finite differences") {
    RecommenderModel model(vocab_of({"a", "b", "c", "d", "e"}), tiny_cfg());
    const std::vector<ItemId> prefix = {0, 3, 1};
    const ItemId target = 4;

    model.zero_all_grads();
    const double analytic_loss = model.pair_loss_and_grads(prefix, target, 1.0);

    auto loss_fn = [&]() {
        std::vector<real> p = model.predict(prefix);
        return -std::log(static_cast<double>(p[static_cast<std::size_t>(target)]));
    };
    CHECK(analytic_loss == doctest::Approx(loss_fn()).epsilon(1e-10));

    ParamSet params = model.collect_params();
    Rng rng(23);
    FdCheckResult r = finite_difference_check(loss_fn, params, 1e-5, 40, rng);
    CHECK(r.checked > 100);
    INFO("worst: ", r.worst_param, "[", r.worst_coord, "]");
    CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("gradient scaling is linear") {
    RecommenderModel model(vocab_of({"a", "b", "c"}), tiny_cfg(5));
    const std::vector<ItemId> prefix = {0, 1};

    model.zero_all_grads();
    model.pair_loss_and_grads(prefix, 2, 1.0);
    std::vector<real> unit;
    for (const auto& p : model.collect_params())
        unit.insert(unit.end(), p.grad, p.grad + p.size);

    model.zero_all_grads();
    model.pair_loss_and_grads(prefix, 2, 0.25);
    std::size_t at = 0;
    for (const auto& p : model.collect_params())
        for (std::size_t i = 0; i < p.size; ++i, ++at)
            CHECK(p.grad[i] == doctest::Approx(0.25 * unit[at]).epsilon(1e-12));
}

TEST_CASE("pretraining a deterministic transition drives its probability up") {
    RecommenderConfig cfg = tiny_cfg(3);
    cfg.epochs = 60;
    cfg.lr = 5e-2;
    RecommenderModel model(vocab_of({"a", "b", "c"}), cfg);
    std::vector<std::vector<ItemId>> train(30, {0, 1});  // a is always followed by b
    auto log = model.pretrain(train, {});
    CHECK(log.size() == 60);
    CHECK(log.back().train_loss < log.front().train_loss);
    const std::vector<ItemId> pfx0 = {0};
    std::vector<real> p = model.predict(pfx0);
    CHECK(p[1] > 0.9);
}

TEST_CASE("pretraining restores the best validation epoch") {
    RecommenderConfig cfg = tiny_cfg(4);
    cfg.epochs = 25;
    cfg.lr = 3e-2;
    RecommenderModel model(vocab_of({"a", "b", "c", "d"}), cfg);
    std::vector<std::vector<ItemId>> train = {{0, 1, 2}, {1, 2, 3}, {2, 3, 0}, {0, 1, 3}};
    std::vector<std::vector<ItemId>> valid = {{0, 1, 2}, {1, 2, 0}};
    auto log = model.pretrain(train, valid);
    double best = log.front().valid_loss;
    for (const auto& e : log) best = std::min(best, e.valid_loss);
    CHECK(model.mean_loss(valid) == doctest::Approx(best).epsilon(1e-10));
}

TEST_CASE("the same seed pretrains to bit-identical parameters") {
    std::vector<std::vector<ItemId>> train = {{0, 1, 2}, {2, 1, 0}, {1, 0, 2}};
    RecommenderModel a(vocab_of({"x", "y", "z"}), tiny_cfg(11));
    RecommenderModel b(vocab_of({"x", "y", "z"}), tiny_cfg(11));
    a.pretrain(train, {});
    b.pretrain(train, {});
    CHECK(a.params_equal(b));

    RecommenderModel c(vocab_of({"x", "y", "z"}), tiny_cfg(12));
    c.pretrain(train, {});
    CHECK_FALSE(c.params_equal(a));
}

TEST_CASE("encoding validates its prefix") {
    RecommenderModel model(vocab_of({"a", "b"}), tiny_cfg());
    CHECK_THROWS_AS(model.encode({}), Error);
    const std::vector<ItemId> bad = {7};
    CHECK_THROWS_AS(model.encode(bad), Error);
    const std::vector<ItemId> ok = {1, 0};
    CHECK(model.encode(ok).size() == 4);
}

TEST_CASE("prediction from a cached context equals prediction from the prefix") {
    RecommenderModel model(vocab_of({"a", "b", "c", "d"}), tiny_cfg(9));
    const std::vector<ItemId> prefix = {2, 0, 3};
    std::vector<real> ctx = model.encode(prefix);
    std::vector<real> via_ctx = model.predict_from_context(ctx.data());
    std::vector<real> direct = model.predict(prefix);
    REQUIRE(via_ctx.size() == direct.size());
    for (std::size_t i = 0; i < direct.size(); ++i) CHECK(via_ctx[i] == direct[i]);
}

TEST_CASE("new items join mid-stream with live probability mass") {
    RecommenderModel model(vocab_of({"a", "b"}), tiny_cfg(2));
    CHECK(model.ensure_item("a") == 0);  // known ids resolve, no growth
    CHECK(model.n_items() == 2);

    const ItemId fresh = model.ensure_item("brand-new");
    CHECK(fresh == 2);
    CHECK(model.n_items() == 3);
    const std::vector<ItemId> pfx0 = {0};
    std::vector<real> p = model.predict(pfx0);
    REQUIRE(p.size() == 3);
    CHECK(p[2] > 0);
    real sum = 0;
    for (real x : p) sum += x;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));

    // repeating the registration is a no-op
    std::vector<real> before = p;
    CHECK(model.ensure_item("brand-new") == 2);
    std::vector<real> after = model.predict(pfx0);
    CHECK(before == after);
}

TEST_CASE("incremental updates at rate zero leave every bit in place") {
    RecommenderModel a(vocab_of({"a", "b", "c"}), tiny_cfg(6));
    RecommenderModel b(vocab_of({"a", "b", "c"}), tiny_cfg(6));
    REQUIRE(a.params_equal(b));
    const double loss = a.incremental_update({{{0, 1}, 2}, {{1}, 0}}, 0.0);
    CHECK(loss > 0);
    CHECK(a.params_equal(b));
}

TEST_CASE("repeated incremental steps on one pair reduce its loss") {
    RecommenderModel model(vocab_of({"a", "b", "c"}), tiny_cfg(8));
    const std::vector<std::pair<std::vector<ItemId>, ItemId>> pairs = {{{0, 1}, 2}};
    const double first = model.incremental_update(pairs, 0.1);
    double last = first;
    for (int i = 0; i < 15; ++i) last = model.incremental_update(pairs, 0.1);
    CHECK(last < first);
}

TEST_CASE("the incremental loss is the mean over the batch") {
    RecommenderModel model(vocab_of({"a", "b", "c"}), tiny_cfg(14));
    const std::vector<ItemId> p1 = {0, 1};
    const std::vector<ItemId> p2 = {2};
    auto pure = [&](const std::vector<ItemId>& pre, ItemId t) {
        return -std::log(static_cast<double>(model.predict(pre)[static_cast<std::size_t>(t)]));
    };
    const double want = 0.5 * (pure(p1, 2) + pure(p2, 0));
    const double got = model.incremental_update({{p1, 2}, {p2, 0}}, 0.0);
    CHECK(got == doctest::Approx(want).epsilon(1e-10));
}

TEST_CASE("checkpoints preserve parameters, vocabulary, and the item seeder") {
    RecommenderConfig cfg = tiny_cfg(21);
    cfg.epochs = 8;
    RecommenderModel model(vocab_of({"a", "b", "c"}), cfg);
    model.pretrain({{0, 1, 2}, {2, 0, 1}}, {});
    model.ensure_item("later-1");

    std::stringstream buf;
    model.save(buf);
    RecommenderModel back;
    back.load(buf);
    CHECK(back.params_equal(model));
    CHECK(back.n_items() == 4);
    CHECK(back.vocab().id_of(3) == std::string("later-1"));

    // the post-restore item stream continues where it left off
    const ItemId a = model.ensure_item("later-2");
    const ItemId b = back.ensure_item("later-2");
    CHECK(a == b);
    CHECK(back.params_equal(model));

    const std::vector<ItemId> prefix = {0, 2, 3};
    std::vector<real> pa = model.predict(prefix);
    std::vector<real> pb = back.predict(prefix);
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i] == pb[i]);
}

TEST_CASE("a truncated model checkpoint is rejected") {
    RecommenderModel model(vocab_of({"a", "b"}), tiny_cfg());
    std::stringstream buf;
    model.save(buf);
    std::string bytes = buf.str();
    std::stringstream bad(bytes.substr(0, bytes.size() / 2));
    RecommenderModel victim;
    CHECK_THROWS_AS(victim.load(bad), Error);
}

}  // TEST_SUITE

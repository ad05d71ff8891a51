#include "manrec/recommender.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>

namespace manrec {

RecommenderModel::RecommenderModel(ItemVocabulary vocab, const RecommenderConfig& cfg)
    : cfg_(cfg), vocab_(std::move(vocab)) {
    if (cfg_.embed_dim == 0 || cfg_.hidden_dim == 0)
        throw Error("embed and hidden dims must be positive");
    Rng rng(derive_seed(cfg_.seed, 11));
    item_rng_ = Rng(derive_seed(cfg_.seed, 12));
    embed_.resize(vocab_.size(), cfg_.embed_dim);
    embed_.init_uniform(rng, cfg_.init_scale);
    gru_.resize(cfg_.embed_dim, cfg_.hidden_dim);
    gru_.init(rng, cfg_.init_scale);
    dec_w_.resize(vocab_.size(), cfg_.hidden_dim);
    dec_w_.init_uniform(rng, cfg_.init_scale);
    dec_b_.resize(vocab_.size(), 1);
}

void RecommenderModel::check_prefix(std::span<const ItemId> prefix) const {
    if (prefix.empty()) throw Error("cannot encode an empty prefix");
    for (ItemId i : prefix)
        if (i < 0 || static_cast<std::size_t>(i) >= vocab_.size())
            throw Error("prefix contains unregistered item index " + std::to_string(i));
}

std::vector<real> RecommenderModel::encode(std::span<const ItemId> prefix) const {
    check_prefix(prefix);
    std::vector<real> h(cfg_.hidden_dim, real(0)), h_next(cfg_.hidden_dim);
    for (ItemId it : prefix) {
        gru_step(gru_, embed_.row(static_cast<std::size_t>(it)), h.data(), h_next.data(),
                 nullptr);
        std::swap(h, h_next);
    }
    return h;
}

std::vector<real> RecommenderModel::predict_from_context(const real* c) const {
    return linear_softmax_probs(dec_w_, dec_b_, c);
}

std::vector<real> RecommenderModel::predict(std::span<const ItemId> prefix) const {
    const auto h = encode(prefix);
    return predict_from_context(h.data());
}

ItemId RecommenderModel::ensure_item(const std::string& external_id) {
    const std::size_t before = vocab_.size();
    const ItemId idx = vocab_.ensure(external_id);
    if (vocab_.size() != before) {
        embed_.add_row();
        real* row = embed_.row(before);
        for (std::size_t j = 0; j < cfg_.embed_dim; ++j)
            row[j] = static_cast<real>(item_rng_.uniform(-cfg_.init_scale, cfg_.init_scale));
        dec_w_.add_row();  // zero decoder row: softmax treats it like any other flat logit
        dec_b_.add_row();
    }
    return idx;
}

ParamSet RecommenderModel::collect_params() {
    ParamSet out;
    collect_param(out, "embed", embed_);
    gru_.collect("gru", out);
    collect_param(out, "dec_w", dec_w_);
    collect_param(out, "dec_b", dec_b_);
    return out;
}

void RecommenderModel::zero_all_grads() {
    embed_.zero_grad();
    auto ps = collect_params();
    zero_grads(ps);
}

double RecommenderModel::pair_loss_and_grads(std::span<const ItemId> prefix, ItemId target,
                                             real scale) {
    check_prefix(prefix);
    if (target < 0 || static_cast<std::size_t>(target) >= vocab_.size())
        throw Error("target item is unregistered");

    const std::size_t T = prefix.size(), H = cfg_.hidden_dim, E = cfg_.embed_dim;
    std::vector<GruStepCache> caches(T);
    std::vector<real> h(H, real(0)), h_next(H);
    for (std::size_t t = 0; t < T; ++t) {
        gru_step(gru_, embed_.row(static_cast<std::size_t>(prefix[t])), h.data(),
                 h_next.data(), &caches[t]);
        std::swap(h, h_next);
    }

    SoftmaxCache sm;
    const double loss = linear_softmax_loss(dec_w_, dec_b_, h.data(), target, sm);

    std::vector<real> dh(H), dh_prev(H), dx(E);
    linear_softmax_backward(dec_w_, dec_b_, sm, scale, dh.data());
    for (std::size_t t = T; t-- > 0;) {
        gru_step_backward(gru_, caches[t], dh.data(), dh_prev.data(), dx.data());
        axpy(real(1), dx.data(), embed_.grad_row(static_cast<std::size_t>(prefix[t])), E);
        std::swap(dh, dh_prev);
    }
    return loss;
}

namespace {

struct PairIdx {
    std::uint32_t seq;
    std::uint32_t t;  // target position; prefix is [0, t)
};

std::vector<PairIdx> all_pairs(const std::vector<std::vector<ItemId>>& seqs) {
    std::vector<PairIdx> out;
    for (std::size_t s = 0; s < seqs.size(); ++s)
        for (std::size_t t = 1; t < seqs[s].size(); ++t)
            out.push_back({static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(t)});
    return out;
}

}  // namespace

double RecommenderModel::mean_loss(const std::vector<std::vector<ItemId>>& seqs) const {
    double total = 0;
    std::size_t count = 0;
    for (const auto& seq : seqs) {
        if (seq.size() < 2) continue;
        std::vector<real> h(cfg_.hidden_dim, real(0)), h_next(cfg_.hidden_dim);
        for (std::size_t t = 0; t < seq.size() - 1; ++t) {
            gru_step(gru_, embed_.row(static_cast<std::size_t>(seq[t])), h.data(),
                     h_next.data(), nullptr);
            std::swap(h, h_next);
            const auto probs = linear_softmax_probs(dec_w_, dec_b_, h.data());
            total += -std::log(probs[static_cast<std::size_t>(seq[t + 1])]);
            count += 1;
        }
    }
    if (count == 0) throw Error("no pairs to evaluate");
    return total / static_cast<double>(count);
}

std::vector<TrainLogEntry> RecommenderModel::pretrain(
    const std::vector<std::vector<ItemId>>& train,
    const std::vector<std::vector<ItemId>>& valid) {
    auto pairs = all_pairs(train);
    if (pairs.empty()) throw Error("pretraining needs at least one (prefix, target) pair");

    Rng shuffler(derive_seed(cfg_.seed, 13));
    OptimizerConfig opt;
    opt.method = OptMethod::adam;
    opt.lr = cfg_.lr;
    opt.strict_finite = cfg_.strict_finite;
    adam_ = AdamState();
    auto params = collect_params();

    std::vector<TrainLogEntry> log;
    double best_valid = std::numeric_limits<double>::infinity();
    std::vector<std::vector<real>> best;

    auto snapshot = [&]() {
        best.clear();
        for (const auto& p : params) best.emplace_back(p.value, p.value + p.size);
    };
    const bool have_valid = std::any_of(valid.begin(), valid.end(),
                                        [](const auto& s) { return s.size() >= 2; });

    for (std::size_t epoch = 0; epoch < cfg_.epochs; ++epoch) {
        shuffler.shuffle(pairs);
        double epoch_loss = 0;
        for (std::size_t start = 0; start < pairs.size(); start += cfg_.batch_size) {
            const std::size_t end = std::min(start + cfg_.batch_size, pairs.size());
            zero_grads(params);
            const real scale = real(1) / static_cast<real>(end - start);
            for (std::size_t i = start; i < end; ++i) {
                const auto& seq = train[pairs[i].seq];
                epoch_loss += pair_loss_and_grads(
                    std::span<const ItemId>(seq.data(), pairs[i].t), seq[pairs[i].t], scale);
            }
            optimizer_step(params, opt, &adam_);
        }
        TrainLogEntry entry;
        entry.epoch = epoch;
        entry.train_loss = epoch_loss / static_cast<double>(pairs.size());
        entry.valid_loss = have_valid ? mean_loss(valid) : entry.train_loss;
        log.push_back(entry);
        if (entry.valid_loss < best_valid) {
            best_valid = entry.valid_loss;
            snapshot();
        }
    }
    if (!best.empty())
        for (std::size_t k = 0; k < params.size(); ++k)
            std::copy(best[k].begin(), best[k].end(), params[k].value);
    return log;
}

double RecommenderModel::incremental_update(
    const std::vector<std::pair<std::vector<ItemId>, ItemId>>& pairs, double lr) {
    if (pairs.empty()) return 0.0;
    auto params = collect_params();
    zero_grads(params);
    double total = 0;
    const real scale = real(1) / static_cast<real>(pairs.size());
    for (const auto& [prefix, target] : pairs)
        total += pair_loss_and_grads(prefix, target, scale);
    OptimizerConfig opt;
    opt.method = OptMethod::sgd;
    opt.lr = lr;
    opt.strict_finite = cfg_.strict_finite;
    optimizer_step(params, opt, nullptr);
    return total / static_cast<double>(pairs.size());
}

// ---- serialization ------------------------------------------------------------

namespace {

template <class T>
void put(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
void get(std::istream& in, T& v) {
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw Error("truncated model blob");
}

void put_string(std::ostream& out, const std::string& s) {
    put<std::uint64_t>(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in) {
    std::uint64_t n = 0;
    get(in, n);
    std::string s(n, '\0');
    if (n) {
        in.read(s.data(), static_cast<std::streamsize>(n));
        if (!in) throw Error("truncated model blob");
    }
    return s;
}

void put_tensor(std::ostream& out, const Tensor& t) {
    put<std::uint64_t>(out, t.rows);
    put<std::uint64_t>(out, t.cols);
    if (!t.v.empty())
        out.write(reinterpret_cast<const char*>(t.v.data()),
                  static_cast<std::streamsize>(t.v.size() * sizeof(real)));
}

void get_tensor(std::istream& in, Tensor& t) {
    std::uint64_t r = 0, c = 0;
    get(in, r);
    get(in, c);
    t.resize(r, c);
    if (!t.v.empty()) {
        in.read(reinterpret_cast<char*>(t.v.data()),
                static_cast<std::streamsize>(t.v.size() * sizeof(real)));
        if (!in) throw Error("truncated model blob");
    }
}

constexpr std::uint32_t kModelMagic = 0x4d4f4431u;  // "MOD1"

}  // namespace

void RecommenderModel::save(std::ostream& out) const {
    put(out, kModelMagic);
    put<std::uint64_t>(out, cfg_.embed_dim);
    put<std::uint64_t>(out, cfg_.hidden_dim);
    put<std::uint64_t>(out, cfg_.epochs);
    put<std::uint64_t>(out, cfg_.batch_size);
    put(out, cfg_.lr);
    put(out, cfg_.init_scale);
    put(out, cfg_.seed);
    put<std::uint8_t>(out, cfg_.strict_finite);
    put<std::uint64_t>(out, vocab_.size());
    for (std::size_t i = 0; i < vocab_.size(); ++i) {
        put_string(out, vocab_.id_of(static_cast<ItemId>(i)));
        put<std::int64_t>(out, vocab_.train_freq(static_cast<ItemId>(i)));
    }
    put_tensor(out, embed_);
    put_tensor(out, gru_.wz); put_tensor(out, gru_.wr); put_tensor(out, gru_.wh);
    put_tensor(out, gru_.uz); put_tensor(out, gru_.ur); put_tensor(out, gru_.uh);
    put_tensor(out, gru_.bz); put_tensor(out, gru_.br); put_tensor(out, gru_.bh);
    put_tensor(out, dec_w_);
    put_tensor(out, dec_b_);
    put_string(out, item_rng_.save_state());
}

void RecommenderModel::load(std::istream& in) {
    std::uint32_t magic = 0;
    get(in, magic);
    if (magic != kModelMagic) throw Error("not a model blob");
    std::uint64_t u;
    get(in, u); cfg_.embed_dim = u;
    get(in, u); cfg_.hidden_dim = u;
    get(in, u); cfg_.epochs = u;
    get(in, u); cfg_.batch_size = u;
    get(in, cfg_.lr);
    get(in, cfg_.init_scale);
    get(in, cfg_.seed);
    std::uint8_t b;
    get(in, b); cfg_.strict_finite = b;
    get(in, u);
    vocab_ = ItemVocabulary();
    for (std::uint64_t i = 0; i < u; ++i) {
        const std::string id = get_string(in);
        std::int64_t f;
        get(in, f);
        const ItemId idx = vocab_.ensure(id);
        vocab_.set_train_freq(idx, f);
    }
    get_tensor(in, embed_);
    gru_.input_dim = cfg_.embed_dim;
    gru_.hidden_dim = cfg_.hidden_dim;
    get_tensor(in, gru_.wz); get_tensor(in, gru_.wr); get_tensor(in, gru_.wh);
    get_tensor(in, gru_.uz); get_tensor(in, gru_.ur); get_tensor(in, gru_.uh);
    get_tensor(in, gru_.bz); get_tensor(in, gru_.br); get_tensor(in, gru_.bh);
    get_tensor(in, dec_w_);
    get_tensor(in, dec_b_);
    item_rng_.load_state(get_string(in));
    adam_ = AdamState();
    if (embed_.rows != vocab_.size() || dec_w_.rows != vocab_.size())
        throw Error("model blob shape mismatch");
}

bool RecommenderModel::params_equal(const RecommenderModel& other) const {
    return embed_.v == other.embed_.v && gru_.wz.v == other.gru_.wz.v &&
           gru_.wr.v == other.gru_.wr.v && gru_.wh.v == other.gru_.wh.v &&
           gru_.uz.v == other.gru_.uz.v && gru_.ur.v == other.gru_.ur.v &&
           gru_.uh.v == other.gru_.uh.v && gru_.bz.v == other.gru_.bz.v &&
           gru_.br.v == other.gru_.br.v && gru_.bh.v == other.gru_.bh.v &&
           dec_w_.v == other.dec_w_.v && dec_b_.v == other.dec_b_.v;
}

}  // namespace manrec

#include "manrec/gating.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>

namespace manrec {

GateNetwork::GateNetwork(std::size_t input_dim, std::size_t hidden_dim, std::uint64_t seed,
                         double init_scale) {
    if (input_dim == 0 || hidden_dim == 0) throw Error("gate dims must be positive");
    Rng rng(derive_seed(seed, 21));
    wh_.resize(hidden_dim, input_dim);
    wh_.init_uniform(rng, init_scale);
    bh_.resize(hidden_dim, 1);
    wo_.resize(1, hidden_dim);
    wo_.init_uniform(rng, init_scale);
    bo_.resize(1, 1);
}

real GateNetwork::weight(const real* c) const {
    const std::size_t h = wh_.rows;
    real a2 = bo_.v[0];
    for (std::size_t i = 0; i < h; ++i)
        a2 += wo_.v[i] * std::tanh(dot(wh_.row(i), c, wh_.cols) + bh_.v[i]);
    return sigmoid(a2);
}

real GateNetwork::weight_with_cache(const real* c, Cache& cache) const {
    const std::size_t h = wh_.rows;
    cache.c.assign(c, c + wh_.cols);
    cache.a1.resize(h);
    real a2 = bo_.v[0];
    for (std::size_t i = 0; i < h; ++i) {
        cache.a1[i] = std::tanh(dot(wh_.row(i), c, wh_.cols) + bh_.v[i]);
        a2 += wo_.v[i] * cache.a1[i];
    }
    cache.w = sigmoid(a2);
    return cache.w;
}

void GateNetwork::backward(const Cache& cache, real dw) {
    const std::size_t h = wh_.rows;
    const real da2 = dw * cache.w * (real(1) - cache.w);
    bo_.g[0] += da2;
    for (std::size_t i = 0; i < h; ++i) {
        wo_.g[i] += da2 * cache.a1[i];
        const real dah = da2 * wo_.v[i] * (real(1) - cache.a1[i] * cache.a1[i]);
        bh_.g[i] += dah;
        axpy(dah, cache.c.data(), wh_.grad_row(i), wh_.cols);
    }
}

ParamSet GateNetwork::collect_params() {
    ParamSet out;
    collect_param(out, "gate.wh", wh_);
    collect_param(out, "gate.bh", bh_);
    collect_param(out, "gate.wo", wo_);
    collect_param(out, "gate.bo", bo_);
    return out;
}

std::vector<real> combine(const std::vector<real>& pn, const MemoryPrediction& pm, real w) {
    if (!(w >= real(0) && w <= real(1))) throw Error("blend weight outside [0, 1]");
    if (pm.empty()) return pn;
    std::vector<real> out(pn.size());
    const real wn = w, wm = real(1) - w;
    for (std::size_t i = 0; i < pn.size(); ++i) out[i] = wn * pn[i];
    for (const auto& s : pm.probs) {
        if (s.item < 0 || static_cast<std::size_t>(s.item) >= pn.size())
            throw Error("memory prediction refers to an item outside the vocabulary");
        out[static_cast<std::size_t>(s.item)] += wm * s.p;
    }
    return out;
}

std::vector<GateExample> build_gate_examples(const RecommenderModel& model,
                                             const MemoryStore& memory,
                                             const std::vector<std::vector<ItemId>>& sessions,
                                             std::size_t k, std::size_t nprobe) {
    std::vector<GateExample> out;
    for (const auto& seq : sessions) {
        if (seq.size() < 2) continue;
        for (std::size_t t = 1; t < seq.size(); ++t) {
            GateExample ex;
            ex.context = model.encode(std::span<const ItemId>(seq.data(), t));
            const auto pn = model.predict_from_context(ex.context.data());
            ex.pn = pn[static_cast<std::size_t>(seq[t])];
            const auto pm = memory.predict(ex.context.data(), k, nprobe);
            ex.pm_empty = pm.empty();
            ex.pm = ex.pm_empty ? real(0) : pm.prob_of(seq[t]);
            out.push_back(std::move(ex));
        }
    }
    return out;
}

double gate_batch_loss(GateNetwork& gate, std::span<const GateExample> batch,
                       bool accumulate_grads, real scale) {
    double total = 0;
    GateNetwork::Cache cache;
    for (const auto& ex : batch) {
        if (ex.pm_empty) {
            // blend degenerates to the neural path; no weight gradient exists
            total += -std::log(static_cast<double>(ex.pn));
            continue;
        }
        const real w = gate.weight_with_cache(ex.context.data(), cache);
        const real p = w * ex.pn + (real(1) - w) * ex.pm;
        total += -std::log(static_cast<double>(p));
        if (accumulate_grads) gate.backward(cache, -scale * (ex.pn - ex.pm) / p);
    }
    return total / static_cast<double>(batch.size());
}

GateFitResult fit_gating(std::size_t input_dim, const std::vector<GateExample>& examples,
                         const GateFitConfig& cfg) {
    if (examples.empty()) throw Error("gate fitting needs at least one example");
    GateFitResult res;
    res.gate = GateNetwork(input_dim, cfg.hidden_dim, cfg.seed, cfg.init_scale);

    std::vector<std::uint32_t> order(examples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::uint32_t>(i);
    Rng rng(derive_seed(cfg.seed, 22));
    rng.shuffle(order);
    std::size_t n_held = static_cast<std::size_t>(
        std::llround(static_cast<double>(order.size()) * cfg.heldout_fraction));
    if (n_held >= order.size()) n_held = order.size() - 1;

    std::vector<GateExample> held, train;
    for (std::size_t i = 0; i < order.size(); ++i)
        (i < n_held ? held : train).push_back(examples[order[i]]);
    if (train.empty()) throw Error("gate fitting has no training examples after the split");

    auto params = res.gate.collect_params();
    OptimizerConfig opt;
    opt.method = OptMethod::adam;
    opt.lr = cfg.lr;
    opt.strict_finite = cfg.strict_finite;
    AdamState adam;

    double best = std::numeric_limits<double>::infinity();
    std::vector<std::vector<real>> best_params;
    std::size_t since_best = 0;

    for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        rng.shuffle(train);
        double train_loss = 0;
        for (std::size_t start = 0; start < train.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(start + cfg.batch_size, train.size());
            zero_grads(params);
            const auto batch =
                std::span<const GateExample>(train.data() + start, end - start);
            train_loss += gate_batch_loss(res.gate, batch, true,
                                          real(1) / static_cast<real>(batch.size())) *
                          static_cast<double>(batch.size());
            optimizer_step(params, opt, &adam);
        }
        GateFitLogEntry entry;
        entry.epoch = epoch;
        entry.train_loss = train_loss / static_cast<double>(train.size());
        entry.heldout_loss =
            held.empty() ? entry.train_loss
                         : gate_batch_loss(res.gate, held, false, real(0));
        res.log.push_back(entry);
        if (entry.heldout_loss < best) {
            best = entry.heldout_loss;
            best_params.clear();
            for (const auto& p : params) best_params.emplace_back(p.value, p.value + p.size);
            since_best = 0;
        } else {
            since_best += 1;
            if (since_best > cfg.patience) break;
        }
    }
    if (!best_params.empty())
        for (std::size_t kx = 0; kx < params.size(); ++kx)
            std::copy(best_params[kx].begin(), best_params[kx].end(), params[kx].value);
    return res;
}

void gate_incremental_step(GateNetwork& gate, std::span<const GateExample> batch,
                           double lr) {
    if (batch.empty()) return;
    auto params = gate.collect_params();
    zero_grads(params);
    gate_batch_loss(gate, batch, true, real(1) / static_cast<real>(batch.size()));
    OptimizerConfig opt;
    opt.method = OptMethod::sgd;
    opt.lr = lr;
    optimizer_step(params, opt, nullptr);
}

// ---- serialization ----------------------------------------------------------

namespace {

void put_tensor(std::ostream& out, const Tensor& t) {
    const std::uint64_t r = t.rows, c = t.cols;
    out.write(reinterpret_cast<const char*>(&r), sizeof(r));
    out.write(reinterpret_cast<const char*>(&c), sizeof(c));
    if (!t.v.empty())
        out.write(reinterpret_cast<const char*>(t.v.data()),
                  static_cast<std::streamsize>(t.v.size() * sizeof(real)));
}

void get_tensor(std::istream& in, Tensor& t) {
    std::uint64_t r = 0, c = 0;
    in.read(reinterpret_cast<char*>(&r), sizeof(r));
    in.read(reinterpret_cast<char*>(&c), sizeof(c));
    if (!in) throw Error("truncated gate blob");
    t.resize(r, c);
    if (!t.v.empty()) {
        in.read(reinterpret_cast<char*>(t.v.data()),
                static_cast<std::streamsize>(t.v.size() * sizeof(real)));
        if (!in) throw Error("truncated gate blob");
    }
}

constexpr std::uint32_t kGateMagic = 0x47415431u;  // "GAT1"

}  // namespace

void GateNetwork::save(std::ostream& out) const {
    out.write(reinterpret_cast<const char*>(&kGateMagic), sizeof(kGateMagic));
    put_tensor(out, wh_);
    put_tensor(out, bh_);
    put_tensor(out, wo_);
    put_tensor(out, bo_);
}

void GateNetwork::load(std::istream& in) {
    std::uint32_t magic = 0;
    in.read(reinterpret_cast<char*>(&magic), sizeof(magic));
    if (!in || magic != kGateMagic) throw Error("not a gate blob");
    get_tensor(in, wh_);
    get_tensor(in, bh_);
    get_tensor(in, wo_);
    get_tensor(in, bo_);
}

bool GateNetwork::params_equal(const GateNetwork& other) const {
    return wh_.v == other.wh_.v && bh_.v == other.bh_.v && wo_.v == other.wo_.v &&
           bo_.v == other.bo_.v;
}

}  // namespace manrec

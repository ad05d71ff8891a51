#include "manrec/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>

#include "nlohmann/json.hpp"

namespace manrec {

Variant parse_variant(const std::string& name) {
    std::string n;
    for (char c : name) n.push_back(c == '_' ? '-' : static_cast<char>(std::tolower(c)));
    if (n == "man") return Variant::man;
    if (n == "man-fixed") return Variant::man_fixed;
    if (n == "man-shallow") return Variant::man_shallow;
    if (n == "neural") return Variant::neural_only;
    if (n == "neural-fixed") return Variant::neural_fixed;
    if (n == "memory") return Variant::memory_only;
    if (n == "itemknn") return Variant::itemknn;
    if (n == "sknn") return Variant::sknn;
    if (n == "s-sknn") return Variant::s_sknn;
    throw Error("unknown variant '" + name + "'");
}

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::man: return "man";
        case Variant::man_fixed: return "man-fixed";
        case Variant::man_shallow: return "man-shallow";
        case Variant::neural_only: return "neural";
        case Variant::neural_fixed: return "neural-fixed";
        case Variant::memory_only: return "memory";
        case Variant::itemknn: return "itemknn";
        case Variant::sknn: return "sknn";
        case Variant::s_sknn: return "s-sknn";
    }
    throw Error("bad variant value");
}

std::pair<double, double> rank_metrics(std::int32_t rank, std::size_t k) {
    if (rank < 1) throw Error("ranks are 1-based");
    if (static_cast<std::size_t>(rank) > k) return {0.0, 0.0};
    return {1.0, 1.0 / static_cast<double>(rank)};
}

std::int32_t rank_dense(const std::vector<real>& p, ItemId target) {
    const auto t = static_cast<std::size_t>(target);
    const real pt = p[t];
    std::int32_t greater = 0, ties_before = 0;
    for (std::size_t j = 0; j < p.size(); ++j) {
        if (j == t) continue;
        if (p[j] > pt) greater += 1;
        else if (p[j] == pt && j < t) ties_before += 1;
    }
    return 1 + greater + ties_before;
}

std::int32_t rank_combined(const std::vector<real>& pn, const MemoryPrediction& pm, real w,
                           ItemId target) {
    if (pm.empty()) return rank_dense(pn, target);
    const std::size_t n = pn.size(), t = static_cast<std::size_t>(target);
    const real wm = real(1) - w;
    const real pt = w * pn[t] + wm * pm.prob_of(target);
    std::int32_t greater = 0, ties_before = 0;
    std::size_t mi = 0;
    const auto& ms = pm.probs;
    for (std::size_t j = 0; j < n; ++j) {
        while (mi < ms.size() && static_cast<std::size_t>(ms[mi].item) < j) ++mi;
        real pj = w * pn[j];
        if (mi < ms.size() && static_cast<std::size_t>(ms[mi].item) == j) pj += wm * ms[mi].p;
        if (j == t) continue;
        if (pj > pt) greater += 1;
        else if (pj == pt && j < t) ties_before += 1;
    }
    return 1 + greater + ties_before;
}

std::int32_t rank_sparse(const SparseScores& scores, ItemId target, std::size_t n_items) {
    real pt = 0;
    for (const auto& s : scores)
        if (s.item == target) {
            pt = s.p;
            break;
        }
    std::int32_t greater = 0, tie_scored_before = 0, scored_before = 0;
    for (const auto& s : scores) {
        if (s.item == target) continue;
        if (s.p > pt) greater += 1;
        else if (s.p == pt && s.item < target) tie_scored_before += 1;
        if (s.item < target) scored_before += 1;
    }
    std::int32_t ties = tie_scored_before;
    if (pt == real(0)) ties += target - scored_before;  // unscored items tie at zero
    (void)n_items;
    return 1 + greater + ties;
}

// ---- the prequential loop -------------------------------------------------------

namespace {

struct StreamEvent {
    std::uint32_t session;
    std::uint32_t t;
    std::int64_t ts;
};

double ms_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
        .count();
}

struct StrictChecker {
    const PrequentialConfig& cfg;
    std::int64_t last_ts = std::numeric_limits<std::int64_t>::min();

    void event(const StreamEvent& ev) {
        if (ev.ts < last_ts && !cfg.per_session_replay)
            throw Error("strict: stream timestamps regressed");
        last_ts = std::max(last_ts, ev.ts);
    }
    void memory_prediction(const MemoryPrediction& pm) const {
        if (pm.empty()) return;
        if (pm.probs.size() > cfg.k) throw Error("strict: memory support exceeds K");
        real sum = 0;
        for (const auto& s : pm.probs) {
            if (!(s.p >= 0) || !std::isfinite(s.p))
                throw Error("strict: memory probability is negative or non-finite");
            sum += s.p;
        }
        if (std::abs(double(sum) - 1.0) > 1e-6)
            throw Error("strict: memory prediction does not sum to 1");
    }
    void blended(const std::vector<real>& pn, const MemoryPrediction& pm, real w) const {
        if (!(w >= 0 && w <= 1)) throw Error("strict: gate weight outside [0,1]");
        real sn = 0;
        for (real p : pn) {
            if (!(p >= 0) || !std::isfinite(p))
                throw Error("strict: neural probability is negative or non-finite");
            sn += p;
        }
        real sm = 0;
        for (const auto& s : pm.probs) sm += s.p;
        const double total = pm.empty() ? double(sn) : double(w * sn + (real(1) - w) * sm);
        if (std::abs(total - 1.0) > 1e-6)
            throw Error("strict: blended distribution does not sum to 1");
    }
    void sparse(const SparseScores& scores) const {
        if (scores.empty()) return;
        real sum = 0;
        for (const auto& s : scores) {
            if (!(s.p >= 0) || !std::isfinite(s.p))
                throw Error("strict: baseline score is negative or non-finite");
            sum += s.p;
        }
        if (std::abs(double(sum) - 1.0) > 1e-6)
            throw Error("strict: baseline scores do not sum to 1");
    }
    void rank(std::int32_t r, std::size_t n) const {
        if (r < 1 || static_cast<std::size_t>(r) > n)
            throw Error("strict: rank outside [1, n]");
    }
};

struct Accumulator {
    double hit5 = 0, rr5 = 0, hit20 = 0, rr20 = 0;
    void add(std::int32_t rank) {
        const auto [h5, r5] = rank_metrics(rank, 5);
        const auto [h20, r20] = rank_metrics(rank, 20);
        hit5 += h5;
        rr5 += r5;
        hit20 += h20;
        rr20 += r20;
    }
    void remove(std::int32_t rank) {
        const auto [h5, r5] = rank_metrics(rank, 5);
        const auto [h20, r20] = rank_metrics(rank, 20);
        hit5 -= h5;
        rr5 -= r5;
        hit20 -= h20;
        rr20 -= r20;
    }
};

bool variant_uses_memory(Variant v) {
    return v == Variant::man || v == Variant::man_fixed || v == Variant::man_shallow ||
           v == Variant::memory_only;
}

bool variant_updates_neural(Variant v) {
    return v == Variant::man || v == Variant::man_shallow || v == Variant::neural_only;
}

bool variant_is_baseline(Variant v) {
    return v == Variant::itemknn || v == Variant::sknn || v == Variant::s_sknn;
}

}  // namespace

MetricsTimeline run_prequential(const ProcessedCorpus& pc, EvalBundle& bundle,
                                const PrequentialConfig& cfg,
                                const EventObserver& observer) {
    const auto test_idx = pc.sessions_of(Split::test);
    if (test_idx.empty()) throw Error("the corpus has no test sessions");

    // predicted clicks: every position after the first of each test session
    std::vector<StreamEvent> events;
    for (auto si : test_idx) {
        const auto& s = pc.corpus.sessions[si];
        for (std::size_t t = 1; t < s.items.size(); ++t)
            events.push_back({si, static_cast<std::uint32_t>(t), s.ts[t]});
    }
    if (cfg.per_session_replay) {
        std::stable_sort(events.begin(), events.end(),
                         [](const StreamEvent& a, const StreamEvent& b) {
                             if (a.session != b.session) return a.session < b.session;
                             return a.t < b.t;
                         });
    } else {
        std::stable_sort(events.begin(), events.end(),
                         [](const StreamEvent& a, const StreamEvent& b) {
                             if (a.ts != b.ts) return a.ts < b.ts;
                             if (a.session != b.session) return a.session < b.session;
                             return a.t < b.t;
                         });
    }

    // items observed during train+valid stay "old" for the whole stream
    std::vector<char> seen(pc.corpus.item_ids.size(), 0);
    for (std::size_t i = 0; i < pc.corpus.sessions.size(); ++i) {
        if (pc.split.assign[i] == Split::test) continue;
        for (ItemId it : pc.corpus.sessions[i].items) seen[static_cast<std::size_t>(it)] = 1;
    }

    const bool baseline = variant_is_baseline(cfg.variant);
    const bool uses_memory = variant_uses_memory(cfg.variant);
    const bool updates_neural = variant_updates_neural(cfg.variant);
    const bool updates_gate = cfg.variant == Variant::man && !cfg.force_gate;
    const bool has_gate_weight = cfg.variant == Variant::man ||
                                 cfg.variant == Variant::man_fixed ||
                                 cfg.variant == Variant::man_shallow;

    // corpus-id -> model-id translation, filled lazily through ensure_item
    std::vector<ItemId> c2m(pc.corpus.item_ids.size(), -1);
    auto model_id = [&](ItemId corpus_id) {
        ItemId& m = c2m[static_cast<std::size_t>(corpus_id)];
        if (m < 0)
            m = bundle.model.ensure_item(pc.corpus.item_ids[static_cast<std::size_t>(corpus_id)]);
        return m;
    };

    MetricsTimeline out;
    out.records.reserve(events.size());
    StrictChecker strict{cfg};
    Accumulator cum, window;

    std::vector<std::pair<std::vector<ItemId>, ItemId>> pending_pairs;
    std::vector<GateExample> pending_gate;
    std::vector<std::uint32_t> pending_sessions;  // completed, for the baselines
    double predict_ms = 0, update_ms = 0;
    std::size_t n_updates = 0, new_events = 0;

    auto flush_updates = [&]() {
        const auto t0 = std::chrono::steady_clock::now();
        if (!baseline) {
            if (updates_neural && !pending_pairs.empty())
                bundle.model.incremental_update(pending_pairs, cfg.eta);
            if (updates_gate && !pending_gate.empty())
                gate_incremental_step(bundle.gate, pending_gate, cfg.gate_lr);
        } else {
            for (auto si : pending_sessions) {
                const auto& items = pc.corpus.sessions[si].items;
                if (cfg.variant == Variant::itemknn)
                    bundle.itemknn.add_session(items);
                else
                    bundle.sknn.add_session(items);
            }
        }
        pending_pairs.clear();
        pending_gate.clear();
        pending_sessions.clear();
        update_ms += ms_since(t0);
        n_updates += 1;
    };

    auto emit_curve_point = [&](std::size_t n_done) {
        BatchPoint bp;
        bp.events = n_done;
        const double inv = 1.0 / static_cast<double>(n_done);
        bp.hr5 = cum.hit5 * inv;
        bp.mrr5 = cum.rr5 * inv;
        bp.hr20 = cum.hit20 * inv;
        bp.mrr20 = cum.rr20 * inv;
        const std::size_t w = std::min(n_done, cfg.metric_window);
        const double winv = 1.0 / static_cast<double>(w);
        bp.w_hr5 = window.hit5 * winv;
        bp.w_mrr5 = window.rr5 * winv;
        bp.w_hr20 = window.hit20 * winv;
        bp.w_mrr20 = window.rr20 * winv;
        out.curve.push_back(bp);
    };

    for (std::size_t ei = 0; ei < events.size(); ++ei) {
        const auto& ev = events[ei];
        const auto& sess = pc.corpus.sessions[ev.session];
        const ItemId target_corpus = sess.items[ev.t];
        if (cfg.strict) strict.event(ev);

        EventRecord rec;
        rec.ts = ev.ts;
        rec.session = ev.session;
        rec.position = ev.t;
        rec.target = target_corpus;
        rec.new_item = !seen[static_cast<std::size_t>(target_corpus)];
        rec.target_freq = pc.train_freq[static_cast<std::size_t>(target_corpus)];

        EventObservation obs;
        std::vector<real> context, pn;
        MemoryPrediction pm;
        SparseScores sparse;

        const auto t0 = std::chrono::steady_clock::now();
        if (baseline) {
            const std::span<const ItemId> prefix(sess.items.data(), ev.t);
            sparse = cfg.variant == Variant::itemknn ? bundle.itemknn.predict(prefix)
                                                     : bundle.sknn.predict(prefix);
            rec.rank = rank_sparse(sparse, target_corpus, pc.corpus.item_ids.size());
            if (cfg.strict) {
                strict.sparse(sparse);
                strict.rank(rec.rank, pc.corpus.item_ids.size());
            }
            obs.sparse = &sparse;
        } else {
            std::vector<ItemId> prefix(ev.t);
            for (std::size_t j = 0; j < ev.t; ++j) prefix[j] = model_id(sess.items[j]);
            const ItemId target = model_id(target_corpus);

            context = bundle.model.encode(prefix);
            pn = bundle.model.predict_from_context(context.data());
            if (uses_memory) pm = bundle.memory.predict(context.data(), cfg.k, cfg.nprobe);

            real w;
            if (cfg.variant == Variant::memory_only) {
                w = 0;
                rec.rank = rank_sparse(pm.probs, target, bundle.model.n_items());
            } else {
                if (cfg.force_gate) w = static_cast<real>(*cfg.force_gate);
                else if (cfg.variant == Variant::man_shallow)
                    w = static_cast<real>(cfg.shallow_lambda);
                else if (has_gate_weight)
                    w = bundle.gate.weight(context.data());
                else
                    w = 1;  // pure neural path
                rec.rank = rank_combined(pn, pm, w, target);
            }
            rec.gate = static_cast<float>(w);
            if (cfg.strict) {
                strict.memory_prediction(pm);
                if (cfg.variant != Variant::memory_only) strict.blended(pn, pm, w);
                strict.rank(rec.rank, bundle.model.n_items());
            }

            if (updates_neural) pending_pairs.emplace_back(prefix, target);
            if (updates_gate) {
                GateExample ex;
                ex.context = context;
                ex.pn = pn[static_cast<std::size_t>(target)];
                ex.pm_empty = pm.empty();
                ex.pm = ex.pm_empty ? real(0) : pm.prob_of(target);
                pending_gate.push_back(std::move(ex));
            }
            obs.context = &context;
            obs.pn = &pn;
            obs.pm = &pm;
            obs.gate = w;
        }
        predict_ms += ms_since(t0);

        // the event's own label enters the stores only after the prediction
        if (!baseline && uses_memory && cfg.insert_memory)
            bundle.memory.insert(context.data(), model_id(target_corpus));
        if (baseline && ev.t + 1 == sess.items.size())
            pending_sessions.push_back(ev.session);

        cum.add(rec.rank);
        window.add(rec.rank);
        if (out.records.size() >= cfg.metric_window)
            window.remove(out.records[out.records.size() - cfg.metric_window].rank);
        if (rec.new_item) new_events += 1;

        out.records.push_back(rec);
        if (observer) {
            obs.record = &out.records.back();
            observer(obs);
        }

        const std::size_t done = ei + 1;
        if (done % cfg.update_every == 0 || done == events.size()) {
            flush_updates();
            emit_curve_point(done);
        }
    }

    out.n_events = out.records.size();
    const double inv = 1.0 / static_cast<double>(out.n_events);
    out.hr5 = cum.hit5 * inv;
    out.mrr5 = cum.rr5 * inv;
    out.hr20 = cum.hit20 * inv;
    out.mrr20 = cum.rr20 * inv;
    out.new_event_fraction = static_cast<double>(new_events) * inv;
    out.mean_predict_ms = predict_ms * inv;
    out.mean_update_ms = n_updates ? update_ms / static_cast<double>(n_updates) : 0.0;
    return out;
}

// ---- analyses ---------------------------------------------------------------------

GateHistogram gate_histogram(const std::vector<EventRecord>& records) {
    GateHistogram h;
    for (const auto& r : records) {
        if (r.gate < 0) continue;
        auto bin = static_cast<std::size_t>(r.gate * GateHistogram::kBins);
        if (bin >= GateHistogram::kBins) bin = GateHistogram::kBins - 1;
        (r.new_item ? h.new_events : h.old_events)[bin] += 1;
    }
    return h;
}

std::vector<BucketRow> frequency_buckets(const std::vector<EventRecord>& records) {
    if (records.empty()) return {};
    std::vector<std::uint32_t> order(records.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::uint32_t>(i);
    std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
        if (records[a].target_freq != records[b].target_freq)
            return records[a].target_freq < records[b].target_freq;
        return records[a].target < records[b].target;
    });
    constexpr std::size_t kBuckets = 5;
    const std::size_t base = order.size() / kBuckets, extra = order.size() % kBuckets;
    std::vector<BucketRow> rows;
    std::size_t cursor = 0;
    for (std::size_t b = 0; b < kBuckets && cursor < order.size(); ++b) {
        const std::size_t take = base + (b < extra ? 1 : 0);
        if (take == 0) continue;
        BucketRow row;
        Accumulator acc;
        row.freq_lo = records[order[cursor]].target_freq;
        for (std::size_t i = 0; i < take; ++i) {
            const auto& r = records[order[cursor + i]];
            acc.add(r.rank);
            row.freq_hi = r.target_freq;
        }
        row.events = take;
        const double inv = 1.0 / static_cast<double>(take);
        row.hr5 = acc.hit5 * inv;
        row.mrr5 = acc.rr5 * inv;
        row.hr20 = acc.hit20 * inv;
        row.mrr20 = acc.rr20 * inv;
        rows.push_back(row);
        cursor += take;
    }
    return rows;
}

// ---- report files -------------------------------------------------------------------

namespace {

std::string csv_quote(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out.push_back('"');
    return out;
}

std::ofstream open_out(const std::filesystem::path& p) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw Error("cannot write " + p.string());
    out << std::setprecision(12);
    return out;
}

}  // namespace

void export_reports(const MetricsTimeline& timeline, const ProcessedCorpus& pc,
                    const PrequentialConfig& cfg, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const fs::path dir(out_dir);

    {
        auto out = open_out(dir / "records.csv");
        out << "event,ts,session,position,target_id,rank,gate,new_item,target_freq\n";
        for (std::size_t i = 0; i < timeline.records.size(); ++i) {
            const auto& r = timeline.records[i];
            out << i << ',' << r.ts << ',' << r.session << ',' << r.position << ','
                << csv_quote(pc.corpus.item_ids[static_cast<std::size_t>(r.target)]) << ','
                << r.rank << ',' << r.gate << ',' << (r.new_item ? 1 : 0) << ','
                << r.target_freq << '\n';
        }
    }
    {
        auto out = open_out(dir / "curve.csv");
        out << "events,hr5,mrr5,hr20,mrr20,w_hr5,w_mrr5,w_hr20,w_mrr20\n";
        for (const auto& bp : timeline.curve)
            out << bp.events << ',' << bp.hr5 << ',' << bp.mrr5 << ',' << bp.hr20 << ','
                << bp.mrr20 << ',' << bp.w_hr5 << ',' << bp.w_mrr5 << ',' << bp.w_hr20 << ','
                << bp.w_mrr20 << '\n';
    }
    {
        auto out = open_out(dir / "buckets.csv");
        out << "bucket,freq_lo,freq_hi,events,hr5,mrr5,hr20,mrr20\n";
        const auto rows = frequency_buckets(timeline.records);
        for (std::size_t b = 0; b < rows.size(); ++b) {
            const auto& r = rows[b];
            out << b << ',' << r.freq_lo << ',' << r.freq_hi << ',' << r.events << ','
                << r.hr5 << ',' << r.mrr5 << ',' << r.hr20 << ',' << r.mrr20 << '\n';
        }
    }
    const bool any_gate = std::any_of(timeline.records.begin(), timeline.records.end(),
                                      [](const EventRecord& r) { return r.gate >= 0; });
    if (any_gate) {
        auto out = open_out(dir / "gate_histogram.csv");
        out << "bin_lo,bin_hi,new_events,old_events\n";
        const auto h = gate_histogram(timeline.records);
        for (std::size_t b = 0; b < GateHistogram::kBins; ++b)
            out << static_cast<double>(b) / GateHistogram::kBins << ','
                << static_cast<double>(b + 1) / GateHistogram::kBins << ','
                << h.new_events[b] << ',' << h.old_events[b] << '\n';
    }
    {
        nlohmann::ordered_json j;
        j["variant"] = variant_name(cfg.variant);
        j["update_every"] = cfg.update_every;
        j["eta"] = cfg.eta;
        j["gate_lr"] = cfg.gate_lr;
        j["k"] = cfg.k;
        j["nprobe"] = cfg.nprobe;
        j["shallow_lambda"] = cfg.shallow_lambda;
        j["memory_capacity"] = cfg.memory_capacity;
        j["insert_memory"] = cfg.insert_memory;
        j["strict"] = cfg.strict;
        j["per_session_replay"] = cfg.per_session_replay;
        j["metric_window"] = cfg.metric_window;
        j["n_events"] = timeline.n_events;
        j["hr5"] = timeline.hr5;
        j["mrr5"] = timeline.mrr5;
        j["hr20"] = timeline.hr20;
        j["mrr20"] = timeline.mrr20;
        j["new_event_fraction"] = timeline.new_event_fraction;
        auto out = open_out(dir / "summary.json");
        out << j.dump(2) << '\n';
    }
    {
        auto out = open_out(dir / "timing.csv");
        out << "mean_predict_ms,mean_update_ms\n";
        out << timeline.mean_predict_ms << ',' << timeline.mean_update_ms << '\n';
    }
}

}  // namespace manrec

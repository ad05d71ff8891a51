#pragma once

#include <array>
#include <functional>
#include <optional>

#include "manrec/baselines.hpp"
#include "manrec/data.hpp"
#include "manrec/gating.hpp"

namespace manrec {

enum class Variant {
    man,          // full model: memory inserts, neural and gate updates
    man_fixed,    // frozen network and gate; memory keeps growing
    man_shallow,  // fixed scalar blend instead of the learned gate
    neural_only,  // no memory; neural updates
    neural_fixed, // no memory; frozen
    memory_only,  // frozen encoder feeding the memory; ranks from it alone
    itemknn,
    sknn,
    s_sknn,
};

Variant parse_variant(const std::string& name);
std::string variant_name(Variant v);

struct PrequentialConfig {
    Variant variant = Variant::man;
    std::size_t update_every = 100;  // events per incremental step
    double eta = 5e-4;               // neural SGD rate
    double gate_lr = 1e-3;
    std::size_t k = 50;      // neighbors per memory lookup
    std::size_t nprobe = 8;
    double shallow_lambda = 0.7;
    std::size_t memory_capacity = 0;  // informational; the store enforces it
    bool insert_memory = true;
    std::optional<double> force_gate;  // overrides the gate output when set
    bool strict = false;       // re-verify per-event invariants, throw on violation
    bool per_session_replay = false;  // contiguous sessions instead of global click order
    std::size_t metric_window = 10000;
    SknnConfig sknn;
};

struct EventRecord {
    std::int64_t ts = 0;
    std::uint32_t session = 0;   // corpus session index
    std::uint32_t position = 0;  // click index inside the session (the target's)
    ItemId target = 0;           // corpus dictionary id
    std::int32_t rank = 0;       // 1-based
    float gate = -1;             // blend weight; -1 when the variant has none
    bool new_item = false;       // target absent from train+valid
    std::int64_t target_freq = 0;
};

struct BatchPoint {
    std::size_t events = 0;
    double hr5 = 0, mrr5 = 0, hr20 = 0, mrr20 = 0;              // cumulative
    double w_hr5 = 0, w_mrr5 = 0, w_hr20 = 0, w_mrr20 = 0;      // sliding window
};

struct MetricsTimeline {
    std::vector<EventRecord> records;
    std::vector<BatchPoint> curve;
    double hr5 = 0, mrr5 = 0, hr20 = 0, mrr20 = 0;
    double new_event_fraction = 0;
    std::size_t n_events = 0;
    double mean_predict_ms = 0, mean_update_ms = 0;  // wall time, excluded from
                                                     // determinism comparisons
};

// hit indicator and reciprocal rank at a cutoff
std::pair<double, double> rank_metrics(std::int32_t rank, std::size_t k);

// rank = 1 + |{j : p_j > p_t}| + |{j < t : p_j == p_t}|
std::int32_t rank_dense(const std::vector<real>& p, ItemId target);
std::int32_t rank_sparse(const SparseScores& scores, ItemId target, std::size_t n_items);
// Blended rank without materializing the dense mixture.
std::int32_t rank_combined(const std::vector<real>& pn, const MemoryPrediction& pm, real w,
                           ItemId target);

// Everything one variant needs; unused members stay default-constructed.
struct EvalBundle {
    RecommenderModel model;
    MemoryStore memory;
    GateNetwork gate;
    bool has_gate = false;
    ItemKnnBaseline itemknn;
    SessionKnnBaseline sknn;
};

struct EventObservation {
    const std::vector<real>* context = nullptr;  // null for baseline variants
    const std::vector<real>* pn = nullptr;
    const MemoryPrediction* pm = nullptr;
    const SparseScores* sparse = nullptr;
    real gate = -1;
    const EventRecord* record = nullptr;
};
using EventObserver = std::function<void(const EventObservation&)>;

// Replays the test split one click at a time: predict, log, insert, and fold
// incremental updates every cfg.update_every events. Baselines fold completed
// sessions at the same cadence.
MetricsTimeline run_prequential(const ProcessedCorpus& pc, EvalBundle& bundle,
                                const PrequentialConfig& cfg,
                                const EventObserver& observer = {});

// ---- post-hoc analyses ---------------------------------------------------------

struct GateHistogram {
    static constexpr std::size_t kBins = 20;  // uniform over [0, 1]
    std::array<std::int64_t, kBins> new_events{};
    std::array<std::int64_t, kBins> old_events{};
};
GateHistogram gate_histogram(const std::vector<EventRecord>& records);

struct BucketRow {
    std::int64_t freq_lo = 0, freq_hi = 0;  // train-frequency range covered
    std::size_t events = 0;
    double hr5 = 0, mrr5 = 0, hr20 = 0, mrr20 = 0;
};
// Five equal-event-population buckets by target train frequency; bucket 0
// holds the least frequent targets.
std::vector<BucketRow> frequency_buckets(const std::vector<EventRecord>& records);

// records.csv, curve.csv, summary.json, buckets.csv, gate_histogram.csv,
// timing.csv. Everything except timing.csv is byte-deterministic for a fixed
// corpus, bundle, and config.
void export_reports(const MetricsTimeline& timeline, const ProcessedCorpus& pc,
                    const PrequentialConfig& cfg, const std::string& out_dir);

}  // namespace manrec

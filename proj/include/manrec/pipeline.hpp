#pragma once

#include "manrec/checkpoint.hpp"
#include "manrec/eval.hpp"

namespace manrec {

// End-to-end stages behind the command line interface. Every stage is a pure
// function of its input artifacts and options, so reruns with the same seed
// produce byte-identical outputs (wall-clock timing files aside).

struct PreprocessOptions {
    IngestConfig ingest;
    FilterConfig filter;
    double test_window_days = 1.0;
    double valid_fraction = 0.1;
};

struct PreprocessStats {
    std::size_t lines_read = 0, malformed = 0;
    std::size_t sessions = 0, items = 0;
    std::size_t n_train = 0, n_valid = 0, n_test = 0;
};

PreprocessStats preprocess_stage(const std::string& events_csv,
                                 const std::string& corpus_out,
                                 const PreprocessOptions& opt);

struct TrainOptions {
    RecommenderConfig model;
    IndexConfig index;
};

struct TrainStats {
    std::vector<TrainLogEntry> log;
    std::size_t memory_entries = 0;
    std::size_t vocab_size = 0;
};

// Pretrains the recommender on the train split, writes every training
// (context, next item) pair into a fresh memory, builds the ANN index over
// it, and saves both artifacts.
TrainStats train_stage(const std::string& corpus_path, const std::string& model_out,
                       const std::string& memory_out, const TrainOptions& opt);

struct GateTrainOptions {
    GateFitConfig fit;
    std::size_t k = 50;
    std::size_t nprobe = 8;
    // After fitting, fold the validation pairs into the memory and rewrite
    // its snapshot. Off by default so the gate's own training data never
    // sits in the store it was scored against.
    bool insert_valid = false;
};

std::vector<GateFitLogEntry> train_gate_stage(const std::string& corpus_path,
                                              const std::string& model_in,
                                              const std::string& memory_path,
                                              const std::string& model_out,
                                              const GateTrainOptions& opt);

// model/memory paths may be empty for the pure-baseline variants. Writes
// report files plus manifest.json into out_dir unless it is empty.
MetricsTimeline evaluate_stage(const std::string& corpus_path, const std::string& model_path,
                               const std::string& memory_path, const PrequentialConfig& cfg,
                               const std::string& out_dir);

// Renders evaluate_stage's machine-readable outputs as one text report.
void report_stage(const std::string& eval_dir, const std::string& out_path);

// helpers shared with the tests
std::vector<std::vector<ItemId>> sessions_as_model_ids(const ProcessedCorpus& pc, Split split,
                                                       const ItemVocabulary& vocab);
EvalBundle load_bundle(const std::string& model_path, const std::string& memory_path,
                       const ProcessedCorpus& pc, const PrequentialConfig& cfg);

}  // namespace manrec

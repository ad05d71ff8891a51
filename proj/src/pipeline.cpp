#include "manrec/pipeline.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "nlohmann/json.hpp"

namespace manrec {

namespace {

std::string model_config_json(const RecommenderConfig& m, const IndexConfig& ix) {
    nlohmann::ordered_json j;
    j["embed_dim"] = m.embed_dim;
    j["hidden_dim"] = m.hidden_dim;
    j["epochs"] = m.epochs;
    j["batch_size"] = m.batch_size;
    j["lr"] = m.lr;
    j["init_scale"] = m.init_scale;
    j["seed"] = m.seed;
    j["index"] = {{"nlist", ix.nlist},   {"m", ix.m},
                  {"bits", ix.bits},     {"kmeans_iters", ix.kmeans_iters},
                  {"seed", ix.seed},     {"use_pq", ix.use_pq},
                  {"default_nprobe", ix.default_nprobe}};
    return j.dump(2);
}

}  // namespace

std::vector<std::vector<ItemId>> sessions_as_model_ids(const ProcessedCorpus& pc, Split split,
                                                       const ItemVocabulary& vocab) {
    std::vector<std::vector<ItemId>> out;
    for (std::size_t i = 0; i < pc.corpus.sessions.size(); ++i) {
        if (pc.split.assign[i] != split) continue;
        const auto& s = pc.corpus.sessions[i];
        std::vector<ItemId> seq;
        seq.reserve(s.items.size());
        for (ItemId it : s.items) {
            const auto m = vocab.find(pc.corpus.item_ids[static_cast<std::size_t>(it)]);
            if (!m) throw Error("item missing from the model vocabulary");
            seq.push_back(*m);
        }
        out.push_back(std::move(seq));
    }
    return out;
}

PreprocessStats preprocess_stage(const std::string& events_csv,
                                 const std::string& corpus_out,
                                 const PreprocessOptions& opt) {
    std::ifstream in(events_csv, std::ios::binary);
    if (!in) throw Error("cannot open events file " + events_csv);
    const auto ingest = ingest_events(in, opt.ingest);
    auto corpus = build_and_filter_sessions(ingest.events, opt.filter);
    if (corpus.sessions.empty())
        throw Error("no sessions survive filtering; check the support/length settings");
    const auto window_ms =
        static_cast<std::int64_t>(std::llround(opt.test_window_days * 86400.0 * 1000.0));
    auto split = temporal_split(corpus, window_ms, opt.valid_fraction);
    auto pc = finalize_split(std::move(corpus), std::move(split));
    save_processed_corpus(corpus_out, pc);

    PreprocessStats st;
    st.lines_read = ingest.lines_read;
    st.malformed = ingest.malformed;
    st.sessions = pc.corpus.sessions.size();
    st.items = pc.corpus.item_ids.size();
    st.n_train = pc.split.n_train;
    st.n_valid = pc.split.n_valid;
    st.n_test = pc.split.n_test;
    return st;
}

TrainStats train_stage(const std::string& corpus_path, const std::string& model_out,
                       const std::string& memory_out, const TrainOptions& opt) {
    const auto pc = load_processed_corpus(corpus_path);
    auto vocab = build_model_vocab(pc);
    if (vocab.size() == 0) throw Error("empty model vocabulary; was the corpus split?");

    RecommenderModel model(std::move(vocab), opt.model);
    const auto train_seqs = sessions_as_model_ids(pc, Split::train, model.vocab());
    const auto valid_seqs = sessions_as_model_ids(pc, Split::valid, model.vocab());

    TrainStats st;
    st.log = model.pretrain(train_seqs, valid_seqs);
    st.vocab_size = model.n_items();

    // every training transition becomes a memory entry keyed by the frozen
    // post-training context
    MemoryConfig mc;
    mc.dim = model.hidden_dim();
    MemoryStore memory(mc);
    for (const auto& seq : train_seqs) {
        if (seq.size() < 2) continue;
        for (std::size_t t = 1; t < seq.size(); ++t) {
            const auto c = model.encode(std::span<const ItemId>(seq.data(), t));
            memory.insert(c.data(), seq[t]);
        }
    }
    if (memory.total_inserted() == 0)
        throw Error("no training pairs; memory would be empty");
    IndexConfig ix = opt.index;
    ix.keep_raw_keys = true;
    memory.rebuild_index(ix);
    st.memory_entries = memory.live_count();

    save_model_checkpoint(model_out, model, nullptr, model_config_json(opt.model, opt.index));
    save_memory_snapshot(memory_out, memory);
    return st;
}

std::vector<GateFitLogEntry> train_gate_stage(const std::string& corpus_path,
                                              const std::string& model_in,
                                              const std::string& memory_path,
                                              const std::string& model_out,
                                              const GateTrainOptions& opt) {
    const auto pc = load_processed_corpus(corpus_path);
    auto loaded = load_model_checkpoint(model_in);
    auto memory = load_memory_snapshot(memory_path);

    const auto valid_seqs = sessions_as_model_ids(pc, Split::valid, loaded.model.vocab());
    const auto examples =
        build_gate_examples(loaded.model, memory, valid_seqs, opt.k, opt.nprobe);
    if (examples.empty())
        throw Error("the validation split yields no gate examples; "
                    "re-run preprocessing with a validation fraction");
    auto fit = fit_gating(loaded.model.hidden_dim(), examples, opt.fit);

    save_model_checkpoint(model_out, loaded.model, &fit.gate, loaded.config_json);
    if (opt.insert_valid) {
        for (const auto& seq : valid_seqs) {
            if (seq.size() < 2) continue;
            for (std::size_t t = 1; t < seq.size(); ++t) {
                const auto c = loaded.model.encode(std::span<const ItemId>(seq.data(), t));
                memory.insert(c.data(), seq[t]);
            }
        }
        save_memory_snapshot(memory_path, memory);
    }
    return fit.log;
}

EvalBundle load_bundle(const std::string& model_path, const std::string& memory_path,
                       const ProcessedCorpus& pc, const PrequentialConfig& cfg) {
    EvalBundle bundle;
    const bool baseline = cfg.variant == Variant::itemknn || cfg.variant == Variant::sknn ||
                          cfg.variant == Variant::s_sknn;
    if (baseline) {
        SknnConfig sc = cfg.sknn;
        sc.sequential_weighting = cfg.variant == Variant::s_sknn;
        bundle.sknn = SessionKnnBaseline(sc);
        for (std::size_t i = 0; i < pc.corpus.sessions.size(); ++i) {
            if (pc.split.assign[i] == Split::test) continue;
            const auto& items = pc.corpus.sessions[i].items;
            if (cfg.variant == Variant::itemknn)
                bundle.itemknn.add_session(items);
            else
                bundle.sknn.add_session(items);
        }
        return bundle;
    }

    if (model_path.empty()) throw Error("this variant needs a model checkpoint; run train");
    auto loaded = load_model_checkpoint(model_path);
    bundle.model = std::move(loaded.model);

    const bool needs_gate = cfg.variant == Variant::man || cfg.variant == Variant::man_fixed;
    if (needs_gate && !cfg.force_gate) {
        if (!loaded.gate)
            throw Error("checkpoint has no fitted gate; run train-gate first");
        bundle.gate = std::move(*loaded.gate);
        bundle.has_gate = true;
    }

    const bool needs_memory = cfg.variant == Variant::man ||
                              cfg.variant == Variant::man_fixed ||
                              cfg.variant == Variant::man_shallow ||
                              cfg.variant == Variant::memory_only;
    if (needs_memory) {
        if (memory_path.empty())
            throw Error("this variant needs a memory snapshot; run train");
        auto memory = load_memory_snapshot(memory_path);
        if (cfg.memory_capacity != 0 &&
            memory.config().capacity != cfg.memory_capacity) {
            // re-window the snapshot into a bounded ring with the same index shape
            if (!memory.config().store_raw_keys)
                throw Error("bounded evaluation needs raw keys in the snapshot");
            MemoryConfig mc = memory.config();
            mc.capacity = cfg.memory_capacity;
            MemoryStore bounded(mc);
            for (SlotId s = memory.first_live(); s < memory.total_inserted(); ++s)
                bounded.insert(memory.key_ptr(s), memory.value_of(s));
            if (memory.has_index()) bounded.rebuild_index(memory.index().config());
            memory = std::move(bounded);
        }
        bundle.memory = std::move(memory);
    }
    return bundle;
}

MetricsTimeline evaluate_stage(const std::string& corpus_path, const std::string& model_path,
                               const std::string& memory_path, const PrequentialConfig& cfg,
                               const std::string& out_dir) {
    const auto pc = load_processed_corpus(corpus_path);
    auto bundle = load_bundle(model_path, memory_path, pc, cfg);
    auto timeline = run_prequential(pc, bundle, cfg);
    if (!out_dir.empty()) {
        export_reports(timeline, pc, cfg, out_dir);
        nlohmann::ordered_json manifest;
        manifest["corpus"] = corpus_path;
        manifest["model"] = model_path;
        manifest["memory"] = memory_path;
        manifest["variant"] = variant_name(cfg.variant);
        manifest["outputs"] = {"records.csv", "curve.csv",      "buckets.csv",
                               "summary.json", "gate_histogram.csv", "timing.csv"};
        std::ofstream out(std::filesystem::path(out_dir) / "manifest.json",
                          std::ios::binary);
        out << manifest.dump(2) << '\n';
    }
    return timeline;
}

// ---- report rendering ----------------------------------------------------------

namespace {

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw Error("cannot open " + p.string());
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::vector<std::string> row;
        std::string field;
        bool quoted = false;
        for (std::size_t i = 0; i < line.size(); ++i) {
            const char c = line[i];
            if (quoted) {
                if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else if (c == '"') {
                    quoted = false;
                } else {
                    field.push_back(c);
                }
            } else if (c == '"' && field.empty()) {
                quoted = true;
            } else if (c == ',') {
                row.push_back(std::move(field));
                field.clear();
            } else {
                field.push_back(c);
            }
        }
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace

void report_stage(const std::string& eval_dir, const std::string& out_path) {
    namespace fs = std::filesystem;
    const fs::path dir(eval_dir);
    std::ifstream sj(dir / "summary.json", std::ios::binary);
    if (!sj) throw Error("no summary.json in " + eval_dir + "; run evaluate first");
    nlohmann::json summary = nlohmann::json::parse(sj);

    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw Error("cannot write " + out_path);
    out << std::fixed << std::setprecision(4);

    out << "prequential evaluation: " << summary["variant"].get<std::string>() << "\n";
    out << "events: " << summary["n_events"].get<std::size_t>() << "  new-item fraction: "
        << summary["new_event_fraction"].get<double>() << "\n\n";
    out << "  metric    @5        @20\n";
    out << "  HR        " << summary["hr5"].get<double>() << "    "
        << summary["hr20"].get<double>() << "\n";
    out << "  MRR       " << summary["mrr5"].get<double>() << "    "
        << summary["mrr20"].get<double>() << "\n\n";

    const auto buckets = read_csv(dir / "buckets.csv");
    out << "frequency buckets (1 = least frequent targets)\n";
    out << "  bucket  freq range         events    HR@5     MRR@5\n";
    for (std::size_t i = 1; i < buckets.size(); ++i) {
        const auto& r = buckets[i];
        out << "  " << std::setw(6) << (std::stoul(r[0]) + 1) << "  " << std::setw(7) << r[1]
            << " .. " << std::setw(7) << r[2] << "  " << std::setw(6) << r[3] << "  "
            << std::setw(6) << std::stod(r[4]) << "  " << std::setw(6) << std::stod(r[5])
            << "\n";
    }
    out << "\n";

    if (fs::exists(dir / "gate_histogram.csv")) {
        const auto hist = read_csv(dir / "gate_histogram.csv");
        out << "gate weight histogram (20 bins over [0,1])\n";
        out << "  bin             new items  known items\n";
        for (std::size_t i = 1; i < hist.size(); ++i) {
            const auto& r = hist[i];
            char bin[32];
            std::snprintf(bin, sizeof bin, "[%.2f, %.2f)", std::stod(r[0]), std::stod(r[1]));
            out << "  " << std::left << std::setw(13) << bin << std::right << "  "
                << std::setw(9) << r[2] << "  " << std::setw(11) << r[3] << "\n";
        }
        out << "\n";
    }

    const auto curve = read_csv(dir / "curve.csv");
    if (curve.size() > 1) {
        out << "cumulative HR@5 over the stream\n";
        const std::size_t n_rows = curve.size() - 1;
        const std::size_t step = std::max<std::size_t>(1, n_rows / 10);
        for (std::size_t i = 1; i < curve.size(); i += step)
            out << "  after " << std::setw(8) << curve[i][0]
                << " events: " << std::stod(curve[i][1]) << "\n";
        out << "  final: " << std::stod(curve.back()[1]) << "\n";
    }
}

}  // namespace manrec

#include <cstdio>
#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "manrec/pipeline.hpp"

namespace {

using namespace manrec;

// exit codes: 0 success, 1 operational failure, 2 usage error

void require_artifact(const std::string& path, const std::string& what,
                      const std::string& producer) {
    if (!std::filesystem::exists(path))
        throw Error(what + " '" + path + "' not found; produce it with 'manrec " + producer +
                    "'");
}

int cmd_preprocess(const std::string& input, const std::string& output,
                   const PreprocessOptions& opt) {
    require_artifact(input, "events file", "preprocess --input <your click log>");
    PreprocessStats st = preprocess_stage(input, output, opt);
    std::printf("read %zu lines (%zu malformed)\n", st.lines_read, st.malformed);
    std::printf("kept %zu sessions over %zu items\n", st.sessions, st.items);
    std::printf("split train=%zu valid=%zu test=%zu\n", st.n_train, st.n_valid, st.n_test);
    std::printf("wrote %s\n", output.c_str());
    return 0;
}

int cmd_train(const std::string& corpus, const std::string& model_out,
              const std::string& memory_out, const TrainOptions& opt) {
    require_artifact(corpus, "corpus", "preprocess");
    TrainStats st = train_stage(corpus, model_out, memory_out, opt);
    for (const auto& e : st.log)
        std::printf("epoch %zu  train loss %.6f  valid loss %.6f\n", e.epoch, e.train_loss,
                    e.valid_loss);
    std::printf("vocabulary %zu items, memory %zu entries\n", st.vocab_size, st.memory_entries);
    std::printf("wrote %s and %s\n", model_out.c_str(), memory_out.c_str());
    return 0;
}

int cmd_train_gate(const std::string& corpus, const std::string& model_in,
                   const std::string& memory, const std::string& model_out,
                   const GateTrainOptions& opt) {
    require_artifact(corpus, "corpus", "preprocess");
    require_artifact(model_in, "model checkpoint", "train");
    require_artifact(memory, "memory snapshot", "train");
    auto log = train_gate_stage(corpus, model_in, memory, model_out, opt);
    for (const auto& e : log)
        std::printf("epoch %zu  train loss %.6f  heldout loss %.6f\n", e.epoch, e.train_loss,
                    e.heldout_loss);
    std::printf("wrote %s\n", model_out.c_str());
    return 0;
}

int cmd_evaluate(const std::string& corpus, const std::string& model,
                 const std::string& memory, const std::string& out_dir,
                 const PrequentialConfig& cfg) {
    require_artifact(corpus, "corpus", "preprocess");
    if (!model.empty()) require_artifact(model, "model checkpoint", "train");
    if (!memory.empty()) require_artifact(memory, "memory snapshot", "train");
    MetricsTimeline t = evaluate_stage(corpus, model, memory, cfg, out_dir);
    std::printf("%s over %zu events\n", variant_name(cfg.variant).c_str(), t.n_events);
    std::printf("hr@5 %.6f  mrr@5 %.6f  hr@20 %.6f  mrr@20 %.6f\n", t.hr5, t.mrr5, t.hr20,
                t.mrr20);
    std::printf("new-item events %.4f, mean predict %.3f ms, mean update %.3f ms\n",
                t.new_event_fraction, t.mean_predict_ms, t.mean_update_ms);
    std::printf("reports in %s\n", out_dir.c_str());
    return 0;
}

int cmd_report(const std::string& eval_dir, const std::string& out_path) {
    require_artifact(eval_dir, "evaluation directory", "evaluate");
    report_stage(eval_dir, out_path);
    std::printf("wrote %s\n", out_path.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"incremental session recommender with a nonparametric memory"};
    app.require_subcommand(1);

    // preprocess ----------------------------------------------------------
    std::string pp_in, pp_out;
    PreprocessOptions pp;
    std::string ts_format = "auto";
    auto* pre = app.add_subcommand("preprocess", "ingest a click log into a corpus artifact");
    pre->add_option("--input", pp_in, "raw events csv")->required();
    pre->add_option("--output", pp_out, "corpus artifact to write")->required();
    pre->add_option("--delimiter", pp.ingest.delimiter, "field separator");
    pre->add_flag("--header", pp.ingest.has_header, "skip the first line");
    pre->add_option("--col-session", pp.ingest.col_session, "session id column");
    pre->add_option("--col-time", pp.ingest.col_time, "timestamp column");
    pre->add_option("--col-item", pp.ingest.col_item, "item id column");
    pre->add_option("--ts-format", ts_format, "auto|iso8601|epoch-s|epoch-ms");
    pre->add_flag("--strict", pp.ingest.strict, "fail on the first malformed row");
    pre->add_option("--min-support", pp.filter.min_item_support, "minimum item event count");
    pre->add_option("--min-len", pp.filter.min_session_len, "minimum session length");
    pre->add_option("--max-len", pp.filter.max_session_len, "maximum session length");
    pre->add_option("--test-window-days", pp.test_window_days, "trailing test window");
    pre->add_option("--valid-fraction", pp.valid_fraction, "validation share of pretest sessions");

    // train ---------------------------------------------------------------
    std::string tr_corpus, tr_model, tr_memory;
    TrainOptions tr;
    bool no_pq = false;
    auto* trn = app.add_subcommand("train", "pretrain the network and build the memory");
    trn->add_option("--corpus", tr_corpus)->required();
    trn->add_option("--model", tr_model, "model checkpoint to write")->required();
    trn->add_option("--memory", tr_memory, "memory snapshot to write")->required();
    trn->add_option("--embed", tr.model.embed_dim);
    trn->add_option("--hidden", tr.model.hidden_dim);
    trn->add_option("--epochs", tr.model.epochs);
    trn->add_option("--batch", tr.model.batch_size);
    trn->add_option("--lr", tr.model.lr, "Adam step size");
    trn->add_option("--seed", tr.model.seed);
    trn->add_option("--nlist", tr.index.nlist, "coarse lists; 0 picks sqrt(n)");
    trn->add_option("--pq-m", tr.index.m, "code subspaces");
    trn->add_option("--pq-bits", tr.index.bits, "bits per subspace");
    trn->add_option("--kmeans-iters", tr.index.kmeans_iters);
    trn->add_option("--nprobe", tr.index.default_nprobe);
    trn->add_flag("--no-pq", no_pq, "store raw vectors in the lists");

    // train-gate ----------------------------------------------------------
    std::string tg_corpus, tg_model_in, tg_memory, tg_model_out;
    GateTrainOptions tg;
    auto* gat = app.add_subcommand("train-gate", "fit the blend gate on the validation split");
    gat->add_option("--corpus", tg_corpus)->required();
    gat->add_option("--model", tg_model_in, "checkpoint from train")->required();
    gat->add_option("--memory", tg_memory, "snapshot from train")->required();
    gat->add_option("--output", tg_model_out, "checkpoint to write (gate included)")->required();
    gat->add_option("--gate-hidden", tg.fit.hidden_dim);
    gat->add_option("--gate-lr", tg.fit.lr);
    gat->add_option("--heldout", tg.fit.heldout_fraction);
    gat->add_option("--patience", tg.fit.patience);
    gat->add_option("--max-epochs", tg.fit.max_epochs);
    gat->add_option("--batch", tg.fit.batch_size);
    gat->add_option("--seed", tg.fit.seed);
    gat->add_option("--k", tg.k, "memory neighbors per example");
    gat->add_option("--nprobe", tg.nprobe);
    gat->add_flag("--insert-valid", tg.insert_valid,
                  "fold validation pairs into the memory after fitting");

    // evaluate --------------------------------------------------------------
    std::string ev_corpus, ev_model, ev_memory, ev_out, ev_variant = "man";
    PrequentialConfig ev;
    double force_gate = -1;
    auto* evl = app.add_subcommand("evaluate", "prequential replay over the test split");
    evl->add_option("--corpus", ev_corpus)->required();
    evl->add_option("--out", ev_out, "report directory")->required();
    evl->add_option("--variant", ev_variant,
                    "man|man-fixed|man-shallow|neural|neural-fixed|memory|itemknn|sknn|s-sknn");
    evl->add_option("--model", ev_model, "checkpoint (neural variants)");
    evl->add_option("--memory", ev_memory, "snapshot (memory variants)");
    evl->add_option("--eta", ev.eta, "incremental SGD rate");
    evl->add_option("--gate-lr", ev.gate_lr);
    evl->add_option("--k", ev.k, "memory neighbors per prediction");
    evl->add_option("--nprobe", ev.nprobe);
    evl->add_option("--update-every", ev.update_every, "events per incremental step");
    evl->add_option("--lambda", ev.shallow_lambda, "fixed blend weight (man-shallow)");
    evl->add_option("--capacity", ev.memory_capacity, "bound the memory; 0 keeps it unbounded");
    evl->add_option("--window", ev.metric_window, "sliding metric window");
    evl->add_option("--force-gate", force_gate, "override the gate with a constant in [0,1]");
    evl->add_flag("--strict", ev.strict, "re-verify per-event invariants");
    evl->add_flag("--per-session", ev.per_session_replay, "replay whole sessions in order");
    evl->add_option("--sknn-pool", ev.sknn.pool, "recent sessions retained");
    evl->add_option("--sknn-sessions", ev.sknn.k_sessions, "neighbor sessions blended");

    // report ----------------------------------------------------------------
    std::string rp_dir, rp_out;
    auto* rep = app.add_subcommand("report", "render an evaluation directory as text");
    rep->add_option("--eval", rp_dir, "directory written by evaluate")->required();
    rep->add_option("--output", rp_out, "text report path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (pre->parsed()) {
            auto fmt = parse_ts_format(ts_format);
            if (!fmt) {
                std::cerr << "error: unknown --ts-format '" << ts_format << "'\n";
                return 2;
            }
            pp.ingest.ts_format = *fmt;
            return cmd_preprocess(pp_in, pp_out, pp);
        }
        if (trn->parsed()) {
            tr.index.use_pq = !no_pq;
            tr.index.seed = tr.model.seed;
            return cmd_train(tr_corpus, tr_model, tr_memory, tr);
        }
        if (gat->parsed()) return cmd_train_gate(tg_corpus, tg_model_in, tg_memory, tg_model_out, tg);
        if (evl->parsed()) {
            try {
                ev.variant = parse_variant(ev_variant);
            } catch (const Error& e) {
                std::cerr << "error: " << e.what() << "\n";
                return 2;
            }
            if (evl->count("--force-gate")) {
                if (force_gate < 0 || force_gate > 1) {
                    std::cerr << "error: --force-gate must lie in [0, 1]\n";
                    return 2;
                }
                ev.force_gate = force_gate;
            }
            return cmd_evaluate(ev_corpus, ev_model, ev_memory, ev_out, ev);
        }
        if (rep->parsed()) return cmd_report(rp_dir, rp_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

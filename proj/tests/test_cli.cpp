#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"

namespace fs = std::filesystem;

namespace {

struct RunResult {
    int exit_code = -1;
    std::string output;  // stdout and stderr interleaved
};

// ctest sets MANREC_CLI and MANREC_DATA; a bare run of the test binary skips
// this suite rather than failing on the missing environment
bool cli_available() {
    static const bool ok = [] {
        if (std::getenv("MANREC_CLI") && std::getenv("MANREC_DATA")) return true;
        MESSAGE("MANREC_CLI/MANREC_DATA not set; skipping the command line suite");
        return false;
    }();
    return ok;
}

#define NEEDS_CLI() \
    if (!cli_available()) return

std::string cli_binary() {
    const char* p = std::getenv("MANREC_CLI");
    REQUIRE_MESSAGE(p != nullptr, "MANREC_CLI must point at the built binary");
    return p;
}

std::string data_dir() {
    const char* p = std::getenv("MANREC_DATA");
    REQUIRE_MESSAGE(p != nullptr, "MANREC_DATA must point at the repo data directory");
    return p;
}

RunResult run(const std::string& args) {
    const std::string cmd = cli_binary() + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    RunResult r;
    char buf[4096];
    while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) r.output.append(buf, n);
    const int status = pclose(pipe);
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// one pipeline shared by every case that needs artifacts; built on first use
struct Workspace {
    fs::path dir;
    std::string corpus, model, memory, gated;

    Workspace() {
        dir = fs::temp_directory_path() / ("manrec_cli_" + std::to_string(::getpid()));
        fs::remove_all(dir);
        fs::create_directories(dir);
        corpus = (dir / "corpus.txt").string();
        model = (dir / "model.ckpt").string();
        memory = (dir / "memory.ckpt").string();
        gated = (dir / "gated.ckpt").string();
    }
    ~Workspace() { fs::remove_all(dir); }
};

Workspace& ws() {
    static Workspace w;
    return w;
}

const std::string kTrainFlags = " --embed 16 --hidden 24 --epochs 3 --batch 64 --seed 5";

void ensure_pipeline() {
    if (fs::exists(ws().gated)) return;
    auto pre = run("preprocess --input " + data_dir() + "/toy_clicks.csv --output " +
                   ws().corpus + " --header --test-window-days 1.2");
    REQUIRE_MESSAGE(pre.exit_code == 0, pre.output);
    auto tr = run("train --corpus " + ws().corpus + " --model " + ws().model + " --memory " +
                  ws().memory + kTrainFlags);
    REQUIRE_MESSAGE(tr.exit_code == 0, tr.output);
    auto gt = run("train-gate --corpus " + ws().corpus + " --model " + ws().model +
                  " --memory " + ws().memory + " --output " + ws().gated +
                  " --gate-hidden 8 --max-epochs 3 --seed 5");
    REQUIRE_MESSAGE(gt.exit_code == 0, gt.output);
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("usage errors exit 2 before touching any artifact") {
    NEEDS_CLI();
    CHECK(run("").exit_code == 2);                       // no subcommand
    CHECK(run("frobnicate").exit_code == 2);             // unknown subcommand
    CHECK(run("preprocess --output x.txt").exit_code == 2);  // missing required option
    CHECK(run("--help").exit_code == 0);
    CHECK(run("evaluate --help").exit_code == 0);

    auto fmt = run("preprocess --input a --output b --ts-format epoch-us");
    CHECK(fmt.exit_code == 2);
    CHECK(fmt.output.find("epoch-us") != std::string::npos);

    auto var = run("evaluate --corpus c --out o --variant gru4rec");
    CHECK(var.exit_code == 2);
    CHECK(var.output.find("gru4rec") != std::string::npos);

    CHECK(run("evaluate --corpus c --out o --force-gate 1.5").exit_code == 2);
}

TEST_CASE("missing artifacts exit 1 and name the producing command") {
    NEEDS_CLI();
    auto r1 = run("train --corpus /no/such/corpus.txt --model m --memory mm");
    CHECK(r1.exit_code == 1);
    CHECK(r1.output.find("manrec preprocess") != std::string::npos);

    auto r2 = run("evaluate --corpus /no/such/corpus.txt --out " + (ws().dir / "x").string());
    CHECK(r2.exit_code == 1);

    ensure_pipeline();
    auto r3 = run("evaluate --corpus " + ws().corpus + " --model /no/model.ckpt --memory " +
                  ws().memory + " --out " + (ws().dir / "x").string());
    CHECK(r3.exit_code == 1);
    CHECK(r3.output.find("manrec train") != std::string::npos);

    auto r4 = run("report --eval /no/such/dir --output " + (ws().dir / "r.txt").string());
    CHECK(r4.exit_code == 1);
    CHECK(r4.output.find("manrec evaluate") != std::string::npos);
}

TEST_CASE("the full pipeline runs and its artifacts line up") {
    NEEDS_CLI();
    ensure_pipeline();
    CHECK(fs::exists(ws().corpus));
    CHECK(fs::exists(ws().model));
    CHECK(fs::exists(ws().memory));
    CHECK(fs::exists(ws().gated));

    const auto out = (ws().dir / "out-man").string();
    auto ev = run("evaluate --corpus " + ws().corpus + " --model " + ws().gated +
                  " --memory " + ws().memory + " --out " + out + " --update-every 50");
    REQUIRE_MESSAGE(ev.exit_code == 0, ev.output);
    CHECK(ev.output.find("man over") != std::string::npos);
    for (const char* f : {"records.csv", "curve.csv", "buckets.csv", "summary.json",
                          "gate_histogram.csv", "timing.csv", "manifest.json"})
        CHECK(fs::exists(fs::path(out) / f));

    auto rep = run("report --eval " + out + " --output " + (ws().dir / "report.txt").string());
    REQUIRE_MESSAGE(rep.exit_code == 0, rep.output);
    const auto text = slurp(ws().dir / "report.txt");
    CHECK(text.find("prequential evaluation: man") != std::string::npos);
    CHECK(text.find("HR") != std::string::npos);
    CHECK(text.find("frequency buckets") != std::string::npos);
    CHECK(text.find("gate weight histogram") != std::string::npos);
}

TEST_CASE("an ungated checkpoint cannot run the gated variant") {
    NEEDS_CLI();
    ensure_pipeline();
    auto r = run("evaluate --corpus " + ws().corpus + " --model " + ws().model + " --memory " +
                 ws().memory + " --out " + (ws().dir / "out-ungated").string());
    CHECK(r.exit_code == 1);
    CHECK(r.output.find("train-gate") != std::string::npos);

    // forcing the gate sidesteps the need for a fitted one
    auto forced = run("evaluate --corpus " + ws().corpus + " --model " + ws().model +
                      " --memory " + ws().memory + " --out " +
                      (ws().dir / "out-forced").string() + " --force-gate 0.5");
    CHECK(forced.exit_code == 0);
}

TEST_CASE("baselines run without model or memory artifacts") {
    NEEDS_CLI();
    ensure_pipeline();
    for (const char* v : {"itemknn", "sknn", "s-sknn"}) {
        const auto out = (ws().dir / (std::string("out-") + v)).string();
        auto r = run("evaluate --corpus " + ws().corpus + " --variant " + v + " --out " + out);
        REQUIRE_MESSAGE(r.exit_code == 0, r.output);
        CHECK(fs::exists(fs::path(out) / "summary.json"));
        CHECK_FALSE(fs::exists(fs::path(out) / "gate_histogram.csv"));
    }
}

TEST_CASE("identical invocations produce byte-identical reports") {
    NEEDS_CLI();
    ensure_pipeline();
    const auto a = (ws().dir / "det-a").string(), b = (ws().dir / "det-b").string();
    const std::string tail = " --update-every 50 --strict";
    auto r1 = run("evaluate --corpus " + ws().corpus + " --model " + ws().gated + " --memory " +
                  ws().memory + " --out " + a + tail);
    auto r2 = run("evaluate --corpus " + ws().corpus + " --model " + ws().gated + " --memory " +
                  ws().memory + " --out " + b + tail);
    REQUIRE(r1.exit_code == 0);
    REQUIRE(r2.exit_code == 0);
    for (const char* f : {"records.csv", "curve.csv", "buckets.csv", "summary.json",
                          "gate_histogram.csv"})
        CHECK_MESSAGE(slurp(fs::path(a) / f) == slurp(fs::path(b) / f), f);
}

TEST_CASE("strict replay holds for every variant on the toy stream") {
    NEEDS_CLI();
    ensure_pipeline();
    for (const char* v : {"man-fixed", "man-shallow", "neural", "neural-fixed", "memory"}) {
        const auto out = (ws().dir / (std::string("strict-") + v)).string();
        auto r = run("evaluate --corpus " + ws().corpus + " --model " + ws().gated +
                     " --memory " + ws().memory + " --variant " + v + " --out " + out +
                     " --strict");
        REQUIRE_MESSAGE(r.exit_code == 0, (std::string(v) + ": " + r.output));
    }
}

}  // TEST_SUITE

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <chrono>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "geomeld/tile_io.hpp"

using namespace geomeld;
namespace fs = std::filesystem;

#ifndef GEOMELD_CLI_BIN
#error "GEOMELD_CLI_BIN must point at the geomeld executable"
#endif

namespace {

struct RunOutput {
    int exit_code = -1;
    std::string out;
    std::string err;
};

RunOutput run_cli(const std::string& args) {
    const fs::path dir = fs::temp_directory_path() / "geomeld_cli_io";
    fs::create_directories(dir);
    const std::string out_path = (dir / "stdout.txt").string();
    const std::string err_path = (dir / "stderr.txt").string();
    const std::string cmd =
        std::string(GEOMELD_CLI_BIN) + " " + args + " >" + out_path + " 2>" + err_path;
    const int status = std::system(cmd.c_str());
    RunOutput r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    auto slurp = [](const std::string& p) {
        std::ifstream f(p);
        std::ostringstream os;
        os << f.rdbuf();
        return os.str();
    };
    r.out = slurp(out_path);
    r.err = slurp(err_path);
    return r;
}

std::vector<uint8_t> file_bytes(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

int count_lines(const fs::path& p) {
    std::ifstream f(p);
    int n = 0;
    std::string line;
    while (std::getline(f, line)) {
        if (!line.empty()) ++n;
    }
    return n;
}

const fs::path kBase = fs::temp_directory_path() / "geomeld_cli_test";

}  // namespace

TEST_CASE("gen-data writes tiles, index, audit, and exactly one run manifest") {
    fs::remove_all(kBase);
    const fs::path out = kBase / "ds";
    RunOutput r = run_cli("gen-data --n 5 --height 32 --width 32 --seed 9 --out " + out.string());
    CHECK(r.exit_code == 0);

    auto entries = read_manifest((out / "index.tsv").string());
    CHECK(entries.size() == 5);
    CHECK(count_lines(out / "caption_audit.jsonl") == 5);

    int manifests = 0;
    for (const auto& e : fs::directory_iterator(out)) {
        if (e.path().filename() == "run_manifest.json") ++manifests;
    }
    CHECK(manifests == 1);

    // stored attributes survive the round trip and match an oracle recount
    for (const auto& e : entries) {
        TileSample tile = read_tile((out / e.path).string());
        int64_t hits = 0;
        for (size_t i = 0; i < tile.dw.labels.size(); ++i) {
            if (tile.dw.labels[i] == kDwWater && tile.esa.labels[i] == kEsaWater) ++hits;
        }
        const double frac = static_cast<double>(hits) / static_cast<double>(tile.dw.labels.size());
        CHECK(tile.attributes.water_fraction == frac);
        CHECK(e.dominant_class ==
              dw_class_names()[static_cast<size_t>(tile.attributes.dominant_class)]);
    }
}

TEST_CASE("gen-data is byte-reproducible under the same seed") {
    const fs::path a = kBase / "rep_a";
    const fs::path b = kBase / "rep_b";
    CHECK(run_cli("gen-data --n 3 --height 32 --width 32 --seed 4 --out " + a.string()).exit_code == 0);
    CHECK(run_cli("gen-data --n 3 --height 32 --width 32 --seed 4 --out " + b.string()).exit_code == 0);
    for (const auto& e : read_manifest((a / "index.tsv").string())) {
        CHECK(file_bytes(a / e.path) == file_bytes(b / e.path));
    }
    CHECK(file_bytes(a / "index.tsv") == file_bytes(b / "index.tsv"));
}

TEST_CASE("pretrain surfaces config errors with the offending field") {
    const fs::path cfg = kBase / "bad.cfg";
    {
        std::ofstream f(cfg);
        f << "batch_size=4\n";
    }
    RunOutput r = run_cli("pretrain --config " + cfg.string());
    CHECK(r.exit_code == 1);
    CHECK(r.err.find("manifest") != std::string::npos);

    {
        std::ofstream f(cfg, std::ios::trunc);
        f << "manifest=x\nnot_a_key=1\n";
    }
    RunOutput r2 = run_cli("pretrain --config " + cfg.string());
    CHECK(r2.exit_code == 1);
    CHECK(r2.err.find("not_a_key") != std::string::npos);
    CHECK(r2.err.find("line 2") != std::string::npos);
}

TEST_CASE("pretrain dry run and ablation switches") {
    const fs::path out = kBase / "ds";  // written by the first test case
    const fs::path cfg = kBase / "train.cfg";
    {
        std::ofstream f(cfg);
        f << "manifest=" << (out / "index.tsv").string() << "\n"
          << "max_steps=2\nbatch_size=3\n"
          << "model.dim=16\nmodel.blocks=1\nmodel.text_dim=16\nmodel.text_blocks=2\n"
          << "model.text_embed_dim=32\nmodel.contrastive_dim=8\n"
          << "out_dir=" << (kBase / "run_dry").string() << "\n";
    }
    RunOutput dry = run_cli("pretrain --config " + cfg.string() + " --dry-run");
    CHECK(dry.exit_code == 0);
    CHECK(dry.out.find("dry run") != std::string::npos);
    CHECK_FALSE(fs::exists(kBase / "run_dry" / "checkpoint.bin"));

    RunOutput emit = run_cli("pretrain --config " + cfg.string() + " --ablate itc --emit-config");
    CHECK(emit.exit_code == 0);
    CHECK(emit.out.find("beta=0") != std::string::npos);
    RunOutput emit2 = run_cli("pretrain --config " + cfg.string() + " --ablate mp --emit-config");
    CHECK(emit2.out.find("lambda.s2=0") != std::string::npos);
    RunOutput bad = run_cli("pretrain --config " + cfg.string() + " --ablate bogus");
    CHECK(bad.exit_code == 1);
}

TEST_CASE("pretrain then eval round trip through the filesystem") {
    const fs::path out = kBase / "ds";
    const fs::path cfg = kBase / "train2.cfg";
    {
        std::ofstream f(cfg);
        f << "manifest=" << (out / "index.tsv").string() << "\n"
          << "max_steps=3\nbatch_size=3\n"
          << "model.dim=16\nmodel.blocks=1\nmodel.text_dim=16\nmodel.text_blocks=2\n"
          << "model.text_embed_dim=32\nmodel.contrastive_dim=8\n"
          << "out_dir=" << (kBase / "run1").string() << "\n";
    }
    RunOutput tr = run_cli("pretrain --config " + cfg.string());
    CHECK(tr.exit_code == 0);
    CHECK(fs::exists(kBase / "run1" / "checkpoint.bin"));
    CHECK(fs::exists(kBase / "run1" / "metrics.jsonl"));
    CHECK(fs::exists(kBase / "run1" / "run_manifest.json"));
    CHECK(fs::exists(kBase / "run1" / "config.canonical"));
    CHECK(count_lines(kBase / "run1" / "metrics.jsonl") == 3);

    RunOutput ev = run_cli("eval --checkpoint " + (kBase / "run1" / "checkpoint.bin").string() +
                           " --data " + (out / "index.tsv").string() + " --k 2 --out " +
                           (kBase / "eval1").string());
    CHECK(ev.exit_code == 0);
    CHECK(fs::exists(kBase / "eval1" / "report.json"));
    CHECK(fs::exists(kBase / "eval1" / "report.txt"));
    CHECK(fs::exists(kBase / "eval1" / "run_manifest.json"));
    CHECK(ev.out.find("retrieval R@2") != std::string::npos);

    // reports reproduce byte-for-byte under a fixed seed
    RunOutput ev2 = run_cli("eval --checkpoint " + (kBase / "run1" / "checkpoint.bin").string() +
                            " --data " + (out / "index.tsv").string() + " --k 2 --out " +
                            (kBase / "eval2").string());
    CHECK(ev2.exit_code == 0);
    CHECK(file_bytes(kBase / "eval1" / "report.json") == file_bytes(kBase / "eval2" / "report.json"));
}

TEST_CASE("eval names a missing checkpoint as a data error") {
    RunOutput r = run_cli("eval --checkpoint " + (kBase / "absent.bin").string() + " --data " +
                          (kBase / "ds" / "index.tsv").string() + " --out " +
                          (kBase / "eval_missing").string());
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("absent.bin") != std::string::npos);
}

TEST_CASE("usage errors exit 1") {
    CHECK(run_cli("no-such-command").exit_code == 1);
    CHECK(run_cli("pretrain").exit_code == 1);  // required --config missing
}

TEST_CASE("selfcheck passes clean and fails under fault injection") {
    const auto t0 = std::chrono::steady_clock::now();
    RunOutput ok = run_cli("selfcheck");
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    CHECK(ok.exit_code == 0);
    CHECK(ok.out.find("gradient-oracles") != std::string::npos);
    CHECK(ok.out.find("caption-verifier") != std::string::npos);
    CHECK(ok.out.find("selfcheck OK") != std::string::npos);
    CHECK(secs < 300.0);

    RunOutput bad = run_cli("selfcheck --inject-fault");
    CHECK(bad.exit_code == 3);
    CHECK(bad.out.find("FAIL") != std::string::npos);
}

TEST_CASE("reference page lists flags and config keys") {
    RunOutput r = run_cli("reference");
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("gen-data") != std::string::npos);
    CHECK(r.out.find("mask_ratio=0.7") != std::string::npos);
    CHECK(r.out.find("ema_tau=0.996") != std::string::npos);
    CHECK(r.out.find("alpha=0.5") != std::string::npos);
}

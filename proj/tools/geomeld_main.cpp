#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "geomeld/caption.hpp"
#include "geomeld/eval.hpp"
#include "geomeld/selfcheck.hpp"
#include "geomeld/tile_io.hpp"
#include "geomeld/trainer.hpp"

namespace fs = std::filesystem;
using namespace geomeld;

#ifndef GEOMELD_VERSION
#define GEOMELD_VERSION "0.1.0"
#endif

namespace {

// exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure
constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

std::string now_utc() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

// every artifact directory gets exactly one manifest describing the run
class RunManifest {
public:
    RunManifest(std::string command, std::string out_dir, uint64_t seed)
        : out_dir_(std::move(out_dir)) {
        j_["command"] = std::move(command);
        j_["version"] = std::string("geomeld ") + GEOMELD_VERSION;
        j_["seed"] = seed;
        j_["started_utc"] = now_utc();
        j_["outputs"] = nlohmann::json::array();
        j_["config"] = nlohmann::json::object();
    }

    void config(const std::string& key, const nlohmann::json& value) { j_["config"][key] = value; }
    void config_text(const std::string& text) { j_["config_text"] = text; }
    void output(const std::string& path) { j_["outputs"].push_back(path); }

    void write() {
        j_["finished_utc"] = now_utc();
        fs::create_directories(out_dir_);
        std::ofstream f(fs::path(out_dir_) / "run_manifest.json", std::ios::trunc);
        f << j_.dump(2) << "\n";
    }

private:
    nlohmann::json j_;
    std::string out_dir_;
};

int cmd_gen_data(int n, int64_t height, int64_t width, int64_t patch, uint64_t seed,
                 const std::string& out_dir, double roi_meters) {
    RunManifest manifest("gen-data", out_dir, seed);
    manifest.config("n", n);
    manifest.config("height", height);
    manifest.config("width", width);
    manifest.config("patch", patch);
    manifest.config("roi_meters", roi_meters);
    // protocol metadata: modalities are generated jointly, so the acquisition
    // window never filters anything but stays part of the dataset record
    manifest.config("retrieval_window_days", 15);
    manifest.config("cloud_cover_max", 0.10);

    fs::create_directories(fs::path(out_dir) / "tiles");
    std::ofstream audit_log(fs::path(out_dir) / "caption_audit.jsonl", std::ios::trunc);

    std::vector<ManifestEntry> entries;
    int failures = 0;
    for (int i = 0; i < n; ++i) {
        char id[32];
        std::snprintf(id, sizeof(id), "tile_%06d", i);
        try {
            TileSample tile = generate_tile_uncaptioned(id, {height, width, patch}, seed);
            CaptionAudit audit = run_caption_pipeline(tile);
            tile.caption = audit.final_caption;
            const std::string rel = std::string("tiles/") + id + ".gmt";
            write_tile((fs::path(out_dir) / rel).string(), tile);
            audit_log << audit_to_json(id, audit) << "\n";
            entries.push_back(
                {id, rel, tile.anchor_date,
                 dw_class_names()[static_cast<size_t>(tile.attributes.dominant_class)]});
        } catch (const ConfigError&) {
            throw;  // bad geometry configuration aborts the whole run
        } catch (const std::exception& e) {
            ++failures;
            std::cerr << "[geomeld] tile " << id << " failed: " << e.what() << "\n";
        }
    }
    const std::string index_path = (fs::path(out_dir) / "index.tsv").string();
    write_manifest(index_path, entries);
    manifest.output(index_path);
    manifest.output((fs::path(out_dir) / "caption_audit.jsonl").string());
    manifest.config("tiles_written", static_cast<int>(entries.size()));
    manifest.config("tiles_failed", failures);
    manifest.write();
    std::cout << "wrote " << entries.size() << " tiles to " << out_dir;
    if (failures > 0) std::cout << " (" << failures << " failed)";
    std::cout << "\n";
    return entries.empty() ? kExitData : kExitOk;
}

int cmd_pretrain(const std::string& config_path, const std::string& out_override,
                 int64_t seed_override, const std::vector<std::string>& ablate, bool dry_run,
                 bool emit_config) {
    TrainConfig config = load_train_config(config_path);
    if (!out_override.empty()) config.out_dir = out_override;
    if (seed_override >= 0) config.seed = static_cast<uint64_t>(seed_override);
    if (dry_run) config.dry_run = true;
    for (const std::string& a : ablate) {
        if (a == "mp") {
            for (auto& [name, w] : config.lambda) w = 0.0;
            if (config.lambda.empty()) {
                for (const auto& m : config.model.modalities) config.lambda[m.name] = 0.0;
            }
        } else if (a == "jepa") {
            config.alpha = 0.0;
        } else if (a == "itc") {
            config.beta = 0.0;
        } else {
            std::cerr << "unknown ablation '" << a << "' (expected mp|jepa|itc)\n";
            return kExitUsage;
        }
    }
    if (emit_config) {
        std::cout << canonical_config(config);
        return kExitOk;
    }

    RunManifest manifest("pretrain", config.out_dir, config.seed);
    manifest.config_text(canonical_config(config));
    TrainResult result = train(config);
    if (config.dry_run) {
        std::cout << "dry run: one step built and differentiated, total loss "
                  << result.reports.front().total << "\n";
        return kExitOk;
    }
    // the effective configuration is materialized next to the artifacts
    std::ofstream cfg(fs::path(config.out_dir) / "config.canonical", std::ios::trunc);
    cfg << canonical_config(config);
    manifest.output(result.checkpoint_path);
    manifest.output(result.metrics_path);
    manifest.write();
    std::cout << "trained " << result.steps << " steps on " << result.tiles << " tiles\n"
              << "first total " << result.reports.front().total << ", last total "
              << result.reports.back().total << "\n"
              << "checkpoint: " << result.checkpoint_path << "\n";
    return kExitOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_manifest,
             const std::string& probe_train_manifest, int64_t k, const std::string& out_dir,
             uint64_t seed) {
    RunManifest manifest("eval", out_dir, seed);
    manifest.config("checkpoint", checkpoint);
    manifest.config("data", data_manifest);
    manifest.config("k", k);

    LoadedCheckpoint ck = load_checkpoint(checkpoint);
    ModelState& model = ck.model;
    PreparedDataset gallery = prepare_dataset(data_manifest, model.config,
                                              model.config.text_len, 8);

    PreparedDataset probe_train, probe_test;
    if (!probe_train_manifest.empty()) {
        probe_train = prepare_dataset(probe_train_manifest, model.config, model.config.text_len, 8);
        probe_test = gallery;
    } else {
        // deterministic split of the evaluation data
        probe_train.grid_h = probe_test.grid_h = gallery.grid_h;
        probe_train.grid_w = probe_test.grid_w = gallery.grid_w;
        for (size_t i = 0; i < gallery.tiles.size(); ++i) {
            (i % 2 == 0 ? probe_train : probe_test).tiles.push_back(gallery.tiles[i]);
        }
    }

    ProbeResult probe = linear_probe(model, probe_train, probe_test, 60, 0.5, seed);
    RetrievalPair retrieval = retrieval_recall(model, gallery, k);
    std::vector<uint64_t> mask_seeds;
    for (uint64_t i = 0; i < 4; ++i) mask_seeds.push_back(derive_seed(seed, 0x5EED + i));
    std::vector<ReconstructionRow> recon =
        reconstruction_report(model, gallery, mask_seeds, 0.70, 0.25);

    nlohmann::json report;
    report["checkpoint"] = checkpoint;
    report["checkpoint_step"] = ck.step;
    report["gallery_size"] = gallery.tiles.size();
    report["probe"] = {{"accuracy", probe.accuracy},
                       {"baseline_accuracy", probe.baseline_accuracy},
                       {"chance", probe.chance},
                       {"classes", probe.classes},
                       {"train_count", probe.train_count},
                       {"test_count", probe.test_count}};
    report["retrieval"] = {
        {"k", k},
        {"image_to_text", retrieval.image_to_text.recall},
        {"text_to_image", retrieval.text_to_image.recall},
        {"queries", retrieval.image_to_text.queries},
    };
    report["reconstruction"] = nlohmann::json::array();
    for (const auto& row : recon) {
        report["reconstruction"].push_back({{"modality", row.modality},
                                            {"metric", row.continuous ? "masked_l1" : "masked_acc"},
                                            {"value", row.value}});
    }

    fs::create_directories(out_dir);
    const std::string report_json = (fs::path(out_dir) / "report.json").string();
    {
        std::ofstream f(report_json, std::ios::trunc);
        f << report.dump(2) << "\n";
    }
    const std::string report_txt = (fs::path(out_dir) / "report.txt").string();
    {
        std::ofstream f(report_txt, std::ios::trunc);
        f << "linear probe      accuracy " << probe.accuracy << " (chance " << probe.chance
          << ", pixel-mean baseline " << probe.baseline_accuracy << ", " << probe.classes
          << " classes)\n";
        f << "retrieval R@" << k << "     image->text " << retrieval.image_to_text.recall
          << "   text->image " << retrieval.text_to_image.recall << "   (gallery "
          << gallery.tiles.size() << ")\n";
        f << "masked reconstruction:\n";
        for (const auto& row : recon) {
            f << "  " << row.modality << (row.continuous ? "  l1  " : "  acc ") << row.value
              << "\n";
        }
    }
    manifest.output(report_json);
    manifest.output(report_txt);
    manifest.write();
    std::ifstream echo(report_txt);
    std::cout << echo.rdbuf();
    return kExitOk;
}

int cmd_selfcheck(bool inject_fault) {
    SelfCheckResult result = run_selfcheck(inject_fault);
    for (const auto& suite : result.suites) {
        std::cout << (suite.failed == 0 ? "[PASS] " : "[FAIL] ") << suite.name << ": "
                  << suite.passed << " passed, " << suite.failed << " failed\n";
        for (const auto& f : suite.failures) std::cout << "       " << f << "\n";
    }
    std::cout << (result.ok() ? "selfcheck OK" : "selfcheck FAILED") << " ("
              << result.total_passed() << " checks)\n";
    return result.ok() ? kExitOk : kExitNumeric;
}

int cmd_reference() {
    TrainConfig defaults;
    defaults.manifest = "<path to index.tsv>";
    std::cout << "# geomeld reference\n\n"
              << "## commands\n\n"
              << "gen-data   --n N --height H --width W --seed S --out DIR\n"
              << "pretrain   --config FILE [--out DIR] [--seed S] [--ablate mp|jepa|itc]\n"
              << "           [--dry-run] [--emit-config]\n"
              << "eval       --checkpoint FILE --data MANIFEST [--probe-train MANIFEST]\n"
              << "           [--k K] --out DIR [--seed S]\n"
              << "selfcheck  [--inject-fault]\n"
              << "reference\n\n"
              << "## config keys (canonical defaults)\n\n"
              << canonical_config(defaults);
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"GeoMeld synthetic multimodal pretraining"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("gen-data", "generate synthetic captioned tiles");
    int gen_n = 16;
    int64_t gen_h = 128, gen_w = 128, gen_patch = 4;
    uint64_t gen_seed = 0;
    std::string gen_out = "data";
    double roi_meters = 1280.0;
    gen->add_option("--n", gen_n, "tile count");
    gen->add_option("--height", gen_h, "tile height in pixels");
    gen->add_option("--width", gen_w, "tile width in pixels");
    gen->add_option("--patch", gen_patch, "patch size the geometry must divide");
    gen->add_option("--seed", gen_seed, "generator seed");
    gen->add_option("--out", gen_out, "output directory");
    gen->add_option("--roi-meters", roi_meters, "region of interest edge, recorded as metadata");

    auto* pre = app.add_subcommand("pretrain", "run the pretraining loop");
    std::string pre_config, pre_out;
    int64_t pre_seed = -1;
    std::vector<std::string> ablate;
    bool dry_run = false, emit_config = false;
    pre->add_option("--config", pre_config, "key=value config file")->required();
    pre->add_option("--out", pre_out, "override out_dir");
    pre->add_option("--seed", pre_seed, "override seed");
    pre->add_option("--ablate", ablate, "zero a loss: mp, jepa, or itc");
    pre->add_flag("--dry-run", dry_run, "build one step and exit");
    pre->add_flag("--emit-config", emit_config, "print the canonical config and exit");

    auto* ev = app.add_subcommand("eval", "evaluate a frozen checkpoint");
    std::string ev_ckpt, ev_data, ev_probe_train, ev_out = "eval";
    int64_t ev_k = 5;
    uint64_t ev_seed = 0;
    ev->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
    ev->add_option("--data", ev_data, "evaluation manifest")->required();
    ev->add_option("--probe-train", ev_probe_train, "probe training manifest");
    ev->add_option("--k", ev_k, "retrieval cutoff");
    ev->add_option("--out", ev_out, "output directory");
    ev->add_option("--seed", ev_seed, "evaluation seed");

    auto* sc = app.add_subcommand("selfcheck", "run built-in oracle suites");
    bool inject_fault = false;
    sc->add_flag("--inject-fault", inject_fault, "corrupt one loss to prove failure detection");

    app.add_subcommand("reference", "print the flag and config-key reference");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (gen->parsed()) {
            return cmd_gen_data(gen_n, gen_h, gen_w, gen_patch, gen_seed, gen_out, roi_meters);
        }
        if (pre->parsed()) {
            return cmd_pretrain(pre_config, pre_out, pre_seed, ablate, dry_run, emit_config);
        }
        if (ev->parsed()) {
            return cmd_eval(ev_ckpt, ev_data, ev_probe_train, ev_k, ev_out, ev_seed);
        }
        if (sc->parsed()) {
            return cmd_selfcheck(inject_fault);
        }
        return cmd_reference();
    } catch (const NumericError& e) {
        std::cerr << "geomeld: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const OracleError& e) {
        std::cerr << "geomeld: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const ConfigError& e) {
        std::cerr << "geomeld: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "geomeld: " << e.what() << "\n";
        return kExitData;
    }
}

#include "geomeld/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace geomeld {

namespace fs = std::filesystem;

// ----------------------------------------------------------------------------
// config
// ----------------------------------------------------------------------------

void TrainConfig::validate() const {
    if (manifest.empty()) throw ConfigError("train config: missing required field 'manifest'");
    if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
    if (epochs < 0 || max_steps < 0 || (epochs == 0 && max_steps == 0)) {
        throw ConfigError("train config: set epochs or max_steps");
    }
    if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) {
        throw ConfigError("train config: mask_ratio must be in (0, 1)");
    }
    if (target_fraction <= 0.0 || target_fraction > mask_ratio) {
        throw ConfigError("train config: target_fraction must be in (0, mask_ratio]");
    }
    if (ema_tau < 0.0 || ema_tau > 1.0) throw ConfigError("train config: ema_tau outside [0, 1]");
    if (tau_c <= 0.0) throw ConfigError("train config: tau_c must be > 0");
    if (lr_base <= 0.0) throw ConfigError("train config: lr_base must be > 0");
    if (weight_decay < 0.0) throw ConfigError("train config: weight_decay must be >= 0");
    for (const auto& [name, w] : lambda) {
        if (w < 0.0) throw ConfigError("train config: lambda." + name + " must be >= 0");
    }
}

namespace {

std::map<std::string, double> default_lambda(const ModelConfig& model) {
    std::map<std::string, double> out;
    for (const auto& m : model.modalities) out[m.name] = 1.0;
    return out;
}

double parse_double(const std::string& key, const std::string& val, int line) {
    try {
        size_t used = 0;
        const double v = std::stod(val, &used);
        if (used != val.size()) throw std::invalid_argument(val);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("line " + std::to_string(line) + ": field '" + key +
                          "' expects a real number, got '" + val + "'");
    }
}

int64_t parse_int(const std::string& key, const std::string& val, int line) {
    try {
        size_t used = 0;
        const int64_t v = std::stoll(val, &used);
        if (used != val.size()) throw std::invalid_argument(val);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("line " + std::to_string(line) + ": field '" + key +
                          "' expects an integer, got '" + val + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& val, int line) {
    if (val == "true" || val == "1") return true;
    if (val == "false" || val == "0") return false;
    throw ConfigError("line " + std::to_string(line) + ": field '" + key +
                      "' expects true/false, got '" + val + "'");
}

}  // namespace

TrainConfig parse_train_config(const std::string& text) {
    TrainConfig c;
    c.lambda = default_lambda(c.model);
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    bool saw_manifest = false;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        while (!line.empty() && (line.back() == ' ' || line.back() == '\r')) line.pop_back();
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(lineno) + ": expected key=value, got '" +
                              line + "'");
        }
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        if (key == "manifest") { c.manifest = val; saw_manifest = true; }
        else if (key == "out_dir") c.out_dir = val;
        else if (key == "epochs") c.epochs = parse_int(key, val, lineno);
        else if (key == "max_steps") c.max_steps = parse_int(key, val, lineno);
        else if (key == "batch_size") c.batch_size = parse_int(key, val, lineno);
        else if (key == "lr_base") c.lr_base = parse_double(key, val, lineno);
        else if (key == "weight_decay") c.weight_decay = parse_double(key, val, lineno);
        else if (key == "warmup_steps") c.warmup_steps = parse_int(key, val, lineno);
        else if (key == "mask_ratio") c.mask_ratio = parse_double(key, val, lineno);
        else if (key == "target_fraction") c.target_fraction = parse_double(key, val, lineno);
        else if (key == "ema_tau") c.ema_tau = parse_double(key, val, lineno);
        else if (key == "alpha") c.alpha = parse_double(key, val, lineno);
        else if (key == "beta") c.beta = parse_double(key, val, lineno);
        else if (key == "tau_c") c.tau_c = parse_double(key, val, lineno);
        else if (key == "seed") c.seed = static_cast<uint64_t>(parse_int(key, val, lineno));
        else if (key == "grad_clip") c.grad_clip = parse_double(key, val, lineno);
        else if (key == "failure_budget") c.failure_budget = parse_int(key, val, lineno);
        else if (key == "checkpoint_every") c.checkpoint_every = parse_int(key, val, lineno);
        else if (key == "dry_run") c.dry_run = parse_bool(key, val, lineno);
        else if (key.rfind("lambda.", 0) == 0) {
            c.lambda[key.substr(7)] = parse_double(key, val, lineno);
        } else if (key == "model.patch") c.model.patch = parse_int(key, val, lineno);
        else if (key == "model.dim") c.model.dim = parse_int(key, val, lineno);
        else if (key == "model.blocks") c.model.blocks = parse_int(key, val, lineno);
        else if (key == "model.mlp_ratio") c.model.mlp_ratio = parse_int(key, val, lineno);
        else if (key == "model.text_dim") c.model.text_dim = parse_int(key, val, lineno);
        else if (key == "model.text_blocks") c.model.text_blocks = parse_int(key, val, lineno);
        else if (key == "model.text_len") c.model.text_len = parse_int(key, val, lineno);
        else if (key == "model.text_embed_dim") c.model.text_embed_dim = parse_int(key, val, lineno);
        else if (key == "model.contrastive_dim") {
            c.model.contrastive_dim = parse_int(key, val, lineno);
        } else {
            throw ConfigError("line " + std::to_string(lineno) + ": unknown field '" + key + "'");
        }
    }
    if (!saw_manifest) throw ConfigError("train config: missing required field 'manifest'");
    for (const auto& [name, w] : c.lambda) {
        bool known = false;
        for (const auto& m : c.model.modalities) known = known || m.name == name;
        if (!known) throw ConfigError("train config: lambda." + name + " names no modality");
    }
    c.validate();
    return c;
}

TrainConfig load_train_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open config " + path);
    std::ostringstream os;
    os << f.rdbuf();
    return parse_train_config(os.str());
}

std::string canonical_config(const TrainConfig& c) {
    std::map<std::string, std::string> kv;
    auto put = [&](const std::string& k, auto v) {
        std::ostringstream os;
        os << v;
        kv[k] = os.str();
    };
    put("manifest", c.manifest);
    put("out_dir", c.out_dir);
    put("epochs", c.epochs);
    put("max_steps", c.max_steps);
    put("batch_size", c.batch_size);
    put("lr_base", c.lr_base);
    put("weight_decay", c.weight_decay);
    put("warmup_steps", c.warmup_steps);
    put("mask_ratio", c.mask_ratio);
    put("target_fraction", c.target_fraction);
    put("ema_tau", c.ema_tau);
    put("alpha", c.alpha);
    put("beta", c.beta);
    put("tau_c", c.tau_c);
    put("seed", c.seed);
    put("grad_clip", c.grad_clip);
    put("failure_budget", c.failure_budget);
    put("checkpoint_every", c.checkpoint_every);
    put("dry_run", c.dry_run ? "true" : "false");
    std::map<std::string, double> lam = c.lambda.empty() ? default_lambda(c.model) : c.lambda;
    for (const auto& [name, w] : lam) put("lambda." + name, w);
    put("model.patch", c.model.patch);
    put("model.dim", c.model.dim);
    put("model.blocks", c.model.blocks);
    put("model.mlp_ratio", c.model.mlp_ratio);
    put("model.text_dim", c.model.text_dim);
    put("model.text_blocks", c.model.text_blocks);
    put("model.text_len", c.model.text_len);
    put("model.text_embed_dim", c.model.text_embed_dim);
    put("model.contrastive_dim", c.model.contrastive_dim);
    std::ostringstream os;
    for (const auto& [k, v] : kv) os << k << "=" << v << "\n";
    return os.str();
}

// ----------------------------------------------------------------------------
// optimizer
// ----------------------------------------------------------------------------

AdamW::AdamW(std::vector<std::pair<std::string, Tensor>> params, AdamWConfig config)
    : params_(std::move(params)), config_(config) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
        m_[i].assign(static_cast<size_t>(params_[i].second.numel()), 0.0);
        v_[i].assign(static_cast<size_t>(params_[i].second.numel()), 0.0);
    }
}

void AdamW::step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i].second;
        const int64_t n = p.numel();
        double* pd = p.data();
        const bool has_grad = p.has_grad();
        const std::vector<double>* grad = has_grad ? &p.grad_view() : nullptr;
        if (has_grad) {
            for (int64_t j = 0; j < n; ++j) {
                if (!std::isfinite((*grad)[static_cast<size_t>(j)])) {
                    throw NumericError("non-finite gradient in parameter " + params_[i].first +
                                       " at step " + std::to_string(t_));
                }
            }
        }
        // decoupled decay, applied independently of the gradient step
        if (config_.weight_decay > 0.0) {
            const double shrink = 1.0 - lr * config_.weight_decay;
            for (int64_t j = 0; j < n; ++j) pd[j] *= shrink;
        }
        if (!has_grad) continue;
        auto& m = m_[i];
        auto& v = v_[i];
        for (int64_t j = 0; j < n; ++j) {
            const double g = (*grad)[static_cast<size_t>(j)];
            m[static_cast<size_t>(j)] = config_.beta1 * m[static_cast<size_t>(j)] +
                                        (1.0 - config_.beta1) * g;
            v[static_cast<size_t>(j)] = config_.beta2 * v[static_cast<size_t>(j)] +
                                        (1.0 - config_.beta2) * g * g;
            const double mhat = m[static_cast<size_t>(j)] / bc1;
            const double vhat = v[static_cast<size_t>(j)] / bc2;
            pd[j] -= lr * mhat / (std::sqrt(vhat) + config_.eps);
        }
    }
}

OptimizerBlob AdamW::blob() const {
    OptimizerBlob b;
    b.step = t_;
    for (size_t i = 0; i < params_.size(); ++i) {
        b.slots.push_back({params_[i].first, m_[i], v_[i]});
    }
    return b;
}

void AdamW::restore(const OptimizerBlob& blob) {
    if (blob.slots.size() != params_.size()) {
        throw DataError("optimizer restore: slot count mismatch");
    }
    t_ = blob.step;
    for (size_t i = 0; i < params_.size(); ++i) {
        if (blob.slots[i].name != params_[i].first ||
            blob.slots[i].m.size() != m_[i].size()) {
            throw DataError("optimizer restore: slot " + blob.slots[i].name + " does not match");
        }
        m_[i] = blob.slots[i].m;
        v_[i] = blob.slots[i].v;
    }
}

double cosine_lr(int64_t step, int64_t total_steps, double lr_base, int64_t warmup_steps) {
    if (step < 0 || step > total_steps) {
        throw ConfigError("cosine_lr: step " + std::to_string(step) + " outside [0, " +
                          std::to_string(total_steps) + "]");
    }
    if (warmup_steps > 0 && step < warmup_steps) {
        return lr_base * static_cast<double>(step) / static_cast<double>(warmup_steps);
    }
    const double span = static_cast<double>(total_steps - std::max<int64_t>(warmup_steps, 0));
    if (span <= 0.0) return 0.0;
    const double progress =
        static_cast<double>(step - std::max<int64_t>(warmup_steps, 0)) / span;
    return lr_base * 0.5 * (1.0 + std::cos(3.14159265358979323846 * std::min(progress, 1.0)));
}

// ----------------------------------------------------------------------------
// data preparation
// ----------------------------------------------------------------------------

ModalityNorm modality_norm(const std::string& name) {
    if (name == "s2") return {0.0, 1.0};
    if (name == "s1") return {12.5, 17.5};
    if (name == "dem") return {0.0, 3000.0};
    if (name == "canopy") return {0.0, 35.0};
    return {0.0, 1.0};
}

PreparedTile prepare_tile(const TileSample& tile, const ModelConfig& model,
                          const Tokenizer& tokenizer, int64_t text_len) {
    PreparedTile out;
    out.tile_id = tile.tile_id;
    out.dominant_class = tile.attributes.dominant_class;
    out.caption = tile.caption;
    out.tokens = tokenizer.encode(tile.caption, text_len);

    const int64_t n = (tile.s2.height / model.patch) * (tile.s2.width / model.patch);
    std::vector<int64_t> all(static_cast<size_t>(n));
    std::iota(all.begin(), all.end(), int64_t{0});

    auto add_continuous = [&](const std::string& name, const Raster& raster) {
        const ModalityNorm norm = modality_norm(name);
        Raster scaled = raster;
        for (double& v : scaled.values) v = (v + norm.offset) / norm.scale;
        PatchSequence seq = gather_visible(scaled, all, model.patch);
        out.rows.emplace(name, seq.to_tensor());
    };
    add_continuous("s2", tile.s2);
    add_continuous("s1", tile.s1);
    add_continuous("dem", tile.dem);
    add_continuous("canopy", tile.canopy);
    out.labels.emplace("dw", patch_mode_labels(tile.dw, model.patch, kDwClassCount));
    out.labels.emplace("esa", patch_mode_labels(tile.esa, model.patch, kEsaClassCount));
    return out;
}

PreparedDataset prepare_dataset(const std::string& manifest_path, const ModelConfig& model,
                                int64_t text_len, int64_t failure_budget) {
    const std::vector<ManifestEntry> entries = read_manifest(manifest_path);
    if (entries.empty()) throw DataError("manifest " + manifest_path + " lists no tiles");
    const fs::path base = fs::path(manifest_path).parent_path();

    PreparedDataset out;
    Tokenizer tokenizer;
    int64_t h = -1, w = -1;
    for (const auto& e : entries) {
        const fs::path p = fs::path(e.path).is_absolute() ? fs::path(e.path) : base / e.path;
        TileSample tile;
        try {
            tile = read_tile(p.string());
        } catch (const std::exception& ex) {
            ++out.skipped;
            std::cerr << "[geomeld] skipping tile " << e.tile_id << ": " << ex.what() << "\n";
            if (out.skipped > failure_budget) {
                throw DataError("tile read failures exceeded the budget of " +
                                std::to_string(failure_budget));
            }
            continue;
        }
        if (h < 0) {
            h = tile.s2.height;
            w = tile.s2.width;
            if (h % model.patch != 0 || w % model.patch != 0) {
                throw ConfigError("tile geometry " + std::to_string(h) + "x" + std::to_string(w) +
                                  " not divisible by patch " + std::to_string(model.patch));
            }
        } else if (tile.s2.height != h || tile.s2.width != w) {
            throw DataError("tile " + e.tile_id + " geometry differs from the dataset");
        }
        out.tiles.push_back(prepare_tile(tile, model, tokenizer, text_len));
    }
    if (out.tiles.empty()) throw DataError("no readable tiles in " + manifest_path);
    out.grid_h = h / model.patch;
    out.grid_w = w / model.patch;
    return out;
}

// ----------------------------------------------------------------------------
// training loop
// ----------------------------------------------------------------------------

namespace {

Tensor average_scalars(Graph& g, std::vector<Tensor>& parts) {
    Tensor sum = parts[0];
    for (size_t i = 1; i < parts.size(); ++i) sum = add(g, sum, parts[i]);
    return scale(g, sum, 1.0 / static_cast<double>(parts.size()));
}

void clip_gradients(std::vector<std::pair<std::string, Tensor>>& params, double max_norm) {
    double total = 0.0;
    for (auto& [name, t] : params) {
        if (!t.has_grad()) continue;
        for (double v : t.grad_view()) total += v * v;
    }
    total = std::sqrt(total);
    if (total <= max_norm) return;
    const double factor = max_norm / total;
    for (auto& [name, t] : params) {
        if (!t.has_grad()) continue;
        for (double& v : t.grad()) v *= factor;
    }
}

}  // namespace

TrainResult train(const TrainConfig& config_in) {
    TrainConfig config = config_in;
    config.validate();
    if (config.lambda.empty()) config.lambda = default_lambda(config.model);

    PreparedDataset data = prepare_dataset(config.manifest, config.model, config.model.text_len,
                                           config.failure_budget);
    config.model.grid_h = data.grid_h;
    config.model.grid_w = data.grid_w;

    const int64_t n_tiles = static_cast<int64_t>(data.tiles.size());
    const int64_t steps_per_epoch = std::max<int64_t>(1, n_tiles / config.batch_size);
    int64_t total_steps = config.max_steps > 0 ? config.max_steps
                                               : config.epochs * steps_per_epoch;
    if (config.dry_run) total_steps = 1;
    const int64_t warmup = config.warmup_steps >= 0
                               ? config.warmup_steps
                               : std::max<int64_t>(1, total_steps / 20);

    ModelState model = ModelState::init(config.model, config.seed);
    AdamW optimizer(model.named_trainable(),
                    {0.9, 0.999, 1e-8, config.weight_decay});

    fs::create_directories(config.out_dir);
    const std::string metrics_path = (fs::path(config.out_dir) / "metrics.jsonl").string();
    const std::string ckpt_path = (fs::path(config.out_dir) / "checkpoint.bin").string();
    std::ofstream metrics;
    if (!config.dry_run) {
        metrics.open(metrics_path, std::ios::trunc);
        if (!metrics) throw DataError("cannot open metrics log " + metrics_path);
    }

    TrainResult result;
    result.tiles = n_tiles;
    result.skipped_tiles = data.skipped;

    // per-epoch shuffled tile order, advanced by a cursor across steps
    std::vector<int64_t> order(static_cast<size_t>(n_tiles));
    std::iota(order.begin(), order.end(), int64_t{0});
    int64_t cursor = 0;
    int64_t epoch = 0;
    auto reshuffle = [&]() {
        Rng rng(derive_seed(config.seed, 0xE90C + static_cast<uint64_t>(epoch)));
        for (int64_t i = n_tiles - 1; i > 0; --i) {
            const auto j = static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(i + 1)));
            std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
        }
        cursor = 0;
    };
    reshuffle();

    const auto t_start = std::chrono::steady_clock::now();
    for (int64_t step = 1; step <= total_steps; ++step) {
        // assemble the batch
        std::vector<int64_t> batch;
        batch.reserve(static_cast<size_t>(config.batch_size));
        for (int64_t i = 0; i < config.batch_size; ++i) {
            if (cursor >= n_tiles) {
                ++epoch;
                reshuffle();
            }
            batch.push_back(order[static_cast<size_t>(cursor++)]);
        }

        Graph g;
        std::map<std::string, std::vector<Tensor>> rec_parts;
        std::vector<Tensor> jepa_parts;
        std::vector<Tensor> v_rows, t_rows;

        for (size_t bi = 0; bi < batch.size(); ++bi) {
            const PreparedTile& tile = data.tiles[static_cast<size_t>(batch[bi])];
            const uint64_t mask_seed =
                derive_seed(config.seed, 0xA5C0 + static_cast<uint64_t>(step) * 1024 +
                                             static_cast<uint64_t>(bi));
            MaskPair mask = make_masks(config.model.grid_h, config.model.grid_w,
                                       config.mask_ratio, config.target_fraction, mask_seed);
            const std::vector<int64_t> masked = mask.masked();

            const Tensor& s2_rows = tile.rows.at("s2");
            Tensor ctx_patches = gather_rows(g, s2_rows, mask.ctx_visible);
            Tensor z_ctx = encode_visible(g, ctx_patches, mask.ctx_visible, model.theta,
                                          config.model);

            // reconstruction branches
            for (const auto& mod : config.model.modalities) {
                Tensor decoded = decode_modality(g, z_ctx, mask.ctx_visible, mod, model);
                Tensor loss;
                if (mod.kind == ModalityKind::continuous) {
                    loss = loss_rec_l1(g, decoded, tile.rows.at(mod.name), masked);
                } else {
                    loss = loss_rec_ce(g, decoded, tile.labels.at(mod.name), masked);
                }
                rec_parts[mod.name].push_back(loss);
            }

            // JEPA branch: target latents from the EMA encoder, no tape
            Tensor tgt_patches = gather_rows(g, s2_rows, mask.tgt_visible);
            Tensor z_tgt = encode_visible(g, tgt_patches, mask.tgt_visible, model.xi,
                                          config.model);
            Tensor predicted = jepa_predict(g, z_ctx, mask.ctx_visible, mask.tgt_visible, model);
            jepa_parts.push_back(loss_jepa(g, predicted, z_tgt));

            // caption alignment branch
            Tensor t_embed = encode_caption(g, tile.tokens, model.psi, config.model);
            ProjectedPair pair = pool_and_project(g, z_ctx, t_embed, model);
            v_rows.push_back(pair.v_prime);
            t_rows.push_back(pair.t_prime);
        }

        std::vector<std::pair<std::string, Tensor>> per_modality;
        for (const auto& mod : config.model.modalities) {
            per_modality.emplace_back(mod.name, average_scalars(g, rec_parts[mod.name]));
        }
        Tensor jepa = average_scalars(g, jepa_parts);
        Tensor itc = loss_itc(g, concat_rows(g, v_rows), concat_rows(g, t_rows), config.tau_c);
        TotalLoss total = loss_total(g, per_modality, jepa, itc, config.alpha, config.beta,
                                     config.lambda, config.tau_c);
        if (!std::isfinite(total.report.total)) {
            throw NumericError("non-finite loss at step " + std::to_string(step));
        }

        g.backward(total.value);
        if (config.dry_run) {
            result.reports.push_back(total.report);
            result.steps = 1;
            return result;
        }

        auto trainable = model.named_trainable();
        if (config.grad_clip > 0.0) clip_gradients(trainable, config.grad_clip);
        const double lr = cosine_lr(step, total_steps, config.lr_base, warmup);
        optimizer.step(lr);
        for (auto& [name, t] : trainable) t.zero_grad();
        ema_update(model.xi, model.theta, config.ema_tau);

        const double wall_ms = std::chrono::duration<double, std::milli>(
                                   std::chrono::steady_clock::now() - t_start)
                                   .count();
        nlohmann::json j;
        j["step"] = step;
        j["lr"] = lr;
        nlohmann::json rec;
        for (const auto& [name, value] : total.report.rec) rec[name] = value;
        j["rec"] = rec;
        j["jepa"] = total.report.jepa;
        j["itc"] = total.report.itc;
        j["total"] = total.report.total;
        j["wall_ms"] = wall_ms;
        metrics << j.dump() << "\n";
        result.reports.push_back(total.report);

        if (config.checkpoint_every > 0 && cursor >= n_tiles &&
            (epoch + 1) % config.checkpoint_every == 0) {
            OptimizerBlob blob = optimizer.blob();
            save_checkpoint(ckpt_path, model, static_cast<uint64_t>(step), &blob);
        }
    }
    metrics.flush();

    OptimizerBlob blob = optimizer.blob();
    save_checkpoint(ckpt_path, model, static_cast<uint64_t>(total_steps), &blob);
    result.checkpoint_path = ckpt_path;
    result.metrics_path = metrics_path;
    result.steps = total_steps;
    return result;
}

}  // namespace geomeld

#pragma once

#include <map>
#include <string>
#include <vector>

#include "geomeld/model.hpp"
#include "geomeld/objectives.hpp"
#include "geomeld/tile_io.hpp"

namespace geomeld {

// ----------------------------------------------------------------------------
// configuration (flat key=value file, canonical form emitted with defaults)
// ----------------------------------------------------------------------------

struct TrainConfig {
    std::string manifest;
    std::string out_dir = "run";
    int64_t epochs = 0;      // 0: drive the run by max_steps
    int64_t max_steps = 200;
    int64_t batch_size = 32;
    double lr_base = 3e-3;
    double weight_decay = 0.05;
    int64_t warmup_steps = -1;  // -1: 5% of total steps
    double mask_ratio = 0.70;
    double target_fraction = 0.25;
    double ema_tau = 0.996;
    double alpha = 0.5;
    double beta = 0.4;
    double tau_c = 0.1;
    std::map<std::string, double> lambda;  // default 1.0 per modality
    uint64_t seed = 0;
    double grad_clip = 0.0;  // 0: off
    int64_t failure_budget = 8;
    int64_t checkpoint_every = 0;  // epochs between checkpoints; 0: final only
    bool dry_run = false;
    ModelConfig model;  // grid_h/grid_w are derived from the data

    void validate() const;
};

TrainConfig parse_train_config(const std::string& text);
TrainConfig load_train_config(const std::string& path);
// all keys materialized in sorted order
std::string canonical_config(const TrainConfig& config);

// ----------------------------------------------------------------------------
// optimizer
// ----------------------------------------------------------------------------

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.05;
};

// Decoupled weight decay: the decay shrink is applied separately from the
// bias-corrected moment step. Parameters without gradients still decay.
class AdamW {
public:
    AdamW(std::vector<std::pair<std::string, Tensor>> params, AdamWConfig config);

    void step(double lr);
    int64_t timestep() const { return t_; }
    const std::vector<std::pair<std::string, Tensor>>& params() const { return params_; }

    OptimizerBlob blob() const;
    void restore(const OptimizerBlob& blob);

private:
    std::vector<std::pair<std::string, Tensor>> params_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    AdamWConfig config_;
    int64_t t_ = 0;
};

// Linear warmup to lr_base then cosine decay to zero at total_steps.
double cosine_lr(int64_t step, int64_t total_steps, double lr_base, int64_t warmup_steps);

// ----------------------------------------------------------------------------
// training loop
// ----------------------------------------------------------------------------

struct TrainResult {
    std::string checkpoint_path;
    std::string metrics_path;
    std::vector<LossReport> reports;  // one per step
    int64_t steps = 0;
    int64_t tiles = 0;
    int64_t skipped_tiles = 0;
};

// Full pretraining run: batching, masking, forward on all branches, one
// backward, AdamW on theta/phi/decoders/psi/heads, EMA on xi, metrics and
// checkpoints. Bit-reproducible under a fixed seed.
TrainResult train(const TrainConfig& config);

// fixed normalization applied to continuous modalities before patching
struct ModalityNorm {
    double offset = 0.0;
    double scale = 1.0;  // normalized = (raw + offset) / scale
};
ModalityNorm modality_norm(const std::string& name);

// Tiles preloaded into patch-row tensors; shared between trainer and eval.
struct PreparedTile {
    std::string tile_id;
    std::map<std::string, Tensor> rows;  // continuous: [N x C*p^2], normalized
    std::map<std::string, std::vector<int64_t>> labels;  // categorical per patch
    std::vector<int64_t> tokens;
    int dominant_class = -1;
    std::string caption;
};

struct PreparedDataset {
    std::vector<PreparedTile> tiles;
    int64_t grid_h = 0;
    int64_t grid_w = 0;
    int64_t skipped = 0;
};

PreparedDataset prepare_dataset(const std::string& manifest_path, const ModelConfig& model,
                                int64_t text_len, int64_t failure_budget);
PreparedTile prepare_tile(const TileSample& tile, const ModelConfig& model,
                          const Tokenizer& tokenizer, int64_t text_len);

}  // namespace geomeld

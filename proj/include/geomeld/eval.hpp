#pragma once

#include <string>
#include <vector>

#include "geomeld/trainer.hpp"

namespace geomeld {

struct ProbeResult {
    double accuracy = 0.0;
    double baseline_accuracy = 0.0;  // probe on raw per-channel pixel means
    double chance = 0.0;             // 1 / distinct labels in the split
    int64_t classes = 0;
    int64_t train_count = 0;
    int64_t test_count = 0;
};

// Frozen-encoder linear probe on dominant-class labels: full (unmasked) tiles
// are embedded via the pooled latent, then a single linear layer is trained
// with cross-entropy under plain fixed-rate SGD.
ProbeResult linear_probe(ModelState& model, const PreparedDataset& train,
                         const PreparedDataset& test, int64_t epochs = 60, double lr = 0.5,
                         uint64_t seed = 0);

struct RetrievalResult {
    std::string direction;  // "image_to_text" or "text_to_image"
    int64_t k = 0;
    double recall = 0.0;
    int64_t queries = 0;
};

struct RetrievalPair {
    RetrievalResult image_to_text;
    RetrievalResult text_to_image;
};

// Bidirectional R@k over matched tile/caption pairs by cosine ranking.
RetrievalPair retrieval_recall(ModelState& model, const PreparedDataset& gallery, int64_t k);

// Ranking core, exposed for the harness self-test: sims is a row-major B x B
// similarity matrix, rows = image queries.
RetrievalPair recall_from_similarity(const std::vector<double>& sims, int64_t b, int64_t k);

struct ReconstructionRow {
    std::string modality;
    bool continuous = true;
    double value = 0.0;  // masked L1 (normalized units) or masked accuracy
};

// Masked-reconstruction error per modality over fixed mask seeds.
std::vector<ReconstructionRow> reconstruction_report(ModelState& model,
                                                     const PreparedDataset& tiles,
                                                     const std::vector<uint64_t>& mask_seeds,
                                                     double mask_ratio, double target_fraction);

// Pooled full-tile embedding (the probe feature) and projected embeddings.
Tensor embed_tile_pooled(ModelState& model, const PreparedTile& tile);
struct TileEmbedding {
    std::vector<double> v_prime;
    std::vector<double> t_prime;
};
TileEmbedding embed_tile_projected(ModelState& model, const PreparedTile& tile);

}  // namespace geomeld

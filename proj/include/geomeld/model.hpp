#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "geomeld/geodata.hpp"
#include "geomeld/masking.hpp"
#include "geomeld/tensor.hpp"

namespace geomeld {

struct EmptyCaptionError : std::runtime_error {
    explicit EmptyCaptionError(const std::string& msg)
        : std::runtime_error("empty caption: " + msg) {}
};

// ----------------------------------------------------------------------------
// configuration
// ----------------------------------------------------------------------------

struct ModelConfig {
    int64_t patch = 4;
    int64_t dim = 128;     // d: vision latent width
    int64_t blocks = 4;    // encoder depth
    int64_t mlp_ratio = 2;
    int64_t grid_h = 8;    // patch grid of the training tiles
    int64_t grid_w = 8;
    int64_t text_dim = 128;         // transformer width of the text encoder
    int64_t text_blocks = 6;
    int64_t text_len = 24;          // max caption tokens incl bos/eos
    int64_t text_embed_dim = 512;   // d_t
    int64_t contrastive_dim = 128;  // d_c
    std::vector<ModalitySpec> modalities = default_modalities();

    int64_t patch_count() const { return grid_h * grid_w; }
    int64_t patch_dim(const ModalitySpec& m) const { return m.channels_or_classes * patch * patch; }
    void validate() const;

    std::string to_text() const;
    static ModelConfig from_text(const std::string& text);
};

// ----------------------------------------------------------------------------
// parameters
// ----------------------------------------------------------------------------

// Named parameters in insertion order; tensors are shared handles, so views
// returned here stay live across training steps.
class ParamStore {
public:
    Tensor add(const std::string& name, Tensor t);
    const Tensor& get(const std::string& name) const;
    bool has(const std::string& name) const;
    const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
    std::vector<std::pair<std::string, Tensor>>& items() { return items_; }
    int64_t value_count() const;

private:
    std::vector<std::pair<std::string, Tensor>> items_;
    std::map<std::string, size_t> index_;
};

// ----------------------------------------------------------------------------
// tokenizer over the closed caption lexicon
// ----------------------------------------------------------------------------

class Tokenizer {
public:
    static constexpr int64_t kPad = 0;
    static constexpr int64_t kBos = 1;
    static constexpr int64_t kEos = 2;
    static constexpr int64_t kUnk = 3;

    Tokenizer();
    int64_t vocab_size() const { return static_cast<int64_t>(words_.size()) + 4; }
    // [bos, words..., eos] truncated and padded to max_len
    std::vector<int64_t> encode(const std::string& caption, int64_t max_len) const;

private:
    std::vector<std::string> words_;
    std::map<std::string, int64_t> ids_;
};

// ----------------------------------------------------------------------------
// model state
// ----------------------------------------------------------------------------

struct ModelState {
    ModelConfig config;
    ParamStore theta;  // online encoder
    ParamStore xi;     // EMA target encoder; never owns gradients
    ParamStore phi;    // JEPA predictor
    std::vector<std::pair<std::string, ParamStore>> decoders;  // per modality
    ParamStore psi;    // text encoder
    ParamStore heads;  // projection heads g_v, g_t
    Tokenizer tokenizer;
    uint64_t init_seed = 0;

    static ModelState init(const ModelConfig& config, uint64_t seed);

    // every trainable tensor: theta, phi, decoders, psi, heads -- never xi
    // (handles share storage, so mutating a returned tensor updates the model)
    std::vector<std::pair<std::string, Tensor>> named_trainable() const;
    std::vector<std::pair<std::string, Tensor>> named_all() const;  // + xi
    int64_t param_count() const;
    const ParamStore& decoder_for(const std::string& modality) const;
};

// ----------------------------------------------------------------------------
// forward operations
// ----------------------------------------------------------------------------

// Patch embedding + learned positional embedding + residual blocks
// (norm -> token attention -> channel MLP). One latent per visible patch.
Tensor encode_visible(Graph& g, const Tensor& patches, const std::vector<int64_t>& positions,
                      const ParamStore& encoder, const ModelConfig& config);

// Scatter latents to the full grid with a learned mask token, then a
// per-patch decoder head. Continuous: [N x C*p^2]; categorical: [N x classes].
Tensor decode_modality(Graph& g, const Tensor& z, const std::vector<int64_t>& visible,
                       const ModalitySpec& modality, const ModelState& model);

Raster decoded_rows_to_raster(const Tensor& rows, const ModalitySpec& modality,
                              const ModelConfig& config);
ClassMap decoded_rows_to_classmap(const Tensor& rows, const ModelConfig& config);

// Predictor conditioned on context latents plus target positional queries.
Tensor jepa_predict(Graph& g, const Tensor& z_ctx, const std::vector<int64_t>& ctx_positions,
                    const std::vector<int64_t>& tgt_positions, const ModelState& model);

// 6-block bidirectional attention over tokens; padding masked out of both
// attention and mean pooling; output dimension d_t.
Tensor encode_caption(Graph& g, const std::vector<int64_t>& tokens, const ParamStore& text_encoder,
                      const ModelConfig& config);

struct ProjectedPair {
    Tensor v;        // pooled vision latent [1 x d]
    Tensor v_prime;  // unit-norm [1 x d_c]
    Tensor t_prime;  // unit-norm [1 x d_c]
};

ProjectedPair pool_and_project(Graph& g, const Tensor& z_ctx, const Tensor& t,
                               const ModelState& model);

// xi <- tau*xi + (1-tau)*theta, elementwise, no gradient tracking.
void ema_update(ParamStore& xi, const ParamStore& theta, double tau);

// ----------------------------------------------------------------------------
// checkpointing
// ----------------------------------------------------------------------------

struct AdamSlot {
    std::string name;
    std::vector<double> m;
    std::vector<double> v;
};

struct OptimizerBlob {
    int64_t step = 0;  // shared Adam timestep
    std::vector<AdamSlot> slots;
};

// Versioned header + named little-endian parameter blobs + optimizer state +
// step counter; round-trip exact. Write is atomic (temp file then rename).
void save_checkpoint(const std::string& path, const ModelState& model, uint64_t step,
                     const OptimizerBlob* optimizer);

struct LoadedCheckpoint {
    ModelState model;
    uint64_t step = 0;
    std::optional<OptimizerBlob> optimizer;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace geomeld

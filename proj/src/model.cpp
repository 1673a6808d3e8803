#include "geomeld/model.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "geomeld/caption.hpp"
#include "geomeld/detail/bytes.hpp"

namespace geomeld {

// ----------------------------------------------------------------------------
// config
// ----------------------------------------------------------------------------

void ModelConfig::validate() const {
    if (patch < 1 || dim < 1 || blocks < 1 || mlp_ratio < 1) {
        throw ConfigError("model config: patch/dim/blocks/mlp_ratio must be positive");
    }
    if (grid_h < 1 || grid_w < 1) throw ConfigError("model config: empty patch grid");
    if (text_dim < 1 || text_blocks < 1 || text_len < 4 || text_embed_dim < 1 ||
        contrastive_dim < 1) {
        throw ConfigError("model config: invalid text/projection dimensions");
    }
    if (modalities.empty()) throw ConfigError("model config: no modalities registered");
    for (const auto& m : modalities) m.validate();
}

std::string ModelConfig::to_text() const {
    std::ostringstream os;
    os << "patch=" << patch << "\ndim=" << dim << "\nblocks=" << blocks
       << "\nmlp_ratio=" << mlp_ratio << "\ngrid_h=" << grid_h << "\ngrid_w=" << grid_w
       << "\ntext_dim=" << text_dim << "\ntext_blocks=" << text_blocks
       << "\ntext_len=" << text_len << "\ntext_embed_dim=" << text_embed_dim
       << "\ncontrastive_dim=" << contrastive_dim << "\n";
    for (const auto& m : modalities) {
        os << "modality." << m.name << "="
           << (m.kind == ModalityKind::continuous ? "continuous" : "categorical") << ":"
           << m.channels_or_classes << ":" << m.loss_weight << "\n";
    }
    return os.str();
}

ModelConfig ModelConfig::from_text(const std::string& text) {
    ModelConfig c;
    c.modalities.clear();
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("model config: bad line '" + line + "'");
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        if (key == "patch") c.patch = std::stoll(val);
        else if (key == "dim") c.dim = std::stoll(val);
        else if (key == "blocks") c.blocks = std::stoll(val);
        else if (key == "mlp_ratio") c.mlp_ratio = std::stoll(val);
        else if (key == "grid_h") c.grid_h = std::stoll(val);
        else if (key == "grid_w") c.grid_w = std::stoll(val);
        else if (key == "text_dim") c.text_dim = std::stoll(val);
        else if (key == "text_blocks") c.text_blocks = std::stoll(val);
        else if (key == "text_len") c.text_len = std::stoll(val);
        else if (key == "text_embed_dim") c.text_embed_dim = std::stoll(val);
        else if (key == "contrastive_dim") c.contrastive_dim = std::stoll(val);
        else if (key.rfind("modality.", 0) == 0) {
            ModalitySpec m;
            m.name = key.substr(9);
            const auto c1 = val.find(':');
            const auto c2 = val.find(':', c1 + 1);
            if (c1 == std::string::npos || c2 == std::string::npos) {
                throw ConfigError("model config: bad modality spec '" + val + "'");
            }
            m.kind = val.substr(0, c1) == "continuous" ? ModalityKind::continuous
                                                       : ModalityKind::categorical;
            m.channels_or_classes = std::stoll(val.substr(c1 + 1, c2 - c1 - 1));
            m.loss_weight = std::stod(val.substr(c2 + 1));
            c.modalities.push_back(std::move(m));
        } else {
            throw ConfigError("model config: unknown key '" + key + "'");
        }
    }
    c.validate();
    return c;
}

// ----------------------------------------------------------------------------
// parameter store
// ----------------------------------------------------------------------------

Tensor ParamStore::add(const std::string& name, Tensor t) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    index_[name] = items_.size();
    items_.emplace_back(name, t);
    return t;
}

const Tensor& ParamStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return items_[it->second].second;
}

bool ParamStore::has(const std::string& name) const { return index_.count(name) > 0; }

int64_t ParamStore::value_count() const {
    int64_t n = 0;
    for (const auto& [name, t] : items_) n += t.numel();
    return n;
}

// ----------------------------------------------------------------------------
// tokenizer
// ----------------------------------------------------------------------------

Tokenizer::Tokenizer() : words_(caption_vocabulary()) {
    for (size_t i = 0; i < words_.size(); ++i) {
        ids_[words_[i]] = static_cast<int64_t>(i) + 4;
    }
}

std::vector<int64_t> Tokenizer::encode(const std::string& caption, int64_t max_len) const {
    std::vector<int64_t> out;
    out.push_back(kBos);
    std::istringstream is(caption);
    std::string w;
    while (is >> w && static_cast<int64_t>(out.size()) < max_len - 1) {
        auto it = ids_.find(w);
        out.push_back(it == ids_.end() ? kUnk : it->second);
    }
    out.push_back(kEos);
    while (static_cast<int64_t>(out.size()) < max_len) out.push_back(kPad);
    return out;
}

// ----------------------------------------------------------------------------
// initialization
// ----------------------------------------------------------------------------

namespace {

void add_linear(ParamStore& s, Rng& rng, const std::string& name, int64_t in, int64_t out) {
    s.add(name + ".w", Tensor::randn({in, out}, rng, 1.0 / std::sqrt(static_cast<double>(in)), true));
    s.add(name + ".b", Tensor::zeros({1, out}, true));
}

void add_layernorm(ParamStore& s, const std::string& name, int64_t width) {
    s.add(name + ".g", Tensor::full({1, width}, 1.0, true));
    s.add(name + ".b", Tensor::zeros({1, width}, true));
}

void add_linear_nobias(ParamStore& s, Rng& rng, const std::string& name, int64_t in,
                       int64_t out) {
    s.add(name + ".w", Tensor::randn({in, out}, rng, 1.0 / std::sqrt(static_cast<double>(in)), true));
}

void add_block(ParamStore& s, Rng& rng, const std::string& prefix, int64_t dim, int64_t hidden) {
    add_layernorm(s, prefix + ".ln1", dim);
    add_linear(s, rng, prefix + ".attn.q", dim, dim);
    // no key bias: softmax scores are invariant to a per-query constant shift
    add_linear_nobias(s, rng, prefix + ".attn.k", dim, dim);
    add_linear(s, rng, prefix + ".attn.v", dim, dim);
    add_linear(s, rng, prefix + ".attn.o", dim, dim);
    add_layernorm(s, prefix + ".ln2", dim);
    add_linear(s, rng, prefix + ".mlp.fc1", dim, hidden);
    add_linear(s, rng, prefix + ".mlp.fc2", hidden, dim);
}

ParamStore make_encoder_params(const ModelConfig& c, Rng& rng, int64_t input_patch_dim) {
    ParamStore s;
    add_linear(s, rng, "embed", input_patch_dim, c.dim);
    s.add("pos", Tensor::randn({c.patch_count(), c.dim}, rng, 0.1, true));
    for (int64_t b = 0; b < c.blocks; ++b) {
        add_block(s, rng, "blk" + std::to_string(b), c.dim, c.dim * c.mlp_ratio);
    }
    return s;
}

// residual pre-norm block; key_bias (optional [1 x T]) masks padded keys
Tensor block_forward(Graph& g, Tensor x, const ParamStore& s, const std::string& prefix,
                     int64_t dim, const Tensor* key_bias) {
    Tensor h = layer_norm_rows(g, x, s.get(prefix + ".ln1.g"), s.get(prefix + ".ln1.b"));
    Tensor q = add_row(g, matmul(g, h, s.get(prefix + ".attn.q.w")), s.get(prefix + ".attn.q.b"));
    Tensor k = matmul(g, h, s.get(prefix + ".attn.k.w"));
    Tensor v = add_row(g, matmul(g, h, s.get(prefix + ".attn.v.w")), s.get(prefix + ".attn.v.b"));
    Tensor scores = scale(g, matmul(g, q, transpose(g, k)), 1.0 / std::sqrt(static_cast<double>(dim)));
    if (key_bias != nullptr) scores = add_row(g, scores, *key_bias);
    Tensor attn = matmul(g, softmax_rows(g, scores), v);
    Tensor out = add_row(g, matmul(g, attn, s.get(prefix + ".attn.o.w")), s.get(prefix + ".attn.o.b"));
    x = add(g, x, out);

    Tensor h2 = layer_norm_rows(g, x, s.get(prefix + ".ln2.g"), s.get(prefix + ".ln2.b"));
    Tensor m1 = gelu(g, add_row(g, matmul(g, h2, s.get(prefix + ".mlp.fc1.w")),
                                s.get(prefix + ".mlp.fc1.b")));
    Tensor m2 = add_row(g, matmul(g, m1, s.get(prefix + ".mlp.fc2.w")), s.get(prefix + ".mlp.fc2.b"));
    return add(g, x, m2);
}

}  // namespace

ModelState ModelState::init(const ModelConfig& config, uint64_t seed) {
    config.validate();
    ModelState m;
    m.config = config;
    m.init_seed = seed;
    Rng rng(derive_seed(seed, 0xE17));

    // the encoder consumes S2 patches
    const ModalitySpec* s2 = nullptr;
    for (const auto& mod : config.modalities) {
        if (mod.name == "s2") s2 = &mod;
    }
    if (s2 == nullptr) throw ConfigError("model init: s2 modality missing");
    const int64_t in_dim = config.patch_dim(*s2);

    m.theta = make_encoder_params(config, rng, in_dim);

    // xi starts as an exact copy of theta and never requires gradients
    for (const auto& [name, t] : m.theta.items()) {
        m.xi.add(name, Tensor::from_data(t.shape(), t.data_vec(), false));
    }

    // predictor: positional queries + one cross-attention block + out proj
    m.phi.add("query_pos", Tensor::randn({config.patch_count(), config.dim}, rng, 0.1, true));
    add_layernorm(m.phi, "ln_q", config.dim);
    add_layernorm(m.phi, "ln_kv", config.dim);
    add_linear(m.phi, rng, "attn.q", config.dim, config.dim);
    add_linear_nobias(m.phi, rng, "attn.k", config.dim, config.dim);
    add_linear(m.phi, rng, "attn.v", config.dim, config.dim);
    add_linear(m.phi, rng, "attn.o", config.dim, config.dim);
    add_layernorm(m.phi, "ln_mlp", config.dim);
    add_linear(m.phi, rng, "mlp.fc1", config.dim, config.dim * config.mlp_ratio);
    add_linear(m.phi, rng, "mlp.fc2", config.dim * config.mlp_ratio, config.dim);
    add_linear(m.phi, rng, "out", config.dim, config.dim);

    for (const auto& mod : config.modalities) {
        ParamStore dec;
        dec.add("mask_token", Tensor::randn({1, config.dim}, rng, 0.1, true));
        add_layernorm(dec, "ln", config.dim);
        const int64_t out = mod.kind == ModalityKind::continuous ? config.patch_dim(mod)
                                                                 : mod.channels_or_classes;
        add_linear(dec, rng, "fc1", config.dim, config.dim);
        add_linear(dec, rng, "fc2", config.dim, out);
        m.decoders.emplace_back(mod.name, std::move(dec));
    }

    const int64_t vocab = m.tokenizer.vocab_size();
    m.psi.add("tok_embed", Tensor::randn({vocab, config.text_dim}, rng, 0.1, true));
    m.psi.add("pos", Tensor::randn({config.text_len, config.text_dim}, rng, 0.1, true));
    for (int64_t b = 0; b < config.text_blocks; ++b) {
        add_block(m.psi, rng, "blk" + std::to_string(b), config.text_dim,
                  config.text_dim * config.mlp_ratio);
    }
    add_linear(m.psi, rng, "out", config.text_dim, config.text_embed_dim);

    add_linear(m.heads, rng, "gv.fc1", config.dim, config.dim);
    add_linear(m.heads, rng, "gv.fc2", config.dim, config.contrastive_dim);
    add_linear(m.heads, rng, "gt.fc1", config.text_embed_dim, config.dim);
    add_linear(m.heads, rng, "gt.fc2", config.dim, config.contrastive_dim);
    return m;
}

std::vector<std::pair<std::string, Tensor>> ModelState::named_trainable() const {
    std::vector<std::pair<std::string, Tensor>> out;
    auto take = [&](const std::string& prefix, const ParamStore& s) {
        for (const auto& [name, t] : s.items()) out.emplace_back(prefix + "/" + name, t);
    };
    take("theta", theta);
    take("phi", phi);
    for (const auto& [name, dec] : decoders) take("dec." + name, dec);
    take("psi", psi);
    take("heads", heads);
    return out;
}

std::vector<std::pair<std::string, Tensor>> ModelState::named_all() const {
    auto out = named_trainable();
    for (const auto& [name, t] : xi.items()) out.emplace_back("xi/" + name, t);
    return out;
}

int64_t ModelState::param_count() const {
    int64_t n = theta.value_count() + xi.value_count() + phi.value_count() + psi.value_count() +
                heads.value_count();
    for (const auto& [name, dec] : decoders) n += dec.value_count();
    return n;
}

const ParamStore& ModelState::decoder_for(const std::string& modality) const {
    for (const auto& [name, dec] : decoders) {
        if (name == modality) return dec;
    }
    throw ConfigError("no decoder registered for modality " + modality);
}

// ----------------------------------------------------------------------------
// forward ops
// ----------------------------------------------------------------------------

Tensor encode_visible(Graph& g, const Tensor& patches, const std::vector<int64_t>& positions,
                      const ParamStore& encoder, const ModelConfig& config) {
    if (patches.rows() != static_cast<int64_t>(positions.size())) {
        throw ShapeError("encode_visible: " + std::to_string(positions.size()) +
                         " positions for " + std::to_string(patches.rows()) + " patches");
    }
    Tensor x = add_row(g, matmul(g, patches, encoder.get("embed.w")), encoder.get("embed.b"));
    x = add(g, x, gather_rows(g, encoder.get("pos"), positions));
    for (int64_t b = 0; b < config.blocks; ++b) {
        x = block_forward(g, x, encoder, "blk" + std::to_string(b), config.dim, nullptr);
    }
    return x;
}

Tensor decode_modality(Graph& g, const Tensor& z, const std::vector<int64_t>& visible,
                       const ModalitySpec& modality, const ModelState& model) {
    const ParamStore& dec = model.decoder_for(modality.name);
    Tensor grid = scatter_rows(g, z, visible, model.config.patch_count(), dec.get("mask_token"));
    Tensor h = layer_norm_rows(g, grid, dec.get("ln.g"), dec.get("ln.b"));
    Tensor u = gelu(g, add_row(g, matmul(g, h, dec.get("fc1.w")), dec.get("fc1.b")));
    return add_row(g, matmul(g, u, dec.get("fc2.w")), dec.get("fc2.b"));
}

Raster decoded_rows_to_raster(const Tensor& rows, const ModalitySpec& modality,
                              const ModelConfig& config) {
    if (modality.kind != ModalityKind::continuous) {
        throw ConfigError("decoded_rows_to_raster: modality " + modality.name +
                          " is not continuous");
    }
    const int64_t p = config.patch;
    const int64_t c = modality.channels_or_classes;
    Raster out = Raster::zeros(c, config.grid_h * p, config.grid_w * p);
    PatchSequence seq;
    seq.count = rows.rows();
    seq.dim = rows.cols();
    seq.values = rows.data_vec();
    std::vector<int64_t> all(static_cast<size_t>(config.patch_count()));
    for (int64_t i = 0; i < config.patch_count(); ++i) all[static_cast<size_t>(i)] = i;
    scatter_visible(out, seq, all, p);
    return out;
}

ClassMap decoded_rows_to_classmap(const Tensor& rows, const ModelConfig& config) {
    const int64_t p = config.patch;
    ClassMap out = ClassMap::zeros(config.grid_h * p, config.grid_w * p);
    for (int64_t i = 0; i < rows.rows(); ++i) {
        int64_t best = 0;
        for (int64_t c = 1; c < rows.cols(); ++c) {
            if (rows.at(i, c) > rows.at(i, best)) best = c;
        }
        const int64_t py = i / config.grid_w;
        const int64_t px = i % config.grid_w;
        for (int64_t dy = 0; dy < p; ++dy) {
            for (int64_t dx = 0; dx < p; ++dx) {
                out.at(py * p + dy, px * p + dx) = static_cast<uint8_t>(best);
            }
        }
    }
    return out;
}

Tensor jepa_predict(Graph& g, const Tensor& z_ctx, const std::vector<int64_t>& ctx_positions,
                    const std::vector<int64_t>& tgt_positions, const ModelState& model) {
    std::set<int64_t> ctx(ctx_positions.begin(), ctx_positions.end());
    for (int64_t t : tgt_positions) {
        if (ctx.count(t)) {
            throw ContractError("jepa_predict: target position " + std::to_string(t) +
                                " overlaps the context set");
        }
    }
    const ParamStore& s = model.phi;
    const int64_t dim = model.config.dim;
    Tensor queries = gather_rows(g, s.get("query_pos"), tgt_positions);
    Tensor qn = layer_norm_rows(g, queries, s.get("ln_q.g"), s.get("ln_q.b"));
    Tensor kvn = layer_norm_rows(g, z_ctx, s.get("ln_kv.g"), s.get("ln_kv.b"));
    Tensor q = add_row(g, matmul(g, qn, s.get("attn.q.w")), s.get("attn.q.b"));
    Tensor k = matmul(g, kvn, s.get("attn.k.w"));
    Tensor v = add_row(g, matmul(g, kvn, s.get("attn.v.w")), s.get("attn.v.b"));
    Tensor scores = scale(g, matmul(g, q, transpose(g, k)), 1.0 / std::sqrt(static_cast<double>(dim)));
    Tensor attn = matmul(g, softmax_rows(g, scores), v);
    Tensor x = add(g, queries, add_row(g, matmul(g, attn, s.get("attn.o.w")), s.get("attn.o.b")));
    Tensor h = layer_norm_rows(g, x, s.get("ln_mlp.g"), s.get("ln_mlp.b"));
    Tensor m1 = gelu(g, add_row(g, matmul(g, h, s.get("mlp.fc1.w")), s.get("mlp.fc1.b")));
    Tensor m2 = add_row(g, matmul(g, m1, s.get("mlp.fc2.w")), s.get("mlp.fc2.b"));
    x = add(g, x, m2);
    return add_row(g, matmul(g, x, s.get("out.w")), s.get("out.b"));
}

Tensor encode_caption(Graph& g, const std::vector<int64_t>& tokens, const ParamStore& text_encoder,
                      const ModelConfig& config) {
    const int64_t len = static_cast<int64_t>(tokens.size());
    if (len < 1 || len > config.text_len) {
        throw ShapeError("encode_caption: token count " + std::to_string(len) +
                         " outside [1, " + std::to_string(config.text_len) + "]");
    }
    std::vector<bool> real(tokens.size());
    bool any_real = false;
    for (size_t i = 0; i < tokens.size(); ++i) {
        real[i] = tokens[i] != Tokenizer::kPad;
        any_real = any_real || real[i];
    }
    if (!any_real) throw EmptyCaptionError("all tokens are padding");

    std::vector<int64_t> positions(tokens.size());
    for (size_t i = 0; i < tokens.size(); ++i) positions[i] = static_cast<int64_t>(i);
    Tensor x = add(g, gather_rows(g, text_encoder.get("tok_embed"), tokens),
                   gather_rows(g, text_encoder.get("pos"), positions));

    // padded keys are pushed out of every softmax row
    Tensor key_bias = Tensor::zeros({1, len});
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (!real[i]) key_bias.data()[i] = -1e9;
    }
    for (int64_t b = 0; b < config.text_blocks; ++b) {
        x = block_forward(g, x, text_encoder, "blk" + std::to_string(b), config.text_dim,
                          &key_bias);
    }
    Tensor states = add_row(g, matmul(g, x, text_encoder.get("out.w")), text_encoder.get("out.b"));
    return mean_rows_masked(g, states, real);
}

ProjectedPair pool_and_project(Graph& g, const Tensor& z_ctx, const Tensor& t,
                               const ModelState& model) {
    const ParamStore& s = model.heads;
    ProjectedPair out;
    out.v = mean_rows(g, z_ctx);
    Tensor hv = gelu(g, add_row(g, matmul(g, out.v, s.get("gv.fc1.w")), s.get("gv.fc1.b")));
    out.v_prime = l2_normalize_rows(
        g, add_row(g, matmul(g, hv, s.get("gv.fc2.w")), s.get("gv.fc2.b")));
    Tensor ht = gelu(g, add_row(g, matmul(g, t, s.get("gt.fc1.w")), s.get("gt.fc1.b")));
    out.t_prime = l2_normalize_rows(
        g, add_row(g, matmul(g, ht, s.get("gt.fc2.w")), s.get("gt.fc2.b")));
    return out;
}

void ema_update(ParamStore& xi, const ParamStore& theta, double tau) {
    if (tau < 0.0 || tau > 1.0) {
        throw ConfigError("ema_update: tau must be in [0, 1], got " + std::to_string(tau));
    }
    if (xi.items().size() != theta.items().size()) {
        throw ContractError("ema_update: parameter stores differ in size");
    }
    for (size_t i = 0; i < xi.items().size(); ++i) {
        Tensor& xt = xi.items()[i].second;
        const Tensor& tt = theta.items()[i].second;
        if (xi.items()[i].first != theta.items()[i].first || xt.shape() != tt.shape()) {
            throw ContractError("ema_update: mismatch at parameter " + xi.items()[i].first);
        }
        double* xd = xt.data();
        const double* td = tt.data();
        const int64_t n = xt.numel();
        for (int64_t j = 0; j < n; ++j) xd[j] = tau * xd[j] + (1.0 - tau) * td[j];
    }
}

// ----------------------------------------------------------------------------
// checkpointing
// ----------------------------------------------------------------------------

namespace {

constexpr char kCkptMagic[8] = {'G', 'M', 'L', 'D', 'C', 'K', 'P', 'T'};
constexpr uint32_t kCkptVersion = 1;

uint32_t crc_of(const uint8_t* p, size_t n) {
    return static_cast<uint32_t>(::crc32(0L, p, static_cast<uInt>(n)));
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelState& model, uint64_t step,
                     const OptimizerBlob* optimizer) {
    detail::ByteWriter w;
    w.raw(kCkptMagic, sizeof(kCkptMagic));
    w.u32(kCkptVersion);
    w.u64(step);
    w.u64(model.init_seed);
    w.str(model.config.to_text());

    auto named = model.named_all();
    w.u32(static_cast<uint32_t>(named.size()));
    for (const auto& [name, t] : named) {
        w.str(name);
        w.u32(static_cast<uint32_t>(t.shape().size()));
        for (int64_t d : t.shape()) w.i64(d);
        w.f64s(t.data_vec());
    }

    w.u8(optimizer != nullptr ? 1 : 0);
    if (optimizer != nullptr) {
        w.i64(optimizer->step);
        w.u32(static_cast<uint32_t>(optimizer->slots.size()));
        for (const auto& slot : optimizer->slots) {
            w.str(slot.name);
            w.f64s(slot.m);
            w.f64s(slot.v);
        }
    }
    w.u32(crc_of(w.bytes.data(), w.bytes.size()));

    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw DataError("save_checkpoint: cannot open " + tmp);
        f.write(reinterpret_cast<const char*>(w.bytes.data()),
                static_cast<std::streamsize>(w.bytes.size()));
        if (!f) throw DataError("save_checkpoint: short write to " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw DataError("load_checkpoint: cannot open " + path);
    const std::streamsize size = f.tellg();
    f.seekg(0);
    std::vector<uint8_t> bytes(static_cast<size_t>(size));
    f.read(reinterpret_cast<char*>(bytes.data()), size);
    if (!f) throw DataError("load_checkpoint: short read from " + path);

    if (bytes.size() < sizeof(kCkptMagic) ||
        std::memcmp(bytes.data(), kCkptMagic, sizeof(kCkptMagic)) != 0) {
        throw BadMagicError("not a checkpoint file: " + path);
    }
    if (bytes.size() < sizeof(kCkptMagic) + 8) throw ChecksumError("checkpoint too short");
    uint32_t version;
    std::memcpy(&version, bytes.data() + sizeof(kCkptMagic), 4);
    if (version != kCkptVersion) {
        throw BadVersionError("checkpoint version " + std::to_string(version));
    }
    uint32_t stored;
    std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
    if (stored != crc_of(bytes.data(), bytes.size() - 4)) {
        throw ChecksumError("checkpoint " + path);
    }

    detail::ByteReader r(bytes.data(), bytes.size() - 4);
    char magic[8];
    r.raw(magic, 8);
    r.u32();
    LoadedCheckpoint out{ModelState{}, 0, std::nullopt};
    out.step = r.u64();
    const uint64_t init_seed = r.u64();
    const ModelConfig config = ModelConfig::from_text(r.str());
    out.model = ModelState::init(config, init_seed);

    std::map<std::string, Tensor> by_name;
    for (auto& [name, t] : out.model.named_all()) by_name.emplace(name, t);
    const uint32_t n_params = r.u32();
    if (n_params != by_name.size()) {
        throw DataError("checkpoint parameter count " + std::to_string(n_params) +
                        " does not match the rebuilt model (" + std::to_string(by_name.size()) +
                        ")");
    }
    for (uint32_t i = 0; i < n_params; ++i) {
        const std::string name = r.str();
        const uint32_t rank = r.u32();
        Shape shape(rank);
        for (uint32_t d = 0; d < rank; ++d) shape[d] = r.i64();
        std::vector<double> data = r.f64s();
        auto it = by_name.find(name);
        if (it == by_name.end()) throw DataError("checkpoint has unknown parameter " + name);
        if (it->second.shape() != shape) {
            throw DataError("checkpoint shape mismatch for " + name);
        }
        it->second.data_vec() = std::move(data);
    }

    if (r.u8() == 1) {
        OptimizerBlob blob;
        blob.step = r.i64();
        const uint32_t n_slots = r.u32();
        blob.slots.resize(n_slots);
        for (uint32_t i = 0; i < n_slots; ++i) {
            blob.slots[i].name = r.str();
            blob.slots[i].m = r.f64s();
            blob.slots[i].v = r.f64s();
        }
        out.optimizer = std::move(blob);
    }
    return out;
}

}  // namespace geomeld

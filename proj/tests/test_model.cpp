#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <filesystem>

#include "geomeld/model.hpp"
#include "geomeld/objectives.hpp"

using namespace geomeld;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.patch = 4;
    c.dim = 16;
    c.blocks = 2;
    c.mlp_ratio = 2;
    c.grid_h = 4;
    c.grid_w = 4;
    c.text_dim = 16;
    c.text_blocks = 6;
    c.text_len = 16;
    c.text_embed_dim = 512;
    c.contrastive_dim = 8;
    return c;
}

Tensor random_patches(int64_t count, int64_t dim, uint64_t seed) {
    Rng rng(seed);
    return Tensor::randn({count, dim}, rng, 0.5);
}

}  // namespace

TEST_CASE("xi mirrors theta exactly after initialization") {
    ModelState m = ModelState::init(tiny_config(), 3);
    REQUIRE(m.xi.items().size() == m.theta.items().size());
    for (size_t i = 0; i < m.xi.items().size(); ++i) {
        const auto& [xn, xt] = m.xi.items()[i];
        const auto& [tn, tt] = m.theta.items()[i];
        CHECK(xn == tn);
        CHECK(xt.data_vec() == tt.data_vec());
        CHECK_FALSE(xt.requires_grad());
        CHECK(tt.requires_grad());
    }
}

TEST_CASE("encoder output has one latent per visible patch") {
    ModelConfig c = tiny_config();
    ModelState m = ModelState::init(c, 5);
    Graph g;
    Tensor patches = random_patches(7, c.patch_dim(c.modalities[0]), 11);
    Tensor z = encode_visible(g, patches, {0, 2, 3, 5, 8, 13, 15}, m.theta, c);
    CHECK(z.rows() == 7);
    CHECK(z.cols() == c.dim);
    CHECK(all_finite(z));
}

TEST_CASE("encoder rejects out-of-grid positions") {
    ModelConfig c = tiny_config();
    ModelState m = ModelState::init(c, 5);
    Graph g;
    Tensor patches = random_patches(2, c.patch_dim(c.modalities[0]), 11);
    CHECK_THROWS_AS(encode_visible(g, patches, {0, 16}, m.theta, c), IndexError);
}

TEST_CASE("encoder is permutation-equivariant over (patch, position) pairs") {
    ModelConfig c = tiny_config();
    ModelState m = ModelState::init(c, 7);
    const int64_t n = 6;
    Tensor patches = random_patches(n, c.patch_dim(c.modalities[0]), 13);
    std::vector<int64_t> pos = {1, 4, 7, 9, 12, 14};

    Graph g;
    Tensor z = encode_visible(g, patches, pos, m.theta, c);

    const std::vector<int64_t> perm = {3, 0, 5, 1, 4, 2};
    std::vector<double> pdata;
    std::vector<int64_t> ppos;
    for (int64_t i : perm) {
        for (int64_t j = 0; j < patches.cols(); ++j) pdata.push_back(patches.at(i, j));
        ppos.push_back(pos[static_cast<size_t>(i)]);
    }
    Graph g2;
    Tensor z2 = encode_visible(g2, Tensor::from_data({n, patches.cols()}, pdata), ppos, m.theta, c);
    for (size_t i = 0; i < perm.size(); ++i) {
        for (int64_t j = 0; j < c.dim; ++j) {
            CHECK(z2.at(static_cast<int64_t>(i), j) ==
                  doctest::Approx(z.at(perm[i], j)).epsilon(1e-9));
        }
    }
}

TEST_CASE("zeroing block output projections reduces the encoder to embed+positions") {
    ModelConfig c = tiny_config();
    ModelState m = ModelState::init(c, 9);
    for (int64_t b = 0; b < c.blocks; ++b) {
        const std::string p = "blk" + std::to_string(b);
        for (const char* name : {".attn.o.w", ".attn.o.b", ".mlp.fc2.w", ".mlp.fc2.b"}) {
            Tensor t = m.theta.get(p + name);
            std::fill(t.data_vec().begin(), t.data_vec().end(), 0.0);
        }
    }
    Graph g;
    Tensor patches = random_patches(3, c.patch_dim(c.modalities[0]), 17);
    std::vector<int64_t> pos = {2, 5, 11};
    Tensor z = encode_visible(g, patches, pos, m.theta, c);

    Tensor embedded = add_row(g, matmul(g, patches, m.theta.get("embed.w")), m.theta.get("embed.b"));
    Tensor expect = add(g, embedded, gather_rows(g, m.theta.get("pos"), pos));
    for (int64_t i = 0; i < z.numel(); ++i) {
        CHECK(z.at(i) == doctest::Approx(expect.at(i)).epsilon(1e-12));
    }
}

TEST_CASE("decoder output shapes per modality kind") {
    ModelConfig c = tiny_config();
    ModelState m = ModelState::init(c, 21);
    Graph g;
    Tensor patches = random_patches(5, c.patch_dim(c.modalities[0]), 19);
    std::vector<int64_t> vis = {0, 3, 6, 9, 12};
    Tensor z = encode_visible(g, patches, vis, m.theta, c);

    for (const auto& mod : c.modalities) {
        Tensor rows = decode_modality(g, z, vis, mod, m);
        CHECK(rows.rows() == c.patch_count());
        if (mod.kind == ModalityKind::continuous) {
            CHECK(rows.cols() == mod.channels_or_classes * c.patch * c.patch);
            Raster raster = decoded_rows_to_raster(rows, mod, c);
            CHECK(raster.channels == mod.channels_or_classes);
            CHECK(raster.height == c.grid_h * c.patch);
            CHECK(raster.width == c.grid_w * c.patch);
        } else {
            CHECK(rows.cols() == mod.channels_or_classes);
            ClassMap cm = decoded_rows_to_classmap(rows, c);
            CHECK(cm.height == c.grid_h * c.patch);
        }
    }

    ModalitySpec unknown{"thermal", ModalityKind::continuous, 1, 1.0};
    CHECK_THROWS_AS(decode_modality(g, z, vis, unknown, m), ConfigError);
}

TEST_CASE("jepa_predict output count, determinism, and overlap rejection") {
    ModelConfig c = tiny_config();
    ModelState m = ModelState::init(c, 23);
    Graph g;
    Tensor patches = random_patches(5, c.patch_dim(c.modalities[0]), 29);
    std::vector<int64_t> ctx = {0, 3, 6, 9, 12};
    std::vector<int64_t> tgt = {1, 4, 13};
    Tensor z = encode_visible(g, patches, ctx, m.theta, c);
    Tensor pred = jepa_predict(g, z, ctx, tgt, m);
    CHECK(pred.rows() == 3);
    CHECK(pred.cols() == c.dim);

    Graph g2;
    Tensor z2 = encode_visible(g2, patches, ctx, m.theta, c);
    Tensor pred2 = jepa_predict(g2, z2, ctx, tgt, m);
    CHECK(pred.data_vec() == pred2.data_vec());

    CHECK_THROWS_AS(jepa_predict(g, z, ctx, {0, 1}, m), ContractError);
}

TEST_CASE("jepa gradients reach phi and theta but never xi") {
    ModelConfig c = tiny_config();
    ModelState m = ModelState::init(c, 31);
    Graph g;
    Tensor ctx_patches = random_patches(5, c.patch_dim(c.modalities[0]), 37);
    Tensor tgt_patches = random_patches(3, c.patch_dim(c.modalities[0]), 41);
    std::vector<int64_t> ctx = {0, 3, 6, 9, 12};
    std::vector<int64_t> tgt = {1, 4, 13};

    Tensor z_ctx = encode_visible(g, ctx_patches, ctx, m.theta, c);
    Tensor z_tgt = encode_visible(g, tgt_patches, tgt, m.xi, c);
    Tensor pred = jepa_predict(g, z_ctx, ctx, tgt, m);
    Tensor loss = loss_jepa(g, pred, z_tgt);
    g.backward(loss);

    for (const auto& [name, t] : m.xi.items()) {
        INFO("xi param ", name);
        CHECK_FALSE(t.has_grad());
    }
    double theta_grad_norm = 0.0;
    for (auto& [name, t] : m.theta.items()) {
        if (!t.has_grad()) continue;
        for (double v : t.grad_view()) theta_grad_norm += v * v;
    }
    CHECK(theta_grad_norm > 0.0);
    double phi_grad_norm = 0.0;
    for (auto& [name, t] : m.phi.items()) {
        if (!t.has_grad()) continue;
        for (double v : t.grad_view()) phi_grad_norm += v * v;
    }
    CHECK(phi_grad_norm > 0.0);
}

TEST_CASE("caption encoding: d_t, padding invariance, collisions, all-pad error") {
    ModelConfig c = tiny_config();
    ModelState m = ModelState::init(c, 43);
    const std::string caption = "a forest landscape with patches of grassland";

    Graph g;
    auto toks_short = m.tokenizer.encode(caption, 12);
    auto toks_long = m.tokenizer.encode(caption, 16);
    Tensor t1 = encode_caption(g, toks_short, m.psi, c);
    CHECK(t1.cols() == 512);
    Tensor t2 = encode_caption(g, toks_long, m.psi, c);
    for (int64_t i = 0; i < t1.numel(); ++i) {
        CHECK(t1.at(i) == doctest::Approx(t2.at(i)).epsilon(1e-6));
    }

    Tensor other = encode_caption(g, m.tokenizer.encode("open water bordered by snow", 16), m.psi, c);
    double diff = 0.0;
    for (int64_t i = 0; i < t1.numel(); ++i) diff += std::abs(t1.at(i) - other.at(i));
    CHECK(diff > 1e-3);

    std::vector<int64_t> all_pad(8, Tokenizer::kPad);
    CHECK_THROWS_AS(encode_caption(g, all_pad, m.psi, c), EmptyCaptionError);
}

TEST_CASE("pool_and_project normalizes both embeddings") {
    ModelConfig c = tiny_config();
    ModelState m = ModelState::init(c, 47);
    Graph g;
    Rng rng(53);
    Tensor z = Tensor::randn({6, c.dim}, rng);
    Tensor t = Tensor::randn({1, c.text_embed_dim}, rng);
    ProjectedPair p = pool_and_project(g, z, t, m);
    CHECK(p.v_prime.cols() == c.contrastive_dim);
    CHECK(p.t_prime.cols() == c.contrastive_dim);
    double nv = 0.0, nt = 0.0;
    for (int64_t i = 0; i < p.v_prime.numel(); ++i) nv += p.v_prime.at(i) * p.v_prime.at(i);
    for (int64_t i = 0; i < p.t_prime.numel(); ++i) nt += p.t_prime.at(i) * p.t_prime.at(i);
    CHECK(std::sqrt(nv) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(std::sqrt(nt) == doctest::Approx(1.0).epsilon(1e-6));

    // identical rows pool to that row
    std::vector<double> row(static_cast<size_t>(c.dim));
    for (size_t i = 0; i < row.size(); ++i) row[i] = 0.1 * static_cast<double>(i) - 0.5;
    std::vector<double> data;
    for (int r = 0; r < 4; ++r) data.insert(data.end(), row.begin(), row.end());
    Graph g2;
    ProjectedPair p2 = pool_and_project(g2, Tensor::from_data({4, c.dim}, data), t, m);
    for (int64_t i = 0; i < c.dim; ++i) {
        CHECK(p2.v.at(0, i) == doctest::Approx(row[static_cast<size_t>(i)]).epsilon(1e-12));
    }
}

TEST_CASE("ema_update endpoint and contraction behavior") {
    ModelConfig c = tiny_config();
    ModelState m = ModelState::init(c, 59);
    Rng rng(61);
    for (auto& [name, t] : m.theta.items()) {
        for (double& v : t.data_vec()) v += rng.normal() * 0.1;
    }
    std::vector<double> xi_before = m.xi.items()[0].second.data_vec();

    ema_update(m.xi, m.theta, 1.0);  // tau=1: xi unchanged
    CHECK(m.xi.items()[0].second.data_vec() == xi_before);

    ema_update(m.xi, m.theta, 0.0);  // tau=0: xi == theta
    for (size_t i = 0; i < m.xi.items().size(); ++i) {
        CHECK(m.xi.items()[i].second.data_vec() == m.theta.items()[i].second.data_vec());
    }

    CHECK_THROWS_AS(ema_update(m.xi, m.theta, -0.1), ConfigError);
    CHECK_THROWS_AS(ema_update(m.xi, m.theta, 1.5), ConfigError);
}

TEST_CASE("scalar ema oracle: tau=0.996 moves 0 toward 1 by 0.004") {
    ParamStore xi, theta;
    xi.add("w", Tensor::scalar(0.0));
    theta.add("w", Tensor::scalar(1.0));
    ema_update(xi, theta, 0.996);
    CHECK(xi.get("w").value() == doctest::Approx(0.004).epsilon(1e-12));
}

TEST_CASE("k ema steps contract ||xi - theta|| by tau^k") {
    ParamStore xi, theta;
    xi.add("w", Tensor::scalar(0.0));
    theta.add("w", Tensor::scalar(1.0));
    const double tau = 0.996;
    const int k = 50;
    for (int i = 0; i < k; ++i) ema_update(xi, theta, tau);
    const double gap = std::abs(xi.get("w").value() - 1.0);
    CHECK(std::abs(gap - std::pow(tau, k)) < 1e-9);
}

TEST_CASE("parameter count under the default desk config stays below 5M") {
    ModelConfig c;  // defaults: patch 4, d=128, 4 blocks
    c.grid_h = 32;  // 128x128 tiles
    c.grid_w = 32;
    ModelState m = ModelState::init(c, 1);
    INFO("params: ", m.param_count());
    CHECK(m.param_count() < 5000000);
}

TEST_CASE("checkpoint round trip is bit-exact including optimizer state") {
    ModelConfig c = tiny_config();
    ModelState m = ModelState::init(c, 67);
    Rng rng(71);
    for (auto& [name, t] : m.named_all()) {
        for (double& v : t.data_vec()) v = rng.normal();
    }
    OptimizerBlob blob;
    blob.step = 123;
    for (auto& [name, t] : m.named_trainable()) {
        AdamSlot slot;
        slot.name = name;
        slot.m.assign(static_cast<size_t>(t.numel()), 0.25);
        slot.v.assign(static_cast<size_t>(t.numel()), 0.5);
        blob.slots.push_back(std::move(slot));
    }
    const auto path = (std::filesystem::temp_directory_path() / "geomeld_ckpt.bin").string();
    save_checkpoint(path, m, 777, &blob);

    LoadedCheckpoint lc = load_checkpoint(path);
    CHECK(lc.step == 777);
    REQUIRE(lc.optimizer.has_value());
    CHECK(lc.optimizer->step == 123);
    CHECK(lc.optimizer->slots.size() == blob.slots.size());
    CHECK(lc.optimizer->slots[2].m == blob.slots[2].m);

    auto orig = m.named_all();
    auto back = lc.model.named_all();
    REQUIRE(orig.size() == back.size());
    for (size_t i = 0; i < orig.size(); ++i) {
        CHECK(orig[i].first == back[i].first);
        CHECK(orig[i].second.data_vec() == back[i].second.data_vec());
    }
    // xi still refuses gradients after a round trip
    for (const auto& [name, t] : lc.model.xi.items()) CHECK_FALSE(t.requires_grad());
    std::filesystem::remove(path);

    CHECK_THROWS_AS(load_checkpoint("/nonexistent/ckpt.bin"), DataError);
}

TEST_CASE("encoder forward is bit-deterministic") {
    ModelConfig c = tiny_config();
    ModelState m = ModelState::init(c, 73);
    Tensor patches = random_patches(5, c.patch_dim(c.modalities[0]), 79);
    std::vector<int64_t> pos = {0, 1, 2, 3, 4};
    Graph g1, g2;
    Tensor a = encode_visible(g1, patches, pos, m.theta, c);
    Tensor b = encode_visible(g2, patches, pos, m.theta, c);
    CHECK(std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<size_t>(a.numel())) == 0);
}

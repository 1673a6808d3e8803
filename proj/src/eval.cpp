#include "geomeld/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <set>

namespace geomeld {

namespace {

std::vector<int64_t> all_positions(const ModelConfig& c) {
    std::vector<int64_t> out(static_cast<size_t>(c.patch_count()));
    std::iota(out.begin(), out.end(), int64_t{0});
    return out;
}

}  // namespace

Tensor embed_tile_pooled(ModelState& model, const PreparedTile& tile) {
    Graph g;
    const std::vector<int64_t> all = all_positions(model.config);
    Tensor z = encode_visible(g, gather_rows(g, tile.rows.at("s2"), all), all, model.theta,
                              model.config);
    return mean_rows(g, z);
}

TileEmbedding embed_tile_projected(ModelState& model, const PreparedTile& tile) {
    Graph g;
    const std::vector<int64_t> all = all_positions(model.config);
    Tensor z = encode_visible(g, gather_rows(g, tile.rows.at("s2"), all), all, model.theta,
                              model.config);
    Tensor t = encode_caption(g, tile.tokens, model.psi, model.config);
    ProjectedPair pair = pool_and_project(g, z, t, model);
    return {pair.v_prime.data_vec(), pair.t_prime.data_vec()};
}

// ----------------------------------------------------------------------------
// linear probe
// ----------------------------------------------------------------------------

namespace {

struct ProbeData {
    Tensor features;  // [n x d]
    std::vector<int64_t> labels;
};

// per-dimension standardization fitted on the train split; encoder features
// carry arbitrary scales, which plain fixed-rate SGD cannot absorb
void standardize(ProbeData& train, ProbeData& test) {
    const int64_t n = train.features.rows(), d = train.features.cols();
    std::vector<double> mean(static_cast<size_t>(d), 0.0), inv_std(static_cast<size_t>(d), 0.0);
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < d; ++j) mean[static_cast<size_t>(j)] += train.features.at(i, j);
    }
    for (double& m : mean) m /= static_cast<double>(n);
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < d; ++j) {
            const double c = train.features.at(i, j) - mean[static_cast<size_t>(j)];
            inv_std[static_cast<size_t>(j)] += c * c;
        }
    }
    for (double& v : inv_std) v = 1.0 / std::sqrt(std::max(v / static_cast<double>(n), 1e-12));
    for (ProbeData* p : {&train, &test}) {
        double* data = p->features.data();
        const int64_t rows = p->features.rows();
        for (int64_t i = 0; i < rows; ++i) {
            for (int64_t j = 0; j < d; ++j) {
                data[i * d + j] = (data[i * d + j] - mean[static_cast<size_t>(j)]) *
                                  inv_std[static_cast<size_t>(j)];
            }
        }
    }
}

double run_probe(ProbeData& train, ProbeData& test, int64_t classes, int64_t epochs,
                 double lr, uint64_t seed) {
    standardize(train, test);
    const int64_t d = train.features.cols();
    Rng rng(derive_seed(seed, 0x9806E));
    Tensor w = Tensor::randn({d, classes}, rng, 0.01, true);
    Tensor b = Tensor::zeros({1, classes}, true);

    const int64_t n = train.features.rows();
    const int64_t batch = std::min<int64_t>(32, n);
    for (int64_t epoch = 0; epoch < epochs; ++epoch) {
        for (int64_t start = 0; start < n; start += batch) {
            std::vector<int64_t> idx;
            std::vector<int64_t> labels;
            for (int64_t i = start; i < std::min(start + batch, n); ++i) {
                idx.push_back(i);
                labels.push_back(train.labels[static_cast<size_t>(i)]);
            }
            Graph g;
            Tensor x = gather_rows(g, train.features, idx);
            Tensor logits = add_row(g, matmul(g, x, w), b);
            Tensor loss = softmax_cross_entropy(g, logits, labels);
            g.backward(loss);
            for (Tensor* p : {&w, &b}) {
                auto& grad = p->grad();
                double* pd = p->data();
                for (int64_t j = 0; j < p->numel(); ++j) pd[j] -= lr * grad[static_cast<size_t>(j)];
                p->zero_grad();
            }
        }
    }

    Graph g;
    Tensor logits = add_row(g, matmul(g, test.features, w), b);
    int64_t hits = 0;
    for (int64_t i = 0; i < logits.rows(); ++i) {
        int64_t best = 0;
        for (int64_t c = 1; c < classes; ++c) {
            if (logits.at(i, c) > logits.at(i, best)) best = c;
        }
        if (best == test.labels[static_cast<size_t>(i)]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(logits.rows());
}

// 12-band channel means straight off the normalized patch rows
Tensor channel_mean_features(const PreparedDataset& data, const ModelConfig& c) {
    const int64_t p2 = c.patch * c.patch;
    const int64_t channels = 12;
    std::vector<double> out;
    out.reserve(data.tiles.size() * static_cast<size_t>(channels));
    for (const auto& tile : data.tiles) {
        const Tensor& rows = tile.rows.at("s2");
        for (int64_t ch = 0; ch < channels; ++ch) {
            double sum = 0.0;
            for (int64_t r = 0; r < rows.rows(); ++r) {
                for (int64_t j = 0; j < p2; ++j) sum += rows.at(r, ch * p2 + j);
            }
            out.push_back(sum / static_cast<double>(rows.rows() * p2));
        }
    }
    return Tensor::from_data({static_cast<int64_t>(data.tiles.size()), channels}, out);
}

}  // namespace

ProbeResult linear_probe(ModelState& model, const PreparedDataset& train,
                         const PreparedDataset& test, int64_t epochs, double lr, uint64_t seed) {
    if (train.tiles.empty() || test.tiles.empty()) throw EvalError("linear_probe: empty split");
    std::set<int64_t> label_space;
    for (const auto& t : train.tiles) label_space.insert(t.dominant_class);
    std::set<int64_t> train_labels = label_space;
    for (const auto& t : test.tiles) label_space.insert(t.dominant_class);
    if (train_labels.size() < 2) {
        throw EvalError("linear_probe: train split holds a single class");
    }
    std::set<int64_t> test_labels;
    for (const auto& t : test.tiles) test_labels.insert(t.dominant_class);
    if (test_labels.size() < 2) {
        throw EvalError("linear_probe: test split holds a single class");
    }

    ProbeData tr, te;
    std::vector<double> feats;
    for (const auto& tile : train.tiles) {
        Tensor v = embed_tile_pooled(model, tile);
        feats.insert(feats.end(), v.data(), v.data() + v.numel());
        tr.labels.push_back(tile.dominant_class);
    }
    tr.features = Tensor::from_data({static_cast<int64_t>(train.tiles.size()), model.config.dim},
                                    std::move(feats));
    feats.clear();
    for (const auto& tile : test.tiles) {
        Tensor v = embed_tile_pooled(model, tile);
        feats.insert(feats.end(), v.data(), v.data() + v.numel());
        te.labels.push_back(tile.dominant_class);
    }
    te.features = Tensor::from_data({static_cast<int64_t>(test.tiles.size()), model.config.dim},
                                    std::move(feats));

    ProbeResult result;
    result.classes = static_cast<int64_t>(label_space.size());
    result.chance = 1.0 / static_cast<double>(result.classes);
    result.train_count = static_cast<int64_t>(train.tiles.size());
    result.test_count = static_cast<int64_t>(test.tiles.size());
    result.accuracy = run_probe(tr, te, kDwClassCount, epochs, lr, seed);

    ProbeData btr{channel_mean_features(train, model.config), tr.labels};
    ProbeData bte{channel_mean_features(test, model.config), te.labels};
    result.baseline_accuracy = run_probe(btr, bte, kDwClassCount, epochs, lr, seed);
    return result;
}

// ----------------------------------------------------------------------------
// retrieval
// ----------------------------------------------------------------------------

RetrievalPair recall_from_similarity(const std::vector<double>& sims, int64_t b, int64_t k) {
    if (k < 1 || k > b) throw EvalError("recall_from_similarity: k outside [1, gallery]");
    if (static_cast<int64_t>(sims.size()) != b * b) {
        throw EvalError("recall_from_similarity: matrix size mismatch");
    }
    auto run_direction = [&](bool rows_are_queries) {
        int64_t hits = 0;
        for (int64_t q = 0; q < b; ++q) {
            std::vector<int64_t> order(static_cast<size_t>(b));
            std::iota(order.begin(), order.end(), int64_t{0});
            auto sim = [&](int64_t g_idx) {
                return rows_are_queries ? sims[static_cast<size_t>(q * b + g_idx)]
                                        : sims[static_cast<size_t>(g_idx * b + q)];
            };
            // descending similarity, ties resolved by gallery index
            std::stable_sort(order.begin(), order.end(),
                             [&](int64_t a, int64_t c) { return sim(a) > sim(c); });
            for (int64_t i = 0; i < k; ++i) {
                if (order[static_cast<size_t>(i)] == q) {
                    ++hits;
                    break;
                }
            }
        }
        return static_cast<double>(hits) / static_cast<double>(b);
    };
    RetrievalPair out;
    out.image_to_text = {"image_to_text", k, run_direction(true), b};
    out.text_to_image = {"text_to_image", k, run_direction(false), b};
    return out;
}

RetrievalPair retrieval_recall(ModelState& model, const PreparedDataset& gallery, int64_t k) {
    const int64_t b = static_cast<int64_t>(gallery.tiles.size());
    if (b < 1 || k > b) throw EvalError("retrieval_recall: gallery smaller than k");

    std::set<std::string> captions;
    for (const auto& t : gallery.tiles) {
        if (!captions.insert(t.caption).second) {
            std::cerr << "[geomeld] warning: duplicate caption in retrieval gallery; matches are "
                         "counted by index\n";
        }
    }

    const int64_t dc = model.config.contrastive_dim;
    std::vector<double> v(static_cast<size_t>(b * dc)), t(static_cast<size_t>(b * dc));
    for (int64_t i = 0; i < b; ++i) {
        TileEmbedding e = embed_tile_projected(model, gallery.tiles[static_cast<size_t>(i)]);
        std::copy(e.v_prime.begin(), e.v_prime.end(), v.begin() + i * dc);
        std::copy(e.t_prime.begin(), e.t_prime.end(), t.begin() + i * dc);
    }
    std::vector<double> sims(static_cast<size_t>(b * b));
    for (int64_t i = 0; i < b; ++i) {
        for (int64_t j = 0; j < b; ++j) {
            double dot = 0.0;
            for (int64_t d = 0; d < dc; ++d) {
                dot += v[static_cast<size_t>(i * dc + d)] * t[static_cast<size_t>(j * dc + d)];
            }
            sims[static_cast<size_t>(i * b + j)] = dot;
        }
    }
    return recall_from_similarity(sims, b, k);
}

// ----------------------------------------------------------------------------
// reconstruction report
// ----------------------------------------------------------------------------

std::vector<ReconstructionRow> reconstruction_report(ModelState& model,
                                                     const PreparedDataset& tiles,
                                                     const std::vector<uint64_t>& mask_seeds,
                                                     double mask_ratio, double target_fraction) {
    if (tiles.tiles.empty()) throw EvalError("reconstruction_report: no tiles");
    std::vector<ReconstructionRow> rows;
    for (const auto& mod : model.config.modalities) {
        double sum = 0.0;
        int64_t count = 0;
        for (const auto& tile : tiles.tiles) {
            for (uint64_t seed : mask_seeds) {
                MaskPair mask = make_masks(model.config.grid_h, model.config.grid_w, mask_ratio,
                                           target_fraction, seed);
                const std::vector<int64_t> masked = mask.masked();
                Graph g;
                Tensor z = encode_visible(g, gather_rows(g, tile.rows.at("s2"), mask.ctx_visible),
                                          mask.ctx_visible, model.theta, model.config);
                Tensor decoded = decode_modality(g, z, mask.ctx_visible, mod, model);
                if (mod.kind == ModalityKind::continuous) {
                    sum += loss_rec_l1(g, decoded, tile.rows.at(mod.name), masked).value();
                } else {
                    // masked patch-label accuracy
                    const auto& labels = tile.labels.at(mod.name);
                    int64_t hits = 0;
                    for (int64_t i : masked) {
                        int64_t best = 0;
                        for (int64_t c = 1; c < decoded.cols(); ++c) {
                            if (decoded.at(i, c) > decoded.at(i, best)) best = c;
                        }
                        if (best == labels[static_cast<size_t>(i)]) ++hits;
                    }
                    sum += static_cast<double>(hits) / static_cast<double>(masked.size());
                }
                ++count;
            }
        }
        rows.push_back({mod.name, mod.kind == ModalityKind::continuous,
                        sum / static_cast<double>(count)});
    }
    return rows;
}

}  // namespace geomeld

#include "geomeld/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace geomeld {

std::vector<int64_t> MaskPair::masked() const {
    std::vector<char> vis(static_cast<size_t>(patch_count()), 0);
    for (int64_t i : ctx_visible) vis[static_cast<size_t>(i)] = 1;
    std::vector<int64_t> out;
    out.reserve(static_cast<size_t>(patch_count()) - ctx_visible.size());
    for (int64_t i = 0; i < patch_count(); ++i) {
        if (!vis[static_cast<size_t>(i)]) out.push_back(i);
    }
    return out;
}

MaskPair make_masks(int64_t patches_h, int64_t patches_w, double ratio, double target_fraction,
                    uint64_t seed) {
    if (patches_h < 1 || patches_w < 1) {
        throw ConfigError("make_masks: grid must be at least 1x1");
    }
    if (!(ratio > 0.0 && ratio < 1.0)) {
        throw ConfigError("make_masks: mask ratio must be in (0, 1), got " +
                          std::to_string(ratio));
    }
    if (target_fraction > ratio) {
        throw ConfigError("make_masks: target_fraction " + std::to_string(target_fraction) +
                          " exceeds mask ratio " + std::to_string(ratio) +
                          " (targets are drawn from the masked region)");
    }
    const int64_t n = patches_h * patches_w;
    const int64_t n_ctx = std::llround((1.0 - ratio) * static_cast<double>(n));
    const int64_t n_tgt = std::llround(target_fraction * static_cast<double>(n));
    if (n_ctx < 1) {
        throw ConfigError("make_masks: context size rounds to zero for grid " +
                          std::to_string(patches_h) + "x" + std::to_string(patches_w));
    }
    if (n_tgt < 1) {
        throw ConfigError("make_masks: target size rounds to zero (target_fraction " +
                          std::to_string(target_fraction) + ")");
    }

    std::vector<int64_t> perm(static_cast<size_t>(n));
    std::iota(perm.begin(), perm.end(), int64_t{0});
    Rng rng(seed);
    // Fisher-Yates; a single permutation yields a uniform context subset and a
    // uniform target subset of its complement.
    for (int64_t i = n - 1; i > 0; --i) {
        const auto j = static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(i + 1)));
        std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(j)]);
    }

    MaskPair mp;
    mp.patches_h = patches_h;
    mp.patches_w = patches_w;
    mp.seed = seed;
    mp.ctx_visible.assign(perm.begin(), perm.begin() + n_ctx);
    mp.tgt_visible.assign(perm.begin() + n_ctx, perm.begin() + n_ctx + n_tgt);
    std::sort(mp.ctx_visible.begin(), mp.ctx_visible.end());
    std::sort(mp.tgt_visible.begin(), mp.tgt_visible.end());
    return mp;
}

Tensor PatchSequence::to_tensor() const {
    if (count == 0) throw ShapeError("PatchSequence::to_tensor: empty sequence");
    return Tensor::from_data({count, dim}, values);
}

PatchSequence gather_visible(const Raster& x, const std::vector<int64_t>& visible, int64_t patch) {
    if (patch < 1 || x.height % patch != 0 || x.width % patch != 0) {
        throw ConfigError("gather_visible: raster " + std::to_string(x.height) + "x" +
                          std::to_string(x.width) + " not divisible by patch " +
                          std::to_string(patch));
    }
    const int64_t ph = x.height / patch;
    const int64_t pw = x.width / patch;
    const int64_t n = ph * pw;
    PatchSequence seq;
    seq.count = static_cast<int64_t>(visible.size());
    seq.dim = x.channels * patch * patch;
    seq.values.reserve(static_cast<size_t>(seq.count * seq.dim));
    std::vector<int64_t> order(visible);
    std::sort(order.begin(), order.end());
    for (int64_t idx : order) {
        if (idx < 0 || idx >= n) {
            throw IndexError("gather_visible: patch " + std::to_string(idx) + " out of [0, " +
                             std::to_string(n) + ")");
        }
        const int64_t py = idx / pw;
        const int64_t px = idx % pw;
        for (int64_t c = 0; c < x.channels; ++c) {
            for (int64_t dy = 0; dy < patch; ++dy) {
                for (int64_t dx = 0; dx < patch; ++dx) {
                    seq.values.push_back(x.at(c, py * patch + dy, px * patch + dx));
                }
            }
        }
    }
    return seq;
}

void scatter_visible(Raster& x, const PatchSequence& seq, const std::vector<int64_t>& visible,
                     int64_t patch) {
    if (seq.count == 0) return;
    if (seq.dim != x.channels * patch * patch) {
        throw ShapeError("scatter_visible: patch dim " + std::to_string(seq.dim) +
                         " does not match raster layout");
    }
    std::vector<int64_t> order(visible);
    std::sort(order.begin(), order.end());
    if (static_cast<int64_t>(order.size()) != seq.count) {
        throw ShapeError("scatter_visible: " + std::to_string(order.size()) + " indices for " +
                         std::to_string(seq.count) + " patches");
    }
    const int64_t pw = x.width / patch;
    const int64_t n = (x.height / patch) * pw;
    size_t k = 0;
    for (int64_t idx : order) {
        if (idx < 0 || idx >= n) {
            throw IndexError("scatter_visible: patch " + std::to_string(idx) + " out of [0, " +
                             std::to_string(n) + ")");
        }
        const int64_t py = idx / pw;
        const int64_t px = idx % pw;
        for (int64_t c = 0; c < x.channels; ++c) {
            for (int64_t dy = 0; dy < patch; ++dy) {
                for (int64_t dx = 0; dx < patch; ++dx) {
                    x.at(c, py * patch + dy, px * patch + dx) = seq.values[k++];
                }
            }
        }
    }
}

std::vector<int64_t> patch_mode_labels(const ClassMap& map, int64_t patch, int n_classes) {
    if (patch < 1 || map.height % patch != 0 || map.width % patch != 0) {
        throw ConfigError("patch_mode_labels: map " + std::to_string(map.height) + "x" +
                          std::to_string(map.width) + " not divisible by patch " +
                          std::to_string(patch));
    }
    const int64_t ph = map.height / patch;
    const int64_t pw = map.width / patch;
    std::vector<int64_t> labels;
    labels.reserve(static_cast<size_t>(ph * pw));
    std::vector<int64_t> counts(static_cast<size_t>(n_classes));
    for (int64_t py = 0; py < ph; ++py) {
        for (int64_t px = 0; px < pw; ++px) {
            std::fill(counts.begin(), counts.end(), 0);
            for (int64_t dy = 0; dy < patch; ++dy) {
                for (int64_t dx = 0; dx < patch; ++dx) {
                    const uint8_t c = map.at(py * patch + dy, px * patch + dx);
                    if (c >= n_classes) {
                        throw IndexError("patch_mode_labels: class " + std::to_string(c) +
                                         " out of [0, " + std::to_string(n_classes) + ")");
                    }
                    ++counts[c];
                }
            }
            // ties break to the lower class id
            int64_t best = 0;
            for (int c = 1; c < n_classes; ++c) {
                if (counts[static_cast<size_t>(c)] > counts[static_cast<size_t>(best)]) best = c;
            }
            labels.push_back(best);
        }
    }
    return labels;
}

}  // namespace geomeld

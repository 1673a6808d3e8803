#pragma once

#include <cstdint>
#include <vector>

#include "geomeld/raster.hpp"
#include "geomeld/tensor.hpp"

namespace geomeld {

// Context/target masking state over the patch grid. The context set is what
// the online encoder sees; the target set is drawn from the masked complement
// so the two are disjoint by construction.
struct MaskPair {
    int64_t patches_h = 0;
    int64_t patches_w = 0;
    std::vector<int64_t> ctx_visible;  // sorted ascending
    std::vector<int64_t> tgt_visible;  // sorted ascending, disjoint from ctx
    uint64_t seed = 0;

    int64_t patch_count() const { return patches_h * patches_w; }
    // all patches not visible to the context encoder (reconstruction targets)
    std::vector<int64_t> masked() const;
};

// |ctx| = round((1-ratio) * N), |tgt| = round(target_fraction * N) drawn
// uniformly from the complement. Deterministic in seed.
MaskPair make_masks(int64_t patches_h, int64_t patches_w, double ratio, double target_fraction,
                    uint64_t seed);

// Flattened patch rows in ascending patch-index order. Patch dim is
// channels * patch * patch with values in (channel, dy, dx) order. May be
// empty (count == 0) for an empty visible set.
struct PatchSequence {
    int64_t count = 0;
    int64_t dim = 0;
    std::vector<double> values;

    Tensor to_tensor() const;  // throws on empty sequence
};

PatchSequence gather_visible(const Raster& x, const std::vector<int64_t>& visible, int64_t patch);

// Inverse of gather_visible at the visible positions; other pixels untouched.
void scatter_visible(Raster& x, const PatchSequence& seq, const std::vector<int64_t>& visible,
                     int64_t patch);

// Per-patch modal class labels, used as categorical reconstruction targets.
std::vector<int64_t> patch_mode_labels(const ClassMap& map, int64_t patch, int n_classes);

}  // namespace geomeld

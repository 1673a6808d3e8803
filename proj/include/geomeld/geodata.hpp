#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "geomeld/raster.hpp"
#include "geomeld/rng.hpp"

namespace geomeld {

// ----------------------------------------------------------------------------
// land-cover taxonomies (cardinalities mirror the real products)
// ----------------------------------------------------------------------------

constexpr int kDwClassCount = 9;
constexpr int kEsaClassCount = 11;
constexpr int kDwWater = 0;
constexpr int kEsaWater = 7;

const std::array<std::string, kDwClassCount>& dw_class_names();
const std::array<std::string, kEsaClassCount>& esa_class_names();

constexpr int kGeomorphonFormCount = 10;
// flat, peak, ridge, shoulder, spur, slope, hollow, footslope, valley, pit
const std::array<std::string, kGeomorphonFormCount>& geomorphon_form_names();

// ----------------------------------------------------------------------------
// domain types
// ----------------------------------------------------------------------------

struct CalendarDate {
    int year = 0;
    int month = 0;
    int day = 0;
    std::string iso() const;
    bool operator==(const CalendarDate&) const = default;
};

struct GeoTags {
    std::string center;                    // center-point feature
    std::vector<std::string> surrounding;  // surrounding objects
    std::string area;                      // area-level descriptor
    bool operator==(const GeoTags&) const = default;
};

struct ElevationStats {
    double min_m = 0.0;
    double max_m = 0.0;
    double mean_m = 0.0;
};

struct StructuredAttributes {
    int dominant_class = -1;                    // DW class id
    double dominant_fraction = 0.0;
    std::vector<double> class_fractions;        // per DW class, sums to 1
    double water_fraction = 0.0;                // DW/ESA consensus
    std::string terrain_class;                  // modal geomorphon form
    ElevationStats elevation;
    GeoTags tags;
};

// One spatially aligned multimodal training example. All rasters share H x W.
struct TileSample {
    std::string tile_id;
    Raster s2;      // 12 x H x W, reflectance-like in [0, 1]
    Raster s1;      // 4 x H x W, dB-scaled backscatter, roughly [-30, 5]
    Raster dem;     // 1 x H x W, meters
    Raster canopy;  // 1 x H x W, meters, >= 0
    ClassMap dw;
    ClassMap esa;
    CalendarDate anchor_date;
    double lat = 0.0;
    double lon = 0.0;
    std::string caption;
    StructuredAttributes attributes;
};

enum class ModalityKind { continuous, categorical };

struct ModalitySpec {
    std::string name;
    ModalityKind kind = ModalityKind::continuous;
    int64_t channels_or_classes = 1;  // channels if continuous, class count if categorical
    double loss_weight = 1.0;         // lambda_m

    void validate() const;
};

// s2, s1, dem, canopy as continuous; dw, esa as categorical; all weights 1.
std::vector<ModalitySpec> default_modalities();

// ----------------------------------------------------------------------------
// operations
// ----------------------------------------------------------------------------

// Deterministic per-tile reference date: year in {2018..2021}, month in
// {1..12}, day always 15, drawn from a PRNG seeded by a stable hash of the
// tile id. Identical across runs and platforms.
CalendarDate temporal_anchor(const std::string& tile_id);

// Ternary-pattern terrain forms over 8 compass directions. The flatness
// threshold (degrees) applies to relief normalized per tile, so the output
// is invariant under dem -> a*dem + b for a > 0.
ClassMap geomorphon_classify(const Raster& dem, int lookup_radius, double flat_deg = 1.0);

struct WaterConsensus {
    std::vector<uint8_t> mask;  // 1 where both products label water
    double fraction = 0.0;
};

WaterConsensus water_consensus(const ClassMap& dw, const ClassMap& esa);

// Zero-mean, roughly unit-variance smooth random field (box-blurred noise).
std::vector<double> smooth_field(int64_t h, int64_t w, Rng& rng, int radius, int passes = 3);

struct TileGeometry {
    int64_t height = 128;
    int64_t width = 128;
    int64_t patch = 4;  // geometry must divide into the training patch grid
};

// Full synthetic tile: correlated rasters, attributes, and a verified caption
// from the captioning pipeline. Bit-deterministic in (tile_id, seed).
TileSample generate_tile(const std::string& tile_id, const TileGeometry& geom, uint64_t seed);

// Rasters and attributes only; the caption is left empty.
TileSample generate_tile_uncaptioned(const std::string& tile_id, const TileGeometry& geom,
                                     uint64_t seed);

// Recomputes attributes from the rasters (used after mutation in tests).
StructuredAttributes compute_attributes(const TileSample& tile, int geomorphon_radius = 0);

}  // namespace geomeld

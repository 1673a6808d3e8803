#include "geomeld/geodata.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "geomeld/caption.hpp"

namespace geomeld {

namespace {

constexpr double kPi = 3.14159265358979323846;

}  // namespace

// ----------------------------------------------------------------------------
// taxonomies
// ----------------------------------------------------------------------------

const std::array<std::string, kDwClassCount>& dw_class_names() {
    static const std::array<std::string, kDwClassCount> names = {
        "water",  "trees", "grass", "flooded_vegetation", "crops",
        "shrub_and_scrub", "built", "bare", "snow_and_ice"};
    return names;
}

const std::array<std::string, kEsaClassCount>& esa_class_names() {
    static const std::array<std::string, kEsaClassCount> names = {
        "tree_cover",   "shrubland",     "grassland", "cropland",
        "built_up",     "bare_sparse_vegetation", "snow_and_ice",
        "permanent_water_bodies", "herbaceous_wetland", "mangroves",
        "moss_and_lichen"};
    return names;
}

const std::array<std::string, kGeomorphonFormCount>& geomorphon_form_names() {
    static const std::array<std::string, kGeomorphonFormCount> names = {
        "flat", "peak", "ridge", "shoulder", "spur",
        "slope", "hollow", "footslope", "valley", "pit"};
    return names;
}

std::string CalendarDate::iso() const {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", year, month, day);
    return buf;
}

void ModalitySpec::validate() const {
    if (kind == ModalityKind::continuous && channels_or_classes < 1) {
        throw ConfigError("modality " + name + ": continuous needs channels >= 1");
    }
    if (kind == ModalityKind::categorical && channels_or_classes < 2) {
        throw ConfigError("modality " + name + ": categorical needs class count >= 2");
    }
}

std::vector<ModalitySpec> default_modalities() {
    return {
        {"s2", ModalityKind::continuous, 12, 1.0},
        {"s1", ModalityKind::continuous, 4, 1.0},
        {"dem", ModalityKind::continuous, 1, 1.0},
        {"canopy", ModalityKind::continuous, 1, 1.0},
        {"dw", ModalityKind::categorical, kDwClassCount, 1.0},
        {"esa", ModalityKind::categorical, kEsaClassCount, 1.0},
    };
}

// ----------------------------------------------------------------------------
// temporal anchors
// ----------------------------------------------------------------------------

CalendarDate temporal_anchor(const std::string& tile_id) {
    if (tile_id.empty()) throw ConfigError("temporal_anchor: empty tile_id");
    Rng rng(fnv1a64(tile_id));
    CalendarDate d;
    d.year = 2018 + static_cast<int>(rng.uniform_int(4));
    d.month = 1 + static_cast<int>(rng.uniform_int(12));
    d.day = 15;
    return d;
}

// ----------------------------------------------------------------------------
// smooth random fields
// ----------------------------------------------------------------------------

namespace {

void box_blur_1d(std::vector<double>& line, std::vector<double>& tmp, int radius) {
    const int n = static_cast<int>(line.size());
    tmp.resize(line.size());
    for (int i = 0; i < n; ++i) {
        const int lo = std::max(0, i - radius);
        const int hi = std::min(n - 1, i + radius);
        double s = 0.0;
        for (int j = lo; j <= hi; ++j) s += line[static_cast<size_t>(j)];
        tmp[static_cast<size_t>(i)] = s / static_cast<double>(hi - lo + 1);
    }
    line.swap(tmp);
}

}  // namespace

std::vector<double> smooth_field(int64_t h, int64_t w, Rng& rng, int radius, int passes) {
    std::vector<double> field(static_cast<size_t>(h * w));
    for (double& v : field) v = rng.normal();
    std::vector<double> line, tmp;
    for (int pass = 0; pass < passes; ++pass) {
        // rows
        for (int64_t y = 0; y < h; ++y) {
            line.assign(field.begin() + y * w, field.begin() + (y + 1) * w);
            box_blur_1d(line, tmp, radius);
            std::copy(line.begin(), line.end(), field.begin() + y * w);
        }
        // cols
        for (int64_t x = 0; x < w; ++x) {
            line.resize(static_cast<size_t>(h));
            for (int64_t y = 0; y < h; ++y) line[static_cast<size_t>(y)] = field[static_cast<size_t>(y * w + x)];
            box_blur_1d(line, tmp, radius);
            for (int64_t y = 0; y < h; ++y) field[static_cast<size_t>(y * w + x)] = line[static_cast<size_t>(y)];
        }
    }
    double mean = std::accumulate(field.begin(), field.end(), 0.0) / static_cast<double>(field.size());
    double var = 0.0;
    for (double v : field) var += (v - mean) * (v - mean);
    var /= static_cast<double>(field.size());
    const double inv = var > 1e-12 ? 1.0 / std::sqrt(var) : 0.0;
    for (double& v : field) v = (v - mean) * inv;
    return field;
}

// ----------------------------------------------------------------------------
// geomorphons
// ----------------------------------------------------------------------------

namespace {

// canonical lookup by (count of higher, count of lower); symmetric under
// swapping higher/lower with {footslope<->shoulder, valley<->ridge,
// pit<->peak, hollow<->spur}
// forms: 0 flat, 1 peak, 2 ridge, 3 shoulder, 4 spur, 5 slope, 6 hollow,
//        7 footslope, 8 valley, 9 pit
constexpr uint8_t FL = 0, PK = 1, RI = 2, SH = 3, SP = 4, SL = 5, HL = 6, FS = 7, VL = 8, PT = 9;

constexpr uint8_t kGeomorphonLookup[9][9] = {
    // rows: count of lower neighbors (m); cols: count of higher neighbors (p)
    /* m=0 */ {FL, FL, FL, FS, FS, VL, VL, VL, PT},
    /* m=1 */ {FL, FL, FS, FS, FS, VL, VL, VL, FL},
    /* m=2 */ {FL, SH, SL, SL, HL, HL, VL, FL, FL},
    /* m=3 */ {SH, SH, SL, SL, SL, HL, FL, FL, FL},
    /* m=4 */ {SH, SH, SP, SL, SL, FL, FL, FL, FL},
    /* m=5 */ {RI, RI, SP, SP, FL, FL, FL, FL, FL},
    /* m=6 */ {RI, RI, RI, FL, FL, FL, FL, FL, FL},
    /* m=7 */ {RI, RI, FL, FL, FL, FL, FL, FL, FL},
    /* m=8 */ {PK, FL, FL, FL, FL, FL, FL, FL, FL},
};

constexpr int kDirY[8] = {-1, -1, 0, 1, 1, 1, 0, -1};
constexpr int kDirX[8] = {0, 1, 1, 1, 0, -1, -1, -1};

}  // namespace

ClassMap geomorphon_classify(const Raster& dem, int lookup_radius, double flat_deg) {
    if (dem.channels != 1) {
        throw ConfigError("geomorphon_classify: dem must have one channel");
    }
    if (lookup_radius < 1) throw ConfigError("geomorphon_classify: lookup_radius must be >= 1");
    const int64_t h = dem.height, w = dem.width;
    if (lookup_radius > std::min(h, w) / 2) {
        throw ConfigError("geomorphon_classify: radius " + std::to_string(lookup_radius) +
                          " exceeds half extent of " + std::to_string(h) + "x" +
                          std::to_string(w));
    }

    ClassMap out = ClassMap::zeros(h, w);
    double zmin = dem.values[0], zmax = dem.values[0];
    for (double v : dem.values) {
        zmin = std::min(zmin, v);
        zmax = std::max(zmax, v);
    }
    const double relief = zmax - zmin;
    if (relief <= 0.0) return out;  // constant elevation: everything flat

    // Relative relief on a fixed quantization grid: affine dem transforms then
    // reduce to the exact same quantized surface, so ternary patterns match.
    const double qscale = 4294967296.0;  // 2^32
    std::vector<double> zq(dem.values.size());
    for (size_t i = 0; i < zq.size(); ++i) {
        zq[i] = std::round((dem.values[i] - zmin) / relief * qscale) / qscale;
    }

    // relative-relief angle: total relief maps to one pixel spacing, so a
    // surface must change by less than tan(flat_deg) of the relief per pixel
    // step to read as flat
    const double flat_tan = std::tan(flat_deg * kPi / 180.0);

    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) {
            const double z0 = zq[static_cast<size_t>(y * w + x)];
            int higher = 0, lower = 0;
            for (int dir = 0; dir < 8; ++dir) {
                const bool diag = (kDirY[dir] != 0 && kDirX[dir] != 0);
                const double step_len = diag ? 1.4142135623730951 : 1.0;
                double best_up = -1e300, best_down = 1e300;
                bool seen = false;
                for (int k = 1; k <= lookup_radius; ++k) {
                    const int64_t ny = y + k * kDirY[dir];
                    const int64_t nx = x + k * kDirX[dir];
                    if (ny < 0 || ny >= h || nx < 0 || nx >= w) break;
                    seen = true;
                    const double t =
                        (zq[static_cast<size_t>(ny * w + nx)] - z0) / (k * step_len);
                    best_up = std::max(best_up, t);
                    best_down = std::min(best_down, t);
                }
                if (!seen) continue;  // truncated ray at the raster edge reads as flat
                const double up = std::max(best_up, 0.0);
                const double down = std::max(-best_down, 0.0);
                if (up > flat_tan && up > down) {
                    ++higher;
                } else if (down > flat_tan && down > up) {
                    ++lower;
                }
            }
            out.at(y, x) = kGeomorphonLookup[lower][higher];
        }
    }
    return out;
}

// ----------------------------------------------------------------------------
// water consensus
// ----------------------------------------------------------------------------

WaterConsensus water_consensus(const ClassMap& dw, const ClassMap& esa) {
    if (dw.height != esa.height || dw.width != esa.width) {
        throw ShapeError("water_consensus: " + std::to_string(dw.height) + "x" +
                         std::to_string(dw.width) + " vs " + std::to_string(esa.height) + "x" +
                         std::to_string(esa.width));
    }
    WaterConsensus wc;
    wc.mask.assign(dw.labels.size(), 0);
    int64_t hits = 0;
    for (size_t i = 0; i < dw.labels.size(); ++i) {
        if (dw.labels[i] == kDwWater && esa.labels[i] == kEsaWater) {
            wc.mask[i] = 1;
            ++hits;
        }
    }
    wc.fraction = static_cast<double>(hits) / static_cast<double>(dw.labels.size());
    return wc;
}

// ----------------------------------------------------------------------------
// synthetic tile generation
// ----------------------------------------------------------------------------

namespace {

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// reflectance-like signatures per DW class, 12 bands
constexpr double kS2Signature[kDwClassCount][12] = {
    {0.08, 0.09, 0.10, 0.07, 0.06, 0.05, 0.04, 0.03, 0.03, 0.02, 0.01, 0.01},  // water
    {0.04, 0.05, 0.07, 0.05, 0.12, 0.25, 0.35, 0.42, 0.44, 0.20, 0.14, 0.07},  // trees
    {0.06, 0.08, 0.12, 0.10, 0.20, 0.30, 0.38, 0.42, 0.43, 0.25, 0.22, 0.12},  // grass
    {0.07, 0.08, 0.11, 0.09, 0.14, 0.20, 0.26, 0.30, 0.30, 0.15, 0.10, 0.05},  // flooded veg
    {0.06, 0.08, 0.13, 0.12, 0.22, 0.32, 0.42, 0.48, 0.49, 0.30, 0.26, 0.15},  // crops
    {0.08, 0.10, 0.14, 0.15, 0.20, 0.24, 0.28, 0.30, 0.31, 0.24, 0.26, 0.18},  // shrub
    {0.12, 0.14, 0.16, 0.18, 0.20, 0.22, 0.24, 0.26, 0.26, 0.22, 0.24, 0.22},  // built
    {0.14, 0.17, 0.22, 0.26, 0.30, 0.32, 0.34, 0.36, 0.36, 0.30, 0.38, 0.32},  // bare
    {0.85, 0.86, 0.85, 0.84, 0.80, 0.76, 0.70, 0.60, 0.58, 0.40, 0.20, 0.12},  // snow
};

// canopy base height (m) per DW class
constexpr double kCanopyBase[kDwClassCount] = {0.0, 18.0, 1.0, 2.5, 1.4, 3.2, 0.4, 0.1, 0.0};

struct LatentFields {
    std::vector<double> elev;     // normalized [0,1]
    std::vector<double> moist;    // ~N(0,1)
    std::vector<double> disturb;  // ~N(0,1)
    std::vector<double> warm;     // [0,1]
    std::vector<double> perturb;  // ~N(0,1), decorrelates ESA from DW
    std::vector<double> texture;  // ~N(0,1), canopy fine structure
};

void class_scores(const LatentFields& f, size_t i, double bias[kDwClassCount], double out[kDwClassCount]) {
    const double e = f.elev[i];
    const double m = f.moist[i];
    const double d = f.disturb[i];
    const double t = f.warm[i];
    out[0] = 2.0 * m - 2.6;                                   // water
    out[1] = 0.9 * m + 1.2 * t - 0.8 * e - 0.35;              // trees
    out[2] = 0.35 - 0.25 * m + 0.5 * t - 0.3 * e + 0.15 * d;  // grass
    out[3] = 1.3 * m - 0.3 * e + 0.4 * t - 1.75;              // flooded vegetation
    out[4] = 0.55 * d + 0.5 * t - 0.5 * e - 0.35 + 0.2 * m;   // crops
    out[5] = 0.3 - 0.45 * m + 0.35 * t - 0.15 * e - 0.1 * d;  // shrub and scrub
    out[6] = 1.1 * d - 0.6 * m - 1.3 + 0.3 * t;               // built
    out[7] = 0.4 - 1.0 * m - 0.35 * t + 0.25 * e + 0.2 * d;   // bare
    out[8] = 2.2 * (1.0 - t) + 1.0 * e - 2.2;                 // snow and ice
    for (int c = 0; c < kDwClassCount; ++c) out[c] += bias[c];
}

}  // namespace

TileSample generate_tile_uncaptioned(const std::string& tile_id, const TileGeometry& geom,
                                     uint64_t seed) {
    const int64_t h = geom.height, w = geom.width;
    if (h < 16 || w < 16) {
        throw ConfigError("generate_tile: geometry " + std::to_string(h) + "x" +
                          std::to_string(w) + " below the 16-pixel minimum");
    }
    if (geom.patch < 1 || h % geom.patch != 0 || w % geom.patch != 0) {
        throw ConfigError("generate_tile: geometry " + std::to_string(h) + "x" +
                          std::to_string(w) + " not divisible by patch size " +
                          std::to_string(geom.patch));
    }

    Rng rng(derive_seed(fnv1a64(tile_id), seed));
    const int64_t npx = h * w;

    TileSample tile;
    tile.tile_id = tile_id;
    tile.anchor_date = temporal_anchor(tile_id);

    // biome draw: the target class shifts the decision thresholds so that over
    // a dataset every class shows up as dominant
    const int target_class = static_cast<int>(rng.uniform_int(kDwClassCount));
    double bias[kDwClassCount] = {0};
    bias[target_class] = (target_class == kDwWater) ? 3.2 : 2.0;

    // location; snow-target tiles are pushed to high latitude and altitude
    if (target_class == 8) {
        tile.lat = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(55.0, 70.0);
    } else {
        tile.lat = rng.uniform(-55.0, 68.0);
    }
    tile.lon = rng.uniform(-180.0, 180.0);

    // latent fields
    const int coarse = std::max(2, static_cast<int>(std::min(h, w) / 16));
    LatentFields f;
    {
        f.elev = smooth_field(h, w, rng, coarse, 2);
        double lo = f.elev[0], hi = f.elev[0];
        for (double v : f.elev) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        const double span = std::max(hi - lo, 1e-9);
        for (double& v : f.elev) v = (v - lo) / span;

        // landform style: reshape the relief curve so tiles differ in their
        // modal terrain form (rolling slopes, terraced treads, low plateaus
        // with peaks, high plateaus with incised valleys)
        const int landform = static_cast<int>(rng.uniform_int(5));
        if (landform == 1) {
            const double k = 2.5 + 2.0 * rng.uniform();
            for (double& v : f.elev) {
                v -= 0.95 * std::sin(2.0 * kPi * k * v) / (2.0 * kPi * k);
            }
        } else if (landform == 2) {
            for (double& v : f.elev) v = v * v * v * v;
        } else if (landform == 3) {
            for (double& v : f.elev) {
                const double u = 1.0 - v;
                v = 1.0 - u * u * u * u;
            }
        } else if (landform == 4) {
            // folded relief: ridgeline along the median level set
            for (double& v : f.elev) v = 1.0 - std::abs(2.0 * v - 1.0);
        }
        lo = f.elev[0];
        hi = f.elev[0];
        for (double v : f.elev) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        const double span2 = std::max(hi - lo, 1e-9);
        for (double& v : f.elev) v = (v - lo) / span2;
    }
    {
        std::vector<double> a = smooth_field(h, w, rng, coarse, 2);
        f.moist.resize(static_cast<size_t>(npx));
        for (int64_t i = 0; i < npx; ++i) {
            f.moist[static_cast<size_t>(i)] =
                0.6 * a[static_cast<size_t>(i)] - 1.1 * (f.elev[static_cast<size_t>(i)] - 0.5) * 2.0;
        }
    }
    f.disturb = smooth_field(h, w, rng, std::max(2, coarse / 2), 2);
    f.perturb = smooth_field(h, w, rng, 1, 2);
    f.texture = smooth_field(h, w, rng, 1, 2);

    double base_elev, relief;
    const int relief_kind = static_cast<int>(rng.uniform_int(3));
    if (relief_kind == 0) {
        relief = rng.uniform(25.0, 120.0);
    } else if (relief_kind == 1) {
        relief = rng.uniform(150.0, 450.0);
    } else {
        relief = rng.uniform(500.0, 1100.0);
    }
    base_elev = (target_class == 8) ? rng.uniform(2200.0, 3200.0) : rng.uniform(30.0, 2200.0);

    double warm_base = 0.95 * std::cos(tile.lat * kPi / 180.0) - base_elev / 4000.0 +
                       rng.uniform(-0.08, 0.08);
    if (target_class == 8) warm_base = rng.uniform(0.02, 0.22);
    f.warm.resize(static_cast<size_t>(npx));
    for (int64_t i = 0; i < npx; ++i) {
        f.warm[static_cast<size_t>(i)] = clamp01(
            warm_base - 0.25 * f.elev[static_cast<size_t>(i)] * (relief / 1000.0) +
            0.05 * f.perturb[static_cast<size_t>(i)]);
    }

    // DEM
    tile.dem = Raster::zeros(1, h, w);
    for (int64_t i = 0; i < npx; ++i) {
        tile.dem.values[static_cast<size_t>(i)] = base_elev + relief * f.elev[static_cast<size_t>(i)];
    }

    // land cover: DW from the score argmax, ESA from the same latents with a
    // perturbed water boundary and product-specific refinements
    tile.dw = ClassMap::zeros(h, w);
    tile.esa = ClassMap::zeros(h, w);
    std::vector<double> membership(static_cast<size_t>(npx * kDwClassCount));
    for (int64_t i = 0; i < npx; ++i) {
        double s[kDwClassCount];
        class_scores(f, static_cast<size_t>(i), bias, s);
        int arg = 0;
        for (int c = 1; c < kDwClassCount; ++c) {
            if (s[c] > s[arg]) arg = c;
        }
        tile.dw.labels[static_cast<size_t>(i)] = static_cast<uint8_t>(arg);

        // soft memberships for spectral blending
        double mx = s[0];
        for (int c = 1; c < kDwClassCount; ++c) mx = std::max(mx, s[c]);
        double sum = 0.0;
        for (int c = 0; c < kDwClassCount; ++c) {
            const double e = std::exp((s[c] - mx) / 0.35);
            membership[static_cast<size_t>(i * kDwClassCount + c)] = e;
            sum += e;
        }
        for (int c = 0; c < kDwClassCount; ++c) membership[static_cast<size_t>(i * kDwClassCount + c)] /= sum;

        // ESA: water decided on a slightly perturbed score so the two products
        // agree on most but not all water pixels
        const double esa_water_score = s[0] + 0.35 * f.perturb[static_cast<size_t>(i)];
        double s_no_water[kDwClassCount];
        std::copy(s, s + kDwClassCount, s_no_water);
        s_no_water[0] = -1e9;
        int arg2 = 1;
        for (int c = 1; c < kDwClassCount; ++c) {
            if (s_no_water[c] > s_no_water[arg2]) arg2 = c;
        }
        uint8_t esa;
        if (esa_water_score > 0.0 && esa_water_score >= s_no_water[arg2]) {
            esa = kEsaWater;
        } else {
            const int c = (s[arg] >= s_no_water[arg2]) ? arg : arg2;
            const double warm = f.warm[static_cast<size_t>(i)];
            const double moist = f.moist[static_cast<size_t>(i)];
            switch (c) {
                case 0:  // DW said water but ESA disagreed: wetland margin
                    esa = 8;
                    break;
                case 1:
                    esa = (warm > 0.8 && moist > 0.9 && std::abs(tile.lat) < 25.0) ? 9 : 0;
                    break;
                case 2:
                    esa = (warm < 0.18) ? 10 : 2;
                    break;
                case 3: esa = 8; break;
                case 4: esa = 3; break;
                case 5: esa = 1; break;
                case 6: esa = 4; break;
                case 7: esa = 5; break;
                default: esa = 6; break;
            }
        }
        tile.esa.labels[static_cast<size_t>(i)] = esa;
    }

    // canopy height: class-driven base scaled down with elevation, so canopy
    // tracks the same relief surface as the DEM at exact pixel alignment
    tile.canopy = Raster::zeros(1, h, w);
    for (int64_t i = 0; i < npx; ++i) {
        double base = 0.0;
        for (int c = 0; c < kDwClassCount; ++c) {
            base += membership[static_cast<size_t>(i * kDwClassCount + c)] * kCanopyBase[c];
        }
        double hgt = base * (1.6 - 1.3 * f.elev[static_cast<size_t>(i)]) *
                     (0.95 + 0.1 * sigmoid(f.moist[static_cast<size_t>(i)])) *
                     (1.0 + 0.08 * f.texture[static_cast<size_t>(i)]);
        hgt += 0.05 * std::abs(f.perturb[static_cast<size_t>(i)]);
        tile.canopy.values[static_cast<size_t>(i)] = std::max(0.0, hgt);
    }

    // S2: blended signatures + relief shading + atmosphere + pixel noise
    tile.s2 = Raster::zeros(12, h, w);
    const double atm = rng.uniform(-0.03, 0.03);
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) {
            const int64_t i = y * w + x;
            const double ex = (x + 1 < w) ? f.elev[static_cast<size_t>(i + 1)] - f.elev[static_cast<size_t>(i)] : 0.0;
            const double ey = (y + 1 < h) ? f.elev[static_cast<size_t>(i + w)] - f.elev[static_cast<size_t>(i)] : 0.0;
            const double shade = 1.0 + 2.5 * (ex + ey);
            for (int b = 0; b < 12; ++b) {
                double v = 0.0;
                for (int c = 0; c < kDwClassCount; ++c) {
                    v += membership[static_cast<size_t>(i * kDwClassCount + c)] * kS2Signature[c][b];
                }
                v = v * std::clamp(shade, 0.8, 1.2) + atm + rng.normal(0.0, 0.015);
                tile.s2.at(b, y, x) = clamp01(v);
            }
        }
    }

    // S1 as deterministic nonlinear functions of the S2 bands plus speckle
    tile.s1 = Raster::zeros(4, h, w);
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) {
            const double red = tile.s2.at(3, y, x);
            const double nir = tile.s2.at(7, y, x);
            const double swir = tile.s2.at(10, y, x);
            const double green = tile.s2.at(2, y, x);
            const double ndvi = (nir - red) / (nir + red + 1e-6);
            const double vv = -25.0 + 18.0 * sigmoid(6.0 * (nir - 0.15)) + 4.0 * swir +
                              rng.normal(0.0, 0.6);
            const double vh = vv - 7.0 + 5.0 * ndvi + rng.normal(0.0, 0.6);
            const double hh = -24.0 + 16.0 * sigmoid(4.0 * (red + green - 0.2)) +
                              rng.normal(0.0, 0.6);
            const double hv = hh - 6.0 + 3.0 * ndvi + rng.normal(0.0, 0.6);
            tile.s1.at(0, y, x) = std::clamp(vv, -30.0, 5.0);
            tile.s1.at(1, y, x) = std::clamp(vh, -30.0, 5.0);
            tile.s1.at(2, y, x) = std::clamp(hh, -30.0, 5.0);
            tile.s1.at(3, y, x) = std::clamp(hv, -30.0, 5.0);
        }
    }

    tile.attributes = compute_attributes(tile);
    return tile;
}

TileSample generate_tile(const std::string& tile_id, const TileGeometry& geom, uint64_t seed) {
    TileSample tile = generate_tile_uncaptioned(tile_id, geom, seed);
    tile.caption = run_caption_pipeline(tile).final_caption;
    return tile;
}

// ----------------------------------------------------------------------------
// attributes
// ----------------------------------------------------------------------------

namespace {

std::string area_descriptor(double lat, double lon, double mean, double relief) {
    std::string direction;
    if (lat > 23.0) {
        direction = "northern";
    } else if (lat < -23.0) {
        direction = "southern";
    } else {
        direction = lon >= 0.0 ? "eastern" : "western";
    }
    std::string landform;
    if (mean > 1200.0) {
        landform = relief < 200.0 ? "plateau" : "highlands";
    } else if (mean > 400.0) {
        landform = relief > 300.0 ? "hills" : "basin";
    } else {
        landform = relief < 120.0 ? "plains" : "lowlands";
    }
    return direction + " " + landform;
}

const std::array<std::string, kDwClassCount>& center_tag_names() {
    static const std::array<std::string, kDwClassCount> tags = {
        "lakeshore", "woodland", "meadow", "marsh", "farmland",
        "scrubland", "settlement", "drylands", "snowfield"};
    return tags;
}

}  // namespace

StructuredAttributes compute_attributes(const TileSample& tile, int geomorphon_radius) {
    StructuredAttributes attrs;
    const int64_t npx = tile.dw.pixel_count();
    if (npx == 0) throw DataError("compute_attributes: tile has no pixels");

    attrs.class_fractions.assign(kDwClassCount, 0.0);
    for (uint8_t c : tile.dw.labels) attrs.class_fractions[c] += 1.0;
    for (double& v : attrs.class_fractions) v /= static_cast<double>(npx);
    attrs.dominant_class = 0;
    for (int c = 1; c < kDwClassCount; ++c) {
        if (attrs.class_fractions[static_cast<size_t>(c)] >
            attrs.class_fractions[static_cast<size_t>(attrs.dominant_class)]) {
            attrs.dominant_class = c;
        }
    }
    attrs.dominant_fraction = attrs.class_fractions[static_cast<size_t>(attrs.dominant_class)];

    attrs.water_fraction = water_consensus(tile.dw, tile.esa).fraction;

    double mn = tile.dem.values[0], mx = tile.dem.values[0], sum = 0.0;
    for (double v : tile.dem.values) {
        mn = std::min(mn, v);
        mx = std::max(mx, v);
        sum += v;
    }
    attrs.elevation = {mn, mx, sum / static_cast<double>(npx)};

    int radius = geomorphon_radius;
    if (radius <= 0) {
        radius = static_cast<int>(std::clamp<int64_t>(std::min(tile.dem.height, tile.dem.width) / 8,
                                                      1, 16));
    }
    ClassMap forms = geomorphon_classify(tile.dem, radius);
    std::array<int64_t, kGeomorphonFormCount> counts{};
    for (uint8_t v : forms.labels) ++counts[v];
    int modal = 0;
    for (int i = 1; i < kGeomorphonFormCount; ++i) {
        if (counts[static_cast<size_t>(i)] > counts[static_cast<size_t>(modal)]) modal = i;
    }
    attrs.terrain_class = geomorphon_form_names()[static_cast<size_t>(modal)];

    // three-level geographic tags: center-point feature, surrounding objects,
    // and an area-level descriptor
    const uint8_t center = tile.dw.at(tile.dw.height / 2, tile.dw.width / 2);
    attrs.tags.center = center_tag_names()[center];
    std::vector<std::pair<double, int>> others;
    for (int c = 0; c < kDwClassCount; ++c) {
        if (c == attrs.dominant_class) continue;
        if (attrs.class_fractions[static_cast<size_t>(c)] >= 0.05) {
            others.emplace_back(attrs.class_fractions[static_cast<size_t>(c)], c);
        }
    }
    std::sort(others.begin(), others.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    attrs.tags.surrounding.clear();
    for (size_t i = 0; i < others.size() && i < 2; ++i) {
        attrs.tags.surrounding.push_back(dw_caption_nouns()[static_cast<size_t>(others[i].second)]);
    }
    attrs.tags.area = area_descriptor(tile.lat, tile.lon, attrs.elevation.mean_m, mx - mn);
    return attrs;
}

}  // namespace geomeld

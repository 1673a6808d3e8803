#pragma once

#include <string>
#include <vector>

#include "geomeld/geodata.hpp"

namespace geomeld {

// Water claims are only permitted when the consensus fraction clears this
// threshold; one 128x128 pixel row is ~0.008, so 0.02 avoids speckle claims.
constexpr double kWaterClaimThreshold = 0.02;

// Caption vocabulary for a DW class (distinct from the product-style names).
const std::array<std::string, kDwClassCount>& dw_caption_nouns();
const std::array<std::string, 3>& elevation_band_names();  // lowland, upland, highland
std::string elevation_band(double mean_m);

// ----------------------------------------------------------------------------
// orchestrator: consolidated signal bundle
// ----------------------------------------------------------------------------

struct SignalBundle {
    int dominant_class = -1;
    double dominant_fraction = 0.0;
    std::vector<std::pair<int, double>> top_classes;  // sorted by fraction desc
    double water_fraction = 0.0;
    bool has_water = false;           // water_fraction >= kWaterClaimThreshold
    std::string hydrology;            // "surface water present" / "no surface water"
    std::string terrain_class;
    ElevationStats elevation;
    std::string elevation_band;
    GeoTags tags;
};

SignalBundle orchestrate(const TileSample& tile);

// ----------------------------------------------------------------------------
// captioner: templated candidate generation
// ----------------------------------------------------------------------------

const std::vector<std::string>& caption_recipe_ids();

// k pairwise-distinct candidates, each mentioning the dominant class.
// k must be >= 2 and <= the recipe count.
std::vector<std::string> generate_candidates(const SignalBundle& signals, int k);

// ----------------------------------------------------------------------------
// evaluator: rule-based alignment ranking
// ----------------------------------------------------------------------------

// kinds: cover, water, no_water, terrain, elevation
struct Claim {
    std::string kind;
    std::string word;
    bool operator==(const Claim&) const = default;
};

std::vector<Claim> extract_claims(const std::string& caption);

// weighted corroborated-minus-contradicted claim score
double score_caption(const TileSample& tile, const std::string& caption);

struct RankResult {
    std::vector<double> scores;
    int best_index = 0;  // argmax, ties broken to the lower index
};

RankResult rank_candidates(const TileSample& tile, const std::vector<std::string>& candidates);

// ----------------------------------------------------------------------------
// verification: conflict detection and deterministic revision
// ----------------------------------------------------------------------------

struct Conflict {
    std::string rule_id;   // water-claim, no-water-claim, cover-noun, terrain-word, elevation-adj
    std::string claim;     // offending word or phrase
    std::string evidence;  // measured attribute it contradicts
};

struct VerifyResult {
    std::string caption;  // passes all rules
    std::vector<Conflict> conflicts;
    bool revised = false;
};

// Throws DegenerateCaptionError when revision strips every content word.
VerifyResult verify_and_revise(const TileSample& tile, const std::string& caption);

// ----------------------------------------------------------------------------
// full pipeline with audit trail
// ----------------------------------------------------------------------------

struct CaptionAudit {
    std::vector<std::pair<std::string, std::string>> candidates;  // (text, recipe id)
    std::vector<double> scores;
    int best_index = 0;
    std::vector<Conflict> conflicts;
    std::string final_caption;
    bool revised = false;
};

// Pure function of the tile; falls back to a minimal attribute caption if the
// best candidate degenerates under revision.
CaptionAudit run_caption_pipeline(const TileSample& tile, int k = 4);

// One JSON record per tile for the audit log.
std::string audit_to_json(const std::string& tile_id, const CaptionAudit& audit);

// Closed lexicon of every word the templates and revisions can emit; the text
// tokenizer builds its vocabulary from this.
std::vector<std::string> caption_vocabulary();

}  // namespace geomeld

#include "geomeld/caption.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include <json.hpp>

namespace geomeld {

namespace {

const std::set<std::string>& water_words() {
    static const std::set<std::string> words = {"water", "lake", "river", "pond", "lakeshore",
                                                "shoreline"};
    return words;
}

const std::set<std::string>& glue_words() {
    static const std::set<std::string> words = {
        "a", "an", "the", "with", "of", "and", "by", "on", "in", "near", "nearby",
        "mainly", "covered", "patches", "amid", "bordered", "dry", "open", "some",
        "no", "surface", "mostly", "mixed", "little", "ground", "setting", "scene"};
    return words;
}

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream is(text);
    std::string w;
    while (is >> w) out.push_back(w);
    return out;
}

std::string join_words(const std::vector<std::string>& words) {
    std::string out;
    for (const auto& w : words) {
        if (!out.empty()) out += ' ';
        out += w;
    }
    return out;
}

int cover_class_of(const std::string& word) {
    const auto& nouns = dw_caption_nouns();
    for (int c = 0; c < kDwClassCount; ++c) {
        if (nouns[static_cast<size_t>(c)] == word) return c;
    }
    return -1;
}

int terrain_form_of(const std::string& word) {
    const auto& forms = geomorphon_form_names();
    for (int i = 0; i < kGeomorphonFormCount; ++i) {
        if (forms[static_cast<size_t>(i)] == word) return i;
    }
    return -1;
}

bool is_elevation_band(const std::string& word) {
    for (const auto& b : elevation_band_names()) {
        if (b == word) return true;
    }
    return false;
}

// top-3 DW classes by pixel fraction (positive fractions only)
std::vector<int> top3_classes(const StructuredAttributes& attrs) {
    std::vector<std::pair<double, int>> ranked;
    for (int c = 0; c < kDwClassCount; ++c) {
        if (attrs.class_fractions[static_cast<size_t>(c)] > 0.0) {
            ranked.emplace_back(attrs.class_fractions[static_cast<size_t>(c)], c);
        }
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    std::vector<int> out;
    for (size_t i = 0; i < ranked.size() && i < 3; ++i) out.push_back(ranked[i].second);
    return out;
}

}  // namespace

const std::array<std::string, kDwClassCount>& dw_caption_nouns() {
    static const std::array<std::string, kDwClassCount> nouns = {
        "water", "forest", "grassland", "marshland", "cropland",
        "shrubland", "urban", "barren", "snow"};
    return nouns;
}

const std::array<std::string, 3>& elevation_band_names() {
    static const std::array<std::string, 3> bands = {"lowland", "upland", "highland"};
    return bands;
}

std::string elevation_band(double mean_m) {
    if (mean_m > 1200.0) return "highland";
    if (mean_m > 400.0) return "upland";
    return "lowland";
}

// ----------------------------------------------------------------------------
// orchestrator
// ----------------------------------------------------------------------------

SignalBundle orchestrate(const TileSample& tile) {
    const StructuredAttributes& a = tile.attributes;
    if (a.dominant_class < 0 || a.dominant_class >= kDwClassCount ||
        a.class_fractions.size() != static_cast<size_t>(kDwClassCount)) {
        throw IncompleteSignalError("tile " + tile.tile_id + ": land-cover statistics missing");
    }
    if (a.terrain_class.empty()) {
        throw IncompleteSignalError("tile " + tile.tile_id + ": terrain class missing");
    }
    SignalBundle s;
    s.dominant_class = a.dominant_class;
    s.dominant_fraction = a.dominant_fraction;
    for (int c : top3_classes(a)) {
        s.top_classes.emplace_back(c, a.class_fractions[static_cast<size_t>(c)]);
    }
    s.water_fraction = a.water_fraction;
    s.has_water = a.water_fraction >= kWaterClaimThreshold;
    s.hydrology = s.has_water ? "surface water present" : "no surface water";
    s.terrain_class = a.terrain_class;
    s.elevation = a.elevation;
    s.elevation_band = elevation_band(a.elevation.mean_m);
    s.tags = a.tags;
    return s;
}

// ----------------------------------------------------------------------------
// captioner
// ----------------------------------------------------------------------------

const std::vector<std::string>& caption_recipe_ids() {
    static const std::vector<std::string> ids = {"cover-led", "terrain-led", "hydrology-led",
                                                 "tag-led"};
    return ids;
}

std::vector<std::string> generate_candidates(const SignalBundle& s, int k) {
    if (k < 2) throw ConfigError("generate_candidates: k must be >= 2, got " + std::to_string(k));
    if (k > static_cast<int>(caption_recipe_ids().size())) {
        throw ConfigError("generate_candidates: k=" + std::to_string(k) + " exceeds the " +
                          std::to_string(caption_recipe_ids().size()) + " available recipes");
    }
    const std::string dom = dw_caption_nouns()[static_cast<size_t>(s.dominant_class)];
    std::string second, third;
    for (const auto& [c, frac] : s.top_classes) {
        if (c == s.dominant_class) continue;
        if (second.empty()) {
            second = dw_caption_nouns()[static_cast<size_t>(c)];
        } else if (third.empty()) {
            third = dw_caption_nouns()[static_cast<size_t>(c)];
        }
    }

    std::vector<std::string> out;

    // cover-led
    if (s.dominant_class == kDwWater) {
        std::string t = "open water";
        if (!second.empty()) t += " bordered by " + second;
        t += " on " + s.terrain_class + " terrain in a " + s.elevation_band + " setting";
        out.push_back(t);
    } else {
        std::string t = s.dominant_fraction >= 0.6 ? "a mostly " + dom + " landscape"
                                                   : "a mixed " + dom + " landscape";
        if (!second.empty()) t += " with patches of " + second;
        if (!third.empty()) t += " and " + third;
        t += " on " + s.terrain_class + " terrain in a " + s.elevation_band + " setting";
        if (s.has_water) t += " and open water";
        out.push_back(t);
    }

    // terrain-led
    out.push_back(s.terrain_class + " terrain covered mainly by " + dom + " in a " +
                  s.elevation_band + " setting");

    // hydrology-led
    if (s.dominant_class == kDwWater) {
        out.push_back("mostly open water with little dry ground in a " + s.elevation_band +
                      " setting");
    } else if (s.has_water) {
        std::string t = "surface water amid " + dom;
        if (!second.empty()) t += " and " + second;
        t += " cover";
        out.push_back(t);
    } else {
        std::string t = "a dry " + dom + " scene with no surface water";
        if (!second.empty()) t += " and scattered " + second;
        out.push_back(t);
    }

    // tag-led
    {
        std::string t = s.tags.area + " " + dom + " region near a " + s.tags.center;
        if (!s.tags.surrounding.empty()) t += " with " + s.tags.surrounding.front() + " nearby";
        out.push_back(t);
    }

    out.resize(static_cast<size_t>(k));
    return out;
}

// ----------------------------------------------------------------------------
// claims and scoring
// ----------------------------------------------------------------------------

std::vector<Claim> extract_claims(const std::string& caption) {
    const std::vector<std::string> words = split_words(caption);
    std::vector<Claim> claims;
    std::set<std::pair<std::string, std::string>> seen;
    auto push = [&](const std::string& kind, const std::string& word) {
        if (seen.emplace(kind, word).second) claims.push_back({kind, word});
    };
    for (size_t i = 0; i < words.size(); ++i) {
        // the "no surface water" phrase is a negation, not a water claim
        if (words[i] == "no" && i + 2 < words.size() && words[i + 1] == "surface" &&
            words[i + 2] == "water") {
            push("no_water", "no surface water");
            i += 2;
            continue;
        }
        const std::string& w = words[i];
        if (water_words().count(w)) {
            push("water", w);
            // "water" doubles as the DW class noun; the hydrology rule owns it
            continue;
        }
        if (cover_class_of(w) >= 0) {
            push("cover", w);
        } else if (terrain_form_of(w) >= 0) {
            push("terrain", w);
        } else if (is_elevation_band(w)) {
            push("elevation", w);
        }
    }
    return claims;
}

namespace {

struct ClaimJudgement {
    bool corroborated = false;
    double weight = 0.0;      // contribution to the alignment score
    std::string evidence;
};

ClaimJudgement judge_claim(const TileSample& tile, const Claim& claim) {
    const StructuredAttributes& a = tile.attributes;
    ClaimJudgement j;
    char buf[64];
    if (claim.kind == "water") {
        j.corroborated = a.water_fraction >= kWaterClaimThreshold;
        j.weight = j.corroborated ? 1.0 : -2.0;
        std::snprintf(buf, sizeof(buf), "water_fraction=%.4f", a.water_fraction);
        j.evidence = buf;
    } else if (claim.kind == "no_water") {
        j.corroborated = a.water_fraction < kWaterClaimThreshold;
        j.weight = j.corroborated ? 1.0 : -2.0;
        std::snprintf(buf, sizeof(buf), "water_fraction=%.4f", a.water_fraction);
        j.evidence = buf;
    } else if (claim.kind == "cover") {
        const int c = cover_class_of(claim.word);
        const auto top = top3_classes(a);
        const bool in_top3 = std::find(top.begin(), top.end(), c) != top.end();
        j.corroborated = in_top3;
        if (c == a.dominant_class) {
            j.weight = 2.0;
        } else {
            j.weight = in_top3 ? 1.0 : -2.0;
        }
        j.evidence = "dominant=" + dw_caption_nouns()[static_cast<size_t>(a.dominant_class)];
    } else if (claim.kind == "terrain") {
        j.corroborated = claim.word == a.terrain_class;
        j.weight = j.corroborated ? 1.0 : -1.0;
        j.evidence = "terrain=" + a.terrain_class;
    } else if (claim.kind == "elevation") {
        j.corroborated = claim.word == elevation_band(a.elevation.mean_m);
        j.weight = j.corroborated ? 1.0 : -1.0;
        std::snprintf(buf, sizeof(buf), "mean_elevation=%.0fm", a.elevation.mean_m);
        j.evidence = buf;
    }
    return j;
}

}  // namespace

double score_caption(const TileSample& tile, const std::string& caption) {
    double score = 0.0;
    for (const Claim& c : extract_claims(caption)) score += judge_claim(tile, c).weight;
    return score;
}

RankResult rank_candidates(const TileSample& tile, const std::vector<std::string>& candidates) {
    if (candidates.empty()) throw DataError("rank_candidates: empty candidate list");
    RankResult r;
    r.scores.reserve(candidates.size());
    for (const auto& c : candidates) r.scores.push_back(score_caption(tile, c));
    r.best_index = 0;
    for (size_t i = 1; i < r.scores.size(); ++i) {
        if (r.scores[i] > r.scores[static_cast<size_t>(r.best_index)]) {
            r.best_index = static_cast<int>(i);
        }
    }
    return r;
}

// ----------------------------------------------------------------------------
// verification
// ----------------------------------------------------------------------------

namespace {

void cleanup_tokens(std::vector<std::string>& t) {
    static const std::set<std::string> droppable_lead = {"and", "with", "of", "by", "on", "in"};
    static const std::set<std::string> droppable_tail = {"a",  "an", "the", "with", "of",
                                                         "and", "by", "on",  "in",  "near",
                                                         "mainly", "covered", "amid", "bordered"};
    static const std::set<std::string> preps = {"of", "with", "by", "amid", "near"};
    bool changed = true;
    while (changed && !t.empty()) {
        changed = false;
        for (size_t i = 0; i + 1 < t.size(); ++i) {
            const bool dup = t[i] == t[i + 1] && glue_words().count(t[i]);
            const bool prep_chain = preps.count(t[i]) && (preps.count(t[i + 1]) || t[i + 1] == "and");
            if (dup || prep_chain) {
                t.erase(t.begin() + static_cast<std::ptrdiff_t>(i));
                changed = true;
                break;
            }
        }
        if (!t.empty() && droppable_lead.count(t.front())) {
            t.erase(t.begin());
            changed = true;
        }
        if (!t.empty() && droppable_tail.count(t.back())) {
            t.pop_back();
            changed = true;
        }
    }
}

bool has_content_word(const std::vector<std::string>& tokens) {
    for (const auto& w : tokens) {
        if (!glue_words().count(w)) return true;
    }
    return false;
}

// dominant noun unless it is an uncorroborated water claim; then the best
// passing alternative from the top-3
std::string safe_cover_noun(const TileSample& tile) {
    const StructuredAttributes& a = tile.attributes;
    for (int c : top3_classes(a)) {
        const std::string& noun = dw_caption_nouns()[static_cast<size_t>(c)];
        if (c == kDwWater && a.water_fraction < kWaterClaimThreshold) continue;
        return noun;
    }
    return "";
}

}  // namespace

VerifyResult verify_and_revise(const TileSample& tile, const std::string& caption) {
    if (caption.empty()) throw DataError("verify_and_revise: empty caption");
    VerifyResult result;
    std::vector<std::string> tokens = split_words(caption);
    const StructuredAttributes& a = tile.attributes;

    for (int round = 0; round < 4; ++round) {
        const std::vector<Claim> claims = extract_claims(join_words(tokens));
        std::vector<Conflict> found;
        for (const Claim& c : claims) {
            ClaimJudgement j = judge_claim(tile, c);
            if (j.corroborated) continue;
            std::string rule;
            if (c.kind == "water") rule = "water-claim";
            else if (c.kind == "no_water") rule = "no-water-claim";
            else if (c.kind == "cover") rule = "cover-noun";
            else if (c.kind == "terrain") rule = "terrain-word";
            else rule = "elevation-adj";
            found.push_back({rule, c.word, j.evidence});
        }
        if (found.empty()) break;
        result.revised = true;
        for (const Conflict& c : found) {
            result.conflicts.push_back(c);
            if (c.rule_id == "water-claim") {
                // remove the offending word
                std::vector<std::string> next;
                for (const auto& w : tokens) {
                    if (w != c.claim) next.push_back(w);
                }
                tokens = std::move(next);
            } else if (c.rule_id == "no-water-claim") {
                for (size_t i = 0; i + 2 < tokens.size(); ++i) {
                    if (tokens[i] == "no" && tokens[i + 1] == "surface" && tokens[i + 2] == "water") {
                        tokens[i] = "some";
                        break;
                    }
                }
            } else if (c.rule_id == "cover-noun") {
                const std::string repl = safe_cover_noun(tile);
                for (auto& w : tokens) {
                    if (w == c.claim) w = repl.empty() ? std::string("terrain") : repl;
                }
                if (repl.empty()) {
                    std::vector<std::string> next;
                    for (size_t i = 0; i < tokens.size(); ++i) {
                        if (tokens[i] == "terrain" && i + 1 < tokens.size() && tokens[i + 1] == "terrain") continue;
                        next.push_back(tokens[i]);
                    }
                    tokens = std::move(next);
                }
            } else if (c.rule_id == "terrain-word") {
                for (auto& w : tokens) {
                    if (w == c.claim) w = a.terrain_class;
                }
            } else {  // elevation-adj
                const std::string band = elevation_band(a.elevation.mean_m);
                for (auto& w : tokens) {
                    if (w == c.claim) w = band;
                }
            }
        }
        cleanup_tokens(tokens);
        if (tokens.empty() || !has_content_word(tokens)) {
            throw DegenerateCaptionError("revision stripped all content from: " + caption);
        }
    }
    // post: the returned caption passes every rule
    for (const Claim& c : extract_claims(join_words(tokens))) {
        if (!judge_claim(tile, c).corroborated) {
            throw DegenerateCaptionError("revision failed to converge for: " + caption);
        }
    }
    result.caption = join_words(tokens);
    return result;
}

// ----------------------------------------------------------------------------
// pipeline
// ----------------------------------------------------------------------------

namespace {

std::string fallback_caption(const TileSample& tile) {
    const std::string noun = safe_cover_noun(tile);
    if (!noun.empty()) return "a " + noun + " area";
    return tile.attributes.terrain_class + " terrain";
}

}  // namespace

CaptionAudit run_caption_pipeline(const TileSample& tile, int k) {
    CaptionAudit audit;
    SignalBundle signals = orchestrate(tile);
    const std::vector<std::string> cands = generate_candidates(signals, k);
    for (size_t i = 0; i < cands.size(); ++i) {
        audit.candidates.emplace_back(cands[i], caption_recipe_ids()[i]);
    }
    RankResult rank = rank_candidates(tile, cands);
    audit.scores = rank.scores;
    audit.best_index = rank.best_index;
    try {
        VerifyResult v = verify_and_revise(tile, cands[static_cast<size_t>(rank.best_index)]);
        audit.final_caption = v.caption;
        audit.conflicts = v.conflicts;
        audit.revised = v.revised;
    } catch (const DegenerateCaptionError&) {
        VerifyResult v = verify_and_revise(tile, fallback_caption(tile));
        audit.final_caption = v.caption;
        audit.conflicts = v.conflicts;
        audit.revised = true;
    }
    return audit;
}

std::string audit_to_json(const std::string& tile_id, const CaptionAudit& audit) {
    nlohmann::json j;
    j["tile_id"] = tile_id;
    j["candidates"] = nlohmann::json::array();
    for (size_t i = 0; i < audit.candidates.size(); ++i) {
        j["candidates"].push_back({{"text", audit.candidates[i].first},
                                   {"recipe", audit.candidates[i].second},
                                   {"score", audit.scores[i]}});
    }
    j["best_index"] = audit.best_index;
    j["conflicts"] = nlohmann::json::array();
    for (const Conflict& c : audit.conflicts) {
        j["conflicts"].push_back({{"rule", c.rule_id}, {"claim", c.claim}, {"evidence", c.evidence}});
    }
    j["final_caption"] = audit.final_caption;
    j["revised"] = audit.revised;
    return j.dump();
}

std::vector<std::string> caption_vocabulary() {
    std::set<std::string> words(glue_words().begin(), glue_words().end());
    for (const auto& n : dw_caption_nouns()) words.insert(n);
    for (const auto& f : geomorphon_form_names()) words.insert(f);
    for (const auto& b : elevation_band_names()) words.insert(b);
    for (const char* tag : {"lakeshore", "woodland", "meadow", "marsh", "farmland", "scrubland",
                            "settlement", "drylands", "snowfield"}) {
        words.insert(tag);
    }
    for (const char* dir : {"northern", "southern", "eastern", "western", "central"}) words.insert(dir);
    for (const char* lf : {"lowlands", "highlands", "plains", "plateau", "basin", "hills"}) words.insert(lf);
    for (const char* t : {"landscape", "region", "terrain", "area"}) words.insert(t);
    return {words.begin(), words.end()};
}

}  // namespace geomeld

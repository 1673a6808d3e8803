#pragma once

#include <string>
#include <vector>

#include "geomeld/geodata.hpp"

namespace geomeld {

// Binary tile container: magic, version, header (tile id, anchor date,
// lat/lon, geometry, attributes, modality table), little-endian raster
// payloads, UTF-8 caption block, trailing CRC32. Bad magic, unsupported
// version, and checksum mismatch raise distinct errors.
void write_tile(const std::string& path, const TileSample& tile);
TileSample read_tile(const std::string& path);

std::vector<uint8_t> serialize_tile(const TileSample& tile);
TileSample deserialize_tile(const std::vector<uint8_t>& bytes);

constexpr uint32_t kTileFormatVersion = 1;

// Line-delimited dataset index: tile_id, path, anchor_date, dominant_class.
struct ManifestEntry {
    std::string tile_id;
    std::string path;
    CalendarDate anchor_date;
    std::string dominant_class;
};

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::string& path);

}  // namespace geomeld

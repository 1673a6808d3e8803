#include "geomeld/tile_io.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <sstream>

#include "geomeld/detail/bytes.hpp"

namespace geomeld {

namespace {

using detail::ByteReader;
using detail::ByteWriter;

constexpr char kMagic[8] = {'G', 'M', 'L', 'D', 'T', 'I', 'L', 'E'};

uint32_t crc_of(const uint8_t* p, size_t n) {
    return static_cast<uint32_t>(::crc32(0L, p, static_cast<uInt>(n)));
}

}  // namespace

std::vector<uint8_t> serialize_tile(const TileSample& tile) {
    ByteWriter w;
    w.raw(kMagic, sizeof(kMagic));
    w.u32(kTileFormatVersion);

    w.str(tile.tile_id);
    w.u16(static_cast<uint16_t>(tile.anchor_date.year));
    w.u8(static_cast<uint8_t>(tile.anchor_date.month));
    w.u8(static_cast<uint8_t>(tile.anchor_date.day));
    w.f64(tile.lat);
    w.f64(tile.lon);
    w.u32(static_cast<uint32_t>(tile.s2.height));
    w.u32(static_cast<uint32_t>(tile.s2.width));

    const StructuredAttributes& a = tile.attributes;
    w.i32(a.dominant_class);
    w.f64(a.dominant_fraction);
    w.u32(static_cast<uint32_t>(a.class_fractions.size()));
    for (double f : a.class_fractions) w.f64(f);
    w.f64(a.water_fraction);
    w.str(a.terrain_class);
    w.f64(a.elevation.min_m);
    w.f64(a.elevation.max_m);
    w.f64(a.elevation.mean_m);
    w.str(a.tags.center);
    w.u32(static_cast<uint32_t>(a.tags.surrounding.size()));
    for (const auto& s : a.tags.surrounding) w.str(s);
    w.str(a.tags.area);

    // modality table then payloads in table order
    struct Entry {
        const char* name;
        uint8_t kind;  // 0 continuous, 1 categorical
        uint32_t cc;
        uint8_t dtype;  // 0 f64, 1 u8
    };
    const Entry entries[] = {
        {"s2", 0, 12, 0},  {"s1", 0, 4, 0},
        {"dem", 0, 1, 0},  {"canopy", 0, 1, 0},
        {"dw", 1, kDwClassCount, 1}, {"esa", 1, kEsaClassCount, 1},
    };
    w.u32(6);
    for (const Entry& e : entries) {
        w.str(e.name);
        w.u8(e.kind);
        w.u32(e.cc);
        w.u8(e.dtype);
    }
    for (const Raster* r : {&tile.s2, &tile.s1, &tile.dem, &tile.canopy}) {
        w.raw(r->values.data(), r->values.size() * sizeof(double));
    }
    for (const ClassMap* m : {&tile.dw, &tile.esa}) {
        w.raw(m->labels.data(), m->labels.size());
    }

    w.str(tile.caption);
    w.u32(crc_of(w.bytes.data(), w.bytes.size()));
    return w.bytes;
}

TileSample deserialize_tile(const std::vector<uint8_t>& bytes) {
    if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
        throw BadMagicError("not a tile container");
    }
    if (bytes.size() < sizeof(kMagic) + 8) {
        throw ChecksumError("file shorter than the fixed framing");
    }
    uint32_t version;
    std::memcpy(&version, bytes.data() + sizeof(kMagic), 4);
    if (version != kTileFormatVersion) {
        throw BadVersionError("tile container version " + std::to_string(version) +
                              ", expected " + std::to_string(kTileFormatVersion));
    }
    uint32_t stored;
    std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
    const uint32_t actual = crc_of(bytes.data(), bytes.size() - 4);
    if (stored != actual) {
        throw ChecksumError("stored " + std::to_string(stored) + ", computed " +
                            std::to_string(actual));
    }

    ByteReader r(bytes.data(), bytes.size() - 4);
    char magic[8];
    r.raw(magic, 8);
    r.u32();  // version, already validated

    TileSample tile;
    tile.tile_id = r.str();
    tile.anchor_date.year = r.u16();
    tile.anchor_date.month = r.u8();
    tile.anchor_date.day = r.u8();
    tile.lat = r.f64();
    tile.lon = r.f64();
    const int64_t h = r.u32();
    const int64_t w = r.u32();

    StructuredAttributes& a = tile.attributes;
    a.dominant_class = r.i32();
    a.dominant_fraction = r.f64();
    const uint32_t nf = r.u32();
    a.class_fractions.resize(nf);
    for (uint32_t i = 0; i < nf; ++i) a.class_fractions[i] = r.f64();
    a.water_fraction = r.f64();
    a.terrain_class = r.str();
    a.elevation.min_m = r.f64();
    a.elevation.max_m = r.f64();
    a.elevation.mean_m = r.f64();
    a.tags.center = r.str();
    const uint32_t ns = r.u32();
    a.tags.surrounding.resize(ns);
    for (uint32_t i = 0; i < ns; ++i) a.tags.surrounding[i] = r.str();
    a.tags.area = r.str();

    const uint32_t n_modalities = r.u32();
    struct Entry {
        std::string name;
        uint8_t kind;
        uint32_t cc;
        uint8_t dtype;
    };
    std::vector<Entry> table(n_modalities);
    for (auto& e : table) {
        e.name = r.str();
        e.kind = r.u8();
        e.cc = r.u32();
        e.dtype = r.u8();
    }
    for (const Entry& e : table) {
        if (e.kind == 0) {
            Raster raster = Raster::zeros(e.cc, h, w);
            r.raw(raster.values.data(), raster.values.size() * sizeof(double));
            if (e.name == "s2") tile.s2 = std::move(raster);
            else if (e.name == "s1") tile.s1 = std::move(raster);
            else if (e.name == "dem") tile.dem = std::move(raster);
            else if (e.name == "canopy") tile.canopy = std::move(raster);
            else throw FormatError("tile container: unknown continuous modality " + e.name);
        } else {
            ClassMap map = ClassMap::zeros(h, w);
            r.raw(map.labels.data(), map.labels.size());
            if (e.name == "dw") tile.dw = std::move(map);
            else if (e.name == "esa") tile.esa = std::move(map);
            else throw FormatError("tile container: unknown categorical modality " + e.name);
        }
    }
    tile.caption = r.str();
    return tile;
}

void write_tile(const std::string& path, const TileSample& tile) {
    const std::vector<uint8_t> bytes = serialize_tile(tile);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("write_tile: cannot open " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw DataError("write_tile: short write to " + path);
}

TileSample read_tile(const std::string& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw DataError("read_tile: cannot open " + path);
    const std::streamsize size = f.tellg();
    f.seekg(0);
    std::vector<uint8_t> bytes(static_cast<size_t>(size));
    f.read(reinterpret_cast<char*>(bytes.data()), size);
    if (!f) throw DataError("read_tile: short read from " + path);
    return deserialize_tile(bytes);
}

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("write_manifest: cannot open " + path);
    for (const auto& e : entries) {
        f << e.tile_id << '\t' << e.path << '\t' << e.anchor_date.iso() << '\t'
          << e.dominant_class << '\n';
    }
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("read_manifest: cannot open " + path);
    std::vector<ManifestEntry> entries;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream is(line);
        ManifestEntry e;
        std::string date;
        if (!std::getline(is, e.tile_id, '\t') || !std::getline(is, e.path, '\t') ||
            !std::getline(is, date, '\t') || !std::getline(is, e.dominant_class)) {
            throw DataError("manifest " + path + ": malformed line " + std::to_string(lineno));
        }
        if (date.size() != 10 || date[4] != '-' || date[7] != '-') {
            throw DataError("manifest " + path + ": bad date on line " + std::to_string(lineno));
        }
        e.anchor_date.year = std::stoi(date.substr(0, 4));
        e.anchor_date.month = std::stoi(date.substr(5, 2));
        e.anchor_date.day = std::stoi(date.substr(8, 2));
        entries.push_back(std::move(e));
    }
    return entries;
}

}  // namespace geomeld

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sigmap/geodata.hpp"
#include "sigmap/maps.hpp"
#include "sigmap/synth.hpp"

namespace sigmap::io {

/// In-memory form of a grid file. Masked pixels are stored as quiet NaN.
struct GridFile {
  FloatGrid values;
  MaskGrid mask;
  geo::GeoArea area;
  std::string kind;
  std::string units;
};

inline constexpr std::string_view kGridMagic{"SIGMAPGRID\0v1\0\0\0", 16};

std::vector<std::uint8_t> encode_grid(const GridFile& g);
/// Throws InputError on bad magic, truncation, trailing bytes or a header
/// whose dimensions disagree with the payload.
GridFile decode_grid(std::span<const std::uint8_t> bytes);

void save_grid(const std::filesystem::path& path, const GridFile& g);
GridFile load_grid(const std::filesystem::path& path);

GridFile to_grid_file(const PGMap& m);
GridFile to_grid_file(const SSMap& m);
GridFile to_grid_file(const geo::BuildingMap& m);
GridFile to_grid_file(const FloatGrid& g, const geo::GeoArea& area, std::string kind, std::string units);

/// Kind-checked conversions; throw InputError on a kind mismatch.
PGMap as_pg_map(const GridFile& g);
SSMap as_ss_map(const GridFile& g);
geo::BuildingMap as_building_map(const GridFile& g);

PGMap load_pg_map(const std::filesystem::path& path);
SSMap load_ss_map(const std::filesystem::path& path);
geo::BuildingMap load_building_map(const std::filesystem::path& path);

/// Binary 8-bit graymap, north up: values map linearly from [lo, hi] to
/// 0..255 (clamped) and masked pixels are 0.
std::vector<std::uint8_t> encode_pgm(const GridFile& g, double lo, double hi);

/// CSV with header `ix,iy,value_dbm`.
std::string format_sparse_csv(const synth::SparseSSMap& s);
/// Throws ParseError on malformed rows, InputError on out-of-area or
/// repeated pixels.
synth::SparseSSMap parse_sparse_csv(std::string_view text, const geo::GeoArea& area);
void save_sparse_csv(const std::filesystem::path& path, const synth::SparseSSMap& s);
synth::SparseSSMap load_sparse_csv(const std::filesystem::path& path, const geo::GeoArea& area);

/// Whole file as bytes / text; throws InputError naming the path.
std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);
std::string read_text(const std::filesystem::path& path);
/// Writes to a sibling temporary file, then renames over `path`.
void write_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_atomic(const std::filesystem::path& path, std::string_view text);

}  // namespace sigmap::io

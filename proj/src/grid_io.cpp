#include "sigmap/grid_io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <set>
#include <system_error>
#include <utility>

#include <unistd.h>

#include <nlohmann/json.hpp>

#include "sigmap/error.hpp"

namespace sigmap::io {
namespace {

using nlohmann::json;

constexpr std::uint32_t kQuietNan = 0x7FC00000u;
constexpr std::size_t kMaxHeaderBytes = 1u << 20;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

template <typename Tag>
GridFile masked_to_file(const MaskedMap<Tag>& m) {
  GridFile g;
  g.values = m.values;
  g.mask = m.mask;
  g.area = m.area;
  g.kind = Tag::kind;
  g.units = Tag::units;
  return g;
}

template <typename Tag>
MaskedMap<Tag> file_to_masked(const GridFile& g) {
  if (g.kind != Tag::kind) {
    throw InputError("expected a '" + std::string(Tag::kind) + "' grid, found '" + g.kind + "'");
  }
  MaskedMap<Tag> m(g.area);
  m.values = g.values;
  m.mask = g.mask;
  for (std::size_t i = 0; i < m.values.size(); ++i)
    if (m.mask.storage()[i]) m.values.storage()[i] = 0.0f;
  return m;
}

}  // namespace

std::vector<std::uint8_t> encode_grid(const GridFile& g) {
  const int w = g.values.width(), h = g.values.height();
  if (g.mask.width() != w || g.mask.height() != h) throw InputError("grid mask shape differs from values");
  if (g.area.grid_x != w || g.area.grid_y != h) throw InputError("grid area shape differs from values");
  json header = {{"width", w},
                 {"height", h},
                 {"resolution_m", g.area.resolution()},
                 {"kind", g.kind},
                 {"units", g.units},
                 {"origin", {{"lat", g.area.origin_lat}, {"lon", g.area.origin_lon}}}};
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(kGridMagic.begin(), kGridMagic.end());
  out.reserve(kGridMagic.size() + 4 + text.size() + 4 * g.values.size());
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (std::size_t i = 0; i < g.values.size(); ++i) {
    const float v = g.values.storage()[i];
    if (g.mask.storage()[i]) {
      put_u32(out, kQuietNan);
      continue;
    }
    if (!std::isfinite(v)) throw InputError("unmasked grid value is not finite");
    put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

GridFile decode_grid(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kGridMagic.size() + 4 ||
      !std::equal(kGridMagic.begin(), kGridMagic.end(), bytes.begin(),
                  [](char a, std::uint8_t b) { return static_cast<std::uint8_t>(a) == b; })) {
    throw InputError("not a grid file (bad magic)");
  }
  std::size_t pos = kGridMagic.size();
  const std::uint32_t header_len = get_u32(bytes.data() + pos);
  pos += 4;
  if (header_len > kMaxHeaderBytes || bytes.size() - pos < header_len) throw InputError("grid file truncated in header");
  json header;
  try {
    header = json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                         bytes.begin() + static_cast<std::ptrdiff_t>(pos + header_len));
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("bad grid header: ") + e.what(), pos + e.byte);
  }
  pos += header_len;

  GridFile g;
  try {
    const int w = header.at("width").get<int>();
    const int h = header.at("height").get<int>();
    const double res = header.at("resolution_m").get<double>();
    if (w <= 0 || h <= 0 || !(res > 0.0)) throw InputError("grid header has non-positive dimensions");
    g.kind = header.at("kind").get<std::string>();
    g.units = header.at("units").get<std::string>();
    g.area.grid_x = w;
    g.area.grid_y = h;
    g.area.side_x = w * res;
    g.area.side_y = h * res;
    if (header.contains("origin")) {
      g.area.origin_lat = header["origin"].at("lat").get<double>();
      g.area.origin_lon = header["origin"].at("lon").get<double>();
    }
  } catch (const json::exception& e) {
    throw InputError(std::string("bad grid header: ") + e.what());
  }

  const std::size_t count = static_cast<std::size_t>(g.area.grid_x) * g.area.grid_y;
  const std::size_t remaining = bytes.size() - pos;
  if (remaining < 4 * count) throw InputError("grid file truncated: payload shorter than header dimensions");
  if (remaining > 4 * count) throw InputError("grid file has trailing bytes beyond header dimensions");
  g.values = FloatGrid(g.area.grid_x, g.area.grid_y, 0.0f);
  g.mask = MaskGrid(g.area.grid_x, g.area.grid_y, 0);
  for (std::size_t i = 0; i < count; ++i, pos += 4) {
    const float v = std::bit_cast<float>(get_u32(bytes.data() + pos));
    if (std::isnan(v)) {
      g.mask.storage()[i] = 1;
    } else {
      g.values.storage()[i] = v;
    }
  }
  return g;
}

void save_grid(const std::filesystem::path& path, const GridFile& g) { write_atomic(path, encode_grid(g)); }

GridFile load_grid(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  try {
    return decode_grid(bytes);
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

GridFile to_grid_file(const PGMap& m) { return masked_to_file(m); }
GridFile to_grid_file(const SSMap& m) { return masked_to_file(m); }

GridFile to_grid_file(const geo::BuildingMap& m) { return to_grid_file(m.heights, m.area, "building", "m"); }

GridFile to_grid_file(const FloatGrid& g, const geo::GeoArea& area, std::string kind, std::string units) {
  GridFile f;
  f.values = g;
  f.mask = MaskGrid(g.width(), g.height(), 0);
  f.area = area;
  f.kind = std::move(kind);
  f.units = std::move(units);
  return f;
}

PGMap as_pg_map(const GridFile& g) { return file_to_masked<DbTag>(g); }
SSMap as_ss_map(const GridFile& g) { return file_to_masked<DbmTag>(g); }

geo::BuildingMap as_building_map(const GridFile& g) {
  if (g.kind != "building") throw InputError("expected a 'building' grid, found '" + g.kind + "'");
  for (auto m : g.mask.values())
    if (m) throw InputError("building grid has masked pixels");
  return {g.values, g.area};
}

PGMap load_pg_map(const std::filesystem::path& path) { return as_pg_map(load_grid(path)); }
SSMap load_ss_map(const std::filesystem::path& path) { return as_ss_map(load_grid(path)); }
geo::BuildingMap load_building_map(const std::filesystem::path& path) { return as_building_map(load_grid(path)); }

std::string format_sparse_csv(const synth::SparseSSMap& s) {
  std::string out = "ix,iy,value_dbm\n";
  char buf[80];
  for (const auto& p : s.samples) {
    const int n = std::snprintf(buf, sizeof buf, "%d,%d,%.17g\n", p.ix, p.iy, p.value_dbm);
    out.append(buf, static_cast<std::size_t>(n));
  }
  return out;
}

synth::SparseSSMap parse_sparse_csv(std::string_view text, const geo::GeoArea& area) {
  synth::SparseSSMap out;
  out.area = area;
  std::size_t pos = 0;
  auto next_line = [&](std::string_view& line) {
    if (pos >= text.size()) return false;
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    pos = end + 1;
    return true;
  };
  std::string_view line;
  if (!next_line(line) || line != "ix,iy,value_dbm") throw ParseError("sparse CSV must start with 'ix,iy,value_dbm'", 0);

  std::set<std::pair<int, int>> seen;
  for (;;) {
    const std::size_t start = pos;
    if (!next_line(line)) break;
    if (line.empty()) continue;
    const char* b = line.data();
    const char* e = line.data() + line.size();
    synth::SparseSample s;
    auto fail = [&](const char* at, const char* why) -> synth::SparseSSMap {
      throw ParseError(std::string("sparse CSV: ") + why, start + static_cast<std::size_t>(at - line.data()));
    };
    auto r = std::from_chars(b, e, s.ix);
    if (r.ec != std::errc() || r.ptr == e || *r.ptr != ',') return fail(r.ptr, "bad ix");
    r = std::from_chars(r.ptr + 1, e, s.iy);
    if (r.ec != std::errc() || r.ptr == e || *r.ptr != ',') return fail(r.ptr, "bad iy");
    r = std::from_chars(r.ptr + 1, e, s.value_dbm);
    if (r.ec != std::errc() || r.ptr != e || !std::isfinite(s.value_dbm)) return fail(r.ptr, "bad value_dbm");
    if (s.ix < 0 || s.iy < 0 || s.ix >= area.grid_x || s.iy >= area.grid_y) {
      throw InputError("sparse sample (" + std::to_string(s.ix) + ", " + std::to_string(s.iy) + ") is outside the area");
    }
    if (!seen.emplace(s.ix, s.iy).second) {
      throw InputError("sparse sample (" + std::to_string(s.ix) + ", " + std::to_string(s.iy) + ") is repeated");
    }
    out.samples.push_back(s);
  }
  return out;
}

void save_sparse_csv(const std::filesystem::path& path, const synth::SparseSSMap& s) {
  write_atomic(path, format_sparse_csv(s));
}

synth::SparseSSMap load_sparse_csv(const std::filesystem::path& path, const geo::GeoArea& area) {
  const auto text = read_text(path);
  try {
    return parse_sparse_csv(text, area);
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw InputError("cannot read " + path.string());
  return bytes;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw InputError("cannot read " + path.string());
  return text;
}

void write_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp" + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out.flush()) throw InputError("cannot write " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw InputError("cannot replace " + path.string());
  }
}

void write_atomic(const std::filesystem::path& path, std::string_view text) {
  write_atomic(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<std::uint8_t> encode_pgm(const GridFile& g, double lo, double hi) {
  if (!(hi > lo)) throw ConfigError("render range must be increasing");
  const int w = g.values.width(), h = g.values.height();
  const std::string header = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + static_cast<std::size_t>(w) * h);
  for (int iy = h - 1; iy >= 0; --iy) {
    for (int ix = 0; ix < w; ++ix) {
      if (g.mask(ix, iy)) {
        out.push_back(0);
        continue;
      }
      const double t = std::clamp((g.values(ix, iy) - lo) / (hi - lo), 0.0, 1.0);
      out.push_back(static_cast<std::uint8_t>(std::lround(t * 255.0)));
    }
  }
  return out;
}

}  // namespace sigmap::io

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "sigmap/geodata.hpp"
#include "sigmap/maps.hpp"
#include "sigmap/random.hpp"

namespace sigmap::synth {

/// Additive link-budget terms, all in dB / dBm.
struct LinkBudgetDraw {
  double p_tx = 0.0;  // transmit power, dBm
  double g_tx = 0.0;  // transmit antenna gain
  double g_rx = 0.0;  // receive antenna gain
  double il = 0.0;    // implementation loss
  double offset() const { return p_tx + g_tx + g_rx - il; }
};

/// S = p_tx + g_tx + PG + g_rx - il on every unmasked pixel; mask copied.
SSMap apply_link_budget(const PGMap& pg, const LinkBudgetDraw& draw);

/// p_tx ~ U(10, 35) dBm, g_tx, g_rx ~ U(10, 20) dB, il ~ U(-10, 10) dB.
LinkBudgetDraw draw_link_budget(Rng& rng);

struct SparseSample {
  int ix = 0;
  int iy = 0;
  double value_dbm = 0.0;
  bool operator==(const SparseSample&) const = default;
};

struct SparseSSMap {
  geo::GeoArea area;
  std::vector<SparseSample> samples;
  std::size_t size() const { return samples.size(); }
};

/// n distinct outdoor pixels drawn uniformly without replacement. Throws
/// ConstraintError unless 1 <= n <= outdoor pixel count.
SparseSSMap sample_sparse(const SSMap& ss, std::size_t n, Rng& rng);

// Fixed affine scalings used for every network input and target.
inline constexpr double kDbLow = -150.0;
inline constexpr double kDbSpan = 110.0;
inline constexpr double kHeightScaleM = 40.0;
inline constexpr double kSparseClampHigh = 1.5;

inline double normalize_db(double db) { return (db - kDbLow) / kDbSpan; }
inline double denormalize_db(double x) { return x * kDbSpan + kDbLow; }
inline double normalize_height(double h) { return h / kHeightScaleM; }

/// Grid with normalize_db(value) clamped to [0, 1.5] at sampled pixels and 0
/// elsewhere.
FloatGrid encode_sparse_channel(const SparseSSMap& sparse, const geo::GeoArea& area);

// D4 variants: bit 2 mirrors ix -> n-1-ix first, bits 0-1 then rotate by
// that many quarter turns counter-clockwise (x east, y north).
inline constexpr int kD4Variants = 8;
int d4_inverse(int variant);
int d4_compose(int outer, int inner);  // variant equal to applying inner, then outer

/// Throws InputError on a non-square grid or a variant outside 0..7.
template <typename T>
Grid<T> transform_d4(const Grid<T>& g, int variant);

struct AugmentPair {
  std::vector<FloatGrid> inputs;
  FloatGrid target;
  MaskGrid mask;
};

/// Same D4 variant applied to every channel, the target and the mask.
AugmentPair augment(const AugmentPair& pair, int variant);

/// Seeded shuffle of 0..n-1, then the first floor((1 - train_ratio) n)
/// shuffled indices go to validation. Returns is_val per index.
std::vector<bool> split_indices(std::size_t n, double train_ratio, std::uint64_t seed);

struct ProceduralArea {
  std::vector<geo::Footprint> footprints;
  geo::BuildingMap map;
};

/// Grid-aligned random rectangles (10-40 of them, sides 16-80 m, heights
/// 6-40 m in 0.25 m steps) clipped to the area, with more added until the
/// building ratio reaches 0.2.
ProceduralArea generate_procedural_area(std::uint64_t seed, const geo::GeoArea& area = geo::default_area());

}  // namespace sigmap::synth

#pragma once

// Masks, masked points and the cross-subspace distance algebra shared by
// every other module.

#include <algorithm>
#include <bit>
#include <cmath>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedmask/error.hpp"

namespace fedmask {

using ParticipantId = std::size_t;

// ---------------------------------------------------------------------------
// Absent marker

/// Marker stored in coordinates a participant does not observe. It is a NaN
/// with a fixed payload, so it can never collide with a measurement; loaders
/// reject NaN input cells.
inline double absent() { return std::bit_cast<double>(std::uint64_t{0x7ff8dead0000beefULL}); }

inline bool is_absent(double v) {
  return std::bit_cast<std::uint64_t>(v) == std::uint64_t{0x7ff8dead0000beefULL};
}

// ---------------------------------------------------------------------------
// FeatureMask

/// Set of observed feature indices out of `dim` features (a diagonal binary
/// projection). Indices are kept sorted and unique.
class FeatureMask {
 public:
  FeatureMask() = default;

  FeatureMask(std::size_t dim, std::vector<std::size_t> observed) : dim_(dim), observed_(std::move(observed)) {
    std::sort(observed_.begin(), observed_.end());
    observed_.erase(std::unique(observed_.begin(), observed_.end()), observed_.end());
    if (!observed_.empty() && observed_.back() >= dim_)
      throw Error(ErrorKind::contract, "feature index " + std::to_string(observed_.back()) +
                                           " out of range for dim " + std::to_string(dim_));
    bits_.assign(dim_, 0);
    for (auto m : observed_) bits_[m] = 1;
  }

  static FeatureMask full(std::size_t dim) {
    std::vector<std::size_t> all(dim);
    for (std::size_t m = 0; m < dim; ++m) all[m] = m;
    return FeatureMask(dim, std::move(all));
  }

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return observed_.size(); }
  bool empty() const noexcept { return observed_.empty(); }
  bool is_full() const noexcept { return observed_.size() == dim_; }
  bool contains(std::size_t m) const noexcept { return m < dim_ && bits_[m] != 0; }
  const std::vector<std::size_t>& indices() const noexcept { return observed_; }

  friend FeatureMask operator&(const FeatureMask& a, const FeatureMask& b) {
    require(a.dim_ == b.dim_, "mask intersection with unequal dim");
    std::vector<std::size_t> out;
    std::set_intersection(a.observed_.begin(), a.observed_.end(), b.observed_.begin(), b.observed_.end(),
                          std::back_inserter(out));
    return FeatureMask(a.dim_, std::move(out));
  }

  friend FeatureMask operator|(const FeatureMask& a, const FeatureMask& b) {
    require(a.dim_ == b.dim_, "mask union with unequal dim");
    std::vector<std::size_t> out;
    std::set_union(a.observed_.begin(), a.observed_.end(), b.observed_.begin(), b.observed_.end(),
                   std::back_inserter(out));
    return FeatureMask(a.dim_, std::move(out));
  }

  bool overlaps(const FeatureMask& other) const {
    for (auto m : observed_)
      if (other.contains(m)) return true;
    return false;
  }

  bool operator==(const FeatureMask& o) const { return dim_ == o.dim_ && observed_ == o.observed_; }
  auto operator<=>(const FeatureMask& o) const {
    if (auto c = dim_ <=> o.dim_; c != 0) return c;
    return observed_ <=> o.observed_;
  }

 private:
  std::size_t dim_ = 0;
  std::vector<std::size_t> observed_;
  std::vector<unsigned char> bits_;
};

/// Indices observed by both masks, without materializing a FeatureMask.
inline std::vector<std::size_t> shared_indices(const FeatureMask& a, const FeatureMask& b) {
  std::vector<std::size_t> out;
  std::set_intersection(a.indices().begin(), a.indices().end(), b.indices().begin(), b.indices().end(),
                        std::back_inserter(out));
  return out;
}

// ---------------------------------------------------------------------------
// Points and datasets

/// Full-length coordinate vector; coordinates outside `mask` hold absent().
struct MaskedPoint {
  std::vector<double> coords;
  FeatureMask mask;

  static MaskedPoint from_full(std::span<const double> full, const FeatureMask& mask) {
    require(full.size() == mask.dim(), "point length does not match mask dim");
    MaskedPoint p{std::vector<double>(full.size(), absent()), mask};
    for (auto m : mask.indices()) p.coords[m] = full[m];
    return p;
  }

  std::size_t dim() const noexcept { return coords.size(); }

  double at(std::size_t m) const {
    require(mask.contains(m), "read of unobserved coordinate " + std::to_string(m));
    return coords[m];
  }
};

/// Central (unmasked) dataset. `labels` is empty when no ground truth exists.
struct Dataset {
  std::size_t dim = 0;
  std::vector<std::vector<double>> points;
  std::vector<std::size_t> labels;

  std::size_t size() const noexcept { return points.size(); }
  bool has_labels() const noexcept { return !labels.empty(); }
  std::size_t num_clusters() const {
    std::size_t k = 0;
    for (auto l : labels) k = std::max(k, l + 1);
    return k;
  }
};

/// A participant's private data: every row is full length with absent()
/// outside the owner's mask.
struct MaskedDataset {
  ParticipantId owner = 0;
  FeatureMask mask;
  std::vector<std::vector<double>> rows;

  std::size_t size() const noexcept { return rows.size(); }
  std::size_t dim() const noexcept { return mask.dim(); }
  MaskedPoint point(std::size_t i) const { return MaskedPoint{rows[i], mask}; }
};

/// A vector with its validity mask: global centroids, merged centroids,
/// optimal masked centroids.
struct Centroid {
  std::vector<double> values;
  FeatureMask mask;
};

/// A local centroid as shared with the server.
struct LabeledCentroid {
  std::vector<double> values;
  FeatureMask mask;
  std::size_t count = 1;
  ParticipantId owner = 0;
  std::size_t local_index = 0;
};

/// Identifies local cluster `local_index` of participant `participant`.
struct ClusterRef {
  ParticipantId participant = 0;
  std::size_t local_index = 0;
  auto operator<=>(const ClusterRef&) const = default;
};

// ---------------------------------------------------------------------------
// Distances

enum class Metric { euclidean, cosine };

inline Metric parse_metric(const std::string& name) {
  if (name == "euclidean") return Metric::euclidean;
  if (name == "cosine") return Metric::cosine;
  throw Error(ErrorKind::configuration, "unknown metric '" + name + "'");
}

/// Distance restricted to the coordinates in `idx`.
inline double distance_over(std::span<const double> x, std::span<const double> y,
                            std::span<const std::size_t> idx, Metric metric = Metric::euclidean) {
  if (metric == Metric::euclidean) {
    double s = 0.0;
    for (auto m : idx) {
      const double d = x[m] - y[m];
      s += d * d;
    }
    return std::sqrt(s);
  }
  double dot = 0.0, nx = 0.0, ny = 0.0;
  for (auto m : idx) {
    dot += x[m] * y[m];
    nx += x[m] * x[m];
    ny += y[m] * y[m];
  }
  if (nx == 0.0 && ny == 0.0) return 0.0;
  if (nx == 0.0 || ny == 0.0) return 1.0;
  return std::max(0.0, 1.0 - dot / std::sqrt(nx * ny));
}

/// φ restricted to the intersection of both masks; nullopt when the masks
/// are disjoint.
inline std::optional<double> masked_distance(const MaskedPoint& x, const MaskedPoint& y,
                                             Metric metric = Metric::euclidean) {
  require(x.dim() == y.dim() && x.mask.dim() == y.mask.dim(), "masked_distance: dimension mismatch");
  const auto idx = shared_indices(x.mask, y.mask);
  if (idx.empty()) return std::nullopt;
  return distance_over(x.coords, y.coords, idx, metric);
}

// ---------------------------------------------------------------------------
// Rescaling

/// Coordinate-wise extrema of a reference point set S. Yields the maximum
/// observed distance for any mask pair, and distances rescaled by it.
/// Immutable after construction; safe to share between threads.
class RescaleContext {
 public:
  RescaleContext() = default;

  RescaleContext(std::size_t dim, Metric metric = Metric::euclidean)
      : metric_(metric),
        hi_(dim, -std::numeric_limits<double>::infinity()),
        lo_(dim, std::numeric_limits<double>::infinity()),
        seen_(dim, 0) {}

  /// Context over a set of masked points.
  static RescaleContext over(std::span<const MaskedPoint> points, std::size_t dim, Metric metric = Metric::euclidean) {
    RescaleContext ctx(dim, metric);
    for (const auto& p : points) ctx.add(p.coords, p.mask);
    return ctx;
  }

  /// Context over fully observed rows.
  static RescaleContext over_full(std::span<const std::vector<double>> rows, std::size_t dim,
                                  Metric metric = Metric::euclidean) {
    RescaleContext ctx(dim, metric);
    const auto full = FeatureMask::full(dim);
    for (const auto& r : rows) ctx.add(r, full);
    return ctx;
  }

  void add(std::span<const double> row, const FeatureMask& mask) {
    for (auto m : mask.indices()) {
      hi_[m] = std::max(hi_[m], row[m]);
      lo_[m] = std::min(lo_[m], row[m]);
      seen_[m] = 1;
    }
  }

  std::size_t dim() const noexcept { return hi_.size(); }
  Metric metric() const noexcept { return metric_; }

  /// φ(ewmax S, ewmin S) over the given coordinates. Throws contract when a
  /// coordinate was never observed in S and degenerate_rescale when the
  /// result is zero.
  double max_distance_over(std::span<const std::size_t> idx) const {
    require(!idx.empty(), "max_observed_distance: empty mask intersection");
    for (auto m : idx)
      require(m < seen_.size() && seen_[m] != 0,
              "max_observed_distance: coordinate " + std::to_string(m) + " not observed in reference set");
    const double d = distance_over(hi_, lo_, idx, metric_);
    if (!(d > 0.0)) throw Error(ErrorKind::degenerate_rescale, "reference set is constant on the mask intersection");
    return d;
  }

  double max_distance(const FeatureMask& a, const FeatureMask& b) const {
    return max_distance_over(shared_indices(a, b));
  }

  /// Rescaled distance; nullopt for disjoint masks. Degenerate pairs throw.
  std::optional<double> distance(std::span<const double> x, const FeatureMask& mx, std::span<const double> y,
                                 const FeatureMask& my) const {
    const auto idx = shared_indices(mx, my);
    if (idx.empty()) return std::nullopt;
    return distance_over(x, y, idx, metric_) / max_distance_over(idx);
  }

  /// Like distance(), but a degenerate pair is reported as incomparable.
  std::optional<double> comparable_distance(std::span<const double> x, const FeatureMask& mx,
                                            std::span<const double> y, const FeatureMask& my) const {
    const auto idx = shared_indices(mx, my);
    if (idx.empty()) return std::nullopt;
    const double num = distance_over(x, y, idx, metric_);
    try {
      return num / max_distance_over(idx);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::degenerate_rescale) return std::nullopt;
      throw;
    }
  }

 private:
  Metric metric_ = Metric::euclidean;
  std::vector<double> hi_, lo_;
  std::vector<unsigned char> seen_;
};

inline double max_observed_distance(std::span<const MaskedPoint> s, const FeatureMask& mask_i,
                                    const FeatureMask& mask_j, Metric metric = Metric::euclidean) {
  require(mask_i.dim() == mask_j.dim(), "max_observed_distance: mask dim mismatch");
  return RescaleContext::over(s, mask_i.dim(), metric).max_distance(mask_i, mask_j);
}

inline std::optional<double> rescaled_distance(const MaskedPoint& x, const MaskedPoint& y,
                                               const RescaleContext& ctx) {
  require(x.dim() == y.dim() && x.dim() == ctx.dim(), "rescaled_distance: dimension mismatch");
  return ctx.distance(x.coords, x.mask, y.coords, y.mask);
}

// ---------------------------------------------------------------------------
// Merging

/// Count-weighted per-coordinate average of the input centroids. The output
/// mask is the union of input masks; each coordinate is divided by the
/// number of observations behind it (never by fewer than one).
inline Centroid merge_centroids(std::span<const LabeledCentroid> set) {
  require(!set.empty(), "merge_centroids: empty set");
  const std::size_t dim = set.front().mask.dim();
  std::vector<double> num(dim, 0.0), den(dim, 0.0);
  FeatureMask mask(dim, {});
  for (const auto& c : set) {
    require(c.mask.dim() == dim && c.values.size() == dim, "merge_centroids: dimension mismatch");
    require(c.count >= 1, "merge_centroids: centroid with zero count");
    const double w = static_cast<double>(c.count);
    for (auto m : c.mask.indices()) {
      num[m] += w * c.values[m];
      den[m] += w;
    }
    mask = mask | c.mask;
  }
  Centroid out{std::vector<double>(dim, absent()), mask};
  for (auto m : mask.indices()) out.values[m] = num[m] / std::max(1.0, den[m]);
  return out;
}

struct OptimalCentroids {
  std::vector<std::size_t> cluster_ids;  // true label of each entry
  std::vector<Centroid> centroids;
  std::vector<std::string> warnings;  // clusters skipped because empty
};

/// Per true cluster, the coordinate-wise mean over every masked observation
/// of that cluster's points.
inline OptimalCentroids optimal_centroids(const Dataset& central, std::span<const std::size_t> partition,
                                          std::span<const FeatureMask> masks) {
  require(central.has_labels(), "optimal_centroids: ground-truth labels required");
  require(partition.size() == central.size(), "optimal_centroids: partition size mismatch");
  const std::size_t k = central.num_clusters();
  const std::size_t dim = central.dim;
  std::vector<std::vector<double>> sum(k, std::vector<double>(dim, 0.0));
  std::vector<std::vector<double>> cnt(k, std::vector<double>(dim, 0.0));
  std::vector<std::size_t> members(k, 0);
  for (std::size_t p = 0; p < central.size(); ++p) {
    require(partition[p] < masks.size(), "optimal_centroids: participant id out of range");
    const auto a = central.labels[p];
    ++members[a];
    for (auto m : masks[partition[p]].indices()) {
      sum[a][m] += central.points[p][m];
      cnt[a][m] += 1.0;
    }
  }
  OptimalCentroids out;
  for (std::size_t a = 0; a < k; ++a) {
    if (members[a] == 0) {
      out.warnings.push_back("cluster " + std::to_string(a) + " has no points; skipped");
      continue;
    }
    std::vector<std::size_t> observed;
    for (std::size_t m = 0; m < dim; ++m)
      if (cnt[a][m] > 0) observed.push_back(m);
    Centroid c{std::vector<double>(dim, absent()), FeatureMask(dim, std::move(observed))};
    for (auto m : c.mask.indices()) c.values[m] = sum[a][m] / std::max(1.0, cnt[a][m]);
    out.cluster_ids.push_back(a);
    out.centroids.push_back(std::move(c));
  }
  return out;
}

}  // namespace fedmask

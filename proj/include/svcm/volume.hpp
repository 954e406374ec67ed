#pragma once

// Grid geometry, active masks, ball neighborhoods and connected components.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "svcm/errors.hpp"

namespace svcm {

using VoxelId = std::int64_t;  ///< linear grid index, x fastest
using Rank = std::int64_t;     ///< dense index among active voxels

struct Index3 {
  int i = 0, j = 0, k = 0;
  friend bool operator==(const Index3&, const Index3&) = default;
};

class Grid3 {
 public:
  Grid3() = default;
  explicit Grid3(std::array<int, 3> dims, std::array<double, 3> spacing = {1.0, 1.0, 1.0})
      : dims_(dims), spacing_(spacing) {
    for (int a = 0; a < 3; ++a) {
      if (dims_[a] < 1) throw DomainError("Grid3: dims must be >= 1");
      if (!(spacing_[a] > 0.0) || !std::isfinite(spacing_[a]))
        throw DomainError("Grid3: spacing must be finite and > 0");
    }
  }

  const std::array<int, 3>& dims() const { return dims_; }
  const std::array<double, 3>& spacing() const { return spacing_; }
  double voxel_volume() const { return spacing_[0] * spacing_[1] * spacing_[2]; }
  VoxelId size() const { return VoxelId{dims_[0]} * dims_[1] * dims_[2]; }

  bool contains(int i, int j, int k) const {
    return i >= 0 && j >= 0 && k >= 0 && i < dims_[0] && j < dims_[1] && k < dims_[2];
  }
  VoxelId linear(int i, int j, int k) const {
    return i + VoxelId{dims_[0]} * (j + VoxelId{dims_[1]} * k);
  }
  Index3 coords(VoxelId id) const {
    const VoxelId plane = VoxelId{dims_[0]} * dims_[1];
    return {static_cast<int>(id % dims_[0]), static_cast<int>((id / dims_[0]) % dims_[1]),
            static_cast<int>(id / plane)};
  }
  std::array<double, 3> center(VoxelId id) const {
    const Index3 c = coords(id);
    return {(c.i + 0.5) * spacing_[0], (c.j + 0.5) * spacing_[1], (c.k + 0.5) * spacing_[2]};
  }
  double distance(VoxelId a, VoxelId b) const {
    const Index3 p = coords(a), q = coords(b);
    return offset_length(q.i - p.i, q.j - p.j, q.k - p.k);
  }
  double offset_length(int di, int dj, int dk) const {
    const double x = di * spacing_[0], y = dj * spacing_[1], z = dk * spacing_[2];
    return std::sqrt(x * x + y * y + z * z);
  }

  friend bool operator==(const Grid3&, const Grid3&) = default;

 private:
  std::array<int, 3> dims_{1, 1, 1};
  std::array<double, 3> spacing_{1.0, 1.0, 1.0};
};

/// Active-voxel mask with a dense rank 0..N_D-1 ordered by linear index.
class Mask {
 public:
  Mask() = default;
  Mask(Grid3 grid, std::vector<std::uint8_t> active) : grid_(grid), active_(std::move(active)) {
    if (static_cast<VoxelId>(active_.size()) != grid_.size())
      throw DomainError("Mask: flag count does not match grid size");
    rank_of_.assign(active_.size(), -1);
    for (VoxelId id = 0; id < grid_.size(); ++id) {
      if (active_[id]) {
        active_[id] = 1;
        rank_of_[id] = static_cast<Rank>(voxel_of_.size());
        voxel_of_.push_back(id);
      }
    }
  }
  static Mask full(const Grid3& grid) {
    return Mask(grid, std::vector<std::uint8_t>(static_cast<std::size_t>(grid.size()), 1));
  }

  const Grid3& grid() const { return grid_; }
  Rank n_active() const { return static_cast<Rank>(voxel_of_.size()); }
  bool is_active(VoxelId id) const { return id >= 0 && id < grid_.size() && active_[id]; }
  Rank rank(VoxelId id) const { return rank_of_.at(static_cast<std::size_t>(id)); }
  VoxelId voxel(Rank r) const { return voxel_of_.at(static_cast<std::size_t>(r)); }
  const std::vector<std::uint8_t>& flags() const { return active_; }
  double distance(Rank a, Rank b) const { return grid_.distance(voxel(a), voxel(b)); }

 private:
  Grid3 grid_;
  std::vector<std::uint8_t> active_;
  std::vector<Rank> rank_of_;
  std::vector<VoxelId> voxel_of_;
};

struct StencilEntry {
  int di = 0, dj = 0, dk = 0;
  double dist = 0.0;
};

/// Offsets within radius h of the origin, sorted so that visiting them in
/// order visits neighbors in increasing linear index (and hence rank).
using Stencil = std::vector<StencilEntry>;

/// closed = false keeps dist < h (open ball); closed = true keeps dist <= h.
inline Stencil make_ball_stencil(const Grid3& grid, double h, bool closed = false) {
  Stencil out;
  if (!(h > 0.0)) return out;
  const auto& sp = grid.spacing();
  const auto& dims = grid.dims();
  int reach[3];
  for (int a = 0; a < 3; ++a)
    reach[a] = std::min(dims[a] - 1, static_cast<int>(std::floor(h / sp[a])));
  for (int dk = -reach[2]; dk <= reach[2]; ++dk)
    for (int dj = -reach[1]; dj <= reach[1]; ++dj)
      for (int di = -reach[0]; di <= reach[0]; ++di) {
        const double d = grid.offset_length(di, dj, dk);
        if (closed ? d <= h : d < h) out.push_back({di, dj, dk, d});
      }
  return out;
}

/// Calls f(rank, entry) for every active voxel reached from `center` by the stencil.
template <class F>
void for_each_in_stencil(const Mask& mask, Rank center, const Stencil& stencil, F&& f) {
  const Grid3& g = mask.grid();
  const Index3 c = g.coords(mask.voxel(center));
  for (const StencilEntry& e : stencil) {
    const int i = c.i + e.di, j = c.j + e.dj, k = c.k + e.dk;
    if (!g.contains(i, j, k)) continue;
    const VoxelId id = g.linear(i, j, k);
    const Rank r = mask.rank(id);
    if (r >= 0) f(r, e);
  }
}

struct Ball {
  VoxelId center = 0;
  double radius_h = 0.0;
  std::vector<Rank> members;  ///< ascending dense rank
};

inline Ball ball_neighbors(const Mask& mask, VoxelId center, double h) {
  if (!mask.is_active(center)) throw DomainError("ball_neighbors: center voxel is not active");
  if (!(h >= 0.0)) throw DomainError("ball_neighbors: radius must be >= 0");
  Ball ball{center, h, {}};
  const Stencil stencil = make_ball_stencil(mask.grid(), h);
  for_each_in_stencil(mask, mask.rank(center), stencil,
                      [&](Rank r, const StencilEntry&) { ball.members.push_back(r); });
  return ball;
}

enum class Connectivity { Face6 = 6, Edge18 = 18, Corner26 = 26 };

inline Connectivity connectivity_from_int(int c) {
  switch (c) {
    case 6: return Connectivity::Face6;
    case 18: return Connectivity::Edge18;
    case 26: return Connectivity::Corner26;
    default: throw DomainError("connectivity must be 6, 18 or 26, got " + std::to_string(c));
  }
}

namespace detail {
inline Rank uf_find(std::vector<Rank>& parent, Rank x) {
  while (parent[x] != x) {
    parent[x] = parent[parent[x]];
    x = parent[x];
  }
  return x;
}
}  // namespace detail

/// Maximal connected subsets of `voxels` (dense ranks). Components are sorted by
/// size descending, ties by smallest member; members ascend.
inline std::vector<std::vector<Rank>> connected_components(const Mask& mask,
                                                           std::span<const Rank> voxels,
                                                           Connectivity conn = Connectivity::Face6) {
  std::vector<std::vector<Rank>> out;
  if (voxels.empty()) return out;
  std::vector<Rank> sorted(voxels.begin(), voxels.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());

  std::unordered_map<VoxelId, Rank> slot;
  slot.reserve(sorted.size() * 2);
  for (std::size_t s = 0; s < sorted.size(); ++s) slot.emplace(mask.voxel(sorted[s]), static_cast<Rank>(s));

  std::vector<Rank> parent(sorted.size());
  std::iota(parent.begin(), parent.end(), Rank{0});
  const Grid3& g = mask.grid();
  const int limit = static_cast<int>(conn);
  for (std::size_t s = 0; s < sorted.size(); ++s) {
    const Index3 c = g.coords(mask.voxel(sorted[s]));
    for (int dk = -1; dk <= 1; ++dk)
      for (int dj = -1; dj <= 1; ++dj)
        for (int di = -1; di <= 1; ++di) {
          const int nonzero = (di != 0) + (dj != 0) + (dk != 0);
          if (nonzero == 0) continue;
          if (limit == 6 && nonzero > 1) continue;
          if (limit == 18 && nonzero > 2) continue;
          const int i = c.i + di, j = c.j + dj, k = c.k + dk;
          if (!g.contains(i, j, k)) continue;
          auto it = slot.find(g.linear(i, j, k));
          if (it == slot.end()) continue;
          Rank a = detail::uf_find(parent, static_cast<Rank>(s));
          Rank b = detail::uf_find(parent, it->second);
          if (a != b) parent[std::max(a, b)] = std::min(a, b);
        }
  }
  std::unordered_map<Rank, std::size_t> comp_of_root;
  for (std::size_t s = 0; s < sorted.size(); ++s) {
    const Rank root = detail::uf_find(parent, static_cast<Rank>(s));
    auto [it, inserted] = comp_of_root.emplace(root, out.size());
    if (inserted) out.emplace_back();
    out[it->second].push_back(sorted[s]);
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.size() != b.size()) return a.size() > b.size();
    return a.front() < b.front();
  });
  return out;
}

}  // namespace svcm

#pragma once

// Geometry of the RG hierarchy: block partitions, latent indexing and
// causal cones. Level-h states are stored compactly as (L/2^h)x(L/2^h)xC
// arrays; compact position (i, j) at level h sits at 2^h (i, j) on the
// original lattice. A flat state index is (i * n_h + j) * C + c.

#include "rgflow/core.hpp"

#include <cstdint>
#include <vector>

namespace rgflow {

struct LatticeSpec {
    int L = 32;
    int m = 4;
    int C = 3;

    /// Validating factory; throws InvalidArgument.
    static LatticeSpec make(int L, int m, int C);

    int top_level() const;
    int num_levels() const { return top_level() + 1; }
    int edge(int h) const { return L >> h; }
    int blocks_per_side(int h) const { return edge(h) / m; }
    Index level_size(int h) const { return Index(edge(h)) * edge(h) * C; }
    Index total_size() const { return Index(L) * L * C; }
    Index patch_size() const { return Index(m) * m * C; }

    bool operator==(const LatticeSpec&) const = default;
};

struct Offset {
    int a = 0;
    int b = 0;
    bool operator==(const Offset&) const = default;
};
using PixelSet = std::vector<Offset>;

/// Pixels of an m x m square with stride k, row-major.
PixelSet square_set(int m, int k);

enum class BlockRole { disentangler, decimator };

struct BlockAddress {
    int h = 0;
    int p = 0;
    int q = 0;
    BlockRole role = BlockRole::decimator;
};

struct Position {
    int i = 0;
    int j = 0;
    bool operator==(const Position&) const = default;
    auto operator<=>(const Position&) const = default;
};

/// Absolute original-lattice positions (mod L) of the m*m sites a block acts
/// on, row-major over the in-block offset.
std::vector<Position> block_pixels(const LatticeSpec& spec, const BlockAddress& addr);

/// Number of latent variables emitted at each level.
std::vector<Index> latent_counts(const LatticeSpec& spec);

struct LatentIndex {
    int h = 0;
    int i = 0;  ///< compact row at level h
    int j = 0;  ///< compact column at level h
    int c = 0;
    bool operator==(const LatentIndex&) const = default;
};

struct PixelRegion {
    int row = 0;
    int col = 0;
    int height = 0;
    int width = 0;
    bool empty() const { return height <= 0 || width <= 0; }
    bool contains(int i, int j) const {
        return i >= row && i < row + height && j >= col && j < col + width;
    }
};

enum class ConeKind { generation, inference };

struct CausalCone {
    ConeKind kind = ConeKind::generation;
    /// Per level h, mask over compact positions (n_h * n_h) touched by the cone.
    std::vector<std::vector<char>> positions;
    /// Flat latent indices in the cone, sorted (inference cones only).
    std::vector<Index> latents;
    /// Latent count per level (inference cones only).
    std::vector<Index> latents_per_level;

    /// Level-0 footprint; for a generation cone this is the affected image area.
    const std::vector<char>& pixels() const { return positions.front(); }
    Index pixel_count() const;
};

/// Precomputed index maps for one LatticeSpec.
class Lattice {
public:
    explicit Lattice(const LatticeSpec& spec);

    const LatticeSpec& spec() const { return spec_; }
    int top_level() const { return spec_.top_level(); }
    int num_levels() const { return spec_.num_levels(); }

    /// Compact flat positions gathered by each block; block-major, then
    /// in-block offset row-major. Empty for the top-level disentangler.
    const std::vector<int>& block_positions(int h, BlockRole role) const;
    int num_blocks(int h) const;

    /// Compact positions (row-major) whose variables are decimated at level h.
    const std::vector<int>& latent_positions(int h) const { return levels_[h].latent_positions; }
    /// Compact positions kept for level h+1; entry k maps to flat position k there.
    const std::vector<int>& kept_positions(int h) const { return levels_[h].kept_positions; }

    Index latent_count(int h) const { return Index(latent_positions(h).size()) * spec_.C; }
    Index latent_offset(int h) const { return levels_[h].latent_offset; }

    Index flat_index(const LatentIndex& l) const;
    LatentIndex latent_at(Index flat) const;
    /// Original-lattice pixel that a latent sits on.
    Position home_pixel(const LatentIndex& l) const;

    CausalCone generation_cone(const LatentIndex& l) const;
    CausalCone inference_cone(const PixelRegion& region) const;

private:
    struct Level {
        std::vector<int> dis_positions;
        std::vector<int> dec_positions;
        std::vector<int> dis_block_of;  // position -> block id
        std::vector<int> dec_block_of;
        std::vector<int> latent_positions;
        std::vector<int> kept_positions;
        std::vector<int> latent_rank;  // position -> rank among latents, -1 if kept
        Index latent_offset = 0;
    };

    void close_over_blocks(int h, BlockRole role, std::vector<char>& mask) const;

    LatticeSpec spec_;
    std::vector<Level> levels_;
};

inline CausalCone generation_cone(const LatticeSpec& spec, const LatentIndex& l) {
    return Lattice(spec).generation_cone(l);
}
inline CausalCone inference_cone(const LatticeSpec& spec, const PixelRegion& region) {
    return Lattice(spec).inference_cone(region);
}

}  // namespace rgflow

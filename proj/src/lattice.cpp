#include "rgflow/lattice.hpp"

#include <algorithm>
#include <bit>

namespace rgflow {

namespace {

bool is_pow2(int v) { return v > 0 && std::has_single_bit(static_cast<unsigned>(v)); }

int log2i(int v) { return std::countr_zero(static_cast<unsigned>(v)); }

}  // namespace

LatticeSpec LatticeSpec::make(int L, int m, int C) {
    RGFLOW_REQUIRE(is_pow2(L), InvalidArgument, "L must be a power of two");
    RGFLOW_REQUIRE(is_pow2(m) && m >= 2, InvalidArgument, "m must be a power of two >= 2");
    RGFLOW_REQUIRE(L >= m, InvalidArgument, "L must be >= m");
    RGFLOW_REQUIRE(C >= 1, InvalidArgument, "C must be >= 1");
    return LatticeSpec{L, m, C};
}

int LatticeSpec::top_level() const { return log2i(L) - log2i(m); }

PixelSet square_set(int m, int k) {
    RGFLOW_REQUIRE(k > 0 && m > 0 && m % k == 0, InvalidArgument,
                   "invalid stride: k must divide m");
    PixelSet out;
    for (int a = 0; a < m / k; ++a)
        for (int b = 0; b < m / k; ++b) out.push_back({k * a, k * b});
    return out;
}

std::vector<Position> block_pixels(const LatticeSpec& spec, const BlockAddress& addr) {
    RGFLOW_REQUIRE(addr.h >= 0 && addr.h <= spec.top_level(), InvalidArgument,
                   "invalid address: level out of range");
    const int nb = spec.blocks_per_side(addr.h);
    RGFLOW_REQUIRE(addr.p >= 0 && addr.p < nb && addr.q >= 0 && addr.q < nb, InvalidArgument,
                   "invalid address: block out of range");
    const int shift = addr.role == BlockRole::disentangler ? spec.m / 2 : 0;
    const int scale = 1 << addr.h;
    std::vector<Position> out;
    out.reserve(std::size_t(spec.m) * spec.m);
    for (const auto& [a, b] : square_set(spec.m, 1)) {
        out.push_back({(scale * (spec.m * addr.p + shift + a)) % spec.L,
                       (scale * (spec.m * addr.q + shift + b)) % spec.L});
    }
    return out;
}

std::vector<Index> latent_counts(const LatticeSpec& spec) {
    std::vector<Index> counts;
    for (int h = 0; h <= spec.top_level(); ++h) {
        const Index n = spec.edge(h);
        counts.push_back(h == spec.top_level() ? n * n * spec.C : n * n * spec.C * 3 / 4);
    }
    return counts;
}

Index CausalCone::pixel_count() const {
    return std::count(pixels().begin(), pixels().end(), char(1));
}

Lattice::Lattice(const LatticeSpec& spec) : spec_(LatticeSpec::make(spec.L, spec.m, spec.C)) {
    const int m = spec_.m;
    Index offset = 0;
    for (int h = 0; h <= spec_.top_level(); ++h) {
        Level lv;
        const int n = spec_.edge(h);
        const int nb = n / m;
        const bool top = h == spec_.top_level();
        lv.dec_block_of.assign(std::size_t(n) * n, -1);
        lv.dis_block_of.assign(std::size_t(n) * n, -1);
        for (int p = 0; p < nb; ++p) {
            for (int q = 0; q < nb; ++q) {
                const int block = p * nb + q;
                for (int a = 0; a < m; ++a) {
                    for (int b = 0; b < m; ++b) {
                        const int dec = (m * p + a) * n + (m * q + b);
                        lv.dec_positions.push_back(dec);
                        lv.dec_block_of[dec] = block;
                        if (!top) {
                            const int dis = ((m * p + m / 2 + a) % n) * n + (m * q + m / 2 + b) % n;
                            lv.dis_positions.push_back(dis);
                            lv.dis_block_of[dis] = block;
                        }
                    }
                }
            }
        }
        lv.latent_rank.assign(std::size_t(n) * n, -1);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                const int pos = i * n + j;
                if (!top && i % 2 == 0 && j % 2 == 0) {
                    lv.kept_positions.push_back(pos);
                } else {
                    lv.latent_rank[pos] = int(lv.latent_positions.size());
                    lv.latent_positions.push_back(pos);
                }
            }
        }
        lv.latent_offset = offset;
        offset += Index(lv.latent_positions.size()) * spec_.C;
        levels_.push_back(std::move(lv));
    }
}

const std::vector<int>& Lattice::block_positions(int h, BlockRole role) const {
    return role == BlockRole::disentangler ? levels_[h].dis_positions : levels_[h].dec_positions;
}

int Lattice::num_blocks(int h) const {
    const int nb = spec_.blocks_per_side(h);
    return nb * nb;
}

Index Lattice::flat_index(const LatentIndex& l) const {
    RGFLOW_REQUIRE(l.h >= 0 && l.h <= top_level(), InvalidArgument, "latent level out of range");
    const int n = spec_.edge(l.h);
    RGFLOW_REQUIRE(l.i >= 0 && l.i < n && l.j >= 0 && l.j < n && l.c >= 0 && l.c < spec_.C,
                   InvalidArgument, "latent position out of range");
    const int rank = levels_[l.h].latent_rank[std::size_t(l.i) * n + l.j];
    RGFLOW_REQUIRE(rank >= 0, InvalidArgument, "position is kept, not decimated, at this level");
    return levels_[l.h].latent_offset + Index(rank) * spec_.C + l.c;
}

LatentIndex Lattice::latent_at(Index flat) const {
    RGFLOW_REQUIRE(flat >= 0 && flat < spec_.total_size(), InvalidArgument,
                   "latent index out of range");
    int h = top_level();
    while (levels_[h].latent_offset > flat) --h;
    const Index local = flat - levels_[h].latent_offset;
    const int pos = levels_[h].latent_positions[std::size_t(local / spec_.C)];
    const int n = spec_.edge(h);
    return {h, pos / n, pos % n, int(local % spec_.C)};
}

Position Lattice::home_pixel(const LatentIndex& l) const {
    return {l.i << l.h, l.j << l.h};
}

void Lattice::close_over_blocks(int h, BlockRole role, std::vector<char>& mask) const {
    const auto& lv = levels_[h];
    const auto& block_of = role == BlockRole::disentangler ? lv.dis_block_of : lv.dec_block_of;
    const auto& positions = block_positions(h, role);
    const std::size_t per_block = std::size_t(spec_.m) * spec_.m;
    std::vector<char> hit(std::size_t(num_blocks(h)), 0);
    for (std::size_t pos = 0; pos < mask.size(); ++pos)
        if (mask[pos]) hit[std::size_t(block_of[pos])] = 1;
    for (std::size_t block = 0; block < hit.size(); ++block) {
        if (!hit[block]) continue;
        for (std::size_t k = 0; k < per_block; ++k) mask[std::size_t(positions[block * per_block + k])] = 1;
    }
}

CausalCone Lattice::generation_cone(const LatentIndex& l) const {
    flat_index(l);  // validates
    CausalCone cone;
    cone.kind = ConeKind::generation;
    for (int h = 0; h <= top_level(); ++h)
        cone.positions.emplace_back(std::size_t(spec_.edge(h)) * spec_.edge(h), 0);

    // mask over the merged (kept + latent) state at the latent's level
    std::vector<char> merged(cone.positions[l.h].size(), 0);
    merged[std::size_t(l.i) * spec_.edge(l.h) + l.j] = 1;
    for (int h = l.h; h >= 0; --h) {
        close_over_blocks(h, BlockRole::decimator, merged);
        if (h < top_level()) close_over_blocks(h, BlockRole::disentangler, merged);
        cone.positions[h] = merged;
        if (h == 0) break;
        std::vector<char> below(cone.positions[h - 1].size(), 0);
        const auto& kept = levels_[h - 1].kept_positions;
        for (std::size_t k = 0; k < kept.size(); ++k)
            if (merged[k]) below[std::size_t(kept[k])] = 1;
        merged = std::move(below);
    }
    return cone;
}

CausalCone Lattice::inference_cone(const PixelRegion& region) const {
    CausalCone cone;
    cone.kind = ConeKind::inference;
    for (int h = 0; h <= top_level(); ++h)
        cone.positions.emplace_back(std::size_t(spec_.edge(h)) * spec_.edge(h), 0);
    cone.latents_per_level.assign(std::size_t(num_levels()), 0);
    if (region.empty()) return cone;
    RGFLOW_REQUIRE(region.row >= 0 && region.col >= 0 && region.row + region.height <= spec_.L &&
                       region.col + region.width <= spec_.L,
                   InvalidArgument, "region outside image bounds");

    std::vector<char> mask(cone.positions[0].size(), 0);
    for (int i = region.row; i < region.row + region.height; ++i)
        for (int j = region.col; j < region.col + region.width; ++j) mask[std::size_t(i) * spec_.L + j] = 1;

    for (int h = 0; h <= top_level(); ++h) {
        if (h < top_level()) close_over_blocks(h, BlockRole::disentangler, mask);
        close_over_blocks(h, BlockRole::decimator, mask);
        cone.positions[h] = mask;
        const auto& lv = levels_[h];
        for (std::size_t r = 0; r < lv.latent_positions.size(); ++r) {
            if (!mask[std::size_t(lv.latent_positions[r])]) continue;
            for (int c = 0; c < spec_.C; ++c)
                cone.latents.push_back(lv.latent_offset + Index(r) * spec_.C + c);
            cone.latents_per_level[std::size_t(h)] += spec_.C;
        }
        if (h == top_level()) break;
        std::vector<char> above(cone.positions[h + 1].size(), 0);
        for (std::size_t k = 0; k < lv.kept_positions.size(); ++k)
            if (mask[std::size_t(lv.kept_positions[k])]) above[k] = 1;
        mask = std::move(above);
    }
    return cone;
}

}  // namespace rgflow

#pragma once

// Analyses of a (trained) RgFlow: receptive fields, latent sweeps, scale-wise
// mixing, causal-cone inpainting, PSNR, and pinwheel quadrant purity.

#include "rgflow/data.hpp"
#include "rgflow/lattice.hpp"
#include "rgflow/model.hpp"

#include "json.hpp"

#include <limits>
#include <string>
#include <vector>

namespace rgflow {

struct ReceptiveField {
    LatentIndex latent;
    Index flat = 0;
    Mat<double> map;  ///< L x L, channel 1-norm of dG/dz_l averaged over prior draws
    double strength = 0;
};

/// Monte Carlo receptive fields for several latents (flat indices), sharing
/// the prior draws. Tangents are propagated `chunk` latents at a time.
template <typename Scalar>
std::vector<ReceptiveField> receptive_fields(const RgFlow<Scalar>& model, const std::vector<Index>& latents,
                                             Index n_samples = 64, unsigned long long seed = 0,
                                             Index chunk = 256);

template <typename Scalar>
ReceptiveField receptive_field(const RgFlow<Scalar>& model, Index latent, Index n_samples = 64,
                               unsigned long long seed = 0);

struct StrengthHistogram {
    int level = 0;
    std::vector<double> strengths;  ///< one per latent of the level, latent order
    std::vector<double> edges;      ///< bins + 1 edges
    std::vector<Index> counts;

    /// bin_lo,bin_hi,count,log10_count
    std::string to_csv() const;
};

/// Histogram of receptive-field strengths of every latent on one level.
template <typename Scalar>
StrengthHistogram rf_histogram(const RgFlow<Scalar>& model, int level, Index n_samples = 64,
                               unsigned long long seed = 0, int bins = 20);

/// decode(z with slot l set to each value); one image per column.
template <typename Scalar>
Mat<Scalar> vary_latent(const RgFlow<Scalar>& model, const Vec<Scalar>& z, Index latent,
                        const std::vector<double>& values);

/// Levels h >= theta from zA, the rest from zB.
template <typename Scalar>
Mat<Scalar> splice_latents(const Lattice& lattice, const Mat<Scalar>& zA, const Mat<Scalar>& zB, int theta);

/// Model-space images (columns) in, model-space mixture out.
template <typename Scalar>
Mat<Scalar> mix_hyperbolic(const RgFlow<Scalar>& model, const Mat<Scalar>& xA, const Mat<Scalar>& xB, int theta);

template <typename Scalar>
Mat<Scalar> mix_linear(const RgFlow<Scalar>& model, const Mat<Scalar>& xA, const Mat<Scalar>& xB, double lambda);

enum class InpaintArm { cone, random };

struct InpaintConfig {
    int n_init = 200;
    double init_temperature = 1.0;
    double lr = 0.05;
    int max_steps = 2000;
    int patience = 50;
    double tolerance = 1e-3;
    unsigned long long seed = 0;
    InpaintArm arm = InpaintArm::cone;

    nlohmann::json to_json() const;
};

struct InpaintResult {
    Pixels image;  ///< 8-bit, one column
    std::vector<Index> free_latents;
    double initial_log_prob = 0;
    double log_prob = 0;
    int steps = 0;
    bool converged = true;
    bool diverged = false;  ///< no random start decoded, or a step overflowed; the best finite point is kept (the corrupted image if none)
    bool warning = false;   ///< the stopping rule was not met (step limit or divergence)

    nlohmann::json diagnostics() const;
};

/// Fills `region` of one 8-bit image by optimizing the free latents. Pixels
/// outside the region are copied from `corrupt` unchanged.
template <typename Scalar>
InpaintResult inpaint(const RgFlow<Scalar>& model, const Pixels& corrupt, const PixelRegion& region,
                      const InpaintConfig& cfg, double alpha = 0.05);

/// Overwrites the region with a solid color in [0, 1].
Pixels corrupt_region(const Pixels& image, int L, int C, const PixelRegion& region,
                      const std::vector<double>& color = {1.0, 0.0, 0.0});

/// Sentinel reported for identical images.
inline constexpr double kPsnrIdentical = std::numeric_limits<double>::max();

/// 10 log10(1 / MSE) for intensities in [0, 1].
double psnr(const Mat<double>& x, const Mat<double>& y);
double psnr(const Pixels& x, const Pixels& y);

/// Sum over latent quadrants of the majority-arm count, divided by n.
double quadrant_purity(const Mat<double>& latents, const std::vector<int>& labels, int legs);

}  // namespace rgflow

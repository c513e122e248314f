#pragma once

// Synthetic datasets (MSDS1/MSDS2 ovals, pinwheel points), 8-bit image
// storage, and the dequantize + logit preprocessing used for likelihoods.

#include "rgflow/core.hpp"
#include "rgflow/nncore.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace rgflow {

using Pixels = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

struct DatasetManifest {
    std::string name;
    Index n = 0;
    int L = 0;
    int C = 0;
    unsigned long long seed = 0;
    nlohmann::json params = nlohmann::json::object();
    std::string sha256;

    nlohmann::json to_json() const;
    static DatasetManifest from_json(const nlohmann::json& j);
};

/// 8-bit images, one per column, flattened (i * L + j) * C + c.
struct Dataset {
    DatasetManifest manifest;
    Pixels pixels;

    Index size() const { return pixels.cols(); }
    Index dim() const { return pixels.rows(); }
    /// Images scaled to [0, 1].
    Mat<float> unit_images() const { return pixels.cast<float>() / 255.0f; }
    Dataset subset(const std::vector<Index>& columns) const;
};

/// Oval rendering knobs. Axes are full lengths in pixels.
struct MsdsParams {
    int grid = 4;
    double axis_major = 5.0;
    double axis_minor = 2.5;
    double position_jitter = 1.0;
    double color_jitter = 0.02;
    double color_lo = 0.15;
    double color_hi = 1.0;
    int supersample = 4;

    nlohmann::json to_json() const;
    static MsdsParams from_json(const nlohmann::json& j);
};

/// MSDS1 (variant 1): shared color, independent orientations.
/// MSDS2 (variant 2): shared orientation, independent colors.
Dataset gen_msds(int variant, Index n, int L, unsigned long long seed, const MsdsParams& params = {});

struct PinwheelParams {
    double radial_std = 0.3;
    double tangential_std = 0.1;
    double rate = 0.25;
};

struct PointSet {
    Mat<double> points;  ///< 2 x n
    std::vector<int> labels;
};

PointSet gen_pinwheel(Index n, int legs, unsigned long long seed, const PinwheelParams& params = {});

/// y = (x8 + u) / 256, x = logit(alpha + (1 - 2 alpha) y). The reported
/// log-det is log|dx/dv| summed per image, with v = x8 + u in [0, 256).
struct Preprocessor {
    double alpha = 0.05;
    int bins = 256;

    /// Dequantizes with u ~ U[0, 1) drawn from `rng`.
    template <typename Scalar>
    Mat<Scalar> forward(const Pixels& x8, Rng& rng, RowVec<Scalar>* logdet = nullptr) const {
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        return transform<Scalar>(x8, [&] { return unif(rng); }, logdet);
    }

    /// Deterministic variant with u = 1/2 (bin centres).
    template <typename Scalar>
    Mat<Scalar> forward_centered(const Pixels& x8, RowVec<Scalar>* logdet = nullptr) const {
        return transform<Scalar>(x8, [] { return 0.5; }, logdet);
    }

    /// Model space to [0, 1] intensities (no quantization).
    template <typename Scalar>
    Mat<Scalar> to_unit(const Mat<Scalar>& x) const {
        const Scalar a = Scalar(alpha);
        const auto s = (Scalar(1) + (-x.array()).exp()).inverse();
        return ((s - a) / (Scalar(1) - Scalar(2) * a)).max(Scalar(0)).min(Scalar(1)).matrix();
    }

    /// [0, 1] intensities to model space, clamped away from the logit poles.
    template <typename Scalar>
    Mat<Scalar> from_unit(const Mat<Scalar>& y) const {
        const Scalar a = Scalar(alpha);
        const auto s = a + (Scalar(1) - Scalar(2) * a) * y.array().max(Scalar(0)).min(Scalar(1));
        return (s / (Scalar(1) - s)).log().matrix();
    }

    /// Inverse map followed by re-quantization to 8 bits.
    template <typename Scalar>
    Pixels backward(const Mat<Scalar>& x) const {
        Pixels out(x.rows(), x.cols());
        for (Index k = 0; k < x.size(); ++k) {
            const double s = 1.0 / (1.0 + std::exp(-double(x.data()[k])));
            const double v = (s - alpha) / (1.0 - 2.0 * alpha) * bins;
            out.data()[k] = std::uint8_t(std::clamp(std::floor(v), 0.0, double(bins - 1)));
        }
        return out;
    }

private:
    template <typename Scalar, typename Noise>
    Mat<Scalar> transform(const Pixels& x8, Noise&& noise, RowVec<Scalar>* logdet) const {
        Mat<Scalar> out(x8.rows(), x8.cols());
        if (logdet) logdet->resize(x8.cols());
        const double affine = std::log(1.0 - 2.0 * alpha) - std::log(double(bins));
        for (Index col = 0; col < x8.cols(); ++col) {
            double ld = 0;
            for (Index row = 0; row < x8.rows(); ++row) {
                const double y = (double(x8(row, col)) + noise()) / bins;
                const double s = alpha + (1.0 - 2.0 * alpha) * y;
                out(row, col) = Scalar(std::log(s / (1.0 - s)));
                ld += affine - std::log(s * (1.0 - s));
            }
            if (logdet) (*logdet)(col) = Scalar(ld);
        }
        return out;
    }
};

/// Mean bits per dimension of 8-bit data under a model-space density.
/// `log_prob` maps a (dim x B) batch to a row of log densities.
template <typename Scalar, typename LogProb>
double bits_per_dim(LogProb&& log_prob, const Pixels& data, const Preprocessor& pre, Rng& rng,
                    Index batch_size = 64) {
    if (data.cols() == 0) return 0.0;
    double total = 0;
    for (Index start = 0; start < data.cols(); start += batch_size) {
        const Index count = std::min(batch_size, data.cols() - start);
        RowVec<Scalar> ld;
        const Mat<Scalar> x = pre.forward<Scalar>(data.middleCols(start, count), rng, &ld);
        const RowVec<Scalar> lp = log_prob(x);
        total += (lp.template cast<double>() + ld.template cast<double>()).sum();
    }
    return -total / (double(data.cols()) * double(data.rows()) * std::numbers::ln2);
}

/// Exact model-space density of uniformly distributed 8-bit data after
/// preprocessing; scores 8 bits per dimension by construction.
template <typename Scalar>
RowVec<Scalar> uniform_noise_log_prob(const Mat<Scalar>& x, double alpha = 0.05) {
    RowVec<Scalar> out(x.cols());
    const double base = -std::log(1.0 - 2.0 * alpha);
    for (Index col = 0; col < x.cols(); ++col) {
        double lp = 0;
        for (Index row = 0; row < x.rows(); ++row) {
            const double s = 1.0 / (1.0 + std::exp(-double(x(row, col))));
            lp += std::log(s * (1.0 - s)) + base;
        }
        out(col) = Scalar(lp);
    }
    return out;
}

/// Per-oval color and orientation measured from rendered images.
struct OvalStats {
    std::vector<double> within_color_std;   ///< per image, across its ovals
    double across_color_std = 0;            ///< of per-image mean colors
    double within_color_var_mean = 0;
    double across_color_var = 0;
    std::vector<double> within_orientation_var;  ///< circular variance of doubled angles
    double across_orientation_var = 0;
    double within_orientation_var_mean = 0;
};

/// `images` are [0, 1] intensities, one image per column.
OvalStats oval_stats(const Mat<float>& images, int L, int C, int grid = 4);

// ---- storage --------------------------------------------------------------

void write_png(const std::filesystem::path& path, const std::uint8_t* data, int height, int width, int channels);
std::vector<std::uint8_t> read_png(const std::filesystem::path& path, int& height, int& width, int& channels);

/// Writes a grid of images (each L x L x C in [0, 1]) as one PNG.
void write_image_grid(const std::filesystem::path& path, const Mat<float>& images, int L, int C, int cols,
                      int pad = 1);

std::string sha256_hex(const std::uint8_t* data, std::size_t size);

/// Directory of img_NNNNNN.png files plus manifest.json.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
/// Loads and validates the manifest checksum.
Dataset load_dataset(const std::filesystem::path& dir);
/// Reads every PNG in a directory (sorted by name) as an unlabeled dataset.
Dataset ingest_images(const std::filesystem::path& dir, const std::string& name);

}  // namespace rgflow

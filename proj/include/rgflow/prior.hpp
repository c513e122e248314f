#pragma once

#include "rgflow/core.hpp"
#include "rgflow/nncore.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <string>

namespace rgflow {

enum class PriorKind { laplacian, gaussian };

std::string to_string(PriorKind kind);
PriorKind parse_prior_kind(const std::string& name);

/// Factorized prior over latents: Laplacian(0, b) or Normal(0, sigma^2) per variable.
struct Prior {
    PriorKind kind = PriorKind::laplacian;
    double scale = 1.0;

    template <typename Scalar>
    Scalar log_density(Scalar z, double temperature = 1.0) const {
        const double s = effective_scale(temperature);
        const double zd = double(z);
        if (kind == PriorKind::laplacian) return Scalar(-std::log(2.0 * s) - std::abs(zd) / s);
        return Scalar(-0.5 * std::log(2.0 * std::numbers::pi * s * s) - 0.5 * zd * zd / (s * s));
    }

    /// Column-wise sum of per-variable log densities.
    template <typename Scalar>
    RowVec<Scalar> log_prob(const Mat<Scalar>& z) const {
        const Scalar s = Scalar(scale);
        const Scalar n = Scalar(z.rows());
        if (kind == PriorKind::laplacian)
            return (-z.array().abs() / s).matrix().colwise().sum().array() - n * Scalar(std::log(2.0 * scale));
        return (Scalar(-0.5) * z.array().square() / (s * s)).matrix().colwise().sum().array() -
               n * Scalar(0.5 * std::log(2.0 * std::numbers::pi * scale * scale));
    }

    /// d log p / dz elementwise (the Laplacian uses sign(0) = 0).
    template <typename Scalar>
    Mat<Scalar> grad_log_prob(const Mat<Scalar>& z) const {
        const Scalar s = Scalar(scale);
        if (kind == PriorKind::laplacian) return (-z.array().sign() / s).matrix();
        return (-z.array() / (s * s)).matrix();
    }

    /// Scale of p^(1/T): Laplacian b*T, Gaussian sigma*sqrt(T).
    double effective_scale(double temperature) const {
        return kind == PriorKind::laplacian ? scale * temperature : scale * std::sqrt(temperature);
    }

    double draw(Rng& rng, double temperature = 1.0) const {
        const double s = effective_scale(temperature);
        if (kind == PriorKind::laplacian) {
            std::exponential_distribution<double> expo(1.0);
            const double mag = expo(rng);
            return (rng() & 1u) ? s * mag : -s * mag;
        }
        std::normal_distribution<double> normal(0.0, s);
        return normal(rng);
    }

    /// Marginal CDF, used for goodness-of-fit checks.
    double cdf(double z, double temperature = 1.0) const {
        const double s = effective_scale(temperature);
        if (kind == PriorKind::laplacian) return z < 0 ? 0.5 * std::exp(z / s) : 1.0 - 0.5 * std::exp(-z / s);
        return 0.5 * std::erfc(-z / (s * std::numbers::sqrt2));
    }
};

}  // namespace rgflow

#include "rgflow/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace rgflow {

template <typename Scalar>
std::vector<ReceptiveField> receptive_fields(const RgFlow<Scalar>& model, const std::vector<Index>& latents,
                                             Index n_samples, unsigned long long seed, Index chunk) {
    RGFLOW_REQUIRE(n_samples > 0 && chunk > 0, InvalidArgument, "n_samples and chunk must be positive");
    const auto& lat = model.lattice();
    const int L = model.spec().L, C = model.spec().C;
    for (Index l : latents) RGFLOW_REQUIRE(l >= 0 && l < model.dim(), InvalidArgument, "latent index out of range");

    std::vector<ReceptiveField> out(latents.size());
    for (std::size_t k = 0; k < latents.size(); ++k) {
        out[k].flat = latents[k];
        out[k].latent = lat.latent_at(latents[k]);
        out[k].map = Mat<double>::Zero(L, L);
    }
    const Mat<Scalar> z = model.sample_latents(TemperatureSchedule::uniform(lat.num_levels(), 1.0), n_samples, seed);
    for (Index s = 0; s < n_samples; ++s) {
        for (std::size_t first = 0; first < latents.size(); first += std::size_t(chunk)) {
            const std::size_t count = std::min(latents.size() - first, std::size_t(chunk));
            Mat<Scalar> tangents = Mat<Scalar>::Zero(model.dim(), Index(count));
            for (std::size_t k = 0; k < count; ++k) tangents(latents[first + k], Index(k)) = Scalar(1);
            const auto [image, dimage] = model.decode_jvp(z.col(s), tangents);
            for (std::size_t k = 0; k < count; ++k) {
                auto& map = out[first + k].map;
                for (int i = 0; i < L; ++i)
                    for (int j = 0; j < L; ++j) {
                        double acc = 0;
                        for (int c = 0; c < C; ++c)
                            acc += std::abs(double(dimage((Index(i) * L + j) * C + c, Index(k))));
                        map(i, j) += acc / double(n_samples);
                    }
            }
        }
    }
    for (auto& rf : out) rf.strength = rf.map.mean();
    return out;
}

template <typename Scalar>
ReceptiveField receptive_field(const RgFlow<Scalar>& model, Index latent, Index n_samples, unsigned long long seed) {
    return receptive_fields(model, {latent}, n_samples, seed).front();
}

std::string StrengthHistogram::to_csv() const {
    std::ostringstream out;
    out << "bin_lo,bin_hi,count,log10_count\n";
    for (std::size_t b = 0; b < counts.size(); ++b) {
        out << edges[b] << ',' << edges[b + 1] << ',' << counts[b] << ',';
        if (counts[b] > 0) out << std::log10(double(counts[b]));
        out << '\n';
    }
    return out.str();
}

template <typename Scalar>
StrengthHistogram rf_histogram(const RgFlow<Scalar>& model, int level, Index n_samples, unsigned long long seed,
                               int bins) {
    const auto& lat = model.lattice();
    RGFLOW_REQUIRE(level >= 0 && level <= lat.top_level(), InvalidArgument, "level out of range");
    RGFLOW_REQUIRE(bins >= 1, InvalidArgument, "bins must be >= 1");
    StrengthHistogram hist;
    hist.level = level;
    std::vector<Index> ids(std::size_t(lat.latent_count(level)));
    std::iota(ids.begin(), ids.end(), lat.latent_offset(level));
    if (ids.empty()) return hist;
    for (const auto& rf : receptive_fields(model, ids, n_samples, seed)) hist.strengths.push_back(rf.strength);
    const auto [lo_it, hi_it] = std::minmax_element(hist.strengths.begin(), hist.strengths.end());
    double lo = *lo_it, hi = *hi_it;
    if (hi <= lo) hi = lo + std::max(std::abs(lo), 1.0) * 1e-6;
    hist.edges.resize(std::size_t(bins) + 1);
    for (int b = 0; b <= bins; ++b) hist.edges[std::size_t(b)] = lo + (hi - lo) * b / bins;
    hist.counts.assign(std::size_t(bins), 0);
    for (double s : hist.strengths) {
        const int b = std::clamp(int((s - lo) / (hi - lo) * bins), 0, bins - 1);
        ++hist.counts[std::size_t(b)];
    }
    return hist;
}

template <typename Scalar>
Mat<Scalar> vary_latent(const RgFlow<Scalar>& model, const Vec<Scalar>& z, Index latent,
                        const std::vector<double>& values) {
    RGFLOW_REQUIRE(z.size() == model.dim(), InvalidArgument, "latent shape mismatch");
    RGFLOW_REQUIRE(latent >= 0 && latent < model.dim(), InvalidArgument, "latent index out of range");
    Mat<Scalar> zs = z.replicate(1, Index(values.size()));
    for (std::size_t k = 0; k < values.size(); ++k) zs(latent, Index(k)) = Scalar(values[k]);
    return model.decode(zs).value;
}

template <typename Scalar>
Mat<Scalar> splice_latents(const Lattice& lattice, const Mat<Scalar>& zA, const Mat<Scalar>& zB, int theta) {
    RGFLOW_REQUIRE(zA.rows() == zB.rows() && zA.cols() == zB.cols(), InvalidArgument, "latent shapes differ");
    RGFLOW_REQUIRE(theta >= 0 && theta <= lattice.num_levels(), InvalidArgument, "theta out of range");
    Mat<Scalar> z = zB;
    for (int h = theta; h <= lattice.top_level(); ++h)
        z.middleRows(lattice.latent_offset(h), lattice.latent_count(h)) =
            zA.middleRows(lattice.latent_offset(h), lattice.latent_count(h));
    return z;
}

template <typename Scalar>
Mat<Scalar> mix_hyperbolic(const RgFlow<Scalar>& model, const Mat<Scalar>& xA, const Mat<Scalar>& xB, int theta) {
    return model.decode(splice_latents(model.lattice(), model.encode(xA).value, model.encode(xB).value, theta)).value;
}

template <typename Scalar>
Mat<Scalar> mix_linear(const RgFlow<Scalar>& model, const Mat<Scalar>& xA, const Mat<Scalar>& xB, double lambda) {
    RGFLOW_REQUIRE(lambda >= 0 && lambda <= 1, InvalidArgument, "lambda must be in [0, 1]");
    const Scalar a = Scalar(lambda);
    return model.decode(a * model.encode(xA).value + (Scalar(1) - a) * model.encode(xB).value).value;
}

nlohmann::json InpaintConfig::to_json() const {
    return {{"n_init", n_init},       {"init_temperature", init_temperature},
            {"lr", lr},               {"max_steps", max_steps},
            {"patience", patience},   {"tolerance", tolerance},
            {"seed", seed},           {"arm", arm == InpaintArm::cone ? "cone" : "random"}};
}

nlohmann::json InpaintResult::diagnostics() const {
    return {{"free_latents", free_latents.size()},
            {"initial_log_prob", initial_log_prob},
            {"log_prob", log_prob},
            {"steps", steps},
            {"converged", converged},
            {"diverged", diverged},
            {"warning", warning}};
}

Pixels corrupt_region(const Pixels& image, int L, int C, const PixelRegion& region, const std::vector<double>& color) {
    RGFLOW_REQUIRE(image.rows() == Index(L) * L * C, InvalidArgument, "image shape mismatch");
    RGFLOW_REQUIRE(!color.empty(), InvalidArgument, "fill color is empty");
    Pixels out = image;
    for (int i = std::max(region.row, 0); i < std::min(region.row + region.height, L); ++i)
        for (int j = std::max(region.col, 0); j < std::min(region.col + region.width, L); ++j)
            for (int c = 0; c < C; ++c)
                out.col(0)((Index(i) * L + j) * C + c) =
                    std::uint8_t(std::lround(std::clamp(color[std::size_t(c) % color.size()], 0.0, 1.0) * 255));
    return out;
}

template <typename Scalar>
InpaintResult inpaint(const RgFlow<Scalar>& model, const Pixels& corrupt, const PixelRegion& region,
                      const InpaintConfig& cfg, double alpha) {
    const auto& lat = model.lattice();
    const int L = model.spec().L, C = model.spec().C;
    const Index D = model.dim();
    RGFLOW_REQUIRE(corrupt.rows() == D && corrupt.cols() == 1, InvalidArgument, "inpaint takes one image");
    RGFLOW_REQUIRE(region.row >= 0 && region.col >= 0 && region.row + region.height <= L &&
                       region.col + region.width <= L,
                   InvalidArgument, "region out of bounds");
    RGFLOW_REQUIRE(cfg.n_init >= 1 && cfg.max_steps >= 0 && cfg.patience >= 1 && cfg.lr > 0, InvalidArgument,
                   "invalid inpainting settings");

    InpaintResult res;
    res.image = corrupt;
    if (region.empty()) return res;

    const Preprocessor pre{alpha};
    const Mat<Scalar> xc = pre.forward_centered<Scalar>(corrupt);
    Mat<Scalar> mask = Mat<Scalar>::Zero(D, 1);
    for (int i = region.row; i < region.row + region.height; ++i)
        for (int j = region.col; j < region.col + region.width; ++j)
            mask.middleRows((Index(i) * L + j) * C, C).setOnes();

    const auto cone = lat.inference_cone(region);
    if (cfg.arm == InpaintArm::cone) {
        res.free_latents = cone.latents;
    } else {
        std::vector<Index> all(static_cast<std::size_t>(D));
        std::iota(all.begin(), all.end(), Index(0));
        Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
        std::shuffle(all.begin(), all.end(), rng);
        all.resize(cone.latents.size());
        std::sort(all.begin(), all.end());
        res.free_latents = std::move(all);
    }
    const Index nf = Index(res.free_latents.size());

    const auto composite = [&](const Mat<Scalar>& generated) {
        Mat<Scalar> out = generated.cwiseProduct(mask.replicate(1, generated.cols()));
        out += xc.cwiseProduct((Mat<Scalar>::Ones(D, 1) - mask)).replicate(1, generated.cols());
        return out;
    };

    // random restarts of the free latents; the rest stay at encode(x_corrupt)
    const Vec<Scalar> z0 = model.encode(xc).value.col(0);
    Mat<Scalar> inits = z0.replicate(1, cfg.n_init);
    {
        Rng rng(cfg.seed);
        for (int k = 0; k < cfg.n_init; ++k)
            for (Index l : res.free_latents) inits(l, k) = Scalar(model.prior().draw(rng, cfg.init_temperature));
    }
    // candidates whose decode overflows are dropped
    const auto score = [&](const Mat<Scalar>& zs) {
        RowVec<double> lp(zs.cols());
        try {
            lp = model.log_prob(composite(model.decode(zs).value)).template cast<double>();
        } catch (const NumericalOverflow&) {
            for (Index k = 0; k < zs.cols(); ++k) {
                try {
                    lp(k) = double(model.log_prob(composite(model.decode(zs.col(k)).value))(0));
                } catch (const NumericalOverflow&) {
                    lp(k) = -std::numeric_limits<double>::infinity();
                }
            }
        }
        for (Index k = 0; k < lp.size(); ++k)
            if (!std::isfinite(lp(k))) lp(k) = -std::numeric_limits<double>::infinity();
        return lp;
    };
    const RowVec<double> init_lp = score(inits);
    Index best_init = 0;
    init_lp.maxCoeff(&best_init);
    Vec<Scalar> z = inits.col(best_init);
    res.initial_log_prob = init_lp(best_init);
    if (!std::isfinite(res.initial_log_prob)) {
        // no random start decodes; ascend from the encoding of the corrupted image instead
        res.diverged = true;
        z = z0;
        res.initial_log_prob = score(Mat<Scalar>(z0))(0);
        if (!std::isfinite(res.initial_log_prob)) {
            // not even the corrupted image has a finite density: nothing to ascend, region left as is
            res.warning = true;
            res.log_prob = res.initial_log_prob;
            return res;
        }
    }

    Vec<Scalar> best_z = z;
    double best_lp = res.initial_log_prob;
    std::vector<double> best_history;
    Vec<Scalar> m1 = Vec<Scalar>::Zero(nf), m2 = Vec<Scalar>::Zero(nf);
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    res.converged = cfg.max_steps == 0;
    for (int t = 1; t <= cfg.max_steps; ++t) {
        const Mat<Scalar> zm = z;
        RowVec<Scalar> lp;
        Mat<Scalar> gx;
        try {
            gx = model.log_prob_input_grad(composite(model.decode(zm).value), &lp);
        } catch (const NumericalOverflow&) {
            res.diverged = true;  // keep the best point so far
            break;
        }
        if (!std::isfinite(double(lp(0))) || !gx.allFinite()) {
            res.diverged = true;
            break;
        }
        if (double(lp(0)) > best_lp) {
            best_lp = double(lp(0));
            best_z = z;
        }
        best_history.push_back(best_lp);
        res.steps = t - 1;
        if (int(best_history.size()) > cfg.patience &&
            best_history.back() - best_history[best_history.size() - 1 - std::size_t(cfg.patience)] < cfg.tolerance) {
            res.converged = true;
            break;
        }
        gx = gx.cwiseProduct(mask);
        const Mat<Scalar> gz = model.decode_vjp(zm, gx);
        const double bc1 = 1 - std::pow(b1, t), bc2 = 1 - std::pow(b2, t);
        for (Index k = 0; k < nf; ++k) {
            const Index l = res.free_latents[std::size_t(k)];
            const Scalar g = -gz(l, 0);  // ascent on log p
            m1(k) = Scalar(b1) * m1(k) + Scalar(1 - b1) * g;
            m2(k) = Scalar(b2) * m2(k) + Scalar(1 - b2) * g * g;
            z(l) -= Scalar(cfg.lr * (double(m1(k)) / bc1) / (std::sqrt(double(m2(k)) / bc2) + eps));
        }
        res.steps = t;
    }
    if (!res.converged) {
        const double lp = score(Mat<Scalar>(z))(0);
        if (lp > best_lp) {
            best_lp = lp;
            best_z = z;
        }
    }
    res.warning = !res.converged;
    res.log_prob = best_lp;

    const Pixels generated = pre.backward(model.decode(Mat<Scalar>(best_z)).value);
    for (int i = region.row; i < region.row + region.height; ++i)
        for (int j = region.col; j < region.col + region.width; ++j)
            for (int c = 0; c < C; ++c) {
                const Index r = (Index(i) * L + j) * C + c;
                res.image(r, 0) = generated(r, 0);
            }
    return res;
}

double psnr(const Mat<double>& x, const Mat<double>& y) {
    RGFLOW_REQUIRE(x.rows() == y.rows() && x.cols() == y.cols() && x.size() > 0, InvalidArgument,
                   "psnr needs equal, non-empty shapes");
    const double mse = (x - y).squaredNorm() / double(x.size());
    if (mse == 0) return kPsnrIdentical;
    return 10.0 * std::log10(1.0 / mse);
}

double psnr(const Pixels& x, const Pixels& y) {
    return psnr(Mat<double>(x.cast<double>() / 255.0), Mat<double>(y.cast<double>() / 255.0));
}

double quadrant_purity(const Mat<double>& latents, const std::vector<int>& labels, int legs) {
    RGFLOW_REQUIRE(latents.rows() == 2 && Index(labels.size()) == latents.cols(), InvalidArgument,
                   "latents must be 2 x n with one label each");
    RGFLOW_REQUIRE(legs >= 1, InvalidArgument, "legs must be >= 1");
    if (labels.empty()) return 0;
    std::vector<std::vector<Index>> counts(4, std::vector<Index>(std::size_t(legs), 0));
    for (Index k = 0; k < latents.cols(); ++k) {
        const int q = (latents(0, k) >= 0 ? 1 : 0) + (latents(1, k) >= 0 ? 2 : 0);
        const int label = labels[std::size_t(k)];
        RGFLOW_REQUIRE(label >= 0 && label < legs, InvalidArgument, "label out of range");
        ++counts[std::size_t(q)][std::size_t(label)];
    }
    Index majority = 0;
    for (const auto& row : counts) majority += *std::max_element(row.begin(), row.end());
    return double(majority) / double(labels.size());
}

#define RGFLOW_INSTANTIATE(S)                                                                                   \
    template std::vector<ReceptiveField> receptive_fields<S>(const RgFlow<S>&, const std::vector<Index>&, Index, \
                                                             unsigned long long, Index);                        \
    template ReceptiveField receptive_field<S>(const RgFlow<S>&, Index, Index, unsigned long long);             \
    template StrengthHistogram rf_histogram<S>(const RgFlow<S>&, int, Index, unsigned long long, int);          \
    template Mat<S> vary_latent<S>(const RgFlow<S>&, const Vec<S>&, Index, const std::vector<double>&);         \
    template Mat<S> splice_latents<S>(const Lattice&, const Mat<S>&, const Mat<S>&, int);                       \
    template Mat<S> mix_hyperbolic<S>(const RgFlow<S>&, const Mat<S>&, const Mat<S>&, int);                     \
    template Mat<S> mix_linear<S>(const RgFlow<S>&, const Mat<S>&, const Mat<S>&, double);                      \
    template InpaintResult inpaint<S>(const RgFlow<S>&, const Pixels&, const PixelRegion&, const InpaintConfig&, \
                                      double);

RGFLOW_INSTANTIATE(float)
RGFLOW_INSTANTIATE(double)

}  // namespace rgflow

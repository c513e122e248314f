#include "rgflow/data.hpp"

#include <algorithm>
#include <complex>
#include <numeric>

namespace rgflow {

nlohmann::json DatasetManifest::to_json() const {
    return {{"name", name}, {"n", n}, {"L", L}, {"C", C}, {"seed", seed}, {"params", params}, {"sha256", sha256}};
}

DatasetManifest DatasetManifest::from_json(const nlohmann::json& j) {
    DatasetManifest m;
    m.name = j.at("name").get<std::string>();
    m.n = j.at("n").get<Index>();
    m.L = j.at("L").get<int>();
    m.C = j.at("C").get<int>();
    m.seed = j.at("seed").get<unsigned long long>();
    m.params = j.value("params", nlohmann::json::object());
    m.sha256 = j.at("sha256").get<std::string>();
    return m;
}

Dataset Dataset::subset(const std::vector<Index>& columns) const {
    Dataset out;
    out.manifest = manifest;
    out.pixels.resize(pixels.rows(), Index(columns.size()));
    for (std::size_t k = 0; k < columns.size(); ++k) out.pixels.col(Index(k)) = pixels.col(columns[k]);
    out.manifest.n = out.size();
    out.manifest.sha256 = sha256_hex(out.pixels.data(), std::size_t(out.pixels.size()));
    return out;
}

nlohmann::json MsdsParams::to_json() const {
    return {{"grid", grid},
            {"axis_major", axis_major},
            {"axis_minor", axis_minor},
            {"position_jitter", position_jitter},
            {"color_jitter", color_jitter},
            {"color_lo", color_lo},
            {"color_hi", color_hi},
            {"supersample", supersample}};
}

MsdsParams MsdsParams::from_json(const nlohmann::json& j) {
    MsdsParams p;
    p.grid = j.value("grid", p.grid);
    p.axis_major = j.value("axis_major", p.axis_major);
    p.axis_minor = j.value("axis_minor", p.axis_minor);
    p.position_jitter = j.value("position_jitter", p.position_jitter);
    p.color_jitter = j.value("color_jitter", p.color_jitter);
    p.color_lo = j.value("color_lo", p.color_lo);
    p.color_hi = j.value("color_hi", p.color_hi);
    p.supersample = j.value("supersample", p.supersample);
    return p;
}

namespace {

struct Oval {
    double ci = 0, cj = 0;  // centre, continuous pixel coordinates
    double theta = 0;
    double color[3] = {0, 0, 0};
};

void render_oval(const Oval& oval, const MsdsParams& p, int L, int C, int cell_i, int cell_j, int cell,
                 std::uint8_t* image) {
    const double a = p.axis_major / 2, b = p.axis_minor / 2;
    const double ct = std::cos(oval.theta), st = std::sin(oval.theta);
    const int s = p.supersample;
    for (int i = cell_i * cell; i < (cell_i + 1) * cell; ++i) {
        for (int j = cell_j * cell; j < (cell_j + 1) * cell; ++j) {
            int hits = 0;
            for (int u = 0; u < s; ++u) {
                for (int v = 0; v < s; ++v) {
                    const double di = i + (u + 0.5) / s - oval.ci;
                    const double dj = j + (v + 0.5) / s - oval.cj;
                    const double along = di * ct + dj * st;
                    const double perp = -di * st + dj * ct;
                    if ((along * along) / (a * a) + (perp * perp) / (b * b) <= 1.0) ++hits;
                }
            }
            const double cover = double(hits) / (s * s);
            for (int c = 0; c < C; ++c) {
                const double value = cover * oval.color[c % 3];
                image[(std::size_t(i) * L + j) * C + c] = std::uint8_t(std::lround(std::clamp(value, 0.0, 1.0) * 255.0));
            }
        }
    }
}

}  // namespace

Dataset gen_msds(int variant, Index n, int L, unsigned long long seed, const MsdsParams& p) {
    RGFLOW_REQUIRE(variant == 1 || variant == 2, InvalidArgument, "MSDS variant must be 1 or 2");
    RGFLOW_REQUIRE(L > 0 && L % p.grid == 0, InvalidArgument, "L must be divisible by the oval grid");
    RGFLOW_REQUIRE(n >= 0, InvalidArgument, "dataset size must be non-negative");
    const int C = 3;
    const int cell = L / p.grid;
    RGFLOW_REQUIRE(p.axis_major / 2 + p.position_jitter <= cell / 2.0, InvalidArgument,
                   "ovals would leave their grid cells");

    Dataset ds;
    ds.pixels = Pixels::Zero(Index(L) * L * C, n);
    for (Index k = 0; k < n; ++k) {
        std::seed_seq seq{std::uint64_t(seed), std::uint64_t(k), std::uint64_t(variant)};
        Rng rng(seq);
        std::uniform_real_distribution<double> color(p.color_lo, p.color_hi);
        std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
        std::uniform_real_distribution<double> jitter(-p.position_jitter, p.position_jitter);
        std::normal_distribution<double> color_noise(0.0, p.color_jitter);

        const double global_color[3] = {color(rng), color(rng), color(rng)};
        const double global_theta = angle(rng);
        for (int gi = 0; gi < p.grid; ++gi) {
            for (int gj = 0; gj < p.grid; ++gj) {
                Oval oval;
                oval.ci = (gi + 0.5) * cell + jitter(rng);
                oval.cj = (gj + 0.5) * cell + jitter(rng);
                if (variant == 1) {
                    oval.theta = angle(rng);
                    for (int c = 0; c < 3; ++c)
                        oval.color[c] = std::clamp(global_color[c] + color_noise(rng), 0.0, 1.0);
                } else {
                    oval.theta = global_theta;
                    for (int c = 0; c < 3; ++c) oval.color[c] = color(rng);
                }
                render_oval(oval, p, L, C, gi, gj, cell, ds.pixels.col(k).data());
            }
        }
    }
    ds.manifest.name = variant == 1 ? "msds1" : "msds2";
    ds.manifest.n = n;
    ds.manifest.L = L;
    ds.manifest.C = C;
    ds.manifest.seed = seed;
    ds.manifest.params = p.to_json();
    ds.manifest.params["variant"] = variant;
    ds.manifest.sha256 = sha256_hex(ds.pixels.data(), std::size_t(ds.pixels.size()));
    return ds;
}

PointSet gen_pinwheel(Index n, int legs, unsigned long long seed, const PinwheelParams& p) {
    RGFLOW_REQUIRE(legs >= 1, InvalidArgument, "legs must be >= 1");
    RGFLOW_REQUIRE(n >= 0, InvalidArgument, "point count must be non-negative");
    Rng rng(seed);
    std::normal_distribution<double> radial(0.0, p.radial_std);
    std::normal_distribution<double> tangential(0.0, p.tangential_std);
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index(0));
    std::shuffle(order.begin(), order.end(), rng);

    PointSet out;
    out.points.resize(2, n);
    out.labels.resize(std::size_t(n));
    for (Index k = 0; k < n; ++k) {
        const int label = int(k % legs);
        const double f0 = radial(rng) + 1.0;
        const double f1 = tangential(rng);
        const double angle = 2.0 * std::numbers::pi * label / legs + p.rate * std::exp(f0);
        const Index slot = order[std::size_t(k)];
        out.points(0, slot) = 2.0 * (f0 * std::cos(angle) - f1 * std::sin(angle));
        out.points(1, slot) = 2.0 * (f0 * std::sin(angle) + f1 * std::cos(angle));
        out.labels[std::size_t(slot)] = label;
    }
    return out;
}

OvalStats oval_stats(const Mat<float>& images, int L, int C, int grid) {
    RGFLOW_REQUIRE(images.rows() == Index(L) * L * C, InvalidArgument, "image shape mismatch");
    const int cell = L / grid;
    const int channels = std::min(C, 3);
    OvalStats st;
    std::vector<std::array<double, 3>> image_means;
    std::vector<std::complex<double>> image_dirs;
    for (Index k = 0; k < images.cols(); ++k) {
        const auto px = [&](int i, int j, int c) { return double(images((Index(i) * L + j) * C + c, k)); };
        std::vector<std::array<double, 3>> colors;
        std::vector<std::complex<double>> dirs;
        for (int gi = 0; gi < grid; ++gi) {
            for (int gj = 0; gj < grid; ++gj) {
                double peak = 0;
                for (int i = gi * cell; i < (gi + 1) * cell; ++i)
                    for (int j = gj * cell; j < (gj + 1) * cell; ++j)
                        for (int c = 0; c < C; ++c) peak = std::max(peak, px(i, j, c));
                if (peak < 0.05) continue;
                std::array<double, 3> col{0, 0, 0};
                int count = 0;
                double w = 0, mi = 0, mj = 0, sii = 0, sjj = 0, sij = 0;
                for (int i = gi * cell; i < (gi + 1) * cell; ++i) {
                    for (int j = gj * cell; j < (gj + 1) * cell; ++j) {
                        double bright = 0;
                        for (int c = 0; c < C; ++c) bright = std::max(bright, px(i, j, c));
                        if (bright >= 0.5 * peak) {
                            for (int c = 0; c < channels; ++c) col[std::size_t(c)] += px(i, j, c);
                            ++count;
                        }
                        w += bright;
                        mi += bright * i;
                        mj += bright * j;
                        sii += bright * i * i;
                        sjj += bright * j * j;
                        sij += bright * i * j;
                    }
                }
                for (auto& v : col) v /= std::max(count, 1);
                colors.push_back(col);
                mi /= w;
                mj /= w;
                const double vii = sii / w - mi * mi, vjj = sjj / w - mj * mj, vij = sij / w - mi * mj;
                const double theta = 0.5 * std::atan2(2 * vij, vii - vjj);
                dirs.push_back(std::polar(1.0, 2 * theta));
            }
        }
        if (colors.empty()) {
            st.within_color_std.push_back(0);
            st.within_orientation_var.push_back(0);
            image_means.push_back({0, 0, 0});
            image_dirs.push_back({1, 0});
            continue;
        }
        std::array<double, 3> mean{0, 0, 0};
        for (const auto& c : colors)
            for (int ch = 0; ch < 3; ++ch) mean[std::size_t(ch)] += c[std::size_t(ch)] / double(colors.size());
        double var = 0;
        for (const auto& c : colors)
            for (int ch = 0; ch < channels; ++ch)
                var += std::pow(c[std::size_t(ch)] - mean[std::size_t(ch)], 2) / double(colors.size() * channels);
        st.within_color_std.push_back(std::sqrt(var));
        const auto resultant = std::accumulate(dirs.begin(), dirs.end(), std::complex<double>{}) / double(dirs.size());
        st.within_orientation_var.push_back(1.0 - std::abs(resultant));
        image_means.push_back(mean);
        image_dirs.push_back(std::abs(resultant) > 0 ? resultant / std::abs(resultant) : std::complex<double>{1, 0});
    }
    const double n = double(images.cols());
    if (n == 0) return st;
    std::array<double, 3> grand{0, 0, 0};
    for (const auto& m : image_means)
        for (int ch = 0; ch < 3; ++ch) grand[std::size_t(ch)] += m[std::size_t(ch)] / n;
    double across = 0;
    for (const auto& m : image_means)
        for (int ch = 0; ch < channels; ++ch) across += std::pow(m[std::size_t(ch)] - grand[std::size_t(ch)], 2) / (n * channels);
    st.across_color_var = across;
    st.across_color_std = std::sqrt(across);
    double within = 0;
    for (double s : st.within_color_std) within += s * s / n;
    st.within_color_var_mean = within;
    st.across_orientation_var =
        1.0 - std::abs(std::accumulate(image_dirs.begin(), image_dirs.end(), std::complex<double>{}) / n);
    st.within_orientation_var_mean =
        std::accumulate(st.within_orientation_var.begin(), st.within_orientation_var.end(), 0.0) / n;
    return st;
}

}  // namespace rgflow

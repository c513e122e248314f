#pragma once

// Minimal differentiable substrate: weight-normalized dense layers, SiLU
// residual networks, explicit reverse-mode and forward-mode passes, and AdamW.
//
// Batches are column-major: every column of an input matrix is one sample.
// A forward pass that records a Cache can later be differentiated with
// backward() (vector-Jacobian product) or jvp() (Jacobian-vector product).

#include "rgflow/core.hpp"

#include <cmath>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

namespace rgflow {

using Rng = std::mt19937_64;

template <typename Derived>
auto silu(const Eigen::ArrayBase<Derived>& x) {
    using S = typename Derived::Scalar;
    return x / (S(1) + (-x).exp());
}

template <typename Derived>
auto silu_grad(const Eigen::ArrayBase<Derived>& x) {
    using S = typename Derived::Scalar;
    const auto sig = (S(1) + (-x).exp()).inverse();
    return sig * (S(1) + x * (S(1) - sig));
}

template <typename Scalar>
    requires std::is_arithmetic_v<Scalar>
Scalar silu(Scalar x) {
    return x / (Scalar(1) + std::exp(-x));
}

/// View of one parameter tensor and its gradient accumulator.
template <typename Scalar>
struct ParamRef {
    std::string name;
    std::vector<Index> shape;
    Scalar* value = nullptr;
    Scalar* grad = nullptr;
    Index size = 0;
    double lr_scale = 1.0;

    Eigen::Map<Vec<Scalar>> values() const { return {value, size}; }
    Eigen::Map<Vec<Scalar>> grads() const { return {grad, size}; }
};

template <typename Scalar>
using ParamList = std::vector<ParamRef<Scalar>>;

template <typename Scalar>
ParamRef<Scalar> make_param(std::string name, Mat<Scalar>& value, Mat<Scalar>& grad) {
    return {std::move(name), {value.rows(), value.cols()}, value.data(), grad.data(), value.size()};
}

template <typename Scalar>
ParamRef<Scalar> make_param(std::string name, Vec<Scalar>& value, Vec<Scalar>& grad) {
    return {std::move(name), {value.rows()}, value.data(), grad.data(), value.size()};
}

/// Dense layer with weight normalization: W = diag(g / |v_row|) v.
template <typename Scalar>
class DenseLayer {
public:
    DenseLayer() = default;
    DenseLayer(Index in, Index out)
        : v_(Mat<Scalar>::Zero(out, in)), g_(Vec<Scalar>::Zero(out)), b_(Vec<Scalar>::Zero(out)) {
        zero_grad();
    }

    Index in_dim() const { return v_.cols(); }
    Index out_dim() const { return v_.rows(); }

    /// Kaiming-normal draw for v (variance 2/fan_in), gain chosen so W == v, zero bias.
    void kaiming_init(Rng& rng) {
        RGFLOW_REQUIRE(in_dim() > 0, InvalidArgument, "fan_in must be positive");
        std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / double(in_dim())));
        for (Index k = 0; k < v_.size(); ++k) v_.data()[k] = Scalar(normal(rng));
        g_ = v_.rowwise().norm();
        b_.setZero();
    }

    /// Zero effective weight and bias; direction v stays random so g can grow.
    void zero_init(Rng& rng) {
        kaiming_init(rng);
        g_.setZero();
    }

    Mat<Scalar> weight() const {
        const Vec<Scalar> scale = g_.array() / v_.rowwise().norm().array();
        return scale.asDiagonal() * v_;
    }

    const Mat<Scalar>& direction() const { return v_; }
    const Vec<Scalar>& gain() const { return g_; }
    const Vec<Scalar>& bias() const { return b_; }
    Mat<Scalar>& direction() { return v_; }
    Vec<Scalar>& gain() { return g_; }
    Vec<Scalar>& bias() { return b_; }

    /// y = W x + b for every column.
    Mat<Scalar> apply(const Mat<Scalar>& weight, const Mat<Scalar>& x) const {
        Mat<Scalar> y(out_dim(), x.cols());
        y.noalias() = weight * x;
        y.colwise() += b_;
        return y;
    }

    /// Accumulates parameter gradients for dy at inputs x.
    void accumulate_grad(const Mat<Scalar>& x, const Mat<Scalar>& dy) {
        Mat<Scalar> dw(out_dim(), in_dim());
        dw.noalias() = dy * x.transpose();
        db_ += dy.rowwise().sum();
        const Vec<Scalar> norms = v_.rowwise().norm();
        for (Index r = 0; r < out_dim(); ++r) {
            const Scalar nrm = norms(r);
            const Scalar proj = dw.row(r).dot(v_.row(r)) / nrm;
            dg_(r) += proj;
            dv_.row(r) += (g_(r) / nrm) * (dw.row(r) - (proj / nrm) * v_.row(r));
        }
    }

    void zero_grad() {
        dv_ = Mat<Scalar>::Zero(v_.rows(), v_.cols());
        dg_ = Vec<Scalar>::Zero(g_.size());
        db_ = Vec<Scalar>::Zero(b_.size());
    }

    void collect(const std::string& prefix, ParamList<Scalar>& out) {
        out.push_back(make_param(prefix + ".v", v_, dv_));
        out.push_back(make_param(prefix + ".g", g_, dg_));
        out.push_back(make_param(prefix + ".b", b_, db_));
    }

private:
    Mat<Scalar> v_, dv_;
    Vec<Scalar> g_, dg_;
    Vec<Scalar> b_, db_;
};

/// Recorded forward pass of a ResNet; enough to run backward() and jvp().
template <typename Scalar>
struct ResNetCache {
    std::vector<Mat<Scalar>> weights;  // effective weights, 3 per block + projection
    std::vector<Mat<Scalar>> inputs;   // input of each residual block, then projection input
    std::vector<Mat<Scalar>> pre1;     // pre-activation after first layer of each block
    std::vector<Mat<Scalar>> pre2;
};

/// x -> n_res residual blocks (dim -> hidden -> hidden -> dim, SiLU between)
/// -> dense projection dim -> dim.
template <typename Scalar>
class ResNet {
public:
    ResNet() = default;
    ResNet(Index dim, Index hidden, int n_res) : dim_(dim), hidden_(hidden) {
        RGFLOW_REQUIRE(n_res >= 1, InvalidArgument, "n_res must be >= 1");
        RGFLOW_REQUIRE(dim >= 1 && hidden >= 1, InvalidArgument, "ResNet dimensions must be positive");
        for (int k = 0; k < n_res; ++k) {
            layers_.emplace_back(dim, hidden);
            layers_.emplace_back(hidden, hidden);
            layers_.emplace_back(hidden, dim);
        }
        layers_.emplace_back(dim, dim);
    }

    Index dim() const { return dim_; }
    Index hidden() const { return hidden_; }
    int num_blocks() const { return int(layers_.size() / 3); }

    void init(Rng& rng, bool zero_projection = true) {
        for (auto& layer : layers_) layer.kaiming_init(rng);
        if (zero_projection) layers_.back().zero_init(rng);
    }

    Mat<Scalar> forward(const Mat<Scalar>& x) const {
        ResNetCache<Scalar>* none = nullptr;
        return run(x, none);
    }

    Mat<Scalar> forward(const Mat<Scalar>& x, ResNetCache<Scalar>& cache) const {
        ResNetCache<Scalar>* rec = &cache;
        return run(x, rec);
    }

    /// Reverse-mode pass; accumulates parameter gradients and returns dL/dx.
    Mat<Scalar> backward(const ResNetCache<Scalar>& cache, const Mat<Scalar>& dy) {
        return reverse<true>(cache, dy);
    }

    /// Reverse-mode pass for the input only; parameters untouched.
    Mat<Scalar> backward_input(const ResNetCache<Scalar>& cache, const Mat<Scalar>& dy) const {
        return const_cast<ResNet*>(this)->template reverse<false>(cache, dy);
    }

    /// Forward-mode pass. `tangent` holds k blocks of columns, each block
    /// aligned with the primal batch recorded in `cache`.
    Mat<Scalar> jvp(const ResNetCache<Scalar>& cache, const Mat<Scalar>& tangent) const {
        const Index n = cache.inputs.front().cols();
        RGFLOW_REQUIRE(n > 0 ? tangent.cols() % n == 0 : tangent.cols() == 0, InvalidArgument,
                       "tangent columns must be a multiple of the primal batch");
        const Index reps = n > 0 ? tangent.cols() / n : 0;
        Mat<Scalar> t = tangent;
        const int blocks = num_blocks();
        for (int k = 0; k < blocks; ++k) {
            Mat<Scalar> u(hidden_, t.cols());
            u.noalias() = cache.weights[3 * k] * t;
            const Mat<Scalar> d1 = silu_grad(cache.pre1[k].array()).matrix();
            for (Index r = 0; r < reps; ++r) u.middleCols(r * n, n).array() *= d1.array();
            Mat<Scalar> w(hidden_, t.cols());
            w.noalias() = cache.weights[3 * k + 1] * u;
            const Mat<Scalar> d2 = silu_grad(cache.pre2[k].array()).matrix();
            for (Index r = 0; r < reps; ++r) w.middleCols(r * n, n).array() *= d2.array();
            t.noalias() += cache.weights[3 * k + 2] * w;
        }
        Mat<Scalar> out(dim_, t.cols());
        out.noalias() = cache.weights.back() * t;
        return out;
    }

    void zero_grad() {
        for (auto& layer : layers_) layer.zero_grad();
    }

    void collect(const std::string& prefix, ParamList<Scalar>& out) {
        for (std::size_t k = 0; k < layers_.size(); ++k) {
            const bool proj = k + 1 == layers_.size();
            const std::string name =
                proj ? prefix + ".proj" : prefix + ".res" + std::to_string(k / 3) + ".fc" + std::to_string(k % 3);
            layers_[k].collect(name, out);
        }
    }

    std::vector<DenseLayer<Scalar>>& layers() { return layers_; }
    const std::vector<DenseLayer<Scalar>>& layers() const { return layers_; }

private:
    Mat<Scalar> run(const Mat<Scalar>& x, ResNetCache<Scalar>* cache) const {
        RGFLOW_REQUIRE(x.rows() == dim_, InvalidArgument, "ResNet input dimension mismatch");
        if (cache) {
            cache->weights.clear();
            cache->inputs.clear();
            cache->pre1.clear();
            cache->pre2.clear();
        }
        Mat<Scalar> h = x;
        const int blocks = num_blocks();
        for (int k = 0; k < blocks; ++k) {
            const Mat<Scalar> w1 = layers_[3 * k].weight();
            const Mat<Scalar> w2 = layers_[3 * k + 1].weight();
            const Mat<Scalar> w3 = layers_[3 * k + 2].weight();
            Mat<Scalar> pre1 = layers_[3 * k].apply(w1, h);
            Mat<Scalar> pre2 = layers_[3 * k + 1].apply(w2, silu(pre1.array()).matrix());
            Mat<Scalar> next = h + layers_[3 * k + 2].apply(w3, silu(pre2.array()).matrix());
            if (cache) {
                cache->weights.push_back(w1);
                cache->weights.push_back(w2);
                cache->weights.push_back(w3);
                cache->inputs.push_back(std::move(h));
                cache->pre1.push_back(std::move(pre1));
                cache->pre2.push_back(std::move(pre2));
            }
            h = std::move(next);
        }
        const Mat<Scalar> wp = layers_.back().weight();
        Mat<Scalar> out = layers_.back().apply(wp, h);
        if (cache) {
            cache->weights.push_back(wp);
            cache->inputs.push_back(std::move(h));
        }
        return out;
    }

    template <bool Accumulate>
    Mat<Scalar> reverse(const ResNetCache<Scalar>& cache, const Mat<Scalar>& dy) {
        RGFLOW_REQUIRE(dy.rows() == dim_ && !cache.inputs.empty() && dy.cols() == cache.inputs.back().cols(),
                       InvalidArgument, "ResNet backward shape mismatch");
        if constexpr (Accumulate) layers_.back().accumulate_grad(cache.inputs.back(), dy);
        Mat<Scalar> dh(dim_, dy.cols());
        dh.noalias() = cache.weights.back().transpose() * dy;
        for (int k = num_blocks() - 1; k >= 0; --k) {
            const auto& pre1 = cache.pre1[k];
            const auto& pre2 = cache.pre2[k];
            if constexpr (Accumulate) layers_[3 * k + 2].accumulate_grad(silu(pre2.array()).matrix(), dh);
            Mat<Scalar> da2(hidden_, dy.cols());
            da2.noalias() = cache.weights[3 * k + 2].transpose() * dh;
            da2.array() *= silu_grad(pre2.array());
            if constexpr (Accumulate) layers_[3 * k + 1].accumulate_grad(silu(pre1.array()).matrix(), da2);
            Mat<Scalar> da1(hidden_, dy.cols());
            da1.noalias() = cache.weights[3 * k + 1].transpose() * da2;
            da1.array() *= silu_grad(pre1.array());
            if constexpr (Accumulate) layers_[3 * k].accumulate_grad(cache.inputs[k], da1);
            dh.noalias() += cache.weights[3 * k].transpose() * da1;
        }
        return dh;
    }

    Index dim_ = 0;
    Index hidden_ = 0;
    std::vector<DenseLayer<Scalar>> layers_;
};

/// Scales gradients so their global 2-norm is at most max_norm; returns the
/// norm before clipping.
template <typename Scalar>
double clip_global_norm(const ParamList<Scalar>& params, double max_norm) {
    double sq = 0;
    for (const auto& p : params) sq += double(p.grads().template cast<double>().squaredNorm());
    const double norm = std::sqrt(sq);
    if (std::isfinite(norm) && norm > max_norm) {
        const Scalar scale = Scalar(max_norm / norm);
        for (const auto& p : params) p.grads() *= scale;
    }
    return norm;
}

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 5e-5;
    double clip_norm = 1.0;  ///< <= 0 disables clipping
};

/// AdamW with decoupled weight decay; global-norm clipping runs first.
template <typename Scalar>
class AdamW {
public:
    AdamW() = default;
    explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

    const AdamWConfig& config() const { return cfg_; }
    AdamWConfig& config() { return cfg_; }
    long steps() const { return step_; }

    /// One update; returns the pre-clip gradient norm.
    double step(const ParamList<Scalar>& params) {
        for (const auto& p : params)
            if (!p.grads().allFinite()) throw TrainingDiverged("non-finite gradient in " + p.name);
        if (first_moment_.empty()) {
            for (const auto& p : params) {
                first_moment_.push_back(Vec<Scalar>::Zero(p.size));
                second_moment_.push_back(Vec<Scalar>::Zero(p.size));
            }
        }
        RGFLOW_REQUIRE(first_moment_.size() == params.size(), InvalidArgument,
                       "optimizer state does not match parameter list");
        const double norm = cfg_.clip_norm > 0 ? clip_global_norm(params, cfg_.clip_norm) : 0.0;
        ++step_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, double(step_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, double(step_));
        for (std::size_t k = 0; k < params.size(); ++k) {
            const auto& p = params[k];
            RGFLOW_REQUIRE(first_moment_[k].size() == p.size, InvalidArgument, "optimizer state shape mismatch");
            const Scalar lr = Scalar(cfg_.lr * p.lr_scale);
            auto value = p.values();
            const auto grad = p.grads();
            auto& m1 = first_moment_[k];
            auto& m2 = second_moment_[k];
            m1 = Scalar(cfg_.beta1) * m1 + Scalar(1 - cfg_.beta1) * grad;
            m2 = Scalar(cfg_.beta2) * m2 + Scalar(1 - cfg_.beta2) * grad.cwiseAbs2();
            value *= Scalar(1) - lr * Scalar(cfg_.weight_decay);
            value.array() -= lr * (m1.array() / Scalar(bc1)) /
                             ((m2.array() / Scalar(bc2)).sqrt() + Scalar(cfg_.eps));
        }
        return norm;
    }

    std::vector<Vec<Scalar>>& first_moment() { return first_moment_; }
    std::vector<Vec<Scalar>>& second_moment() { return second_moment_; }
    void set_steps(long s) { step_ = s; }

private:
    AdamWConfig cfg_;
    long step_ = 0;
    std::vector<Vec<Scalar>> first_moment_;
    std::vector<Vec<Scalar>> second_moment_;
};

template <typename Scalar>
void zero_grads(const ParamList<Scalar>& params) {
    for (const auto& p : params) p.grads().setZero();
}

/// Adds N(0, scale^2) noise to every parameter; used to move off the identity
/// initialization in tests and analyses.
template <typename Scalar>
void perturb_parameters(const ParamList<Scalar>& params, Rng& rng, double scale) {
    std::normal_distribution<double> normal(0.0, scale);
    for (const auto& p : params)
        for (Index k = 0; k < p.size; ++k) p.value[k] += Scalar(normal(rng));
}

}  // namespace rgflow

#pragma once

// Affine coupling bijector on flattened patches. A patch of m x m pixels with
// C channels is flattened row-major over (a, b) with channels minor. The mask
// splits it into a conditioning half x1 and a transformed half x2:
//
//   x2' = x2 * exp(s1(x1)) + t1(x1)
//   x1' = x1 * exp(s2(x2')) + t2(x2')
//   log|det J| = sum s1 + sum s2
//
// Scale outputs pass through the soft clamp c * tanh(s / c).

#include "rgflow/nncore.hpp"

#include <utility>
#include <vector>

namespace rgflow {

/// Split of patch variables into the conditioning half and the transformed half.
struct CheckerboardMask {
    int parity = 0;
    int m = 4;
    int C = 3;

    /// Variables of pixels with (a + b) % 2 == parity, all channels together.
    std::vector<int> first() const { return select(parity); }
    std::vector<int> second() const { return select(1 - parity); }

private:
    std::vector<int> select(int want) const {
        std::vector<int> out;
        for (int a = 0; a < m; ++a)
            for (int b = 0; b < m; ++b)
                if ((a + b) % 2 == want)
                    for (int c = 0; c < C; ++c) out.push_back((a * m + b) * C + c);
        return out;
    }
};

struct CouplingShape {
    Index hidden = 512;
    int n_res = 4;
    double clamp = 8.0;
};

template <typename Scalar>
struct CouplingCache {
    Mat<Scalar> x1, x2, y1, y2;
    Mat<Scalar> s1_raw, s2_raw, s1, s2;
    ResNetCache<Scalar> s1_net, t1_net, s2_net, t2_net;
};

/// Result of pushing a batch through a bijector: outputs and per-column log|det|.
template <typename Scalar>
struct FlowResult {
    Mat<Scalar> value;
    RowVec<Scalar> logdet;
};

template <typename Scalar>
class CouplingBlock {
public:
    CouplingBlock() = default;
    CouplingBlock(std::vector<int> first, std::vector<int> second, const CouplingShape& shape)
        : first_(std::move(first)), second_(std::move(second)), clamp_(Scalar(shape.clamp)) {
        RGFLOW_REQUIRE(first_.size() == second_.size() && !first_.empty(), InvalidArgument,
                       "coupling halves must be non-empty and of equal size");
        const Index half = Index(first_.size());
        s1_ = ResNet<Scalar>(half, shape.hidden, shape.n_res);
        t1_ = ResNet<Scalar>(half, shape.hidden, shape.n_res);
        s2_ = ResNet<Scalar>(half, shape.hidden, shape.n_res);
        t2_ = ResNet<Scalar>(half, shape.hidden, shape.n_res);
    }

    static CouplingBlock checkerboard(const CheckerboardMask& mask, const CouplingShape& shape) {
        return CouplingBlock(mask.first(), mask.second(), shape);
    }

    Index dim() const { return Index(first_.size() + second_.size()); }
    const std::vector<int>& first() const { return first_; }
    const std::vector<int>& second() const { return second_; }

    /// Kaiming init with zero final projections: the block starts as the identity.
    void init(Rng& rng) {
        s1_.init(rng);
        t1_.init(rng);
        s2_.init(rng);
        t2_.init(rng);
    }

    FlowResult<Scalar> forward(const Mat<Scalar>& x, CouplingCache<Scalar>* cache = nullptr) const {
        check_input(x);
        CouplingCache<Scalar> local;
        auto& c = cache ? *cache : local;
        c.x1 = x(first_, Eigen::all);
        c.x2 = x(second_, Eigen::all);
        c.s1_raw = s1_.forward(c.x1, c.s1_net);
        c.s1 = soft_clamp(c.s1_raw);
        const Mat<Scalar> t1 = t1_.forward(c.x1, c.t1_net);
        c.y2 = (c.x2.array() * c.s1.array().exp() + t1.array()).matrix();
        c.s2_raw = s2_.forward(c.y2, c.s2_net);
        c.s2 = soft_clamp(c.s2_raw);
        const Mat<Scalar> t2 = t2_.forward(c.y2, c.t2_net);
        c.y1 = (c.x1.array() * c.s2.array().exp() + t2.array()).matrix();
        return {merge(c.y1, c.y2), c.s1.colwise().sum() + c.s2.colwise().sum()};
    }

    /// Algebraic inverse; the returned log|det| is that of the inverse map.
    FlowResult<Scalar> inverse(const Mat<Scalar>& y, CouplingCache<Scalar>* cache = nullptr) const {
        check_input(y);
        CouplingCache<Scalar> local;
        auto& c = cache ? *cache : local;
        c.y1 = y(first_, Eigen::all);
        c.y2 = y(second_, Eigen::all);
        c.s2_raw = s2_.forward(c.y2, c.s2_net);
        c.s2 = soft_clamp(c.s2_raw);
        const Mat<Scalar> t2 = t2_.forward(c.y2, c.t2_net);
        c.x1 = ((c.y1 - t2).array() * (-c.s2.array()).exp()).matrix();
        c.s1_raw = s1_.forward(c.x1, c.s1_net);
        c.s1 = soft_clamp(c.s1_raw);
        const Mat<Scalar> t1 = t1_.forward(c.x1, c.t1_net);
        c.x2 = ((c.y2 - t1).array() * (-c.s1.array()).exp()).matrix();
        return {merge(c.x1, c.x2), -(c.s1.colwise().sum() + c.s2.colwise().sum())};
    }

    /// Reverse-mode pass of forward(): given dL/dy and dL/dlogdet per column,
    /// returns dL/dx and, when Accumulate, adds parameter gradients.
    template <bool Accumulate = true>
    Mat<Scalar> backward_forward(const CouplingCache<Scalar>& c, const Mat<Scalar>& dy,
                                 const RowVec<Scalar>& dlogdet) {
        const Mat<Scalar> dy1 = dy(first_, Eigen::all);
        Mat<Scalar> dy2 = dy(second_, Eigen::all);
        const Mat<Scalar> e2 = c.s2.array().exp().matrix();
        Mat<Scalar> ds2 = (dy1.array() * c.x1.array() * e2.array()).matrix();
        ds2.rowwise() += dlogdet;
        Mat<Scalar> dx1 = (dy1.array() * e2.array()).matrix();
        dy2 += net_backward<Accumulate>(s2_, c.s2_net, clamp_grad(c.s2_raw, ds2));
        dy2 += net_backward<Accumulate>(t2_, c.t2_net, dy1);

        const Mat<Scalar> e1 = c.s1.array().exp().matrix();
        Mat<Scalar> ds1 = (dy2.array() * c.x2.array() * e1.array()).matrix();
        ds1.rowwise() += dlogdet;
        const Mat<Scalar> dx2 = (dy2.array() * e1.array()).matrix();
        dx1 += net_backward<Accumulate>(s1_, c.s1_net, clamp_grad(c.s1_raw, ds1));
        dx1 += net_backward<Accumulate>(t1_, c.t1_net, dy2);
        return merge(dx1, dx2);
    }

    /// Reverse-mode pass of inverse(): given dL/dx and dL/dlogdet_inverse,
    /// returns dL/dy.
    template <bool Accumulate = false>
    Mat<Scalar> backward_inverse(const CouplingCache<Scalar>& c, const Mat<Scalar>& dx,
                                 const RowVec<Scalar>& dlogdet) {
        Mat<Scalar> dx1 = dx(first_, Eigen::all);
        const Mat<Scalar> dx2 = dx(second_, Eigen::all);
        const Mat<Scalar> ei1 = (-c.s1.array()).exp().matrix();
        Mat<Scalar> dy2 = (dx2.array() * ei1.array()).matrix();
        Mat<Scalar> ds1 = (-(dx2.array() * c.x2.array())).matrix();
        ds1.rowwise() -= dlogdet;
        dx1 += net_backward<Accumulate>(s1_, c.s1_net, clamp_grad(c.s1_raw, ds1));
        dx1 -= net_backward<Accumulate>(t1_, c.t1_net, dy2);

        const Mat<Scalar> ei2 = (-c.s2.array()).exp().matrix();
        const Mat<Scalar> dy1 = (dx1.array() * ei2.array()).matrix();
        Mat<Scalar> ds2 = (-(dx1.array() * c.x1.array())).matrix();
        ds2.rowwise() -= dlogdet;
        dy2 += net_backward<Accumulate>(s2_, c.s2_net, clamp_grad(c.s2_raw, ds2));
        dy2 -= net_backward<Accumulate>(t2_, c.t2_net, dy1);
        return merge(dy1, dy2);
    }

    /// Forward-mode pass of inverse() at the recorded point.
    Mat<Scalar> jvp_inverse(const CouplingCache<Scalar>& c, const Mat<Scalar>& ty) const {
        const Mat<Scalar> ty1 = ty(first_, Eigen::all);
        const Mat<Scalar> ty2 = ty(second_, Eigen::all);
        const Mat<Scalar> ts2 = clamp_jvp(c.s2_raw, s2_.jvp(c.s2_net, ty2));
        const Mat<Scalar> tt2 = t2_.jvp(c.t2_net, ty2);
        const Mat<Scalar> tx1 =
            ((ty1 - tt2).array() * (-c.s2.array()).exp() - c.x1.array() * ts2.array()).matrix();
        const Mat<Scalar> ts1 = clamp_jvp(c.s1_raw, s1_.jvp(c.s1_net, tx1));
        const Mat<Scalar> tt1 = t1_.jvp(c.t1_net, tx1);
        const Mat<Scalar> tx2 =
            ((ty2 - tt1).array() * (-c.s1.array()).exp() - c.x2.array() * ts1.array()).matrix();
        return merge(tx1, tx2);
    }

    /// Forward-mode pass of forward() at the recorded point.
    Mat<Scalar> jvp_forward(const CouplingCache<Scalar>& c, const Mat<Scalar>& tx) const {
        const Mat<Scalar> tx1 = tx(first_, Eigen::all);
        const Mat<Scalar> tx2 = tx(second_, Eigen::all);
        const Mat<Scalar> ts1 = clamp_jvp(c.s1_raw, s1_.jvp(c.s1_net, tx1));
        const Mat<Scalar> tt1 = t1_.jvp(c.t1_net, tx1);
        const Mat<Scalar> ty2 =
            (tx2.array() * c.s1.array().exp() + c.x2.array() * c.s1.array().exp() * ts1.array() + tt1.array())
                .matrix();
        const Mat<Scalar> ts2 = clamp_jvp(c.s2_raw, s2_.jvp(c.s2_net, ty2));
        const Mat<Scalar> tt2 = t2_.jvp(c.t2_net, ty2);
        const Mat<Scalar> ty1 =
            (tx1.array() * c.s2.array().exp() + c.x1.array() * c.s2.array().exp() * ts2.array() + tt2.array())
                .matrix();
        return merge(ty1, ty2);
    }

    void zero_grad() {
        s1_.zero_grad();
        t1_.zero_grad();
        s2_.zero_grad();
        t2_.zero_grad();
    }

    void collect(const std::string& prefix, ParamList<Scalar>& out) {
        s1_.collect(prefix + ".s1", out);
        t1_.collect(prefix + ".t1", out);
        s2_.collect(prefix + ".s2", out);
        t2_.collect(prefix + ".t2", out);
    }

private:
    void check_input(const Mat<Scalar>& x) const {
        RGFLOW_REQUIRE(x.rows() == dim(), InvalidArgument, "coupling input dimension mismatch");
        RGFLOW_REQUIRE(x.allFinite(), NumericalOverflow, "non-finite input to coupling block");
    }

    Mat<Scalar> merge(const Mat<Scalar>& a, const Mat<Scalar>& b) const {
        Mat<Scalar> out(dim(), a.cols());
        out(first_, Eigen::all) = a;
        out(second_, Eigen::all) = b;
        return out;
    }

    Mat<Scalar> soft_clamp(const Mat<Scalar>& raw) const {
        return (clamp_ * (raw.array() / clamp_).tanh()).matrix();
    }
    Mat<Scalar> clamp_grad(const Mat<Scalar>& raw, const Mat<Scalar>& ds) const {
        return (ds.array() * (Scalar(1) - (raw.array() / clamp_).tanh().square())).matrix();
    }
    /// Tangent of the clamp; `t` may hold several column blocks per raw batch.
    Mat<Scalar> clamp_jvp(const Mat<Scalar>& raw, Mat<Scalar> t) const {
        const Index n = raw.cols();
        const Mat<Scalar> d = (Scalar(1) - (raw.array() / clamp_).tanh().square()).matrix();
        for (Index r = 0; n > 0 && r < t.cols() / n; ++r) t.middleCols(r * n, n).array() *= d.array();
        return t;
    }

    template <bool Accumulate>
    static Mat<Scalar> net_backward(ResNet<Scalar>& net, const ResNetCache<Scalar>& cache, const Mat<Scalar>& dy) {
        if constexpr (Accumulate)
            return net.backward(cache, dy);
        else
            return net.backward_input(cache, dy);
    }

    std::vector<int> first_, second_;
    Scalar clamp_ = Scalar(8);
    ResNet<Scalar> s1_, t1_, s2_, t2_;
};

template <typename Scalar>
using StackCache = std::vector<CouplingCache<Scalar>>;

/// Ordered composition of coupling blocks with alternating mask parity.
template <typename Scalar>
class BijectorStack {
public:
    BijectorStack() = default;

    static BijectorStack checkerboard(int n_blocks, int m, int C, const CouplingShape& shape) {
        BijectorStack stack;
        for (int k = 0; k < n_blocks; ++k)
            stack.blocks_.push_back(CouplingBlock<Scalar>::checkerboard({k % 2, m, C}, shape));
        return stack;
    }

    /// Two-variable stack; consecutive blocks swap which coordinate conditions.
    static BijectorStack two_dim(int n_blocks, const CouplingShape& shape) {
        BijectorStack stack;
        for (int k = 0; k < n_blocks; ++k)
            stack.blocks_.push_back(CouplingBlock<Scalar>({k % 2}, {1 - k % 2}, shape));
        return stack;
    }

    void init(Rng& rng) {
        for (auto& b : blocks_) b.init(rng);
    }

    bool empty() const { return blocks_.empty(); }
    std::size_t size() const { return blocks_.size(); }
    std::vector<CouplingBlock<Scalar>>& blocks() { return blocks_; }
    const std::vector<CouplingBlock<Scalar>>& blocks() const { return blocks_; }

    FlowResult<Scalar> forward(const Mat<Scalar>& x, StackCache<Scalar>* cache = nullptr) const {
        FlowResult<Scalar> r{x, RowVec<Scalar>::Zero(x.cols())};
        if (cache) cache->assign(blocks_.size(), {});
        for (std::size_t k = 0; k < blocks_.size(); ++k) {
            auto step = blocks_[k].forward(r.value, cache ? &(*cache)[k] : nullptr);
            r.value = std::move(step.value);
            r.logdet += step.logdet;
        }
        return r;
    }

    FlowResult<Scalar> inverse(const Mat<Scalar>& y, StackCache<Scalar>* cache = nullptr) const {
        FlowResult<Scalar> r{y, RowVec<Scalar>::Zero(y.cols())};
        if (cache) cache->assign(blocks_.size(), {});
        for (std::size_t k = blocks_.size(); k-- > 0;) {
            auto step = blocks_[k].inverse(r.value, cache ? &(*cache)[k] : nullptr);
            r.value = std::move(step.value);
            r.logdet += step.logdet;
        }
        return r;
    }

    template <bool Accumulate = true>
    Mat<Scalar> backward_forward(const StackCache<Scalar>& cache, Mat<Scalar> dy, const RowVec<Scalar>& dlogdet) {
        for (std::size_t k = blocks_.size(); k-- > 0;)
            dy = blocks_[k].template backward_forward<Accumulate>(cache[k], dy, dlogdet);
        return dy;
    }

    template <bool Accumulate = false>
    Mat<Scalar> backward_inverse(const StackCache<Scalar>& cache, Mat<Scalar> dx, const RowVec<Scalar>& dlogdet) {
        for (std::size_t k = 0; k < blocks_.size(); ++k)
            dx = blocks_[k].template backward_inverse<Accumulate>(cache[k], dx, dlogdet);
        return dx;
    }

    /// Inverse map and its forward-mode derivative in one sweep.
    std::pair<Mat<Scalar>, Mat<Scalar>> inverse_jvp(const Mat<Scalar>& y, Mat<Scalar> ty) const {
        Mat<Scalar> value = y;
        for (std::size_t k = blocks_.size(); k-- > 0;) {
            CouplingCache<Scalar> c;
            value = blocks_[k].inverse(value, &c).value;
            ty = blocks_[k].jvp_inverse(c, ty);
        }
        return {std::move(value), std::move(ty)};
    }

    std::pair<Mat<Scalar>, Mat<Scalar>> forward_jvp(const Mat<Scalar>& x, Mat<Scalar> tx) const {
        Mat<Scalar> value = x;
        for (std::size_t k = 0; k < blocks_.size(); ++k) {
            CouplingCache<Scalar> c;
            value = blocks_[k].forward(value, &c).value;
            tx = blocks_[k].jvp_forward(c, tx);
        }
        return {std::move(value), std::move(tx)};
    }

    void zero_grad() {
        for (auto& b : blocks_) b.zero_grad();
    }

    void collect(const std::string& prefix, ParamList<Scalar>& out) {
        for (std::size_t k = 0; k < blocks_.size(); ++k) blocks_[k].collect(prefix + ".block" + std::to_string(k), out);
    }

private:
    std::vector<CouplingBlock<Scalar>> blocks_;
};

}  // namespace rgflow

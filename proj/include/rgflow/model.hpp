#pragma once

// The hierarchical bijection. Each level h applies a stack of coupling blocks
// on m x m disentangler patches (shifted by m/2, periodic), then a stack on
// decimator patches; the decimator output at stride-2 sites is the next
// level's state and everything else is emitted as level-h latents. The top
// level has a decimator only and emits all of its variables.
//
// Batches are matrices whose columns are images. An image is flattened as
// (i * L + j) * C + c. A latent pyramid is flattened level-major, then
// row-major over the level's latent sites, then channel.

#include "rgflow/checkpoint.hpp"
#include "rgflow/coupling.hpp"
#include "rgflow/lattice.hpp"
#include "rgflow/prior.hpp"

#include "json.hpp"

#include <cmath>
#include <filesystem>
#include <utility>
#include <vector>

namespace rgflow {

struct ModelConfig {
    int L = 32;
    int m = 4;
    int C = 3;
    /// RNVP blocks per level, low to high; one entry is broadcast. Empty means
    /// (8, 6, 4, 2) on four-level lattices and 4 everywhere otherwise.
    std::vector<int> n_layer;
    int n_res = 4;
    int hidden = 512;
    double clamp = 8.0;
    Prior prior;
    /// Levels below the top reuse one disentangler and one decimator stack.
    bool share_levels = false;

    LatticeSpec lattice() const { return LatticeSpec::make(L, m, C); }
    std::vector<int> resolved_layers() const;
    CouplingShape coupling_shape() const { return {hidden, n_res, clamp}; }

    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
};

/// Per-level temperatures for sampling from p^(1/T_h).
struct TemperatureSchedule {
    std::vector<double> per_level;

    static TemperatureSchedule uniform(int levels, double t) { return {std::vector<double>(std::size_t(levels), t)}; }
    double at(int h) const { return per_level.at(std::size_t(h)); }
};

template <typename Scalar>
struct LevelCache {
    StackCache<Scalar> dis;
    StackCache<Scalar> dec;
};

template <typename Scalar>
using FlowCache = std::vector<LevelCache<Scalar>>;

template <typename Scalar>
struct StepOutput {
    Mat<Scalar> next;     ///< x^(h+1), level_size(h+1) x B (empty at the top)
    Mat<Scalar> latents;  ///< z^(h), latent_count(h) x B
    RowVec<Scalar> logdet;
};

template <typename Scalar>
class RgFlow {
public:
    explicit RgFlow(const ModelConfig& cfg) : cfg_(cfg), lattice_(cfg.lattice()) {
        const auto layers = cfg_.resolved_layers();
        const auto shape = cfg_.coupling_shape();
        const int top = lattice_.top_level();
        const int stacks = cfg_.share_levels ? std::min(top, 1) : top;
        for (int s = 0; s < stacks; ++s) {
            const int n = layers[std::size_t(s)];
            dis_.push_back(BijectorStack<Scalar>::checkerboard(n / 2, cfg_.m, cfg_.C, shape));
            dec_.push_back(BijectorStack<Scalar>::checkerboard(n - n / 2, cfg_.m, cfg_.C, shape));
        }
        top_dec_ = BijectorStack<Scalar>::checkerboard(layers.back(), cfg_.m, cfg_.C, shape);
    }

    const ModelConfig& config() const { return cfg_; }
    const Lattice& lattice() const { return lattice_; }
    const LatticeSpec& spec() const { return lattice_.spec(); }
    const Prior& prior() const { return cfg_.prior; }
    Index dim() const { return spec().total_size(); }

    /// Identity-initialized model (every coupling block starts as the identity).
    void init(Rng& rng) {
        for (auto& s : dis_) s.init(rng);
        for (auto& s : dec_) s.init(rng);
        top_dec_.init(rng);
    }
    void init(unsigned long long seed) {
        Rng rng(seed);
        init(rng);
    }

    const BijectorStack<Scalar>& disentangler(int h) const { return dis_[stack_index(h)]; }
    const BijectorStack<Scalar>& decimator(int h) const {
        return h == lattice_.top_level() ? top_dec_ : dec_[stack_index(h)];
    }

    /// All parameters; `lr_scale` is left at 1, group names start with "level<h>".
    ParamList<Scalar> parameters() {
        ParamList<Scalar> out;
        for (std::size_t s = 0; s < dis_.size(); ++s) {
            const std::string prefix = cfg_.share_levels ? "shared" : "level" + std::to_string(s);
            dis_[s].collect(prefix + ".dis", out);
            dec_[s].collect(prefix + ".dec", out);
        }
        top_dec_.collect("level" + std::to_string(lattice_.top_level()) + ".dec", out);
        return out;
    }

    void zero_grad() {
        for (auto& s : dis_) s.zero_grad();
        for (auto& s : dec_) s.zero_grad();
        top_dec_.zero_grad();
    }

    // ---- one RG step -------------------------------------------------------

    StepOutput<Scalar> rg_step_forward(int h, const Mat<Scalar>& x, LevelCache<Scalar>* cache = nullptr) const {
        check_level(h);
        RGFLOW_REQUIRE(x.rows() == spec().level_size(h), InvalidArgument, "level state shape mismatch");
        const Index batch = x.cols();
        RowVec<Scalar> logdet = RowVec<Scalar>::Zero(batch);
        Mat<Scalar> y;
        if (h < lattice_.top_level()) {
            const auto& pos = lattice_.block_positions(h, BlockRole::disentangler);
            auto r = disentangler(h).forward(gather(x, pos), cache ? &cache->dis : nullptr);
            logdet += per_image(r.logdet, batch);
            y = scatter(r.value, pos, x.rows(), batch);
        } else {
            y = x;
        }
        const auto& pos = lattice_.block_positions(h, BlockRole::decimator);
        auto r = decimator(h).forward(gather(y, pos), cache ? &cache->dec : nullptr);
        logdet += per_image(r.logdet, batch);
        const Mat<Scalar> merged = scatter(r.value, pos, y.rows(), batch);
        return {select_sites(merged, kept_sites(h)), select_sites(merged, lattice_.latent_positions(h)),
                std::move(logdet)};
    }

    FlowResult<Scalar> rg_step_inverse(int h, const Mat<Scalar>& next, const Mat<Scalar>& latents,
                                       LevelCache<Scalar>* cache = nullptr) const {
        check_level(h);
        RGFLOW_REQUIRE(latents.rows() == lattice_.latent_count(h), InvalidArgument, "latent shape mismatch");
        RGFLOW_REQUIRE(next.rows() == next_size(h), InvalidArgument, "coarse state shape mismatch");
        const Index batch = latents.cols();
        RGFLOW_REQUIRE(next.cols() == batch || next_size(h) == 0, InvalidArgument, "batch size mismatch");
        const Mat<Scalar> merged = merge_sites(h, next, latents);
        RowVec<Scalar> logdet = RowVec<Scalar>::Zero(batch);
        const auto& dec_pos = lattice_.block_positions(h, BlockRole::decimator);
        auto r = decimator(h).inverse(gather(merged, dec_pos), cache ? &cache->dec : nullptr);
        logdet += per_image(r.logdet, batch);
        Mat<Scalar> y = scatter(r.value, dec_pos, merged.rows(), batch);
        if (h == lattice_.top_level()) return {std::move(y), std::move(logdet)};
        const auto& dis_pos = lattice_.block_positions(h, BlockRole::disentangler);
        auto d = disentangler(h).inverse(gather(y, dis_pos), cache ? &cache->dis : nullptr);
        logdet += per_image(d.logdet, batch);
        return {scatter(d.value, dis_pos, y.rows(), batch), std::move(logdet)};
    }

    // ---- full bijection ----------------------------------------------------

    /// R(x): returns the flat latent pyramid and log|det dR/dx| per image.
    FlowResult<Scalar> encode(const Mat<Scalar>& x, FlowCache<Scalar>* cache = nullptr) const {
        RGFLOW_REQUIRE(x.rows() == dim(), InvalidArgument, "image shape mismatch");
        RGFLOW_REQUIRE(x.allFinite(), NumericalOverflow, "non-finite image");
        if (cache) cache->assign(std::size_t(lattice_.num_levels()), {});
        FlowResult<Scalar> out{Mat<Scalar>(dim(), x.cols()), RowVec<Scalar>::Zero(x.cols())};
        Mat<Scalar> state = x;
        for (int h = 0; h <= lattice_.top_level(); ++h) {
            auto step = rg_step_forward(h, state, cache ? &(*cache)[std::size_t(h)] : nullptr);
            out.value.middleRows(lattice_.latent_offset(h), step.latents.rows()) = step.latents;
            out.logdet += step.logdet;
            state = std::move(step.next);
        }
        return out;
    }

    /// G(z): returns the image and log|det dG/dz| per image.
    FlowResult<Scalar> decode(const Mat<Scalar>& z, FlowCache<Scalar>* cache = nullptr) const {
        RGFLOW_REQUIRE(z.rows() == dim(), InvalidArgument, "latent shape mismatch");
        if (cache) cache->assign(std::size_t(lattice_.num_levels()), {});
        RowVec<Scalar> logdet = RowVec<Scalar>::Zero(z.cols());
        Mat<Scalar> state(0, z.cols());
        for (int h = lattice_.top_level(); h >= 0; --h) {
            auto r = rg_step_inverse(h, state, level_latents(z, h), cache ? &(*cache)[std::size_t(h)] : nullptr);
            state = std::move(r.value);
            logdet += r.logdet;
        }
        return {std::move(state), std::move(logdet)};
    }

    /// Slice of a flat latent pyramid belonging to level h.
    Mat<Scalar> level_latents(const Mat<Scalar>& z, int h) const {
        return z.middleRows(lattice_.latent_offset(h), lattice_.latent_count(h));
    }

    /// log p(x) = log p_Z(R(x)) + log|det dR/dx| per image.
    RowVec<Scalar> log_prob(const Mat<Scalar>& x) const {
        auto r = encode(x);
        RowVec<Scalar> lp = cfg_.prior.log_prob(r.value) + r.logdet;
        RGFLOW_REQUIRE(lp.allFinite(), NumericalOverflow, "non-finite log-likelihood");
        return lp;
    }

    /// Negative mean log-likelihood of the batch; accumulates parameter
    /// gradients. If `input_grad` is given it receives dLoss/dx.
    double loss_and_backward(const Mat<Scalar>& x, Mat<Scalar>* input_grad = nullptr) {
        FlowCache<Scalar> cache;
        auto r = encode(x, &cache);
        const RowVec<Scalar> lp = cfg_.prior.log_prob(r.value) + r.logdet;
        const double loss = -double(lp.template cast<double>().mean());
        if (!std::isfinite(loss)) throw TrainingDiverged("non-finite loss");
        const Scalar w = Scalar(-1.0 / double(x.cols()));
        Mat<Scalar> dx = encode_backward<true>(cache, (w * cfg_.prior.grad_log_prob(r.value).array()).matrix(),
                                              RowVec<Scalar>::Constant(x.cols(), w));
        if (input_grad) *input_grad = std::move(dx);
        return loss;
    }

    /// d log p(x) / dx per image; parameters are not touched.
    Mat<Scalar> log_prob_input_grad(const Mat<Scalar>& x, RowVec<Scalar>* log_prob_out = nullptr) const {
        FlowCache<Scalar> cache;
        auto r = encode(x, &cache);
        if (log_prob_out) *log_prob_out = cfg_.prior.log_prob(r.value) + r.logdet;
        auto* self = const_cast<RgFlow*>(this);
        return self->template encode_backward<false>(cache, cfg_.prior.grad_log_prob(r.value),
                                                     RowVec<Scalar>::Ones(x.cols()));
    }

    /// Vector-Jacobian product through G: returns J_G(z)^T dx per column.
    Mat<Scalar> decode_vjp(const Mat<Scalar>& z, const Mat<Scalar>& dx, Mat<Scalar>* image = nullptr) const {
        FlowCache<Scalar> cache;
        auto r = decode(z, &cache);
        if (image) *image = r.value;
        RGFLOW_REQUIRE(dx.rows() == dim() && dx.cols() == z.cols(), InvalidArgument, "cotangent shape mismatch");
        auto* self = const_cast<RgFlow*>(this);
        Mat<Scalar> dz(dim(), z.cols());
        Mat<Scalar> d_state = dx;
        for (int h = 0; h <= lattice_.top_level(); ++h) {
            const auto& lc = cache[std::size_t(h)];
            const Index batch = z.cols();
            const RowVec<Scalar> none = RowVec<Scalar>::Zero(batch * lattice_.num_blocks(h));
            Mat<Scalar> dy = d_state;
            if (h < lattice_.top_level()) {
                const auto& pos = lattice_.block_positions(h, BlockRole::disentangler);
                dy = scatter(self->dis_stack(h).template backward_inverse<false>(lc.dis, gather(d_state, pos), none),
                             pos, d_state.rows(), batch);
            }
            const auto& pos = lattice_.block_positions(h, BlockRole::decimator);
            const Mat<Scalar> dmerged = scatter(
                self->dec_stack(h).template backward_inverse<false>(lc.dec, gather(dy, pos), none), pos,
                dy.rows(), batch);
            dz.middleRows(lattice_.latent_offset(h), lattice_.latent_count(h)) =
                select_sites(dmerged, lattice_.latent_positions(h));
            d_state = select_sites(dmerged, kept_sites(h));
        }
        return dz;
    }

    /// Forward-mode derivative of G at a single latent vector z for k tangent
    /// directions (columns of `tangents`). Patches whose tangent is exactly
    /// zero are skipped, so sparse seeds cost only their causal cone.
    std::pair<Vec<Scalar>, Mat<Scalar>> decode_jvp(const Vec<Scalar>& z, const Mat<Scalar>& tangents) const {
        RGFLOW_REQUIRE(z.size() == dim() && tangents.rows() == dim(), InvalidArgument, "jvp shape mismatch");
        const int top = lattice_.top_level();
        const Index k = tangents.cols();
        // primal pass, remembering the merged state and the decimator output
        std::vector<Mat<Scalar>> merged_at(std::size_t(top + 1)), dec_out_at(std::size_t(top + 1));
        Mat<Scalar> state(0, 1);
        for (int h = top; h >= 0; --h) {
            merged_at[std::size_t(h)] = merge_sites(h, state, level_latents(z, h));
            const auto& dec_pos = lattice_.block_positions(h, BlockRole::decimator);
            const Mat<Scalar>& merged = merged_at[std::size_t(h)];
            dec_out_at[std::size_t(h)] =
                scatter(decimator(h).inverse(gather(merged, dec_pos)).value, dec_pos, merged.rows(), 1);
            if (h == top) {
                state = dec_out_at[std::size_t(h)];
            } else {
                const auto& dis_pos = lattice_.block_positions(h, BlockRole::disentangler);
                const Mat<Scalar>& y = dec_out_at[std::size_t(h)];
                state = scatter(disentangler(h).inverse(gather(y, dis_pos)).value, dis_pos, y.rows(), 1);
            }
        }
        const Vec<Scalar> image = state;

        Mat<Scalar> t_state(0, k);
        for (int h = top; h >= 0; --h) {
            const Mat<Scalar> t_merged = merge_sites(h, t_state, level_latents(tangents, h));
            Mat<Scalar> t_y = sparse_inverse_jvp(decimator(h), merged_at[std::size_t(h)], t_merged,
                                                 lattice_.block_positions(h, BlockRole::decimator));
            if (h < top)
                t_y = sparse_inverse_jvp(disentangler(h), dec_out_at[std::size_t(h)], t_y,
                                         lattice_.block_positions(h, BlockRole::disentangler));
            t_state = std::move(t_y);
        }
        return {image, std::move(t_state)};
    }

    /// Draws latents from the tempered prior and decodes them.
    Mat<Scalar> sample(const TemperatureSchedule& temps, Index n, unsigned long long seed,
                       Mat<Scalar>* latents_out = nullptr) const {
        const Mat<Scalar> z = sample_latents(temps, n, seed);
        if (latents_out) *latents_out = z;
        return decode(z).value;
    }

    Mat<Scalar> sample_latents(const TemperatureSchedule& temps, Index n, unsigned long long seed) const {
        RGFLOW_REQUIRE(int(temps.per_level.size()) == lattice_.num_levels(), InvalidArgument,
                       "temperature schedule needs one entry per level");
        for (double t : temps.per_level) RGFLOW_REQUIRE(t > 0, InvalidArgument, "temperatures must be positive");
        Rng rng(seed);
        Mat<Scalar> z(dim(), n);
        for (Index col = 0; col < n; ++col)
            for (int h = 0; h <= lattice_.top_level(); ++h)
                for (Index r = 0; r < lattice_.latent_count(h); ++r)
                    z(lattice_.latent_offset(h) + r, col) = Scalar(cfg_.prior.draw(rng, temps.at(h)));
        return z;
    }

    // ---- persistence -------------------------------------------------------

    Checkpoint to_checkpoint() {
        Checkpoint ckpt;
        ckpt.meta["model"] = cfg_.to_json();
        store_params(ckpt, parameters());
        return ckpt;
    }

    static RgFlow from_checkpoint(const Checkpoint& ckpt) {
        RgFlow model(ModelConfig::from_json(ckpt.meta.at("model")));
        load_params(ckpt, model.parameters());
        return model;
    }

    void save(const std::filesystem::path& path) { write_checkpoint(path, to_checkpoint()); }
    static RgFlow load(const std::filesystem::path& path) { return from_checkpoint(read_checkpoint(path)); }

private:
    std::size_t stack_index(int h) const { return cfg_.share_levels ? 0 : std::size_t(h); }
    BijectorStack<Scalar>& dis_stack(int h) { return dis_[stack_index(h)]; }
    BijectorStack<Scalar>& dec_stack(int h) { return h == lattice_.top_level() ? top_dec_ : dec_[stack_index(h)]; }

    void check_level(int h) const {
        RGFLOW_REQUIRE(h >= 0 && h <= lattice_.top_level(), InvalidArgument, "level out of range");
    }

    Index next_size(int h) const { return h == lattice_.top_level() ? 0 : spec().level_size(h + 1); }

    const std::vector<int>& kept_sites(int h) const { return lattice_.kept_positions(h); }

    /// Patches (m*m*C rows) for every (image, block); column = image * blocks + block.
    Mat<Scalar> gather(const Mat<Scalar>& state, const std::vector<int>& pos) const {
        const Index c = cfg_.C;
        const Index per_block = Index(cfg_.m) * cfg_.m;
        const Index blocks = Index(pos.size()) / per_block;
        Mat<Scalar> out(per_block * c, state.cols() * blocks);
        for (Index b = 0; b < state.cols(); ++b)
            for (Index k = 0; k < blocks; ++k)
                for (Index t = 0; t < per_block; ++t)
                    out.col(b * blocks + k).segment(t * c, c) =
                        state.col(b).segment(Index(pos[std::size_t(k * per_block + t)]) * c, c);
        return out;
    }

    Mat<Scalar> scatter(const Mat<Scalar>& patches, const std::vector<int>& pos, Index rows, Index batch) const {
        const Index c = cfg_.C;
        const Index per_block = Index(cfg_.m) * cfg_.m;
        const Index blocks = Index(pos.size()) / per_block;
        Mat<Scalar> out(rows, batch);
        for (Index b = 0; b < batch; ++b)
            for (Index k = 0; k < blocks; ++k)
                for (Index t = 0; t < per_block; ++t)
                    out.col(b).segment(Index(pos[std::size_t(k * per_block + t)]) * c, c) =
                        patches.col(b * blocks + k).segment(t * c, c);
        return out;
    }

    /// Per-column (image, block) values summed to one value per image.
    RowVec<Scalar> per_image(const RowVec<Scalar>& per_patch, Index batch) const {
        const Index blocks = batch > 0 ? per_patch.size() / batch : 0;
        RowVec<Scalar> out(batch);
        for (Index b = 0; b < batch; ++b) out(b) = per_patch.segment(b * blocks, blocks).sum();
        return out;
    }

    Mat<Scalar> select_sites(const Mat<Scalar>& state, const std::vector<int>& sites) const {
        const Index c = cfg_.C;
        Mat<Scalar> out(Index(sites.size()) * c, state.cols());
        for (std::size_t r = 0; r < sites.size(); ++r)
            out.middleRows(Index(r) * c, c) = state.middleRows(Index(sites[r]) * c, c);
        return out;
    }

    Mat<Scalar> merge_sites(int h, const Mat<Scalar>& next, const Mat<Scalar>& latents) const {
        const Index c = cfg_.C;
        Mat<Scalar> merged(spec().level_size(h), latents.cols());
        const auto& kept = kept_sites(h);
        for (std::size_t r = 0; r < kept.size(); ++r)
            merged.middleRows(Index(kept[r]) * c, c) = next.middleRows(Index(r) * c, c);
        const auto& lat = lattice_.latent_positions(h);
        for (std::size_t r = 0; r < lat.size(); ++r)
            merged.middleRows(Index(lat[r]) * c, c) = latents.middleRows(Index(r) * c, c);
        return merged;
    }

    template <bool Accumulate>
    Mat<Scalar> encode_backward(const FlowCache<Scalar>& cache, const Mat<Scalar>& dz, const RowVec<Scalar>& dlogdet) {
        const Index batch = dz.cols();
        Mat<Scalar> d_next(0, batch);
        for (int h = lattice_.top_level(); h >= 0; --h) {
            const auto& lc = cache[std::size_t(h)];
            const Mat<Scalar> dmerged = merge_sites(h, d_next, level_latents(dz, h));
            const Index blocks = lattice_.num_blocks(h);
            RowVec<Scalar> dld(batch * blocks);
            for (Index b = 0; b < batch; ++b) dld.segment(b * blocks, blocks).setConstant(dlogdet(b));
            const auto& dec_pos = lattice_.block_positions(h, BlockRole::decimator);
            Mat<Scalar> dy = scatter(dec_stack(h).template backward_forward<Accumulate>(lc.dec, gather(dmerged, dec_pos), dld),
                                     dec_pos, dmerged.rows(), batch);
            if (h < lattice_.top_level()) {
                const auto& dis_pos = lattice_.block_positions(h, BlockRole::disentangler);
                dy = scatter(dis_stack(h).template backward_forward<Accumulate>(lc.dis, gather(dy, dis_pos), dld),
                             dis_pos, dy.rows(), batch);
            }
            d_next = std::move(dy);
        }
        return d_next;
    }

    /// Tangent propagation through an inverse stack, only on patches with a
    /// nonzero tangent. `primal` is the single-image input state of the stack;
    /// `tangent` holds one column per direction.
    Mat<Scalar> sparse_inverse_jvp(const BijectorStack<Scalar>& stack, const Mat<Scalar>& primal,
                                   const Mat<Scalar>& tangent, const std::vector<int>& pos) const {
        const Mat<Scalar> p = gather(primal, pos);  // D x blocks
        const Mat<Scalar> t = gather(tangent, pos);  // D x (k * blocks)
        const Index blocks = p.cols();
        std::vector<Index> active;
        for (Index col = 0; col < t.cols(); ++col)
            if (!t.col(col).isZero(0)) active.push_back(col);
        Mat<Scalar> t_out = Mat<Scalar>::Zero(t.rows(), t.cols());
        if (!active.empty()) {
            Mat<Scalar> p_sel(p.rows(), Index(active.size()));
            Mat<Scalar> t_sel(t.rows(), Index(active.size()));
            for (std::size_t a = 0; a < active.size(); ++a) {
                p_sel.col(Index(a)) = p.col(active[a] % blocks);
                t_sel.col(Index(a)) = t.col(active[a]);
            }
            const auto [value, t_res] = stack.inverse_jvp(p_sel, t_sel);
            for (std::size_t a = 0; a < active.size(); ++a) t_out.col(active[a]) = t_res.col(Index(a));
        }
        return scatter(t_out, pos, tangent.rows(), tangent.cols());
    }

    ModelConfig cfg_;
    Lattice lattice_;
    std::vector<BijectorStack<Scalar>> dis_;
    std::vector<BijectorStack<Scalar>> dec_;
    BijectorStack<Scalar> top_dec_;
};

/// Two-variable flow used for the pinwheel experiment.
template <typename Scalar>
class FlatFlow2d {
public:
    FlatFlow2d(int n_blocks, const CouplingShape& shape, Prior prior) : prior_(prior) {
        RGFLOW_REQUIRE(n_blocks >= 1, InvalidArgument, "n_blocks must be >= 1");
        stack_ = BijectorStack<Scalar>::two_dim(n_blocks, shape);
    }

    void init(Rng& rng) { stack_.init(rng); }
    const Prior& prior() const { return prior_; }
    const BijectorStack<Scalar>& stack() const { return stack_; }

    /// Data (2 x N) to latents.
    FlowResult<Scalar> encode(const Mat<Scalar>& x) const { return stack_.forward(x); }
    FlowResult<Scalar> decode(const Mat<Scalar>& z) const { return stack_.inverse(z); }

    RowVec<Scalar> log_prob(const Mat<Scalar>& x) const {
        auto r = stack_.forward(x);
        return prior_.log_prob(r.value) + r.logdet;
    }

    double loss_and_backward(const Mat<Scalar>& x) {
        StackCache<Scalar> cache;
        auto r = stack_.forward(x, &cache);
        const double loss = -double((prior_.log_prob(r.value) + r.logdet).template cast<double>().mean());
        if (!std::isfinite(loss)) throw TrainingDiverged("non-finite loss");
        const Scalar w = Scalar(-1.0 / double(x.cols()));
        stack_.template backward_forward<true>(cache, (w * prior_.grad_log_prob(r.value).array()).matrix(),
                                               RowVec<Scalar>::Constant(x.cols(), w));
        return loss;
    }

    Mat<Scalar> sample_latents(Index n, unsigned long long seed, double temperature = 1.0) const {
        Rng rng(seed);
        Mat<Scalar> z(2, n);
        for (Index k = 0; k < n; ++k)
            for (Index d = 0; d < 2; ++d) z(d, k) = Scalar(prior_.draw(rng, temperature));
        return z;
    }

    ParamList<Scalar> parameters() {
        ParamList<Scalar> out;
        stack_.collect("flat", out);
        return out;
    }
    void zero_grad() { stack_.zero_grad(); }

private:
    Prior prior_;
    BijectorStack<Scalar> stack_;
};

}  // namespace rgflow

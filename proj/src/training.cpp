#include "rgflow/training.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>
#include <ostream>

namespace rgflow {

void TrainConfig::validate() const {
    RGFLOW_REQUIRE(batch_size > 0, InvalidArgument, "batch size must be positive");
    RGFLOW_REQUIRE(lr > 0, InvalidArgument, "learning rate must be positive");
    RGFLOW_REQUIRE(weight_decay >= 0, InvalidArgument, "weight decay must be non-negative");
    RGFLOW_REQUIRE(clip_norm >= 0, InvalidArgument, "clip norm must be non-negative");
    RGFLOW_REQUIRE(steps >= 0, InvalidArgument, "steps must be non-negative");
    RGFLOW_REQUIRE(eval_every >= 0 && checkpoint_every >= 0 && log_every >= 1, InvalidArgument,
                   "intervals must be non-negative (log interval >= 1)");
    for (double s : level_lr_scale) RGFLOW_REQUIRE(s > 0, InvalidArgument, "level lr multipliers must be positive");
    RGFLOW_REQUIRE(alpha > 0 && alpha < 0.5, InvalidArgument, "alpha must be in (0, 0.5)");
}

AdamWConfig TrainConfig::optimizer() const {
    AdamWConfig c;
    c.lr = lr;
    c.weight_decay = weight_decay;
    c.clip_norm = clip_norm;
    return c;
}

nlohmann::json TrainConfig::to_json() const {
    return {{"batch_size", batch_size},
            {"lr", lr},
            {"weight_decay", weight_decay},
            {"clip_norm", clip_norm},
            {"steps", steps},
            {"seed", seed},
            {"eval_every", eval_every},
            {"checkpoint_every", checkpoint_every},
            {"log_every", log_every},
            {"level_lr_scale", level_lr_scale},
            {"alpha", alpha}};
}

void TrainConfig::update_from_json(const nlohmann::json& j) {
    batch_size = j.value("batch_size", batch_size);
    lr = j.value("lr", lr);
    weight_decay = j.value("weight_decay", weight_decay);
    clip_norm = j.value("clip_norm", clip_norm);
    steps = j.value("steps", steps);
    seed = j.value("seed", seed);
    eval_every = j.value("eval_every", eval_every);
    checkpoint_every = j.value("checkpoint_every", checkpoint_every);
    log_every = j.value("log_every", log_every);
    level_lr_scale = j.value("level_lr_scale", level_lr_scale);
    alpha = j.value("alpha", alpha);
}

nlohmann::json TrainRecord::to_json() const {
    nlohmann::json j = {{"step", step}, {"loss", loss}, {"bpd", bpd}, {"grad_norm", grad_norm}, {"seconds", seconds}};
    if (eval_bpd) j["eval_bpd"] = *eval_bpd;
    return j;
}

void TrainLog::append(const TrainRecord& rec) {
    RGFLOW_REQUIRE(records_.empty() || rec.step > records_.back().step, InvalidArgument,
                   "log steps must increase");
    records_.push_back(rec);
}

double TrainLog::mean_loss(std::size_t first, std::size_t count) const {
    RGFLOW_REQUIRE(count > 0 && first + count <= records_.size(), InvalidArgument, "log window out of range");
    double s = 0;
    for (std::size_t k = first; k < first + count; ++k) s += records_[k].loss;
    return s / double(count);
}

void TrainLog::write_jsonl(std::ostream& out) const {
    for (const auto& r : records_) out << r.to_json().dump() << '\n';
}

template <typename Scalar>
EvalResult evaluate(const RgFlow<Scalar>& model, const Dataset& data, unsigned long long seed, double alpha,
                    Index batch_size) {
    RGFLOW_REQUIRE(data.dim() == model.dim(), InvalidArgument, "dataset does not match the model lattice");
    Preprocessor pre{alpha};
    Rng rng(seed);
    const double bpd = bits_per_dim<Scalar>([&](const Mat<Scalar>& x) { return model.log_prob(x); }, data.pixels,
                                            pre, rng, batch_size);
    return {bpd * double(data.dim()) * std::numbers::ln2, bpd};
}

template <typename Scalar>
Trainer<Scalar>::Trainer(RgFlow<Scalar>& model, const Dataset& data, TrainConfig cfg)
    : model_(model), data_(data), cfg_(std::move(cfg)) {
    cfg_.validate();
    RGFLOW_REQUIRE(data_.dim() == model_.dim(), InvalidArgument, "dataset does not match the model lattice");
    RGFLOW_REQUIRE(data_.size() > 0, InvalidArgument, "empty training set");
    params_ = model_.parameters();
    assign_lr_scales();
    opt_ = AdamW<Scalar>(cfg_.optimizer());
    pre_.alpha = cfg_.alpha;
}

template <typename Scalar>
void Trainer<Scalar>::assign_lr_scales() {
    for (auto& p : params_) {
        int level = 0;
        if (p.name.rfind("level", 0) == 0) level = std::stoi(p.name.substr(5));
        p.lr_scale = std::size_t(level) < cfg_.level_lr_scale.size() ? cfg_.level_lr_scale[std::size_t(level)] : 1.0;
    }
}

template <typename Scalar>
std::vector<Index> Trainer<Scalar>::batch_indices(long step) {
    const Index n = data_.size();
    std::vector<Index> out(std::size_t(cfg_.batch_size));
    for (Index t = 0; t < cfg_.batch_size; ++t) {
        const long long k = (long long)step * cfg_.batch_size + t;
        const long epoch = long(k / n);
        if (epoch != cached_epoch_) {
            perm_.resize(std::size_t(n));
            std::iota(perm_.begin(), perm_.end(), Index(0));
            std::seed_seq seq{std::uint64_t(cfg_.seed), std::uint64_t(epoch), std::uint64_t(1)};
            Rng rng(seq);
            std::shuffle(perm_.begin(), perm_.end(), rng);
            cached_epoch_ = epoch;
        }
        out[std::size_t(t)] = perm_[std::size_t(k % n)];
    }
    return out;
}

template <typename Scalar>
TrainRecord Trainer<Scalar>::step() {
    const auto start = std::chrono::steady_clock::now();
    const auto idx = batch_indices(step_);
    Pixels batch(data_.dim(), Index(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) batch.col(Index(k)) = data_.pixels.col(idx[k]);
    std::seed_seq seq{std::uint64_t(cfg_.seed), std::uint64_t(step_), std::uint64_t(2)};
    Rng rng(seq);
    RowVec<Scalar> pre_logdet;
    const Mat<Scalar> x = pre_.forward<Scalar>(batch, rng, &pre_logdet);

    model_.zero_grad();
    const double loss = model_.loss_and_backward(x);
    const double norm = opt_.step(params_);
    ++step_;
    elapsed_ += std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    TrainRecord rec;
    rec.step = step_;
    rec.loss = loss;
    rec.bpd = (loss - double(pre_logdet.template cast<double>().mean())) / (double(data_.dim()) * std::numbers::ln2);
    rec.grad_norm = norm;
    rec.seconds = elapsed_;
    return rec;
}

template <typename Scalar>
const TrainLog& Trainer<Scalar>::run(const TrainHooks& hooks) {
    const bool checkpoints = !hooks.checkpoint_path.empty();
    while (step_ < cfg_.steps) {
        TrainRecord rec;
        try {
            rec = step();
        } catch (const TrainingDiverged& e) {
            std::string msg = std::string(e.what()) + " at step " + std::to_string(step_ + 1);
            if (checkpoints && std::filesystem::exists(hooks.checkpoint_path))
                msg += "; last good checkpoint: " + hooks.checkpoint_path.string();
            throw TrainingDiverged(msg);
        }
        if (hooks.eval_data && cfg_.eval_every > 0 && step_ % cfg_.eval_every == 0)
            rec.eval_bpd = evaluate(model_, *hooks.eval_data, cfg_.seed).bpd;
        const bool logged = step_ % cfg_.log_every == 0 || step_ == cfg_.steps || rec.eval_bpd;
        if (logged) {
            log_.append(rec);
            if (hooks.log_stream) *hooks.log_stream << rec.to_json().dump() << std::endl;
        }
        if (hooks.on_record) hooks.on_record(rec);
        if (checkpoints && cfg_.checkpoint_every > 0 && step_ % cfg_.checkpoint_every == 0)
            write_checkpoint(hooks.checkpoint_path, state());
    }
    if (checkpoints) write_checkpoint(hooks.checkpoint_path, state());
    return log_;
}

template <typename Scalar>
Checkpoint Trainer<Scalar>::state() {
    Checkpoint ckpt = model_.to_checkpoint();
    if (!opt_.first_moment().empty()) {
        ParamList<Scalar> m1, m2;
        for (std::size_t k = 0; k < params_.size(); ++k) {
            auto& a = opt_.first_moment()[k];
            auto& b = opt_.second_moment()[k];
            m1.push_back({params_[k].name, params_[k].shape, a.data(), nullptr, a.size()});
            m2.push_back({params_[k].name, params_[k].shape, b.data(), nullptr, b.size()});
        }
        store_params(ckpt, m1, "adam.m.");
        store_params(ckpt, m2, "adam.v.");
    }
    ckpt.meta["train"] = {{"config", cfg_.to_json()}, {"step", step_}, {"seconds", elapsed_},
                          {"optimizer_steps", opt_.steps()}};
    return ckpt;
}

template <typename Scalar>
void Trainer<Scalar>::restore(const Checkpoint& ckpt) {
    load_params(ckpt, params_);
    step_ = 0;
    elapsed_ = 0;
    opt_ = AdamW<Scalar>(cfg_.optimizer());
    if (!ckpt.meta.contains("train")) return;
    const auto& t = ckpt.meta.at("train");
    step_ = t.at("step").get<long>();
    elapsed_ = t.value("seconds", 0.0);
    if (ckpt.find("adam.m." + params_.front().name)) {
        auto& m1 = opt_.first_moment();
        auto& m2 = opt_.second_moment();
        ParamList<Scalar> r1, r2;
        for (const auto& p : params_) {
            m1.push_back(Vec<Scalar>::Zero(p.size));
            m2.push_back(Vec<Scalar>::Zero(p.size));
        }
        for (std::size_t k = 0; k < params_.size(); ++k) {
            r1.push_back({params_[k].name, params_[k].shape, m1[k].data(), nullptr, m1[k].size()});
            r2.push_back({params_[k].name, params_[k].shape, m2[k].data(), nullptr, m2[k].size()});
        }
        load_params(ckpt, r1, "adam.m.");
        load_params(ckpt, r2, "adam.v.");
        opt_.set_steps(t.at("optimizer_steps").get<long>());
    }
}

template <typename Scalar>
TrainLog train_flat(FlatFlow2d<Scalar>& flow, const Mat<double>& points, const TrainConfig& cfg) {
    cfg.validate();
    RGFLOW_REQUIRE(points.rows() == 2 && points.cols() > 0, InvalidArgument, "points must be 2 x N, N > 0");
    auto params = flow.parameters();
    AdamW<Scalar> opt(cfg.optimizer());
    TrainLog log;
    const Index n = points.cols();
    const auto start = std::chrono::steady_clock::now();
    std::vector<Index> perm(static_cast<std::size_t>(n));
    long epoch = -1;
    for (long s = 0; s < cfg.steps; ++s) {
        Mat<Scalar> batch(2, cfg.batch_size);
        for (Index t = 0; t < cfg.batch_size; ++t) {
            const long long k = (long long)s * cfg.batch_size + t;
            if (long(k / n) != epoch) {
                epoch = long(k / n);
                std::iota(perm.begin(), perm.end(), Index(0));
                std::seed_seq seq{std::uint64_t(cfg.seed), std::uint64_t(epoch), std::uint64_t(3)};
                Rng rng(seq);
                std::shuffle(perm.begin(), perm.end(), rng);
            }
            batch.col(t) = points.col(perm[std::size_t(k % n)]).template cast<Scalar>();
        }
        flow.zero_grad();
        TrainRecord rec;
        rec.loss = flow.loss_and_backward(batch);
        rec.grad_norm = opt.step(params);
        rec.step = s + 1;
        rec.bpd = rec.loss / (2.0 * std::numbers::ln2);
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (rec.step % cfg.log_every == 0 || rec.step == cfg.steps) log.append(rec);
    }
    return log;
}

template EvalResult evaluate<float>(const RgFlow<float>&, const Dataset&, unsigned long long, double, Index);
template EvalResult evaluate<double>(const RgFlow<double>&, const Dataset&, unsigned long long, double, Index);
template class Trainer<float>;
template class Trainer<double>;
template TrainLog train_flat<float>(FlatFlow2d<float>&, const Mat<double>&, const TrainConfig&);
template TrainLog train_flat<double>(FlatFlow2d<double>&, const Mat<double>&, const TrainConfig&);

}  // namespace rgflow

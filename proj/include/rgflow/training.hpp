#pragma once

// Maximum-likelihood training for RgFlow and the flat 2-D flow.

#include "rgflow/checkpoint.hpp"
#include "rgflow/data.hpp"
#include "rgflow/model.hpp"

#include "json.hpp"

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace rgflow {

struct TrainConfig {
    Index batch_size = 64;
    double lr = 1e-3;
    double weight_decay = 5e-5;
    double clip_norm = 1.0;
    long steps = 1000;
    unsigned long long seed = 0;
    long eval_every = 0;        ///< 0 disables
    long checkpoint_every = 0;  ///< 0 disables periodic checkpoints
    long log_every = 1;
    /// Optional learning-rate multiplier per level (missing entries are 1).
    std::vector<double> level_lr_scale;
    double alpha = 0.05;

    void validate() const;
    AdamWConfig optimizer() const;
    nlohmann::json to_json() const;
    /// Keys absent from `j` keep their current values.
    void update_from_json(const nlohmann::json& j);
};

struct TrainRecord {
    long step = 0;  ///< 1-based index of the completed update
    double loss = 0;
    double bpd = 0;
    double grad_norm = 0;
    double seconds = 0;  ///< wall time since the start of the run
    std::optional<double> eval_bpd;

    nlohmann::json to_json() const;
};

/// Append-only record of a run.
class TrainLog {
public:
    void append(const TrainRecord& rec);
    const std::vector<TrainRecord>& records() const { return records_; }
    bool empty() const { return records_.empty(); }
    std::size_t size() const { return records_.size(); }
    /// Mean loss over records [first, first + count).
    double mean_loss(std::size_t first, std::size_t count) const;
    void write_jsonl(std::ostream& out) const;

private:
    std::vector<TrainRecord> records_;
};

struct EvalResult {
    double nll = 0;  ///< nats per image of the 8-bit data
    double bpd = 0;
};

/// One pass over `data` with dequantization noise drawn from `seed`.
template <typename Scalar>
EvalResult evaluate(const RgFlow<Scalar>& model, const Dataset& data, unsigned long long seed,
                    double alpha = 0.05, Index batch_size = 64);

struct TrainHooks {
    std::filesystem::path checkpoint_path;  ///< empty disables checkpoints
    std::ostream* log_stream = nullptr;     ///< JSON lines, one per logged step
    const Dataset* eval_data = nullptr;
    std::function<void(const TrainRecord&)> on_record;
};

template <typename Scalar>
class Trainer {
public:
    Trainer(RgFlow<Scalar>& model, const Dataset& data, TrainConfig cfg);

    long steps_done() const { return step_; }
    const TrainConfig& config() const { return cfg_; }
    const TrainLog& log() const { return log_; }

    /// One update. Throws TrainingDiverged on a non-finite loss or gradient.
    TrainRecord step();

    /// Runs until `config().steps` updates have been made in total.
    const TrainLog& run(const TrainHooks& hooks = {});

    /// Model parameters, optimizer moments and the step counter.
    Checkpoint state();
    void restore(const Checkpoint& ckpt);

private:
    std::vector<Index> batch_indices(long step);
    void assign_lr_scales();

    RgFlow<Scalar>& model_;
    const Dataset& data_;
    TrainConfig cfg_;
    ParamList<Scalar> params_;
    AdamW<Scalar> opt_;
    Preprocessor pre_;
    TrainLog log_;
    long step_ = 0;
    long cached_epoch_ = -1;
    std::vector<Index> perm_;
    double elapsed_ = 0;
};

/// Trains the 2-D flow on a point cloud (2 x N). Returns the log.
template <typename Scalar>
TrainLog train_flat(FlatFlow2d<Scalar>& flow, const Mat<double>& points, const TrainConfig& cfg);

}  // namespace rgflow

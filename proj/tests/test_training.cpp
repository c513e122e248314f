#include "doctest.h"

#include "rgflow/training.hpp"

#include <filesystem>
#include <sstream>

using namespace rgflow;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.L = 8;
    cfg.m = 4;
    cfg.C = 3;
    cfg.n_layer = {2, 2};
    cfg.hidden = 8;
    cfg.n_res = 1;
    return cfg;
}

/// 8x8 crops of MSDS2 images; cheap but structured.
Dataset tiny_data(Index n, unsigned long long seed) {
    const auto full = gen_msds(2, n, 32, seed);
    Dataset ds;
    ds.manifest = full.manifest;
    ds.manifest.L = 8;
    ds.pixels.resize(8 * 8 * 3, n);
    for (Index k = 0; k < n; ++k)
        for (int i = 0; i < 8; ++i)
            for (int j = 0; j < 8; ++j)
                for (int c = 0; c < 3; ++c) ds.pixels((i * 8 + j) * 3 + c, k) = full.pixels(((i + 2) * 32 + j + 2) * 3 + c, k);
    ds.manifest.n = n;
    ds.manifest.sha256 = sha256_hex(ds.pixels.data(), std::size_t(ds.pixels.size()));
    return ds;
}

TrainConfig quick(long steps) {
    TrainConfig cfg;
    cfg.batch_size = 16;
    cfg.steps = steps;
    cfg.seed = 3;
    return cfg;
}

std::vector<float> flat_params(RgFlow<float>& model) {
    std::vector<float> out;
    for (const auto& p : model.parameters()) out.insert(out.end(), p.value, p.value + p.size);
    return out;
}

}  // namespace

TEST_CASE("config validation and json round trip") {
    TrainConfig cfg;
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
    cfg = {};
    cfg.lr = -1;
    CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
    cfg = {};
    cfg.level_lr_scale = {1.0, 0.5};
    TrainConfig back;
    back.update_from_json(cfg.to_json());
    CHECK(back.to_json() == cfg.to_json());
}

TEST_CASE("zero steps leaves the initialization untouched") {
    const auto data = tiny_data(32, 1);
    RgFlow<float> model(tiny_config());
    model.init(5);
    const auto before = flat_params(model);
    Trainer<float> trainer(model, data, quick(0));
    trainer.run();
    CHECK(trainer.steps_done() == 0);
    CHECK(flat_params(model) == before);
}

TEST_CASE("loss at the identity initialization is the prior on the preprocessed pixels") {
    const auto data = tiny_data(16, 2);
    RgFlow<double> model(tiny_config());
    model.init(1);
    const auto r = evaluate(model, data, 7);
    Rng rng(7);
    const double expect = bits_per_dim<double>(
        [&](const Mat<double>& x) { return model.prior().log_prob(x); }, data.pixels, Preprocessor{}, rng);
    CHECK(r.bpd == doctest::Approx(expect).epsilon(1e-12));
    CHECK(r.nll == doctest::Approx(expect * 192 * std::numbers::ln2));
}

TEST_CASE("a short run lowers the loss and touches every tensor") {
    const auto data = tiny_data(64, 3);
    RgFlow<float> model(tiny_config());
    model.init(2);
    std::vector<std::vector<float>> before;
    for (const auto& p : model.parameters()) before.emplace_back(p.value, p.value + p.size);
    auto cfg = quick(60);
    cfg.weight_decay = 0;
    cfg.lr = 3e-3;
    Trainer<float> trainer(model, data, cfg);
    const auto& log = trainer.run();
    CHECK(log.size() == 60);
    CHECK(log.mean_loss(50, 10) < 0.9 * log.mean_loss(0, 10));
    const auto params = model.parameters();
    for (std::size_t k = 0; k < params.size(); ++k) {
        CAPTURE(params[k].name);
        CHECK(std::vector<float>(params[k].value, params[k].value + params[k].size) != before[k]);
    }
}

TEST_CASE("resume reproduces an uninterrupted run bit for bit") {
    const auto data = tiny_data(48, 4);
    const auto path = fs::temp_directory_path() / "rgflow_resume.ckpt";

    RgFlow<float> straight(tiny_config());
    straight.init(9);
    Trainer<float> a(straight, data, quick(8));
    a.run();

    RgFlow<float> first(tiny_config());
    first.init(9);
    Trainer<float> b(first, data, quick(4));
    TrainHooks hooks;
    hooks.checkpoint_path = path;
    b.run(hooks);

    const auto ckpt = read_checkpoint(path);
    auto resumed = RgFlow<float>::from_checkpoint(ckpt);
    Trainer<float> c(resumed, data, quick(8));
    c.restore(ckpt);
    CHECK(c.steps_done() == 4);
    c.run();
    CHECK(flat_params(resumed) == flat_params(straight));
    CHECK(c.log().records().back().loss == a.log().records().back().loss);
    fs::remove(path);
}

TEST_CASE("evaluation is deterministic and survives a checkpoint") {
    const auto data = tiny_data(20, 5);
    RgFlow<float> model(tiny_config());
    Rng rng(1);
    model.init(rng);
    perturb_parameters(model.parameters(), rng, 0.05);
    const auto path = fs::temp_directory_path() / "rgflow_eval.ckpt";
    model.save(path);
    const auto loaded = RgFlow<float>::load(path);
    CHECK(evaluate(model, data, 3).bpd == evaluate(model, data, 3).bpd);
    CHECK(evaluate(model, data, 3).bpd == evaluate(loaded, data, 3).bpd);
    CHECK(evaluate(model, data, 3).bpd != evaluate(model, data, 4).bpd);
    fs::remove(path);
}

TEST_CASE("log records are written as json lines with eval entries") {
    const auto data = tiny_data(32, 6);
    RgFlow<float> model(tiny_config());
    model.init(1);
    auto cfg = quick(6);
    cfg.log_every = 3;
    cfg.eval_every = 2;
    Trainer<float> trainer(model, data, cfg);
    std::ostringstream out;
    TrainHooks hooks;
    hooks.log_stream = &out;
    hooks.eval_data = &data;
    trainer.run(hooks);
    // steps 2, 3, 4 and 6 are logged
    std::istringstream in(out.str());
    std::string line;
    std::vector<long> steps;
    while (std::getline(in, line)) {
        const auto j = nlohmann::json::parse(line);
        steps.push_back(j.at("step").get<long>());
        if (steps.back() % 2 == 0) CHECK(j.contains("eval_bpd"));
    }
    CHECK(steps == std::vector<long>{2, 3, 4, 6});
    TrainLog log;
    log.append({5, 1, 1, 1, 0, {}});
    CHECK_THROWS_AS(log.append({5, 1, 1, 1, 0, {}}), InvalidArgument);
}

TEST_CASE("level learning-rate multipliers") {
    const auto data = tiny_data(16, 7);
    RgFlow<float> model(tiny_config());
    model.init(1);
    auto cfg = quick(3);
    cfg.level_lr_scale = {1e-9, 1.0};
    cfg.weight_decay = 0;
    std::vector<float> level0;
    for (const auto& p : model.parameters())
        if (p.name.rfind("level0.", 0) == 0) level0.insert(level0.end(), p.value, p.value + p.size);
    Trainer<float> trainer(model, data, cfg);
    trainer.run();
    double moved = 0;
    std::size_t k = 0;
    for (const auto& p : model.parameters())
        if (p.name.rfind("level0.", 0) == 0)
            for (Index i = 0; i < p.size; ++i) moved = std::max(moved, double(std::abs(p.value[i] - level0[k++])));
    CHECK(moved < 1e-7);
}

TEST_CASE("flat flow training on pinwheel points") {
    const auto pts = gen_pinwheel(512, 4, 1);
    FlatFlow2d<double> flow(4, {16, 1, 8.0}, Prior{PriorKind::laplacian, 1.0});
    Rng rng(1);
    flow.init(rng);
    auto cfg = quick(150);
    cfg.batch_size = 128;
    cfg.lr = 5e-3;
    const auto log = train_flat(flow, pts.points, cfg);
    CHECK(log.mean_loss(140, 10) < log.mean_loss(0, 10));
}

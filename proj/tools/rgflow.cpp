// rgflow: dataset generation, training and analysis from the command line.

#include "rgflow/analysis.hpp"
#include "rgflow/data.hpp"
#include "rgflow/lattice.hpp"
#include "rgflow/model.hpp"
#include "rgflow/training.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <Eigen/Core>
#ifdef _OPENMP
#include <omp.h>
#endif

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace rgflow;
using nlohmann::json;

namespace {

struct Common {
    unsigned long long seed = 0;
    std::string out = "out";
    int threads = 0;
};

struct ModelFlags {
    int m = 4;
    std::vector<int> n_layer;
    int n_res = 4;
    int hidden = 512;
    double clamp = 8.0;
    std::string prior = "laplacian";
    double prior_scale = 1.0;
    bool share_levels = false;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--seed", c.seed, "Seed for all randomness")->capture_default_str();
    cmd->add_option("--out", c.out, "Output directory")->capture_default_str();
    cmd->add_option("--threads", c.threads, "Thread cap (0: RGFLOW_THREADS or library default)")
        ->capture_default_str();
}

void add_model_flags(CLI::App* cmd, ModelFlags& f) {
    cmd->add_option("--m", f.m, "Block edge")->capture_default_str();
    cmd->add_option("--n-layer", f.n_layer, "Coupling blocks per level, low to high (one value broadcasts)");
    cmd->add_option("--n-res", f.n_res, "Residual blocks per s/t network")->capture_default_str();
    cmd->add_option("--hidden", f.hidden, "Hidden width of s/t networks")->capture_default_str();
    cmd->add_option("--clamp", f.clamp, "Soft clamp on log-scales")->capture_default_str();
    cmd->add_option("--prior", f.prior, "Latent prior")
        ->check(CLI::IsMember({"laplacian", "gaussian"}))
        ->capture_default_str();
    cmd->add_option("--prior-scale", f.prior_scale, "Laplacian b or Gaussian sigma")->capture_default_str();
    cmd->add_flag("--share-levels", f.share_levels, "Share stacks across levels below the top");
}

ModelConfig model_config(const ModelFlags& f, int L, int C) {
    ModelConfig cfg;
    cfg.L = L;
    cfg.m = f.m;
    cfg.C = C;
    cfg.n_layer = f.n_layer;
    cfg.n_res = f.n_res;
    cfg.hidden = f.hidden;
    cfg.clamp = f.clamp;
    cfg.prior.kind = parse_prior_kind(f.prior);
    cfg.prior.scale = f.prior_scale;
    cfg.share_levels = f.share_levels;
    cfg.resolved_layers();
    return cfg;
}

void apply_threads(int threads) {
    if (threads <= 0)
        if (const char* env = std::getenv("RGFLOW_THREADS")) threads = std::atoi(env);
    if (threads <= 0) return;
    Eigen::setNbThreads(threads);
#ifdef _OPENMP
    omp_set_num_threads(threads);
#endif
}

fs::path prepare_out(const Common& c) {
    fs::create_directories(c.out);
    return c.out;
}

void write_json(const fs::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

/// Records the exact invocation: run.json for people, run.toml to replay via --config.
void write_manifest(const CLI::App& app, const CLI::App* cmd, const Common& c, const json& extra = json::object()) {
    const fs::path out = c.out;
    fs::create_directories(out);
    {
        std::ofstream toml(out / "run.toml");
        toml << app.config_to_str(true, false);
    }
    json j = {{"command", cmd->get_name()}, {"seed", c.seed}, {"replay", "rgflow --config run.toml " + cmd->get_name()}};
    json opts = json::object();
    for (const auto* opt : cmd->get_options()) {
        if (opt->get_name() == "--help" || opt->get_lnames().empty()) continue;
        const auto results = opt->as<std::vector<std::string>>();
        const auto& name = opt->get_lnames().front();
        if (opt->get_expected_max() > 1)
            opts[name] = results;
        else if (opt->get_type_size() == 0)
            opts[name] = opt->count() > 0;
        else
            opts[name] = results.empty() ? "" : results.front();
    }
    j["options"] = opts;
    j["outputs"] = extra;
    write_json(out / "run.json", j);
}

PixelRegion parse_region(const std::string& s) {
    int h = 0, w = 0, r = 0, c = 0;
    char x = 0, at = 0, comma = 0;
    std::istringstream in(s);
    if (!(in >> h >> x >> w >> at >> r >> comma >> c) || x != 'x' || at != '@' || comma != ',' || !in.eof())
        throw InvalidArgument("region must look like HxW@ROW,COL, got " + s);
    return {r, c, h, w};
}

LatentIndex parse_latent(const std::string& s) {
    LatentIndex l;
    char c1 = 0, c2 = 0, c3 = 0;
    std::istringstream in(s);
    if (!(in >> l.h >> c1 >> l.i >> c2 >> l.j >> c3 >> l.c) || c1 != ',' || c2 != ',' || c3 != ',' || !in.eof())
        throw InvalidArgument("latent must look like H,I,J,C, got " + s);
    return l;
}

Mat<float> to_model(const Pixels& px) { return Preprocessor{}.forward_centered<float>(px); }
Mat<float> to_unit(const Mat<float>& x) { return Preprocessor{}.to_unit(x); }

RgFlow<float> load_model(const std::string& path) { return RgFlow<float>::load(path); }

Pixels column(const Dataset& ds, Index k) {
    RGFLOW_REQUIRE(k >= 0 && k < ds.size(), InvalidArgument, "image index out of range");
    return ds.pixels.col(k);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"RG-Flow: hierarchical normalizing flows on images"};
    app.set_config("--config", "", "TOML/INI file with option values; command-line flags win");
    app.require_subcommand(1);
    app.allow_config_extras(false);

    // ---- gen-dataset ---------------------------------------------------------
    Common gd_c;
    int gd_variant = 1, gd_L = 32;
    Index gd_n = 1000;
    auto* gd = app.add_subcommand("gen-dataset", "Render an MSDS1/MSDS2 dataset as PNGs plus manifest.json");
    add_common(gd, gd_c);
    gd->add_option("--variant", gd_variant, "1: shared color, 2: shared orientation")
        ->check(CLI::IsMember({1, 2}))
        ->capture_default_str();
    gd->add_option("--n", gd_n, "Number of images")->capture_default_str();
    gd->add_option("--L", gd_L, "Image edge")->capture_default_str();

    // ---- gen-pinwheel --------------------------------------------------------
    Common gp_c;
    Index gp_n = 5000;
    int gp_legs = 4;
    auto* gp = app.add_subcommand("gen-pinwheel", "Sample the pinwheel point set as points.csv");
    add_common(gp, gp_c);
    gp->add_option("--n", gp_n, "Number of points")->capture_default_str();
    gp->add_option("--legs", gp_legs, "Number of arms")->capture_default_str();

    // ---- train ---------------------------------------------------------------
    Common tr_c;
    ModelFlags tr_m;
    TrainConfig tr_t;
    std::string tr_data, tr_eval, tr_resume, tr_points;
    int tr_flat_blocks = 8;
    auto* tr = app.add_subcommand("train", "Maximum-likelihood training");
    add_common(tr, tr_c);
    add_model_flags(tr, tr_m);
    tr->add_option("--data", tr_data, "Training dataset directory");
    tr->add_option("--eval-data", tr_eval, "Held-out dataset directory");
    tr->add_option("--points", tr_points, "Pinwheel points.csv: trains the 2-D flat flow instead");
    tr->add_option("--flat-blocks", tr_flat_blocks, "Coupling blocks of the flat flow")->capture_default_str();
    tr->add_option("--resume", tr_resume, "Checkpoint written by an earlier train run");
    tr->add_option("--steps", tr_t.steps, "Total optimizer steps")->capture_default_str();
    tr->add_option("--batch", tr_t.batch_size, "Batch size")->capture_default_str();
    tr->add_option("--lr", tr_t.lr, "Learning rate")->capture_default_str();
    tr->add_option("--weight-decay", tr_t.weight_decay, "Decoupled weight decay")->capture_default_str();
    tr->add_option("--clip", tr_t.clip_norm, "Global gradient-norm clip (0 disables)")->capture_default_str();
    tr->add_option("--eval-every", tr_t.eval_every, "Steps between evaluations (0 disables)")->capture_default_str();
    tr->add_option("--checkpoint-every", tr_t.checkpoint_every, "Steps between checkpoints (0: only at the end)")
        ->capture_default_str();
    tr->add_option("--log-every", tr_t.log_every, "Steps between log lines")->capture_default_str();
    tr->add_option("--level-lr", tr_t.level_lr_scale, "Learning-rate multiplier per level");

    // ---- eval ----------------------------------------------------------------
    Common ev_c;
    std::string ev_model, ev_data;
    auto* ev = app.add_subcommand("eval", "Negative log-likelihood and bits per dimension");
    add_common(ev, ev_c);
    ev->add_option("--model", ev_model, "Checkpoint")->required();
    ev->add_option("--data", ev_data, "Dataset directory")->required();

    // ---- sample --------------------------------------------------------------
    Common sa_c;
    std::string sa_model, sa_stats_data;
    Index sa_n = 16;
    std::vector<double> sa_temp{1.0};
    int sa_cols = 8;
    auto* sa = app.add_subcommand("sample", "Draw images from the tempered prior");
    add_common(sa, sa_c);
    sa->add_option("--model", sa_model, "Checkpoint")->required();
    sa->add_option("--n", sa_n, "Number of samples")->capture_default_str();
    sa->add_option("--temperature", sa_temp, "One temperature, or one per level (low to high)");
    sa->add_option("--cols", sa_cols, "Grid columns")->capture_default_str();
    sa->add_option("--stats-data", sa_stats_data, "Dataset to compare oval color statistics against");

    // ---- rf ------------------------------------------------------------------
    Common rf_c;
    std::string rf_model, rf_latent;
    Index rf_samples = 64;
    auto* rf = app.add_subcommand("rf", "Receptive field of one latent");
    add_common(rf, rf_c);
    rf->add_option("--model", rf_model, "Checkpoint")->required();
    rf->add_option("--latent", rf_latent, "Latent as H,I,J,C (compact level coordinates)")->required();
    rf->add_option("--samples", rf_samples, "Prior draws")->capture_default_str();

    // ---- rf-hist -------------------------------------------------------------
    Common rh_c;
    std::string rh_model;
    int rh_level = 0, rh_bins = 20;
    Index rh_samples = 16;
    auto* rh = app.add_subcommand("rf-hist", "Histogram of receptive-field strengths on one level");
    add_common(rh, rh_c);
    rh->add_option("--model", rh_model, "Checkpoint")->required();
    rh->add_option("--level", rh_level, "Level")->capture_default_str();
    rh->add_option("--samples", rh_samples, "Prior draws")->capture_default_str();
    rh->add_option("--bins", rh_bins, "Histogram bins")->capture_default_str();

    // ---- vary ----------------------------------------------------------------
    Common va_c;
    std::string va_model, va_latent;
    std::vector<double> va_values{-2, -1, 0, 1, 2};
    auto* va = app.add_subcommand("vary", "Sweep one latent of a prior sample");
    add_common(va, va_c);
    va->add_option("--model", va_model, "Checkpoint")->required();
    va->add_option("--latent", va_latent, "Latent as H,I,J,C")->required();
    va->add_option("--values", va_values, "Values assigned to the latent");

    // ---- mix -----------------------------------------------------------------
    Common mx_c;
    std::string mx_model, mx_data;
    Index mx_a = 0, mx_b = 1;
    std::optional<int> mx_theta;
    std::optional<double> mx_lambda;
    auto* mx = app.add_subcommand("mix", "Hyperbolic (--theta) or linear (--lambda) mixing of two images");
    add_common(mx, mx_c);
    mx->add_option("--model", mx_model, "Checkpoint")->required();
    mx->add_option("--data", mx_data, "Dataset directory")->required();
    mx->add_option("--a", mx_a, "Index of image A")->capture_default_str();
    mx->add_option("--b", mx_b, "Index of image B")->capture_default_str();
    auto* theta_opt = mx->add_option("--theta", mx_theta, "Levels >= theta come from A");
    auto* lambda_opt = mx->add_option("--lambda", mx_lambda, "z = lambda zA + (1 - lambda) zB");
    theta_opt->excludes(lambda_opt);

    // ---- inpaint -------------------------------------------------------------
    Common ip_c;
    std::string ip_model, ip_data, ip_region = "10x10@11,11", ip_arm = "cone";
    Index ip_index = 0;
    InpaintConfig ip_cfg;
    auto* ip = app.add_subcommand("inpaint", "Fill a corrupted region by latent optimization");
    add_common(ip, ip_c);
    ip->add_option("--model", ip_model, "Checkpoint")->required();
    ip->add_option("--data", ip_data, "Dataset directory")->required();
    ip->add_option("--index", ip_index, "Image index")->capture_default_str();
    ip->add_option("--region", ip_region, "Region HxW@ROW,COL")->capture_default_str();
    ip->add_option("--arm", ip_arm, "Free latents: inference cone or random equal budget")
        ->check(CLI::IsMember({"cone", "random"}))
        ->capture_default_str();
    ip->add_option("--n-init", ip_cfg.n_init, "Random initializations")->capture_default_str();
    ip->add_option("--lr", ip_cfg.lr, "Adam learning rate")->capture_default_str();
    ip->add_option("--max-steps", ip_cfg.max_steps, "Adam steps")->capture_default_str();
    ip->add_option("--patience", ip_cfg.patience, "Early-stop window")->capture_default_str();
    ip->add_option("--tolerance", ip_cfg.tolerance, "Minimum improvement over the window")->capture_default_str();

    // ---- cones ---------------------------------------------------------------
    Common co_c;
    int co_L = 32, co_m = 4, co_C = 3;
    std::string co_region = "10x10@11,11";
    auto* co = app.add_subcommand("cones", "Inference-cone latent counts for a pixel region");
    add_common(co, co_c);
    co->add_option("--L", co_L, "Image edge")->capture_default_str();
    co->add_option("--m", co_m, "Block edge")->capture_default_str();
    co->add_option("--C", co_C, "Channels")->capture_default_str();
    co->add_option("--region", co_region, "Region HxW@ROW,COL")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (gd->parsed()) {
            apply_threads(gd_c.threads);
            const auto ds = gen_msds(gd_variant, gd_n, gd_L, gd_c.seed);
            save_dataset(ds, prepare_out(gd_c));
            write_manifest(app, gd, gd_c, {{"dataset", "manifest.json"}, {"sha256", ds.manifest.sha256}});
            std::cout << "wrote " << ds.size() << " images to " << gd_c.out << "\n";
        } else if (gp->parsed()) {
            const auto pts = gen_pinwheel(gp_n, gp_legs, gp_c.seed);
            const auto out = prepare_out(gp_c);
            std::ofstream csv(out / "points.csv");
            csv << "x,y,label\n";
            csv.precision(17);
            for (Index k = 0; k < pts.points.cols(); ++k)
                csv << pts.points(0, k) << ',' << pts.points(1, k) << ',' << pts.labels[std::size_t(k)] << '\n';
            write_manifest(app, gp, gp_c, {{"points", "points.csv"}});
        } else if (tr->parsed()) {
            apply_threads(tr_c.threads);
            tr_t.seed = tr_c.seed;
            const auto out = prepare_out(tr_c);
            if (!tr_points.empty()) {
                std::ifstream in(tr_points);
                if (!in) throw IoError("cannot read " + tr_points);
                std::string line;
                std::getline(in, line);
                std::vector<double> xs, ys;
                while (std::getline(in, line)) {
                    std::istringstream row(line);
                    double x = 0, y = 0;
                    char comma = 0;
                    if (row >> x >> comma >> y) {
                        xs.push_back(x);
                        ys.push_back(y);
                    }
                }
                Mat<double> pts(2, Index(xs.size()));
                for (std::size_t k = 0; k < xs.size(); ++k) pts.col(Index(k)) << xs[k], ys[k];
                FlatFlow2d<float> flow(tr_flat_blocks, {tr_m.hidden, tr_m.n_res, tr_m.clamp},
                                       Prior{parse_prior_kind(tr_m.prior), tr_m.prior_scale});
                Rng rng(tr_c.seed);
                flow.init(rng);
                const auto log = train_flat(flow, pts, tr_t);
                std::ofstream jl(out / "train_log.jsonl");
                log.write_jsonl(jl);
                Checkpoint ckpt;
                ckpt.meta["flat"] = {{"blocks", tr_flat_blocks}, {"hidden", tr_m.hidden}, {"n_res", tr_m.n_res},
                                     {"prior", tr_m.prior}, {"prior_scale", tr_m.prior_scale}};
                store_params(ckpt, flow.parameters());
                write_checkpoint(out / "flat.ckpt", ckpt);
                write_manifest(app, tr, tr_c, {{"checkpoint", "flat.ckpt"}, {"log", "train_log.jsonl"}});
                return 0;
            }
            RGFLOW_REQUIRE(!tr_data.empty(), InvalidArgument, "train needs --data or --points");
            const auto ds = load_dataset(tr_data);
            std::optional<Dataset> eval_ds;
            if (!tr_eval.empty()) eval_ds = load_dataset(tr_eval);
            std::optional<RgFlow<float>> model;
            Checkpoint resume;
            if (!tr_resume.empty()) {
                resume = read_checkpoint(tr_resume);
                model.emplace(ModelConfig::from_json(resume.meta.at("model")));
            } else {
                model.emplace(model_config(tr_m, ds.manifest.L, ds.manifest.C));
                model->init(tr_c.seed);
            }
            Trainer<float> trainer(*model, ds, tr_t);
            if (!tr_resume.empty()) trainer.restore(resume);
            std::ofstream jl(out / "train_log.jsonl", tr_resume.empty() ? std::ios::trunc : std::ios::app);
            TrainHooks hooks;
            hooks.checkpoint_path = out / "model.ckpt";
            hooks.log_stream = &jl;
            hooks.eval_data = eval_ds ? &*eval_ds : nullptr;
            write_manifest(app, tr, tr_c, {{"checkpoint", "model.ckpt"}, {"log", "train_log.jsonl"}});
            trainer.run(hooks);
            json summary = {{"steps", trainer.steps_done()}};
            if (!trainer.log().empty()) summary["final_loss"] = trainer.log().records().back().loss;
            if (eval_ds) {
                const auto r = evaluate(*model, *eval_ds, tr_c.seed);
                summary["eval"] = {{"nll", r.nll}, {"bpd", r.bpd}};
            }
            write_json(out / "summary.json", summary);
            std::cout << summary.dump() << "\n";
        } else if (ev->parsed()) {
            apply_threads(ev_c.threads);
            const auto model = load_model(ev_model);
            const auto r = evaluate(model, load_dataset(ev_data), ev_c.seed);
            const json j = {{"nll", r.nll}, {"bpd", r.bpd}};
            write_json(prepare_out(ev_c) / "eval.json", j);
            write_manifest(app, ev, ev_c, {{"metrics", "eval.json"}});
            std::cout << j.dump() << "\n";
        } else if (sa->parsed()) {
            apply_threads(sa_c.threads);
            const auto model = load_model(sa_model);
            const int levels = model.lattice().num_levels();
            TemperatureSchedule temps = sa_temp.size() == 1 ? TemperatureSchedule::uniform(levels, sa_temp.front())
                                                            : TemperatureSchedule{sa_temp};
            const Mat<float> images = to_unit(model.sample(temps, sa_n, sa_c.seed));
            const auto out = prepare_out(sa_c);
            write_image_grid(out / "samples.png", images, model.spec().L, model.spec().C, sa_cols);
            json extra = {{"grid", "samples.png"}};
            if (!sa_stats_data.empty()) {
                const auto ds = load_dataset(sa_stats_data);
                const auto gen = oval_stats(images, model.spec().L, model.spec().C);
                const auto ref = oval_stats(ds.unit_images(), ds.manifest.L, ds.manifest.C);
                auto within = gen.within_color_std;
                std::nth_element(within.begin(), within.begin() + std::ptrdiff_t(within.size() / 2), within.end());
                const json stats = {{"sample_median_within_color_std", within[within.size() / 2]},
                                    {"data_across_color_std", ref.across_color_std},
                                    {"sample_across_color_std", gen.across_color_std}};
                write_json(out / "stats.json", stats);
                extra["stats"] = "stats.json";
                std::cout << stats.dump() << "\n";
            }
            write_manifest(app, sa, sa_c, extra);
        } else if (rf->parsed()) {
            apply_threads(rf_c.threads);
            const auto model = load_model(rf_model);
            const Index flat = model.lattice().flat_index(parse_latent(rf_latent));
            const auto field = receptive_field(model, flat, rf_samples, rf_c.seed);
            const auto out = prepare_out(rf_c);
            const double peak = std::max(field.map.maxCoeff(), 1e-30);
            Mat<float> img(field.map.size(), 1);
            const int L = model.spec().L;
            for (int i = 0; i < L; ++i)
                for (int j = 0; j < L; ++j) img(i * L + j, 0) = float(field.map(i, j) / peak);
            write_image_grid(out / "rf.png", img, L, 1, 1, 0);
            const json j = {{"flat", flat}, {"strength", field.strength}, {"peak", peak}};
            write_json(out / "rf.json", j);
            write_manifest(app, rf, rf_c, {{"map", "rf.png"}, {"metrics", "rf.json"}});
            std::cout << j.dump() << "\n";
        } else if (rh->parsed()) {
            apply_threads(rh_c.threads);
            const auto model = load_model(rh_model);
            const auto hist = rf_histogram(model, rh_level, rh_samples, rh_c.seed, rh_bins);
            const auto out = prepare_out(rh_c);
            std::ofstream(out / "rf_hist.csv") << hist.to_csv();
            write_manifest(app, rh, rh_c, {{"histogram", "rf_hist.csv"}});
            std::cout << hist.to_csv();
        } else if (va->parsed()) {
            apply_threads(va_c.threads);
            const auto model = load_model(va_model);
            const Index flat = model.lattice().flat_index(parse_latent(va_latent));
            const Vec<float> z =
                model.sample_latents(TemperatureSchedule::uniform(model.lattice().num_levels(), 1.0), 1, va_c.seed);
            const Mat<float> images = to_unit(vary_latent(model, z, flat, va_values));
            write_image_grid(prepare_out(va_c) / "vary.png", images, model.spec().L, model.spec().C,
                             int(va_values.size()));
            write_manifest(app, va, va_c, {{"grid", "vary.png"}});
        } else if (mx->parsed()) {
            apply_threads(mx_c.threads);
            const auto model = load_model(mx_model);
            const auto ds = load_dataset(mx_data);
            const Mat<float> xa = to_model(column(ds, mx_a)), xb = to_model(column(ds, mx_b));
            RGFLOW_REQUIRE(mx_theta || mx_lambda, InvalidArgument, "mix needs --theta or --lambda");
            const Mat<float> mixed = mx_theta ? mix_hyperbolic(model, xa, xb, *mx_theta)
                                              : mix_linear(model, xa, xb, *mx_lambda);
            Mat<float> grid(model.dim(), 3);
            grid << to_unit(xa), to_unit(mixed), to_unit(xb);
            write_image_grid(prepare_out(mx_c) / "mix.png", grid, model.spec().L, model.spec().C, 3);
            write_manifest(app, mx, mx_c, {{"grid", "mix.png (A, mixture, B)"}});
        } else if (ip->parsed()) {
            apply_threads(ip_c.threads);
            const auto model = load_model(ip_model);
            const auto ds = load_dataset(ip_data);
            const auto region = parse_region(ip_region);
            const Pixels clean = column(ds, ip_index);
            const Pixels corrupt = corrupt_region(clean, model.spec().L, model.spec().C, region);
            ip_cfg.seed = ip_c.seed;
            ip_cfg.arm = ip_arm == "cone" ? InpaintArm::cone : InpaintArm::random;
            const auto res = inpaint(model, corrupt, region, ip_cfg);
            Mat<float> grid(model.dim(), 3);
            grid << clean.cast<float>() / 255.0f, corrupt.cast<float>() / 255.0f, res.image.cast<float>() / 255.0f;
            const auto out = prepare_out(ip_c);
            write_image_grid(out / "inpaint.png", grid, model.spec().L, model.spec().C, 3);
            json j = res.diagnostics();
            const double p = psnr(clean, res.image);
            j["psnr"] = p == kPsnrIdentical ? json("inf") : json(p);
            write_json(out / "inpaint.json", j);
            write_manifest(app, ip, ip_c, {{"grid", "inpaint.png (clean, corrupt, filled)"}, {"metrics", "inpaint.json"}});
            if (res.warning) std::cerr << "warning: optimizer did not meet the stopping rule\n";
            std::cout << j.dump() << "\n";
        } else if (co->parsed()) {
            const auto spec = LatticeSpec::make(co_L, co_m, co_C);
            const auto cone = Lattice(spec).inference_cone(parse_region(co_region));
            json j = {{"per_level", cone.latents_per_level}, {"total", cone.latents.size()},
                      {"of", spec.total_size()}};
            for (std::size_t h = 0; h < cone.latents_per_level.size(); ++h)
                std::cout << "level " << h << ": " << cone.latents_per_level[h] << "\n";
            std::cout << "total: " << cone.latents.size() << " of " << spec.total_size() << "\n";
            write_json(prepare_out(co_c) / "cones.json", j);
            write_manifest(app, co, co_c, {{"counts", "cones.json"}});
        }
    } catch (const InvalidArgument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

#include "doctest.h"

#include "rgflow/data.hpp"
#include "rgflow/model.hpp"

#include "json.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace rgflow;
namespace fs = std::filesystem;

namespace {

const fs::path work = fs::temp_directory_path() / "rgflow_cli_test";

int run(const std::string& args) {
    const std::string cmd = "cd " + work.string() + " && " RGFLOW_CLI_PATH " " + args + " > out.txt 2> err.txt";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct Workspace {
    Workspace() {
        fs::remove_all(work);
        fs::create_directories(work);
    }
    ~Workspace() { fs::remove_all(work); }
};

}  // namespace

TEST_CASE("gen-dataset is deterministic and writes a manifest") {
    Workspace ws;
    REQUIRE(run("gen-dataset --n 3 --seed 4 --out a") == 0);
    REQUIRE(run("gen-dataset --n 3 --seed 4 --out b") == 0);
    const auto a = load_dataset(work / "a"), b = load_dataset(work / "b");
    CHECK(a.pixels == b.pixels);
    CHECK(a.pixels == gen_msds(1, 3, 32, 4).pixels);
    const auto manifest = nlohmann::json::parse(slurp(work / "a" / "run.json"));
    CHECK(manifest.at("command") == "gen-dataset");
    CHECK(manifest.at("options").at("seed") == "4");

    // replaying the recorded config reproduces the data
    REQUIRE(run("--config a/run.toml gen-dataset --out c") == 0);
    CHECK(load_dataset(work / "c").manifest.sha256 == a.manifest.sha256);
}

TEST_CASE("cones prints per-level counts") {
    Workspace ws;
    REQUIRE(run("cones --region 10x10@11,11 --out c") == 0);
    const auto out = slurp(work / "out.txt");
    CHECK(out.find("level 0: 576") != std::string::npos);
    CHECK(out.find("total: 1344 of 3072") != std::string::npos);
    const auto j = nlohmann::json::parse(slurp(work / "c" / "cones.json"));
    CHECK(j.at("total") == 1344);
}

TEST_CASE("exit codes") {
    Workspace ws;
    CHECK(run("--help") == 0);
    CHECK(run("") == 1);
    CHECK(run("no-such-command") == 1);
    CHECK(run("cones --region 10by10") == 1);
    CHECK(run("gen-dataset --variant 3") == 1);
    CHECK(run("eval --model missing.ckpt --data missing") == 2);
    CHECK_FALSE(slurp(work / "err.txt").empty());
}

TEST_CASE("train with zero steps writes the initialization") {
    Workspace ws;
    REQUIRE(run("gen-dataset --n 4 --out d") == 0);
    REQUIRE(run("train --data d --steps 0 --hidden 6 --n-res 1 --seed 7 --out t") == 0);
    auto loaded = RgFlow<float>::load(work / "t" / "model.ckpt");
    RgFlow<float> fresh(loaded.config());
    fresh.init(7);
    const auto p = loaded.parameters(), q = fresh.parameters();
    REQUIRE(p.size() == q.size());
    for (std::size_t k = 0; k < p.size(); ++k) CHECK(p[k].values() == q[k].values());

    REQUIRE(run("train --data d --steps 3 --batch 2 --hidden 6 --n-res 1 --seed 7 --out t2") == 0);
    REQUIRE(run("eval --model t2/model.ckpt --data d --out e") == 0);
    const auto metrics = nlohmann::json::parse(slurp(work / "e" / "eval.json"));
    CHECK(metrics.at("bpd").get<double>() > 0);
    CHECK(fs::exists(work / "t2" / "train_log.jsonl"));

    REQUIRE(run("sample --model t2/model.ckpt --n 4 --temperature 0.5 --out s") == 0);
    CHECK(fs::exists(work / "s" / "samples.png"));
    REQUIRE(run("mix --model t2/model.ckpt --data d --theta 1 --out m") == 0);
    CHECK(fs::exists(work / "m" / "mix.png"));
    CHECK(run("mix --model t2/model.ckpt --data d --theta 1 --lambda 0.5 --out m") == 1);
}

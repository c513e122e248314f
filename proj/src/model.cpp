#include "rgflow/model.hpp"

namespace rgflow {

std::string to_string(PriorKind kind) { return kind == PriorKind::laplacian ? "laplacian" : "gaussian"; }

PriorKind parse_prior_kind(const std::string& name) {
    if (name == "laplacian" || name == "laplace") return PriorKind::laplacian;
    if (name == "gaussian" || name == "normal") return PriorKind::gaussian;
    throw InvalidArgument("unknown prior kind: " + name);
}

std::vector<int> ModelConfig::resolved_layers() const {
    const int levels = lattice().num_levels();
    std::vector<int> out;
    if (n_layer.empty())
        out = levels == 4 ? std::vector<int>{8, 6, 4, 2} : std::vector<int>(std::size_t(levels), 4);
    else if (n_layer.size() == 1)
        out.assign(std::size_t(levels), n_layer.front());
    else
        out = n_layer;
    RGFLOW_REQUIRE(int(out.size()) == levels, InvalidArgument, "n_layer needs one entry per level");
    for (int n : out) RGFLOW_REQUIRE(n >= 1, InvalidArgument, "n_layer entries must be >= 1");
    if (share_levels)
        for (int h = 1; h + 1 < levels; ++h)
            RGFLOW_REQUIRE(out[std::size_t(h)] == out.front(), InvalidArgument,
                           "shared levels need equal n_layer below the top");
    return out;
}

nlohmann::json ModelConfig::to_json() const {
    return {{"L", L},         {"m", m},         {"C", C},
            {"n_layer", resolved_layers()},     {"n_res", n_res},
            {"hidden", hidden}, {"clamp", clamp}, {"prior", to_string(prior.kind)},
            {"prior_scale", prior.scale},       {"share_levels", share_levels}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    cfg.L = j.at("L").get<int>();
    cfg.m = j.at("m").get<int>();
    cfg.C = j.at("C").get<int>();
    cfg.n_layer = j.at("n_layer").get<std::vector<int>>();
    cfg.n_res = j.at("n_res").get<int>();
    cfg.hidden = j.at("hidden").get<int>();
    cfg.clamp = j.value("clamp", 8.0);
    cfg.prior.kind = parse_prior_kind(j.at("prior").get<std::string>());
    cfg.prior.scale = j.value("prior_scale", 1.0);
    cfg.share_levels = j.value("share_levels", false);
    return cfg;
}

template class RgFlow<float>;
template class RgFlow<double>;

}  // namespace rgflow

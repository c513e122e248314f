#pragma once

// Parameter files: magic "RGFLOW-CKPT-1\n", a little-endian u64 header length,
// a JSON header {format, layout, tensors: [{name, shape, offset, size}], meta},
// then every tensor as little-endian float32, concatenated in header order.
// Offsets and sizes count float elements. Matrices are stored column-major.

#include "rgflow/nncore.hpp"

#include "json.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace rgflow {

inline constexpr const char* kCheckpointMagic = "RGFLOW-CKPT-1";

struct TensorRecord {
    std::string name;
    std::vector<Index> shape;
    std::vector<float> data;
};

struct Checkpoint {
    nlohmann::json meta = nlohmann::json::object();
    std::vector<TensorRecord> tensors;

    const TensorRecord* find(const std::string& name) const;
    const TensorRecord& at(const std::string& name) const;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

template <typename Scalar>
void store_params(Checkpoint& ckpt, const ParamList<Scalar>& params, const std::string& prefix = "") {
    for (const auto& p : params) {
        TensorRecord rec{prefix + p.name, p.shape, {}};
        rec.data.resize(std::size_t(p.size));
        for (Index k = 0; k < p.size; ++k) rec.data[std::size_t(k)] = float(p.value[k]);
        ckpt.tensors.push_back(std::move(rec));
    }
}

template <typename Scalar>
void load_params(const Checkpoint& ckpt, const ParamList<Scalar>& params, const std::string& prefix = "") {
    for (const auto& p : params) {
        const auto& rec = ckpt.at(prefix + p.name);
        RGFLOW_REQUIRE(rec.shape == p.shape, IoError, "checkpoint shape mismatch for " + p.name);
        for (Index k = 0; k < p.size; ++k) p.value[k] = Scalar(rec.data[std::size_t(k)]);
    }
}

}  // namespace rgflow

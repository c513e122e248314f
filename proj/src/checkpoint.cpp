#include "rgflow/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace rgflow {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

const TensorRecord* Checkpoint::find(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return &t;
    return nullptr;
}

const TensorRecord& Checkpoint::at(const std::string& name) const {
    const auto* t = find(name);
    if (!t) throw IoError("checkpoint has no tensor named " + name);
    return *t;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    nlohmann::json header;
    header["format"] = kCheckpointMagic;
    header["layout"] = "column-major";
    header["tensors"] = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& t : ckpt.tensors) {
        header["tensors"].push_back(
            {{"name", t.name}, {"shape", t.shape}, {"offset", offset}, {"size", t.data.size()}});
        offset += t.data.size();
    }
    header["meta"] = ckpt.meta;
    const std::string text = header.dump();

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write checkpoint " + tmp.string());
        out << kCheckpointMagic << '\n';
        const std::uint64_t len = text.size();
        out.write(reinterpret_cast<const char*>(&len), sizeof len);
        out.write(text.data(), std::streamsize(text.size()));
        for (const auto& t : ckpt.tensors)
            out.write(reinterpret_cast<const char*>(t.data.data()), std::streamsize(t.data.size() * sizeof(float)));
        if (!out) throw IoError("short write on checkpoint " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    std::string magic;
    std::getline(in, magic);
    if (magic != kCheckpointMagic) throw IoError("not an RGFLOW-CKPT-1 file: " + path.string());
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    if (!in || len > (std::uint64_t(1) << 32)) throw IoError("corrupt checkpoint header");
    std::string text(len, '\0');
    in.read(text.data(), std::streamsize(len));
    if (!in) throw IoError("truncated checkpoint header");

    const auto header = nlohmann::json::parse(text);
    Checkpoint ckpt;
    ckpt.meta = header.value("meta", nlohmann::json::object());
    const auto data_start = in.tellg();
    for (const auto& entry : header.at("tensors")) {
        TensorRecord rec;
        rec.name = entry.at("name").get<std::string>();
        rec.shape = entry.at("shape").get<std::vector<Index>>();
        const auto size = entry.at("size").get<std::uint64_t>();
        const auto offset = entry.at("offset").get<std::uint64_t>();
        rec.data.resize(size);
        in.seekg(data_start + std::streamoff(offset * sizeof(float)));
        in.read(reinterpret_cast<char*>(rec.data.data()), std::streamsize(size * sizeof(float)));
        if (!in) throw IoError("truncated tensor " + rec.name);
        ckpt.tensors.push_back(std::move(rec));
    }
    return ckpt;
}

}  // namespace rgflow

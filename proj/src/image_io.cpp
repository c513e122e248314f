#include "rgflow/data.hpp"

#include <openssl/evp.h>
#include <png.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <memory>

namespace rgflow {

namespace fs = std::filesystem;

void write_png(const fs::path& path, const std::uint8_t* data, int height, int width, int channels) {
    RGFLOW_REQUIRE(channels == 1 || channels == 3, InvalidArgument, "PNG output supports 1 or 3 channels");
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = png_uint_32(width);
    image.height = png_uint_32(height);
    image.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&image, path.c_str(), 0, data, width * channels, nullptr)) {
        const std::string msg = image.message;
        png_image_free(&image);
        throw IoError("cannot write " + path.string() + ": " + msg);
    }
}

std::vector<std::uint8_t> read_png(const fs::path& path, int& height, int& width, int& channels) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str()))
        throw IoError("cannot read " + path.string() + ": " + image.message);
    const bool gray = (image.format & PNG_FORMAT_FLAG_COLOR) == 0;
    image.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    channels = gray ? 1 : 3;
    height = int(image.height);
    width = int(image.width);
    std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
        const std::string msg = image.message;
        png_image_free(&image);
        throw IoError("cannot decode " + path.string() + ": " + msg);
    }
    return buffer;
}

void write_image_grid(const fs::path& path, const Mat<float>& images, int L, int C, int cols, int pad) {
    RGFLOW_REQUIRE(images.rows() == Index(L) * L * C, InvalidArgument, "image shape mismatch");
    const int n = int(images.cols());
    cols = std::max(1, std::min(cols, std::max(n, 1)));
    const int rows = (n + cols - 1) / cols;
    const int out_c = C == 1 ? 1 : 3;
    const int H = std::max(rows, 1) * (L + pad) + pad, W = cols * (L + pad) + pad;
    std::vector<std::uint8_t> canvas(std::size_t(H) * W * out_c, 0);
    for (int k = 0; k < n; ++k) {
        const int oi = pad + (k / cols) * (L + pad), oj = pad + (k % cols) * (L + pad);
        for (int i = 0; i < L; ++i)
            for (int j = 0; j < L; ++j)
                for (int c = 0; c < out_c; ++c) {
                    const float v = images((Index(i) * L + j) * C + std::min(c, C - 1), k);
                    canvas[(std::size_t(oi + i) * W + oj + j) * out_c + c] =
                        std::uint8_t(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
                }
    }
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_png(path, canvas.data(), H, W, out_c);
}

std::string sha256_hex(const std::uint8_t* data, std::size_t size) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (!EVP_Digest(data, size, digest, &len, EVP_sha256(), nullptr)) throw Error("sha256 failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int k = 0; k < len; ++k) {
        out.push_back(hex[digest[k] >> 4]);
        out.push_back(hex[digest[k] & 15]);
    }
    return out;
}

namespace {

std::string image_name(Index k) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "img_%06lld.png", static_cast<long long>(k));
    return buf;
}

}  // namespace

void save_dataset(const Dataset& ds, const fs::path& dir) {
    fs::create_directories(dir);
    const int L = ds.manifest.L, C = ds.manifest.C;
    for (Index k = 0; k < ds.size(); ++k) write_png(dir / image_name(k), ds.pixels.col(k).data(), L, L, C);
    std::ofstream out(dir / "manifest.json");
    if (!out) throw IoError("cannot write manifest in " + dir.string());
    out << ds.manifest.to_json().dump(2) << '\n';
}

Dataset load_dataset(const fs::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw IoError("no manifest.json in " + dir.string());
    Dataset ds;
    ds.manifest = DatasetManifest::from_json(nlohmann::json::parse(in));
    const int L = ds.manifest.L, C = ds.manifest.C;
    ds.pixels.resize(Index(L) * L * C, ds.manifest.n);
    for (Index k = 0; k < ds.manifest.n; ++k) {
        int h = 0, w = 0, c = 0;
        const auto buf = read_png(dir / image_name(k), h, w, c);
        if (h != L || w != L || c != C) throw IoError("image " + image_name(k) + " does not match manifest");
        std::copy(buf.begin(), buf.end(), ds.pixels.col(k).data());
    }
    const auto digest = sha256_hex(ds.pixels.data(), std::size_t(ds.pixels.size()));
    if (digest != ds.manifest.sha256) throw IoError("dataset checksum mismatch in " + dir.string());
    return ds;
}

Dataset ingest_images(const fs::path& dir, const std::string& name) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".png") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    Dataset ds;
    ds.manifest.name = name;
    int L = 0, C = 0;
    for (std::size_t k = 0; k < files.size(); ++k) {
        int h = 0, w = 0, c = 0;
        const auto buf = read_png(files[k], h, w, c);
        if (k == 0) {
            RGFLOW_REQUIRE(h == w, IoError, "images must be square");
            L = h;
            C = c;
            ds.pixels.resize(Index(L) * L * C, Index(files.size()));
        }
        if (h != L || w != L || c != C) throw IoError("image " + files[k].string() + " has a different shape");
        std::copy(buf.begin(), buf.end(), ds.pixels.col(Index(k)).data());
    }
    ds.manifest.n = ds.size();
    ds.manifest.L = L;
    ds.manifest.C = C;
    ds.manifest.params = {{"source", dir.string()}};
    ds.manifest.sha256 = sha256_hex(ds.pixels.data(), std::size_t(ds.pixels.size()));
    return ds;
}

}  // namespace rgflow

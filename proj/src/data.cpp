#include "lcmae/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "lcmae/common.hpp"

namespace fs = std::filesystem;

namespace lcmae {

DataFormat data_format_from_string(const std::string& s) {
    if (s == "cifar-binary") return DataFormat::CifarBinary;
    if (s == "raw-dir") return DataFormat::RawDir;
    throw ConfigError("unknown data format '" + s + "'");
}

namespace {

constexpr int64_t kCifarSide = 32;
constexpr int64_t kCifarRecord = 1 + 3 * kCifarSide * kCifarSide;

std::vector<std::string> sorted_files(const std::string& dir, const std::string& ext) {
    std::vector<std::string> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ext) out.push_back(e.path().string());
    std::sort(out.begin(), out.end());
    return out;
}

void read_cifar_file(const std::string& path, std::vector<Array<float>>& images, std::vector<int>& labels) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "'");
    f.seekg(0, std::ios::end);
    const int64_t size = static_cast<int64_t>(f.tellg());
    f.seekg(0);
    if (size % kCifarRecord != 0)
        throw IoError("malformed cifar-binary record in '" + path + "' at byte offset " +
                      std::to_string((size / kCifarRecord) * kCifarRecord) + " (file size " +
                      std::to_string(size) + " is not a multiple of " + std::to_string(kCifarRecord) + ")");
    std::vector<uint8_t> rec(static_cast<size_t>(kCifarRecord));
    for (int64_t r = 0; r < size / kCifarRecord; ++r) {
        if (!f.read(reinterpret_cast<char*>(rec.data()), kCifarRecord))
            throw IoError("malformed cifar-binary record in '" + path + "' at byte offset " +
                          std::to_string(r * kCifarRecord));
        labels.push_back(rec[0]);
        Array<float> img({3, kCifarSide, kCifarSide});
        for (int64_t i = 0; i < 3 * kCifarSide * kCifarSide; ++i)
            img[i] = static_cast<float>(rec[static_cast<size_t>(1 + i)]) / 255.0f;
        images.push_back(std::move(img));
    }
}

Array<float> read_raw_image(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "'");
    char magic[4];
    if (!f.read(magic, 4) || std::memcmp(magic, "IMG0", 4) != 0)
        throw IoError("malformed raw image '" + path + "' at byte offset 0: bad magic");
    uint32_t dims[3];
    if (!f.read(reinterpret_cast<char*>(dims), sizeof(dims)))
        throw IoError("malformed raw image '" + path + "' at byte offset 4: truncated header");
    const int64_t c = dims[0], h = dims[1], w = dims[2];
    if (c < 1 || h < 1 || w < 1 || c * h * w > (int64_t(1) << 28))
        throw IoError("malformed raw image '" + path + "': implausible dims");
    Array<float> img({c, h, w});
    if (!f.read(reinterpret_cast<char*>(img.data.data()), static_cast<std::streamsize>(img.size() * 4)))
        throw IoError("malformed raw image '" + path + "' at byte offset 16: truncated pixels");
    return img;
}

}  // namespace

void write_cifar_binary(const std::string& path, const std::vector<RawImage>& records) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    for (const auto& r : records) {
        if (static_cast<int64_t>(r.planes.size()) != kCifarRecord - 1)
            throw ShapeError("cifar record needs 3072 pixel bytes");
        f.put(static_cast<char>(r.label));
        f.write(reinterpret_cast<const char*>(r.planes.data()), static_cast<std::streamsize>(r.planes.size()));
    }
    if (!f) throw IoError("write failed: '" + path + "'");
}

void write_raw_image(const std::string& path, const Array<float>& image01) {
    if (image01.rank() != 3) throw ShapeError("raw image must be [C,H,W]");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    f.write("IMG0", 4);
    const uint32_t dims[3] = {static_cast<uint32_t>(image01.shape[0]), static_cast<uint32_t>(image01.shape[1]),
                              static_cast<uint32_t>(image01.shape[2])};
    f.write(reinterpret_cast<const char*>(dims), sizeof(dims));
    f.write(reinterpret_cast<const char*>(image01.data.data()),
            static_cast<std::streamsize>(image01.size() * 4));
    if (!f) throw IoError("write failed: '" + path + "'");
}

Dataset load_dataset(const std::string& path, DataFormat format) {
    Dataset ds;
    if (format == DataFormat::CifarBinary) {
        if (!fs::exists(path)) throw IoError("dataset path '" + path + "' does not exist");
        std::vector<std::string> files;
        if (fs::is_directory(path)) {
            files = sorted_files(path, ".bin");
            if (files.empty()) throw IoError("no .bin files in '" + path + "'");
        } else {
            files = {path};
        }
        for (const auto& f : files) read_cifar_file(f, ds.images, ds.labels);
        ds.channels = 3;
        ds.height = kCifarSide;
        ds.width = kCifarSide;
    } else {
        if (!fs::is_directory(path)) throw IoError("raw-dir dataset '" + path + "' is not a directory");
        const auto files = sorted_files(path, ".img");
        if (files.empty()) throw IoError("no .img files in '" + path + "'");
        for (const auto& f : files) {
            Array<float> img = read_raw_image(f);
            if (ds.images.empty()) {
                ds.channels = img.shape[0];
                ds.height = img.shape[1];
                ds.width = img.shape[2];
            } else if (img.shape != Shape{ds.channels, ds.height, ds.width}) {
                throw IoError("raw image '" + f + "' has inconsistent dims");
            }
            ds.images.push_back(std::move(img));
            ds.labels.push_back(-1);
        }
    }
    if (ds.images.empty()) throw IoError("dataset '" + path + "' is empty");

    // per-channel standardization; stats computed once over the whole corpus
    const int64_t c = ds.channels, hw = ds.height * ds.width;
    ds.channel_mean.assign(static_cast<size_t>(c), 0.0);
    ds.channel_std.assign(static_cast<size_t>(c), 0.0);
    const double count = static_cast<double>(ds.size() * hw);
    for (const auto& img : ds.images)
        for (int64_t ch = 0; ch < c; ++ch)
            for (int64_t i = 0; i < hw; ++i)
                ds.channel_mean[static_cast<size_t>(ch)] +=
                    static_cast<double>(img.data[static_cast<size_t>(ch * hw + i)]);
    for (auto& m : ds.channel_mean) m /= count;
    for (const auto& img : ds.images)
        for (int64_t ch = 0; ch < c; ++ch)
            for (int64_t i = 0; i < hw; ++i) {
                const double d =
                    static_cast<double>(img.data[static_cast<size_t>(ch * hw + i)]) - ds.channel_mean[static_cast<size_t>(ch)];
                ds.channel_std[static_cast<size_t>(ch)] += d * d;
            }
    for (auto& s : ds.channel_std) s = std::sqrt(s / count + 1e-8);
    for (auto& img : ds.images)
        for (int64_t ch = 0; ch < c; ++ch)
            for (int64_t i = 0; i < hw; ++i) {
                float& v = img.data[static_cast<size_t>(ch * hw + i)];
                v = static_cast<float>((static_cast<double>(v) - ds.channel_mean[static_cast<size_t>(ch)]) /
                                       ds.channel_std[static_cast<size_t>(ch)]);
            }
    return ds;
}

std::vector<RawImage> make_synthetic_images(int64_t count, uint64_t seed) {
    std::vector<RawImage> out;
    out.reserve(static_cast<size_t>(count));
    const int64_t s = kCifarSide;
    for (int64_t idx = 0; idx < count; ++idx) {
        Rng rng(seed, 0x5D47A000ULL + static_cast<uint64_t>(idx));
        std::vector<double> img(static_cast<size_t>(3 * s * s), 0.0);
        // smooth background: random linear gradient per channel
        for (int64_t ch = 0; ch < 3; ++ch) {
            const double a = rng.uniform(0.1, 0.9), gy = rng.uniform(-0.4, 0.4), gx = rng.uniform(-0.4, 0.4);
            for (int64_t y = 0; y < s; ++y)
                for (int64_t x = 0; x < s; ++x)
                    img[static_cast<size_t>((ch * s + y) * s + x)] =
                        a + gy * (static_cast<double>(y) / s - 0.5) + gx * (static_cast<double>(x) / s - 0.5);
        }
        const int64_t n_shapes = 1 + rng.below(3);
        int rect_area = 0, disc_area = 0;
        for (int64_t k = 0; k < n_shapes; ++k) {
            const bool disc = rng.next_double() < 0.5;
            const double cy = rng.uniform(4, s - 4), cx = rng.uniform(4, s - 4);
            const double r = rng.uniform(3, 9);
            double col[3] = {rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)};
            for (int64_t y = 0; y < s; ++y)
                for (int64_t x = 0; x < s; ++x) {
                    const bool inside = disc
                                            ? (y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r
                                            : std::abs(y - cy) <= r * 0.8 && std::abs(x - cx) <= r * 0.8;
                    if (!inside) continue;
                    (disc ? disc_area : rect_area)++;
                    for (int64_t ch = 0; ch < 3; ++ch)
                        img[static_cast<size_t>((ch * s + y) * s + x)] = col[ch];
                }
        }
        // light pixel noise keeps patches from being exactly constant
        for (auto& v : img) v += rng.uniform(-0.02, 0.02);
        RawImage rec;
        rec.label = disc_area > rect_area ? 1 : 0;
        rec.planes.resize(static_cast<size_t>(3 * s * s));
        for (size_t i = 0; i < img.size(); ++i)
            rec.planes[i] = static_cast<uint8_t>(std::lround(std::clamp(img[i], 0.0, 1.0) * 255.0));
        out.push_back(std::move(rec));
    }
    return out;
}

}  // namespace lcmae

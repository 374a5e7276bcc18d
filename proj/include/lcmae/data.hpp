#pragma once

#include <string>
#include <vector>

#include "lcmae/array.hpp"
#include "lcmae/rng.hpp"

namespace lcmae {

enum class DataFormat { CifarBinary, RawDir };
DataFormat data_format_from_string(const std::string& s);

// Loaded image corpus. Pixels are scaled to [0,1] and standardized with
// per-channel statistics computed once over the whole set.
struct Dataset {
    int64_t channels = 0, height = 0, width = 0;
    std::vector<Array<float>> images;  // standardized [C,H,W]
    std::vector<int> labels;           // -1 when the format carries none
    std::vector<double> channel_mean, channel_std;

    int64_t size() const { return static_cast<int64_t>(images.size()); }
};

Dataset load_dataset(const std::string& path, DataFormat format);

// Raw u8 image in cifar-binary plane order (R plane, G plane, B plane).
struct RawImage {
    uint8_t label = 0;
    std::vector<uint8_t> planes;  // 3*32*32
};

void write_cifar_binary(const std::string& path, const std::vector<RawImage>& records);

// raw-dir record: magic "IMG0", u32 C,H,W little-endian, C*H*W f32 pixels in
// [0,1], channel-major row-major.
void write_raw_image(const std::string& path, const Array<float>& image01);

// Procedural 32x32 corpus with enough structure for desk-scale training:
// smooth gradient background plus a handful of colored shapes. The label is
// the dominant shape kind (0 = rectangle, 1 = disc).
std::vector<RawImage> make_synthetic_images(int64_t count, uint64_t seed);

}  // namespace lcmae

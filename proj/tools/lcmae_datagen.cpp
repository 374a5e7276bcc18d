// Writes a synthetic image corpus in either dataset format, for runs without
// a real CIFAR download.
#include <CLI11.hpp>
#include <filesystem>
#include <iostream>

#include "lcmae/data.hpp"

using namespace lcmae;

int main(int argc, char** argv) {
    CLI::App app{"synthetic dataset generator"};
    std::string out = "data";
    std::string format = "cifar-binary";
    int64_t count = 512;
    uint64_t seed = 7;
    app.add_option("--out", out, "output file (cifar-binary) or directory (raw-dir)");
    app.add_option("--format", format, "cifar-binary | raw-dir");
    app.add_option("--count", count, "number of images");
    app.add_option("--seed", seed, "generator seed");
    CLI11_PARSE(app, argc, argv);

    try {
        const auto records = make_synthetic_images(count, seed);
        if (format == "cifar-binary") {
            if (!std::filesystem::path(out).parent_path().empty())
                std::filesystem::create_directories(std::filesystem::path(out).parent_path());
            write_cifar_binary(out, records);
        } else if (format == "raw-dir") {
            std::filesystem::create_directories(out);
            for (size_t i = 0; i < records.size(); ++i) {
                Array<float> img({3, 32, 32});
                for (int64_t k = 0; k < img.size(); ++k)
                    img[k] = static_cast<float>(records[i].planes[static_cast<size_t>(k)]) / 255.0f;
                char name[32];
                std::snprintf(name, sizeof(name), "/img%05zu.img", i);
                write_raw_image(out + name, img);
            }
        } else {
            std::cerr << "unknown format '" << format << "'\n";
            return 2;
        }
        std::cout << "wrote " << records.size() << " images to " << out << "\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

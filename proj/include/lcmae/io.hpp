#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lcmae/array.hpp"

namespace lcmae {

// %.17g formatting: doubles survive a CSV round trip bit-exactly.
std::string format_double(double v);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

// Binary PGM, P5, maxval 255.
void write_pgm(const std::string& path, int64_t width, int64_t height, const std::vector<uint8_t>& pixels);
struct Pgm {
    int64_t width = 0, height = 0;
    std::vector<uint8_t> pixels;
};
Pgm read_pgm(const std::string& path);

// Minimal CSV: header + rows of plain fields (no quoting; fields must not
// contain commas or newlines).
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};
void write_csv(const std::string& path, const CsvTable& table);
CsvTable read_csv(const std::string& path);

// Presentation-only line plot; never parsed back.
struct SvgSeries {
    std::string name;
    std::vector<double> xs, ys;
};
void write_svg_lineplot(const std::string& path, const std::string& title, const std::vector<SvgSeries>& series);

// ---- checkpoint container ----
// Flat little-endian container: magic "LCMAECKP", u32 version, u32 count,
// then per entry: u32 name_len, name bytes, u8 dtype (1=f32, 2=f64, 3=u8),
// u8 ndim, i64 shape[ndim], u64 nbytes, raw bytes. Round-trips bit-exactly.
struct CheckpointEntry {
    uint8_t dtype = 0;
    Shape shape;
    std::vector<uint8_t> bytes;
};

struct Checkpoint {
    std::map<std::string, CheckpointEntry> entries;

    void put_f32(const std::string& name, const Array<float>& a);
    void put_f64(const std::string& name, const Array<double>& a);
    void put_u8(const std::string& name, const Shape& shape, const std::vector<uint8_t>& bytes);
    Array<float> get_f32(const std::string& name) const;
    Array<double> get_f64(const std::string& name) const;
    const CheckpointEntry& get(const std::string& name) const;
    bool has(const std::string& name) const { return entries.count(name) > 0; }

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);
};

}  // namespace lcmae

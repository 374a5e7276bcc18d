#include "lcmae/io.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "lcmae/common.hpp"

namespace lcmae {

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!f) throw IoError("write failed: '" + path + "'");
}

std::string read_text_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_pgm(const std::string& path, int64_t width, int64_t height, const std::vector<uint8_t>& pixels) {
    if (static_cast<int64_t>(pixels.size()) != width * height) throw ShapeError("pgm pixel count mismatch");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    f << "P5\n" << width << " " << height << "\n255\n";
    f.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
    if (!f) throw IoError("write failed: '" + path + "'");
}

Pgm read_pgm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "'");
    std::string magic;
    f >> magic;
    if (magic != "P5") throw IoError("'" + path + "' is not a P5 pgm");
    Pgm p;
    int maxval = 0;
    f >> p.width >> p.height >> maxval;
    if (maxval != 255) throw IoError("'" + path + "': expected maxval 255");
    f.get();  // single whitespace after the header
    p.pixels.resize(static_cast<size_t>(p.width * p.height));
    f.read(reinterpret_cast<char*>(p.pixels.data()), static_cast<std::streamsize>(p.pixels.size()));
    if (!f) throw IoError("'" + path + "': truncated pixel data");
    return p;
}

void write_csv(const std::string& path, const CsvTable& table) {
    std::ostringstream ss;
    for (size_t i = 0; i < table.header.size(); ++i) {
        if (i) ss << ",";
        ss << table.header[i];
    }
    ss << "\n";
    for (const auto& row : table.rows) {
        if (row.size() != table.header.size()) throw IoError("csv row width mismatch");
        for (size_t i = 0; i < row.size(); ++i) {
            if (i) ss << ",";
            ss << row[i];
        }
        ss << "\n";
    }
    write_text_file(path, ss.str());
}

CsvTable read_csv(const std::string& path) {
    const std::string text = read_text_file(path);
    CsvTable t;
    std::istringstream ss(text);
    std::string line;
    bool first = true;
    while (std::getline(ss, line)) {
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::istringstream ls(line);
        std::string field;
        while (std::getline(ls, field, ',')) fields.push_back(field);
        if (!line.empty() && line.back() == ',') fields.push_back("");
        if (first) {
            t.header = std::move(fields);
            first = false;
        } else {
            t.rows.push_back(std::move(fields));
        }
    }
    return t;
}

void write_svg_lineplot(const std::string& path, const std::string& title,
                        const std::vector<SvgSeries>& series) {
    const double w = 640, h = 420, ml = 60, mr = 20, mt = 40, mb = 40;
    double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    bool any = false;
    for (const auto& s : series)
        for (size_t i = 0; i < s.xs.size(); ++i) {
            if (!any) {
                xmin = xmax = s.xs[i];
                ymin = ymax = s.ys[i];
                any = true;
            }
            xmin = std::min(xmin, s.xs[i]);
            xmax = std::max(xmax, s.xs[i]);
            ymin = std::min(ymin, s.ys[i]);
            ymax = std::max(ymax, s.ys[i]);
        }
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymax = ymin + 1;
    auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (w - ml - mr); };
    auto py = [&](double y) { return h - mb - (y - ymin) / (ymax - ymin) * (h - mt - mb); };
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
    std::ostringstream ss;
    ss << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h << "'>\n";
    ss << "<rect width='100%' height='100%' fill='white'/>\n";
    ss << "<text x='" << w / 2 << "' y='24' text-anchor='middle' font-size='15'>" << title << "</text>\n";
    ss << "<line x1='" << ml << "' y1='" << h - mb << "' x2='" << w - mr << "' y2='" << h - mb
       << "' stroke='black'/>\n";
    ss << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='" << h - mb << "' stroke='black'/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double xv = xmin + (xmax - xmin) * i / 4.0;
        const double yv = ymin + (ymax - ymin) * i / 4.0;
        ss << "<text x='" << px(xv) << "' y='" << h - mb + 16 << "' text-anchor='middle' font-size='10'>" << xv
           << "</text>\n";
        ss << "<text x='" << ml - 6 << "' y='" << py(yv) + 3 << "' text-anchor='end' font-size='10'>" << yv
           << "</text>\n";
    }
    size_t ci = 0;
    double legend_y = mt;
    for (const auto& s : series) {
        const char* color = colors[ci % 6];
        ss << "<polyline fill='none' stroke='" << color << "' stroke-width='1.5' points='";
        for (size_t i = 0; i < s.xs.size(); ++i) ss << px(s.xs[i]) << "," << py(s.ys[i]) << " ";
        ss << "'/>\n";
        ss << "<text x='" << w - mr - 4 << "' y='" << legend_y << "' text-anchor='end' font-size='11' fill='"
           << color << "'>" << s.name << "</text>\n";
        legend_y += 14;
        ++ci;
    }
    ss << "</svg>\n";
    write_text_file(path, ss.str());
}

// ---- checkpoint ----

namespace {
constexpr char kMagic[8] = {'L', 'C', 'M', 'A', 'E', 'C', 'K', 'P'};

template <typename T>
void append_le(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

template <typename T>
T take_le(const std::string& s, size_t& off) {
    if (off + sizeof(T) > s.size()) throw IoError("checkpoint: truncated file");
    T v;
    std::memcpy(&v, s.data() + off, sizeof(T));
    off += sizeof(T);
    return v;
}
}  // namespace

void Checkpoint::put_f32(const std::string& name, const Array<float>& a) {
    CheckpointEntry e;
    e.dtype = 1;
    e.shape = a.shape;
    e.bytes.resize(a.data.size() * sizeof(float));
    std::memcpy(e.bytes.data(), a.data.data(), e.bytes.size());
    entries[name] = std::move(e);
}

void Checkpoint::put_f64(const std::string& name, const Array<double>& a) {
    CheckpointEntry e;
    e.dtype = 2;
    e.shape = a.shape;
    e.bytes.resize(a.data.size() * sizeof(double));
    std::memcpy(e.bytes.data(), a.data.data(), e.bytes.size());
    entries[name] = std::move(e);
}

void Checkpoint::put_u8(const std::string& name, const Shape& shape, const std::vector<uint8_t>& bytes) {
    CheckpointEntry e;
    e.dtype = 3;
    e.shape = shape;
    e.bytes = bytes;
    entries[name] = std::move(e);
}

const CheckpointEntry& Checkpoint::get(const std::string& name) const {
    auto it = entries.find(name);
    if (it == entries.end()) throw IoError("checkpoint: no entry '" + name + "'");
    return it->second;
}

Array<float> Checkpoint::get_f32(const std::string& name) const {
    const CheckpointEntry& e = get(name);
    if (e.dtype != 1) throw IoError("checkpoint: '" + name + "' is not f32");
    Array<float> a(e.shape);
    std::memcpy(a.data.data(), e.bytes.data(), e.bytes.size());
    return a;
}

Array<double> Checkpoint::get_f64(const std::string& name) const {
    const CheckpointEntry& e = get(name);
    if (e.dtype != 2) throw IoError("checkpoint: '" + name + "' is not f64");
    Array<double> a(e.shape);
    std::memcpy(a.data.data(), e.bytes.data(), e.bytes.size());
    return a;
}

void Checkpoint::save(const std::string& path) const {
    std::string out;
    out.append(kMagic, sizeof(kMagic));
    append_le<uint32_t>(out, 1);
    append_le<uint32_t>(out, static_cast<uint32_t>(entries.size()));
    for (const auto& [name, e] : entries) {
        append_le<uint32_t>(out, static_cast<uint32_t>(name.size()));
        out.append(name);
        out.push_back(static_cast<char>(e.dtype));
        out.push_back(static_cast<char>(e.shape.size()));
        for (int64_t d : e.shape) append_le<int64_t>(out, d);
        append_le<uint64_t>(out, static_cast<uint64_t>(e.bytes.size()));
        out.append(reinterpret_cast<const char*>(e.bytes.data()), e.bytes.size());
    }
    write_text_file(path, out);
}

Checkpoint Checkpoint::load(const std::string& path) {
    const std::string s = read_text_file(path);
    size_t off = 0;
    if (s.size() < sizeof(kMagic) || std::memcmp(s.data(), kMagic, sizeof(kMagic)) != 0)
        throw IoError("'" + path + "' is not a checkpoint container");
    off = sizeof(kMagic);
    const uint32_t version = take_le<uint32_t>(s, off);
    if (version != 1) throw IoError("checkpoint version " + std::to_string(version) + " unsupported");
    const uint32_t count = take_le<uint32_t>(s, off);
    Checkpoint ck;
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t name_len = take_le<uint32_t>(s, off);
        if (off + name_len > s.size()) throw IoError("checkpoint: truncated name");
        std::string name = s.substr(off, name_len);
        off += name_len;
        CheckpointEntry e;
        e.dtype = static_cast<uint8_t>(take_le<char>(s, off));
        const uint8_t ndim = static_cast<uint8_t>(take_le<char>(s, off));
        e.shape.resize(ndim);
        for (uint8_t d = 0; d < ndim; ++d) e.shape[d] = take_le<int64_t>(s, off);
        const uint64_t nbytes = take_le<uint64_t>(s, off);
        if (off + nbytes > s.size()) throw IoError("checkpoint: truncated entry '" + name + "'");
        e.bytes.assign(s.begin() + static_cast<int64_t>(off), s.begin() + static_cast<int64_t>(off + nbytes));
        off += nbytes;
        ck.entries[name] = std::move(e);
    }
    return ck;
}

}  // namespace lcmae

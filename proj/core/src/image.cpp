#include "xmid/image.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace xmid {

namespace {

// Reads one whitespace-delimited PGM header token, skipping '#' comments.
std::string next_token(std::istream& is) {
    std::string tok;
    int c;
    while ((c = is.get()) != EOF) {
        if (c == '#') {
            while ((c = is.get()) != EOF && c != '\n') {
            }
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
    if (tok.empty()) throw std::runtime_error("truncated graymap header");
    return tok;
}

int parse_int(const std::string& s, const std::string& what) {
    try {
        std::size_t pos = 0;
        const int v = std::stoi(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error("bad " + what + " value: '" + s + "'");
    }
}

}  // namespace

void write_pgm16(const Tensor<float>& pixels, const std::filesystem::path& path) {
    if (pixels.rank() != 2) throw std::invalid_argument("graymap pixels must be rank 2");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
    const std::int64_t h = pixels.extent(0), w = pixels.extent(1);
    os << "P5\n" << w << " " << h << "\n65535\n";
    std::string buf(static_cast<std::size_t>(h * w) * 2, '\0');
    const float* p = pixels.data();
    for (std::int64_t i = 0; i < h * w; ++i) {
        const float v = p[i];
        if (!(v >= 0.0f && v <= 65535.0f)) {
            throw std::invalid_argument("pixel value " + std::to_string(v) +
                                        " outside [0,65535] at index " + std::to_string(i));
        }
        const std::uint16_t q = static_cast<std::uint16_t>(std::lround(v));
        buf[static_cast<std::size_t>(2 * i)] = static_cast<char>(q >> 8);  // big-endian samples
        buf[static_cast<std::size_t>(2 * i + 1)] = static_cast<char>(q & 0xff);
    }
    os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!os) throw std::runtime_error("failed writing graymap: " + path.string());
}

Tensor<float> read_pgm16(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open graymap: " + path.string());
    const std::string magic = next_token(is);
    if (magic != "P5") throw std::runtime_error("not a binary graymap (P5): " + path.string());
    const int w = parse_int(next_token(is), "width");
    const int h = parse_int(next_token(is), "height");
    const int maxval = parse_int(next_token(is), "maxval");
    if (w < 1 || h < 1) throw std::runtime_error("bad graymap dimensions in " + path.string());
    if (maxval != 65535) {
        throw std::runtime_error("expected 16-bit graymap (maxval 65535) in " + path.string());
    }
    // header tokenizer consumed exactly one whitespace byte after maxval
    std::string buf(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 2, '\0');
    if (!is.read(buf.data(), static_cast<std::streamsize>(buf.size()))) {
        throw std::runtime_error("truncated graymap data in " + path.string());
    }
    Tensor<float> pixels = Tensor<float>::zeros({h, w});
    float* p = pixels.data();
    for (std::size_t i = 0; i < static_cast<std::size_t>(w) * static_cast<std::size_t>(h); ++i) {
        const std::uint16_t hi = static_cast<std::uint8_t>(buf[2 * i]);
        const std::uint16_t lo = static_cast<std::uint8_t>(buf[2 * i + 1]);
        p[i] = static_cast<float>((hi << 8) | lo);
    }
    return pixels;
}

std::map<std::string, std::string> read_kv_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open: " + path.string());
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error("malformed key=value line in " + path.string() + ": " + line);
        }
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
}

void write_kv_file(const std::filesystem::path& path,
                   const std::map<std::string, std::string>& kv) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
    for (const auto& [k, v] : kv) os << k << "=" << v << "\n";
    if (!os) throw std::runtime_error("failed writing: " + path.string());
}

void write_slice(const ImageSlice& slice, const std::filesystem::path& pgm_path) {
    write_pgm16(slice.pixels, pgm_path);
    std::map<std::string, std::string> kv;
    kv["mouse_id"] = slice.mouse_id;
    kv["group"] = slice.group;
    kv["week"] = std::to_string(slice.week);
    kv["slice_index"] = std::to_string(slice.slice_index);
    kv["height"] = std::to_string(slice.height());
    kv["width"] = std::to_string(slice.width());
    write_kv_file(pgm_path.string() + ".meta", kv);
}

ImageSlice read_slice(const std::filesystem::path& pgm_path) {
    ImageSlice slice;
    slice.pixels = read_pgm16(pgm_path);
    const auto kv = read_kv_file(pgm_path.string() + ".meta");
    auto need = [&](const std::string& key) {
        auto it = kv.find(key);
        if (it == kv.end()) {
            throw std::runtime_error("metadata missing '" + key + "' in " + pgm_path.string() +
                                     ".meta");
        }
        return it->second;
    };
    slice.mouse_id = need("mouse_id");
    slice.group = need("group");
    slice.week = parse_int(need("week"), "week");
    slice.slice_index = parse_int(need("slice_index"), "slice_index");
    if (slice.week < 0 || slice.slice_index < 0) {
        throw std::runtime_error("negative week/slice_index in " + pgm_path.string() + ".meta");
    }
    const int mh = parse_int(need("height"), "height");
    const int mw = parse_int(need("width"), "width");
    if (mh != slice.height() || mw != slice.width()) {
        throw std::runtime_error("metadata/pixel dimension mismatch for " + pgm_path.string());
    }
    return slice;
}

}  // namespace xmid

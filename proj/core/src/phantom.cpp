#include "xmid/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "xmid/rng.hpp"

namespace xmid {

namespace {

std::string join_ints(const std::vector<int>& v) {
    std::ostringstream os;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) os << ',';
        os << v[i];
    }
    return os.str();
}

std::string join_strings(const std::vector<std::string>& v) {
    std::ostringstream os;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) os << ',';
        os << v[i];
    }
    return os.str();
}

struct MouseTraits {
    double radius;     // outer ring radius at profile scale 1, px
    double thickness;  // px
    double intensity;
};

MouseTraits mouse_traits(const PhantomConfig& c, int g, int m) {
    SeededRng rng(derive_seed(c.seed, {1, static_cast<std::uint64_t>(g), static_cast<std::uint64_t>(m)}));
    MouseTraits t;
    const double frac = c.radius_frac_min + (c.radius_frac_max - c.radius_frac_min) * rng.uniform();
    t.radius = frac * std::min(c.base_h, c.base_w);
    t.thickness = c.thickness_min + (c.thickness_max - c.thickness_min) * rng.uniform();
    t.intensity =
        c.ring_intensity_min + (c.ring_intensity_max - c.ring_intensity_min) * rng.uniform();
    return t;
}

struct WeekTraits {
    int h, w;
    int shift_r, shift_c;
};

WeekTraits week_traits(const PhantomConfig& c, int g, int m, int week) {
    SeededRng rng(derive_seed(c.seed, {2, static_cast<std::uint64_t>(g), static_cast<std::uint64_t>(m),
                                       static_cast<std::uint64_t>(week)}));
    WeekTraits t;
    t.h = c.base_h - static_cast<int>(rng.uniform_int(0, c.dim_jitter));
    t.w = c.base_w - static_cast<int>(rng.uniform_int(0, c.dim_jitter));
    t.shift_r = static_cast<int>(rng.uniform_int(-c.shift_jitter, c.shift_jitter));
    t.shift_c = static_cast<int>(rng.uniform_int(-c.shift_jitter, c.shift_jitter));
    return t;
}

int slice_count(const PhantomConfig& c, int g, int m, int week) {
    SeededRng rng(derive_seed(c.seed, {3, static_cast<std::uint64_t>(g), static_cast<std::uint64_t>(m),
                                       static_cast<std::uint64_t>(week)}));
    return static_cast<int>(rng.uniform_int(c.slices_min, c.slices_max));
}

}  // namespace

void PhantomConfig::validate() const {
    if (groups.empty() || mice_per_group < 1) throw std::invalid_argument("phantom needs groups and mice");
    if (weeks.empty()) throw std::invalid_argument("phantom needs at least one week");
    if (slices_min < 1 || slices_max < slices_min) throw std::invalid_argument("bad slice count range");
    if (base_h < 8 || base_w < 8) throw std::invalid_argument("base dims too small");
    if (dim_jitter < 0 || dim_jitter >= std::min(base_h, base_w) / 2) {
        throw std::invalid_argument("bad dimension jitter");
    }
    const int wk_min = *std::min_element(weeks.begin(), weeks.end());
    const int wk_max = *std::max_element(weeks.begin(), weeks.end());
    if (pth_onset_week < wk_min || pth_onset_week > wk_max) {
        throw std::invalid_argument("onset week outside the week span");
    }
    if (radius_frac_min <= 0 || radius_frac_max < radius_frac_min || radius_frac_max >= 0.5) {
        throw std::invalid_argument("bad ring radius range");
    }
    if (noise_sigma < 0 || pth_rate < 0) throw std::invalid_argument("negative noise/rate");
    if (shift_jitter < 0) throw std::invalid_argument("negative shift jitter");
}

std::map<std::string, std::string> PhantomConfig::to_kv() const {
    std::map<std::string, std::string> kv;
    kv["groups"] = join_strings(groups);
    kv["mice_per_group"] = std::to_string(mice_per_group);
    kv["weeks"] = join_ints(weeks);
    kv["slices_min"] = std::to_string(slices_min);
    kv["slices_max"] = std::to_string(slices_max);
    kv["base_h"] = std::to_string(base_h);
    kv["base_w"] = std::to_string(base_w);
    kv["dim_jitter"] = std::to_string(dim_jitter);
    kv["radius_frac_min"] = std::to_string(radius_frac_min);
    kv["radius_frac_max"] = std::to_string(radius_frac_max);
    kv["thickness_min"] = std::to_string(thickness_min);
    kv["thickness_max"] = std::to_string(thickness_max);
    kv["ring_intensity_min"] = std::to_string(ring_intensity_min);
    kv["ring_intensity_max"] = std::to_string(ring_intensity_max);
    kv["marrow_intensity"] = std::to_string(marrow_intensity);
    kv["background_intensity"] = std::to_string(background_intensity);
    kv["profile_min"] = std::to_string(profile_min);
    kv["pth_onset_week"] = std::to_string(pth_onset_week);
    kv["pth_rate"] = std::to_string(pth_rate);
    kv["pth_intensity_step"] = std::to_string(pth_intensity_step);
    kv["pth_thickness_step"] = std::to_string(pth_thickness_step);
    kv["noise_sigma"] = std::to_string(noise_sigma);
    kv["shift_jitter"] = std::to_string(shift_jitter);
    kv["missing_final_week_mouse"] = missing_final_week_mouse ? "1" : "0";
    kv["seed"] = std::to_string(seed);
    return kv;
}

std::string mouse_id_for(const PhantomConfig& config, int group_index, int mouse_index) {
    return config.groups.at(static_cast<std::size_t>(group_index)) + "_" +
           std::to_string(mouse_index);
}

ImageSlice render_slice(const PhantomConfig& config, int group_index, int mouse_index, int week,
                        int slice_index) {
    config.validate();
    const MouseTraits mouse = mouse_traits(config, group_index, mouse_index);
    const WeekTraits wk = week_traits(config, group_index, mouse_index, week);
    const bool treated = config.groups.at(static_cast<std::size_t>(group_index)) == "pth";
    const double weeks_since = treated ? std::max(0, week - config.pth_onset_week) : 0.0;

    // Geometry is week-independent apart from treated growth; the profile
    // varies the ring smoothly with the slice position along the bone.
    const double profile =
        config.profile_min + (1.0 - config.profile_min) * 0.5 * (1.0 + std::cos(slice_index / 7.0));
    const double base_outer = mouse.radius * profile;
    const double inner = base_outer - mouse.thickness;
    const double outer = base_outer + config.pth_rate * config.pth_thickness_step * weeks_since;
    const double ring_value =
        mouse.intensity + config.pth_rate * config.pth_intensity_step * weeks_since;

    const int h = wk.h, w = wk.w;
    const double cy = h / 2 + wk.shift_r;
    const double cx = w / 2 + wk.shift_c;
    if (cy - outer < 1.0 || cy + outer > h - 2.0 || cx - outer < 1.0 || cx + outer > w - 2.0) {
        throw std::invalid_argument("ring geometry exceeds image bounds (outer radius " +
                                    std::to_string(outer) + " in " + std::to_string(h) + "x" +
                                    std::to_string(w) + ")");
    }

    SeededRng noise(derive_seed(config.seed, {4, static_cast<std::uint64_t>(group_index),
                                              static_cast<std::uint64_t>(mouse_index),
                                              static_cast<std::uint64_t>(week),
                                              static_cast<std::uint64_t>(slice_index)}));
    std::normal_distribution<double> dist(0.0, 1.0);

    ImageSlice slice;
    slice.pixels = Tensor<float>::zeros({h, w});
    slice.mouse_id = mouse_id_for(config, group_index, mouse_index);
    slice.group = config.groups.at(static_cast<std::size_t>(group_index));
    slice.week = week;
    slice.slice_index = slice_index;
    float* p = slice.pixels.data();
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double d = std::hypot(y - cy, x - cx);
            double v = config.background_intensity;
            if (d < inner) {
                v = config.marrow_intensity;
            } else if (d <= outer) {
                v = ring_value;
            }
            if (config.noise_sigma > 0.0) v += config.noise_sigma * dist(noise.engine());
            v = std::clamp(v, 0.0, 65535.0);
            p[y * w + x] = static_cast<float>(std::lround(v));
        }
    }
    return slice;
}

DatasetManifest generate_dataset(const PhantomConfig& config, const std::filesystem::path& root) {
    config.validate();
    std::error_code ec;
    std::filesystem::create_directories(root, ec);
    if (ec || !std::filesystem::is_directory(root)) {
        throw std::runtime_error("cannot create dataset directory " + root.string() + ": " +
                                 ec.message());
    }
    std::vector<int> weeks = config.weeks;
    std::sort(weeks.begin(), weeks.end());
    const int final_week = weeks.back();

    DatasetManifest manifest;
    manifest.config_echo = config.to_kv();
    for (int g = 0; g < static_cast<int>(config.groups.size()); ++g) {
        for (int m = 0; m < config.mice_per_group; ++m) {
            const std::string mouse_id = mouse_id_for(config, g, m);
            for (int week : weeks) {
                const bool drop_week = config.missing_final_week_mouse &&
                                       config.groups[static_cast<std::size_t>(g)] == "pth" &&
                                       m == config.mice_per_group - 1 && week == final_week;
                if (drop_week) continue;
                const int count = slice_count(config, g, m, week);
                const std::filesystem::path dir = root / config.groups[static_cast<std::size_t>(g)] /
                                                  mouse_id / ("week_" + std::to_string(week));
                std::filesystem::create_directories(dir);
                for (int k = 0; k < count; ++k) {
                    const ImageSlice slice = render_slice(config, g, m, week, k);
                    const std::filesystem::path file = dir / ("slice_" + std::to_string(k) + ".pgm");
                    write_slice(slice, file);
                    const std::string rel = std::filesystem::relative(file, root).generic_string();
                    manifest.files.push_back({rel, fnv1a64_file(file)});
                    manifest.files.push_back({rel + ".meta", fnv1a64_file(file.string() + ".meta")});
                }
            }
        }
    }
    std::sort(manifest.files.begin(), manifest.files.end(),
              [](const ManifestEntry& a, const ManifestEntry& b) { return a.path < b.path; });
    write_manifest(manifest, root);
    return manifest;
}

std::uint64_t fnv1a64_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open for checksum: " + path.string());
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    char buf[1 << 16];
    while (is) {
        is.read(buf, sizeof(buf));
        const std::streamsize n = is.gcount();
        for (std::streamsize i = 0; i < n; ++i) {
            hash ^= static_cast<std::uint8_t>(buf[i]);
            hash *= 0x100000001b3ULL;
        }
    }
    return hash;
}

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& root) {
    std::ofstream os(root / "manifest.txt");
    if (!os) throw std::runtime_error("cannot write manifest under " + root.string());
    os << "format_version=" << manifest.format_version << "\n";
    for (const auto& [k, v] : manifest.config_echo) os << k << "=" << v << "\n";
    for (const auto& f : manifest.files) {
        os << "file " << f.path << " " << std::hex << f.checksum << std::dec << "\n";
    }
    if (!os) throw std::runtime_error("failed writing manifest");
}

DatasetManifest read_manifest(const std::filesystem::path& root) {
    std::ifstream is(root / "manifest.txt");
    if (!is) throw std::runtime_error("cannot open manifest under " + root.string());
    DatasetManifest manifest;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        if (line.rfind("file ", 0) == 0) {
            std::istringstream ls(line.substr(5));
            ManifestEntry entry;
            std::string hex;
            if (!(ls >> entry.path >> hex)) throw std::runtime_error("malformed manifest line: " + line);
            entry.checksum = std::stoull(hex, nullptr, 16);
            manifest.files.push_back(std::move(entry));
        } else {
            const std::size_t eq = line.find('=');
            if (eq == std::string::npos) throw std::runtime_error("malformed manifest line: " + line);
            const std::string key = line.substr(0, eq);
            const std::string value = line.substr(eq + 1);
            if (key == "format_version") {
                manifest.format_version = std::stoi(value);
            } else {
                manifest.config_echo[key] = value;
            }
        }
    }
    return manifest;
}

void verify_dataset(const std::filesystem::path& root) {
    const DatasetManifest manifest = read_manifest(root);
    for (const auto& f : manifest.files) {
        const std::filesystem::path path = root / f.path;
        if (!std::filesystem::exists(path)) {
            throw std::runtime_error("manifest references missing file " + f.path);
        }
        if (fnv1a64_file(path) != f.checksum) {
            throw std::runtime_error("checksum mismatch for " + f.path);
        }
        if (path.extension() == ".pgm") {
            const ImageSlice slice = read_slice(path);
            const std::string week_dir = path.parent_path().filename().string();
            if (week_dir != "week_" + std::to_string(slice.week)) {
                throw std::runtime_error("metadata week does not match directory for " + f.path);
            }
        }
    }
}

std::vector<ImageSlice> load_dataset_dir(const std::filesystem::path& root) {
    if (!std::filesystem::is_directory(root)) {
        throw std::runtime_error("dataset directory not found: " + root.string());
    }
    std::vector<std::filesystem::path> paths;
    for (const auto& entry : std::filesystem::recursive_directory_iterator(root)) {
        if (entry.is_regular_file() && entry.path().extension() == ".pgm") {
            paths.push_back(entry.path());
        }
    }
    std::sort(paths.begin(), paths.end());  // directory iteration order is unspecified
    std::vector<ImageSlice> slices;
    slices.reserve(paths.size());
    for (const auto& p : paths) slices.push_back(read_slice(p));
    if (slices.empty()) throw std::runtime_error("no slices found under " + root.string());
    return slices;
}

}  // namespace xmid

#include "xmid/prep.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>

#include "xmid/phantom.hpp"
#include "xmid/report.hpp"

namespace xmid {

namespace {

float min_pixel(const Tensor<float>& pixels) { return reduce_scalar(Reduce::min, pixels); }

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(field);
            field.clear();
        } else if (c != '\r') {
            field.push_back(c);
        }
    }
    fields.push_back(field);
    return fields;
}

}  // namespace

ImageSlice expand_image(const ImageSlice& slice, int target_h, int target_w) {
    const std::int64_t h = slice.height(), w = slice.width();
    if (target_h < h || target_w < w) {
        throw std::invalid_argument("expansion target " + std::to_string(target_h) + "x" +
                                    std::to_string(target_w) + " smaller than image " +
                                    std::to_string(h) + "x" + std::to_string(w));
    }
    ImageSlice out = slice;
    if (target_h == h && target_w == w) return out;
    const float fill = min_pixel(slice.pixels);
    const std::int64_t off_r = (target_h - h) / 2;
    const std::int64_t off_c = (target_w - w) / 2;
    out.pixels = Tensor<float>::full({target_h, target_w}, fill);
    for (std::int64_t r = 0; r < h; ++r) {
        std::copy_n(slice.pixels.data() + r * w, w,
                    out.pixels.data() + (r + off_r) * target_w + off_c);
    }
    return out;
}

std::pair<int, int> max_dims(const std::vector<ImageSlice>& slices) {
    if (slices.empty()) throw std::invalid_argument("max_dims of empty dataset");
    std::int64_t h = 0, w = 0;
    for (const auto& s : slices) {
        h = std::max(h, s.height());
        w = std::max(w, s.width());
    }
    return {static_cast<int>(h), static_cast<int>(w)};
}

std::pair<int, int> register_translation(const Tensor<float>& reference,
                                         const Tensor<float>& moving, int max_shift) {
    if (reference.rank() != 2 || moving.rank() != 2 || reference.shape() != moving.shape()) {
        throw std::invalid_argument("registration expects two equal rank-2 images");
    }
    if (max_shift < 0) throw std::invalid_argument("max_shift must be >= 0");
    const std::int64_t h = reference.extent(0), w = reference.extent(1);

    auto whole_variance = [&](const Tensor<float>& t) {
        double sum = 0.0, sumsq = 0.0;
        const float* p = t.data();
        for (std::size_t i = 0; i < t.numel(); ++i) {
            sum += p[i];
            sumsq += static_cast<double>(p[i]) * p[i];
        }
        const double n = static_cast<double>(t.numel());
        return sumsq / n - (sum / n) * (sum / n);
    };
    if (whole_variance(reference) <= 0.0 || whole_variance(moving) <= 0.0) {
        throw std::runtime_error("zero-variance image: correlation-based registration undefined");
    }

    const int side = 2 * max_shift + 1;
    std::vector<double> scores(static_cast<std::size_t>(side) * side,
                               -std::numeric_limits<double>::infinity());
    const float* rp = reference.data();
    const float* mp = moving.data();
#pragma omp parallel for collapse(2) schedule(static)
    for (int di = 0; di < side; ++di) {
        for (int dj = 0; dj < side; ++dj) {
            const int dx = di - max_shift;  // row shift
            const int dy = dj - max_shift;  // col shift
            const std::int64_t r0 = std::max<std::int64_t>(0, dx);
            const std::int64_t r1 = std::min<std::int64_t>(h, h + dx);
            const std::int64_t c0 = std::max<std::int64_t>(0, dy);
            const std::int64_t c1 = std::min<std::int64_t>(w, w + dy);
            if (r0 >= r1 || c0 >= c1) continue;
            double sm = 0.0, sr = 0.0, smm = 0.0, srr = 0.0, smr = 0.0;
            for (std::int64_t r = r0; r < r1; ++r) {
                const float* mrow = mp + r * w;
                const float* rrow = rp + (r - dx) * w - dy;
                for (std::int64_t c = c0; c < c1; ++c) {
                    const double mv = mrow[c];
                    const double rv = rrow[c];
                    sm += mv;
                    sr += rv;
                    smm += mv * mv;
                    srr += rv * rv;
                    smr += mv * rv;
                }
            }
            const double n = static_cast<double>((r1 - r0) * (c1 - c0));
            const double var_m = smm - sm * sm / n;
            const double var_r = srr - sr * sr / n;
            if (var_m <= 0.0 || var_r <= 0.0) continue;
            const double cov = smr - sm * sr / n;
            scores[static_cast<std::size_t>(di) * side + dj] = cov / std::sqrt(var_m * var_r);
        }
    }

    int best_dx = 0, best_dy = 0;
    double best = -std::numeric_limits<double>::infinity();
    bool found = false;
    for (int di = 0; di < side; ++di) {
        for (int dj = 0; dj < side; ++dj) {
            const double s = scores[static_cast<std::size_t>(di) * side + dj];
            if (s == -std::numeric_limits<double>::infinity()) continue;
            const int dx = di - max_shift, dy = dj - max_shift;
            bool take = false;
            if (!found || s > best) {
                take = true;
            } else if (s == best) {
                const int cur = std::abs(dx) + std::abs(dy);
                const int prev = std::abs(best_dx) + std::abs(best_dy);
                take = cur < prev;  // equal taxicab length keeps the earlier scan hit
            }
            if (take) {
                best = s;
                best_dx = dx;
                best_dy = dy;
                found = true;
            }
        }
    }
    if (!found) {
        throw std::runtime_error("registration found no valid overlap (degenerate images)");
    }
    return {best_dx, best_dy};
}

Tensor<float> apply_translation(const Tensor<float>& pixels, int dx, int dy, float fill) {
    if (pixels.rank() != 2) throw std::invalid_argument("apply_translation expects rank 2");
    const std::int64_t h = pixels.extent(0), w = pixels.extent(1);
    Tensor<float> out = Tensor<float>::full(pixels.shape(), fill);
    const float* in = pixels.data();
    float* op = out.data();
    for (std::int64_t r = 0; r < h; ++r) {
        const std::int64_t src_r = r - dx;
        if (src_r < 0 || src_r >= h) continue;
        const std::int64_t c0 = std::max<std::int64_t>(0, dy);
        const std::int64_t c1 = std::min<std::int64_t>(w, w + dy);
        if (c0 >= c1) continue;
        std::copy_n(in + src_r * w + (c0 - dy), c1 - c0, op + r * w + c0);
    }
    return out;
}

DifferenceImage difference_image(const ImageSlice& comparison, const ImageSlice& reference,
                                 DiffMode mode, int max_shift) {
    if (comparison.mouse_id != reference.mouse_id) {
        throw std::invalid_argument("differencing across mice: " + comparison.mouse_id + " vs " +
                                    reference.mouse_id);
    }
    if (comparison.pixels.shape() != reference.pixels.shape()) {
        throw std::invalid_argument("differencing needs equal dims (expand first)");
    }
    if (comparison.week < reference.week) {
        throw std::invalid_argument("comparison week precedes reference week");
    }
    int dx = 0, dy = 0;
    try {
        std::tie(dx, dy) = register_translation(reference.pixels, comparison.pixels, max_shift);
    } catch (const std::runtime_error&) {
        dx = 0;  // degenerate images align trivially
        dy = 0;
    }
    const Tensor<float> aligned =
        apply_translation(reference.pixels, dx, dy, min_pixel(reference.pixels));
    DifferenceImage diff;
    diff.pixels = elementwise(Elementwise::sub, comparison.pixels, aligned);
    diff.comparison_week = comparison.week;
    diff.reference_week = reference.week;
    diff.mode = mode;
    diff.dx = dx;
    diff.dy = dy;
    return diff;
}

DifferenceImage first_week_difference(const ImageSlice& comparison, DiffMode mode) {
    DifferenceImage diff;
    diff.pixels = Tensor<float>::full(comparison.pixels.shape(), min_pixel(comparison.pixels));
    diff.comparison_week = comparison.week;
    diff.reference_week = comparison.week;
    diff.mode = mode;
    return diff;
}

std::optional<int> select_reference(const std::vector<int>& series, int t, DiffMode mode) {
    if (series.empty()) throw std::invalid_argument("empty week series");
    if (std::find(series.begin(), series.end(), t) == series.end()) {
        throw std::invalid_argument("week " + std::to_string(t) + " not in series");
    }
    const int earliest = *std::min_element(series.begin(), series.end());
    if (t == earliest) return std::nullopt;
    if (mode == DiffMode::absolute) return earliest;
    int best = earliest;
    for (int wk : series) {
        if (wk < t && wk > best) best = wk;
    }
    return best;
}

SlicePairs pair_slices(const std::vector<ImageSlice>& ref_week,
                       const std::vector<ImageSlice>& comp_week) {
    std::vector<const ImageSlice*> refs, comps;
    refs.reserve(ref_week.size());
    comps.reserve(comp_week.size());
    for (const auto& s : ref_week) refs.push_back(&s);
    for (const auto& s : comp_week) comps.push_back(&s);
    auto by_index = [](const ImageSlice* a, const ImageSlice* b) {
        return a->slice_index < b->slice_index;
    };
    std::sort(refs.begin(), refs.end(), by_index);
    std::sort(comps.begin(), comps.end(), by_index);
    SlicePairs result;
    const std::size_t k = std::min(refs.size(), comps.size());
    result.pairs.reserve(k);
    for (std::size_t i = 0; i < k; ++i) result.pairs.emplace_back(refs[i], comps[i]);
    result.unused = std::max(refs.size(), comps.size()) - k;
    return result;
}

DatasetSplit partition(std::vector<Sample> samples, const std::vector<std::string>& groups,
                       SeededRng& rng) {
    if (samples.empty()) throw std::invalid_argument("partition of empty sample set");
    std::map<std::string, std::set<std::string>> mice_by_group;
    for (const auto& s : samples) mice_by_group[s.slice.group].insert(s.slice.mouse_id);
    DatasetSplit split;
    for (const auto& group : groups) {
        auto it = mice_by_group.find(group);
        if (it == mice_by_group.end() || it->second.size() < 2) {
            throw std::invalid_argument("group '" + group + "' needs >= 2 mice to hold one out");
        }
        std::vector<std::string> mice(it->second.begin(), it->second.end());
        const std::size_t pick = static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(mice.size()) - 1));
        split.held_out_mice[group] = mice[pick];
    }

    std::vector<Sample> rest;
    rest.reserve(samples.size());
    for (auto& s : samples) {
        const auto held = split.held_out_mice.find(s.slice.group);
        if (held == split.held_out_mice.end()) {
            throw std::invalid_argument("sample group '" + s.slice.group + "' not in group list");
        }
        if (held->second == s.slice.mouse_id) {
            split.test.push_back(std::move(s));
        } else {
            rest.push_back(std::move(s));
        }
    }
    rng.shuffle(rest);
    const std::size_t n_train = rest.size() * 9 / 10;
    split.train.assign(std::make_move_iterator(rest.begin()),
                       std::make_move_iterator(rest.begin() + static_cast<std::ptrdiff_t>(n_train)));
    split.validation.assign(std::make_move_iterator(rest.begin() + static_cast<std::ptrdiff_t>(n_train)),
                            std::make_move_iterator(rest.end()));
    return split;
}

BalanceReport class_balance_report(const DatasetSplit& split,
                                   const std::vector<std::string>& groups) {
    BalanceReport report;
    report.groups = groups;
    auto row_for = [&](const std::string& name, const std::vector<Sample>& samples) {
        BalanceReport::Row row;
        row.split = name;
        row.count.assign(groups.size(), 0);
        for (const auto& s : samples) {
            const auto it = std::find(groups.begin(), groups.end(), s.slice.group);
            if (it == groups.end()) throw std::invalid_argument("sample group not in group list");
            ++row.count[static_cast<std::size_t>(it - groups.begin())];
        }
        row.total = static_cast<std::int64_t>(samples.size());
        row.percent.assign(groups.size(), 0.0);
        if (row.total > 0) {
            for (std::size_t g = 0; g < groups.size(); ++g) {
                row.percent[g] = 100.0 * static_cast<double>(row.count[g]) /
                                 static_cast<double>(row.total);
            }
        }
        return row;
    };
    report.rows.push_back(row_for("train", split.train));
    report.rows.push_back(row_for("validation", split.validation));
    report.rows.push_back(row_for("test", split.test));
    return report;
}

std::string format_balance_table(const BalanceReport& report) {
    TextTable table;
    std::vector<std::string> header{"split"};
    for (const auto& g : report.groups) header.push_back(g + " /%");
    header.push_back("total");
    table.header(std::move(header));
    for (const auto& row : report.rows) {
        std::vector<std::string> cells{row.split};
        for (double p : row.percent) cells.push_back(format_fixed(p, 2));
        cells.push_back(std::to_string(row.total));
        table.row(std::move(cells));
    }
    return table.to_string();
}

std::string balance_csv(const BalanceReport& report) {
    std::ostringstream os;
    os << "split";
    for (const auto& g : report.groups) os << "," << g << "_percent," << g << "_count";
    os << ",total\n";
    for (const auto& row : report.rows) {
        os << row.split;
        for (std::size_t g = 0; g < report.groups.size(); ++g) {
            os << "," << format_fixed(row.percent[g], 2) << "," << row.count[g];
        }
        os << "," << row.total << "\n";
    }
    return os.str();
}

namespace {

// (reference, comparison) differencing work unit; results land in a fixed
// slot so parallel execution keeps deterministic output order.
struct DiffTask {
    const ImageSlice* reference;
    const ImageSlice* comparison;
};

}  // namespace

PreparedDataset prepare_dataset(const std::filesystem::path& raw_root, const PrepOptions& options) {
    return prepare_dataset(load_dataset_dir(raw_root), options);
}

PreparedDataset prepare_dataset(std::vector<ImageSlice> slices, const PrepOptions& options) {
    if (slices.empty()) throw std::invalid_argument("prepare_dataset needs slices");

    PreparedDataset prepared;
    prepared.options = options;

    // Canonical group order: "wild" (control) first when present, then sorted.
    std::set<std::string> group_set;
    for (const auto& s : slices) group_set.insert(s.group);
    std::vector<std::string> groups(group_set.begin(), group_set.end());
    if (auto it = std::find(groups.begin(), groups.end(), "wild"); it != groups.end()) {
        std::rotate(groups.begin(), it, it + 1);
    }
    prepared.groups = groups;
    auto label_of = [&](const std::string& group) {
        return static_cast<int>(std::find(groups.begin(), groups.end(), group) - groups.begin());
    };

    const auto [target_h, target_w] = max_dims(slices);
    prepared.height = target_h;
    prepared.width = target_w;
    std::vector<ImageSlice> expanded(slices.size());
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(slices.size()); ++i) {
        expanded[static_cast<std::size_t>(i)] =
            expand_image(slices[static_cast<std::size_t>(i)], target_h, target_w);
    }
    slices.clear();

    std::map<std::string, std::map<int, std::vector<ImageSlice>>> by_mouse;
    for (auto& s : expanded) by_mouse[s.mouse_id][s.week].push_back(std::move(s));
    expanded.clear();
    for (auto& [mouse, by_week] : by_mouse) {
        for (auto& [week, list] : by_week) {
            std::sort(list.begin(), list.end(), [](const ImageSlice& a, const ImageSlice& b) {
                return a.slice_index < b.slice_index;
            });
        }
    }

    std::vector<Sample> samples;
    if (!options.mode) {
        for (auto& [mouse, by_week] : by_mouse) {
            for (auto& [week, list] : by_week) {
                for (auto& slice : list) {
                    Sample s;
                    s.timestamp = static_cast<float>(slice.week);
                    s.label = label_of(slice.group);
                    s.slice = std::move(slice);
                    samples.push_back(std::move(s));
                }
            }
        }
    } else {
        const DiffMode mode = *options.mode;
        std::vector<DiffTask> tasks;
        for (auto& [mouse, by_week] : by_mouse) {
            std::vector<int> series;
            for (const auto& [week, list] : by_week) series.push_back(week);
            for (const auto& [week, list] : by_week) {
                const std::optional<int> t0 = select_reference(series, week, mode);
                if (!t0) {
                    for (const auto& slice : list) {
                        Sample s;
                        s.slice = slice;
                        s.difference = first_week_difference(slice, mode);
                        s.timestamp = static_cast<float>(slice.week);
                        s.label = label_of(slice.group);
                        samples.push_back(std::move(s));
                    }
                    continue;
                }
                SlicePairs pairs = pair_slices(by_week.at(*t0), list);
                prepared.unused_slices += pairs.unused;
                prepared.pair_candidates += std::max(by_week.at(*t0).size(), list.size());
                for (const auto& [ref, comp] : pairs.pairs) tasks.push_back({ref, comp});
            }
        }
        std::vector<Sample> diff_samples(tasks.size());
#pragma omp parallel for schedule(dynamic, 8)
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(tasks.size()); ++i) {
            const DiffTask& task = tasks[static_cast<std::size_t>(i)];
            Sample s;
            s.slice = *task.comparison;
            s.difference = difference_image(*task.comparison, *task.reference, mode,
                                            options.max_shift);
            s.timestamp = static_cast<float>(task.comparison->week);
            s.label = label_of(task.comparison->group);
            diff_samples[static_cast<std::size_t>(i)] = std::move(s);
        }
        for (auto& s : diff_samples) samples.push_back(std::move(s));
    }

    std::sort(samples.begin(), samples.end(), [](const Sample& a, const Sample& b) {
        return std::tie(a.slice.group, a.slice.mouse_id, a.slice.week, a.slice.slice_index) <
               std::tie(b.slice.group, b.slice.mouse_id, b.slice.week, b.slice.slice_index);
    });

    SeededRng rng(options.seed);
    prepared.split = partition(std::move(samples), groups, rng);
    return prepared;
}

// --- prepared dataset on disk --------------------------------------------------

namespace {

constexpr char kDiffMagic[4] = {'X', 'D', 'I', 'F'};

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("difference file truncated");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_xdif(const DifferenceImage& diff, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write difference file " + path.string());
    os.write(kDiffMagic, 4);
    put_u32(os, 1);
    put_u32(os, static_cast<std::uint32_t>(diff.pixels.extent(0)));
    put_u32(os, static_cast<std::uint32_t>(diff.pixels.extent(1)));
    put_u32(os, static_cast<std::uint32_t>(diff.comparison_week));
    put_u32(os, static_cast<std::uint32_t>(diff.reference_week));
    put_u32(os, diff.mode == DiffMode::absolute ? 0u : 1u);
    put_u32(os, static_cast<std::uint32_t>(diff.dx));
    put_u32(os, static_cast<std::uint32_t>(diff.dy));
    for (std::size_t i = 0; i < diff.pixels.numel(); ++i) {
        put_u32(os, std::bit_cast<std::uint32_t>(diff.pixels[i]));
    }
    if (!os) throw std::runtime_error("failed writing " + path.string());
}

DifferenceImage read_xdif(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open difference file " + path.string());
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kDiffMagic, 4) != 0) {
        throw std::runtime_error("not a difference file: " + path.string());
    }
    if (get_u32(is) != 1) throw std::runtime_error("unsupported difference file version");
    DifferenceImage diff;
    const std::int64_t h = static_cast<std::int64_t>(get_u32(is));
    const std::int64_t w = static_cast<std::int64_t>(get_u32(is));
    diff.comparison_week = static_cast<int>(get_u32(is));
    diff.reference_week = static_cast<int>(get_u32(is));
    diff.mode = get_u32(is) == 0 ? DiffMode::absolute : DiffMode::relative;
    diff.dx = static_cast<int>(get_u32(is));
    diff.dy = static_cast<int>(get_u32(is));
    diff.pixels = Tensor<float>::zeros({h, w});
    for (std::size_t i = 0; i < diff.pixels.numel(); ++i) {
        diff.pixels[i] = std::bit_cast<float>(get_u32(is));
    }
    return diff;
}

std::string sample_rel_path(const Sample& s, const char* ext) {
    return s.slice.group + "/" + s.slice.mouse_id + "/week_" + std::to_string(s.slice.week) +
           "/slice_" + std::to_string(s.slice.slice_index) + ext;
}

const char* split_name(SplitId id) {
    switch (id) {
        case SplitId::train: return "train";
        case SplitId::validation: return "validation";
        case SplitId::test: return "test";
    }
    return "?";
}

}  // namespace

void write_prepared(const PreparedDataset& prepared, const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir / "images");
    const bool has_diff = prepared.options.mode.has_value();
    if (has_diff) std::filesystem::create_directories(out_dir / "diffs");

    std::ofstream csv(out_dir / "samples.csv");
    if (!csv) throw std::runtime_error("cannot write samples.csv");
    csv << "id,split,group,mouse,week,slice_index,reference_week,timestamp,label,image,diff\n";
    std::size_t id = 0;
    auto emit_split = [&](const std::vector<Sample>& samples, const char* split) {
        for (const Sample& s : samples) {
            const std::string img_rel = "images/" + sample_rel_path(s, ".pgm");
            const std::filesystem::path img_path = out_dir / img_rel;
            std::filesystem::create_directories(img_path.parent_path());
            write_slice(s.slice, img_path);
            std::string diff_rel;
            int ref_week = s.slice.week;
            if (s.difference) {
                diff_rel = "diffs/" + sample_rel_path(s, ".xdif");
                const std::filesystem::path diff_path = out_dir / diff_rel;
                std::filesystem::create_directories(diff_path.parent_path());
                write_xdif(*s.difference, diff_path);
                ref_week = s.difference->reference_week;
            }
            csv << "s" << std::setw(6) << std::setfill('0') << id++ << std::setfill(' ') << ","
                << split << "," << s.slice.group << "," << s.slice.mouse_id << "," << s.slice.week
                << "," << s.slice.slice_index << "," << ref_week << "," << s.timestamp << ","
                << s.label << "," << img_rel << "," << diff_rel << "\n";
        }
    };
    // Direct container access: serialization must not count as a test read.
    emit_split(prepared.split.train, "train");
    emit_split(prepared.split.validation, "validation");
    emit_split(prepared.split.test, "test");
    csv.close();
    if (!csv) throw std::runtime_error("failed writing samples.csv");

    std::map<std::string, std::string> meta;
    meta["format_version"] = "1";
    meta["mode"] = has_diff ? diff_mode_name(*prepared.options.mode) : "none";
    meta["timestamps"] = prepared.options.timestamps ? "on" : "off";
    meta["max_shift"] = std::to_string(prepared.options.max_shift);
    meta["seed"] = std::to_string(prepared.options.seed);
    meta["height"] = std::to_string(prepared.height);
    meta["width"] = std::to_string(prepared.width);
    std::string groups;
    for (std::size_t i = 0; i < prepared.groups.size(); ++i) {
        if (i) groups += ",";
        groups += prepared.groups[i];
    }
    meta["groups"] = groups;
    for (const auto& [group, mouse] : prepared.split.held_out_mice) {
        meta["held_out_" + group] = mouse;
    }
    meta["unused_slices"] = std::to_string(prepared.unused_slices);
    meta["pair_candidates"] = std::to_string(prepared.pair_candidates);
    meta["train_count"] = std::to_string(prepared.split.train.size());
    meta["validation_count"] = std::to_string(prepared.split.validation.size());
    meta["test_count"] = std::to_string(prepared.split.test.size());
    write_kv_file(out_dir / "prep.meta", meta);

    const BalanceReport balance = class_balance_report(prepared.split, prepared.groups);
    {
        std::ofstream txt(out_dir / "balance.txt");
        txt << format_balance_table(balance);
    }
    {
        std::ofstream c(out_dir / "balance.csv");
        c << balance_csv(balance);
    }
}

PreparedDataset load_prepared(const std::filesystem::path& dir) {
    const auto meta = read_kv_file(dir / "prep.meta");
    auto need = [&](const std::string& key) {
        auto it = meta.find(key);
        if (it == meta.end()) throw std::runtime_error("prep.meta missing '" + key + "'");
        return it->second;
    };
    PreparedDataset prepared;
    const std::string mode = need("mode");
    if (mode == "abs") {
        prepared.options.mode = DiffMode::absolute;
    } else if (mode == "rel") {
        prepared.options.mode = DiffMode::relative;
    } else if (mode != "none") {
        throw std::runtime_error("prep.meta has unknown mode '" + mode + "'");
    }
    prepared.options.timestamps = need("timestamps") == "on";
    prepared.options.max_shift = std::stoi(need("max_shift"));
    prepared.options.seed = std::stoull(need("seed"));
    prepared.height = std::stoi(need("height"));
    prepared.width = std::stoi(need("width"));
    {
        std::string g = need("groups");
        std::istringstream gs(g);
        std::string item;
        while (std::getline(gs, item, ',')) prepared.groups.push_back(item);
    }
    for (const auto& g : prepared.groups) {
        auto it = meta.find("held_out_" + g);
        if (it != meta.end()) prepared.split.held_out_mice[g] = it->second;
    }
    prepared.unused_slices = std::stoull(need("unused_slices"));
    prepared.pair_candidates = std::stoull(need("pair_candidates"));

    std::ifstream csv(dir / "samples.csv");
    if (!csv) throw std::runtime_error("cannot open samples.csv under " + dir.string());
    std::string line;
    if (!std::getline(csv, line)) throw std::runtime_error("samples.csv is empty");
    while (std::getline(csv, line)) {
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != 11) throw std::runtime_error("malformed samples.csv row: " + line);
        Sample s;
        const std::string& split = fields[1];
        s.slice.group = fields[2];
        s.slice.mouse_id = fields[3];
        s.slice.week = std::stoi(fields[4]);
        s.slice.slice_index = std::stoi(fields[5]);
        s.timestamp = std::stof(fields[7]);
        s.label = std::stoi(fields[8]);
        s.slice.pixels = read_pgm16(dir / fields[9]);
        if (!fields[10].empty()) s.difference = read_xdif(dir / fields[10]);
        if (split == "train") {
            prepared.split.train.push_back(std::move(s));
        } else if (split == "validation") {
            prepared.split.validation.push_back(std::move(s));
        } else if (split == "test") {
            prepared.split.test.push_back(std::move(s));
        } else {
            throw std::runtime_error("unknown split '" + split + "' in samples.csv");
        }
    }
    return prepared;
}

}  // namespace xmid

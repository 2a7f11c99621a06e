// Temporal preprocessing pipeline: dimension standardization, translation
// registration, difference images with absolute/relative reference selection,
// slice pairing, timestamping, and subject-held-out partitioning.

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "xmid/image.hpp"
#include "xmid/rng.hpp"

namespace xmid {

enum class DiffMode { absolute, relative };

inline const char* diff_mode_name(DiffMode mode) {
    return mode == DiffMode::absolute ? "abs" : "rel";
}

struct DifferenceImage {
    Tensor<float> pixels;  // signed
    int comparison_week = 0;
    int reference_week = 0;  // == comparison_week marks the first-week sentinel
    DiffMode mode = DiffMode::absolute;
    int dx = 0, dy = 0;  // translation applied to the reference (rows, cols)

    bool first_week() const { return reference_week == comparison_week; }
};

// Centers the image on a target_h x target_w canvas; surrounding pixels take
// the image's own minimum intensity.
ImageSlice expand_image(const ImageSlice& slice, int target_h, int target_w);

std::pair<int, int> max_dims(const std::vector<ImageSlice>& slices);

// Exhaustive integer search over |dx|,|dy| <= max_shift maximizing normalized
// cross-correlation on the overlap; returns s such that moving matches
// shift(reference, s). Ties break toward smaller |dx|+|dy|, then scan order.
// Throws on zero-variance (degenerate) images; callers substitute (0,0).
std::pair<int, int> register_translation(const Tensor<float>& reference,
                                         const Tensor<float>& moving, int max_shift);

// out[r][c] = in[r-dx][c-dy], exposed borders set to fill.
Tensor<float> apply_translation(const Tensor<float>& pixels, int dx, int dy, float fill);

// Registers the reference to the comparison, applies the translation (border
// fill: the reference's own minimum), and subtracts pixel-wise.
DifferenceImage difference_image(const ImageSlice& comparison, const ImageSlice& reference,
                                 DiffMode mode, int max_shift = 16);

// First-timestamp sentinel: uniform at the comparison image's own minimum.
DifferenceImage first_week_difference(const ImageSlice& comparison,
                                      DiffMode mode = DiffMode::absolute);

// absolute: earliest recorded week; relative: most recent week before t.
// nullopt marks the first-week sentinel. t must be in the series.
std::optional<int> select_reference(const std::vector<int>& series, int t, DiffMode mode);

struct SlicePairs {
    std::vector<std::pair<const ImageSlice*, const ImageSlice*>> pairs;  // (reference, comparison)
    std::size_t unused = 0;
};

// Index-aligned pairing up to min(len_ref, len_comp), both sides sorted by
// slice index; leftover slices from the longer week are counted as unused.
SlicePairs pair_slices(const std::vector<ImageSlice>& ref_week,
                       const std::vector<ImageSlice>& comp_week);

struct Sample {
    ImageSlice slice;
    std::optional<DifferenceImage> difference;
    float timestamp = 0.0f;  // raw integer week
    int label = 0;
};

enum class SplitId { train, validation, test };

struct DatasetSplit {
    std::vector<Sample> train, validation, test;
    std::map<std::string, std::string> held_out_mice;  // group -> mouse id
};

// Holds out one random mouse per group for test, permutes the rest and splits
// 90/10 into train/validation.
DatasetSplit partition(std::vector<Sample> samples, const std::vector<std::string>& groups,
                       SeededRng& rng);

struct BalanceReport {
    std::vector<std::string> groups;
    struct Row {
        std::string split;
        std::vector<double> percent;      // per group, sums to ~100
        std::vector<std::int64_t> count;  // per group
        std::int64_t total = 0;
    };
    std::vector<Row> rows;  // train, validation, test
};

BalanceReport class_balance_report(const DatasetSplit& split, const std::vector<std::string>& groups);
std::string format_balance_table(const BalanceReport& report);
std::string balance_csv(const BalanceReport& report);

struct PrepOptions {
    std::optional<DiffMode> mode;  // nullopt: no differencing
    bool timestamps = true;
    int max_shift = 16;
    std::uint64_t seed = 0;
};

struct PreparedDataset {
    DatasetSplit split;
    PrepOptions options;
    int height = 0, width = 0;  // standardized dims
    std::vector<std::string> groups;
    std::size_t unused_slices = 0;  // lost to pairing truncation
    std::size_t pair_candidates = 0;

    const std::vector<Sample>& samples(SplitId id) const {
        bump(id);
        switch (id) {
            case SplitId::train: return split.train;
            case SplitId::validation: return split.validation;
            case SplitId::test: return split.test;
        }
        throw std::logic_error("bad split id");
    }
    int access_count(SplitId id) const {
        return accesses_[static_cast<std::size_t>(id)];
    }

private:
    void bump(SplitId id) const { ++accesses_[static_cast<std::size_t>(id)]; }
    mutable int accesses_[3] = {0, 0, 0};
};

// Full pipeline over a raw dataset directory (or preloaded slices):
// expansion to the observed maximum dims, differencing per options, and
// subject-held-out partitioning.
PreparedDataset prepare_dataset(const std::filesystem::path& raw_root, const PrepOptions& options);
PreparedDataset prepare_dataset(std::vector<ImageSlice> slices, const PrepOptions& options);

void write_prepared(const PreparedDataset& prepared, const std::filesystem::path& out_dir);
PreparedDataset load_prepared(const std::filesystem::path& dir);

}  // namespace xmid

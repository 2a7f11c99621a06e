// Deterministic synthetic slice datasets shaped like weekly bone microCT
// series: two classes, per-mouse geometry, weekly series with a missing week,
// dimension jitter, misalignment, and a class-dependent monotone temporal
// signal (treated mice grow a brighter, thicker ring after onset).

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "xmid/image.hpp"

namespace xmid {

struct PhantomConfig {
    std::vector<std::string> groups{"wild", "pth"};
    int mice_per_group = 5;
    std::vector<int> weeks{0, 1, 3, 4, 5, 6, 7, 8};  // week 2 gap mirrors the study design
    int slices_min = 30, slices_max = 50;            // per mouse per week
    int base_h = 64, base_w = 96;                    // maximum canvas dims
    int dim_jitter = 8;                              // per mouse-week shrink range

    // per-mouse ring geometry/intensity, drawn uniformly from these ranges
    double radius_frac_min = 0.22, radius_frac_max = 0.32;  // of min(base dims)/2 scale
    double thickness_min = 3.0, thickness_max = 6.0;        // px
    double ring_intensity_min = 22000.0, ring_intensity_max = 42000.0;
    double marrow_intensity = 3000.0;
    double background_intensity = 500.0;
    double profile_min = 0.8;  // radius scale floor along the slice axis

    int pth_onset_week = 4;
    double pth_rate = 1.0;               // scales both growth increments
    double pth_intensity_step = 2500.0;  // intensity per week after onset
    double pth_thickness_step = 0.5;     // outward growth px per week after onset

    double noise_sigma = 800.0;
    int shift_jitter = 3;  // per mouse-week whole-pattern translation, px
    bool missing_final_week_mouse = false;  // one treated mouse misses the last week
    std::uint64_t seed = 0;

    void validate() const;
    std::map<std::string, std::string> to_kv() const;
};

std::string mouse_id_for(const PhantomConfig& config, int group_index, int mouse_index);

// Per-slice RNG streams are derived from (seed, group, mouse, week, k), so
// output is identical regardless of generation order.
ImageSlice render_slice(const PhantomConfig& config, int group_index, int mouse_index, int week,
                        int slice_index);

struct ManifestEntry {
    std::string path;  // relative to the dataset root
    std::uint64_t checksum = 0;
};

struct DatasetManifest {
    int format_version = 1;
    std::map<std::string, std::string> config_echo;
    std::vector<ManifestEntry> files;
};

DatasetManifest generate_dataset(const PhantomConfig& config, const std::filesystem::path& root);

DatasetManifest read_manifest(const std::filesystem::path& root);
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& root);

// Checks that every referenced file exists with a matching checksum and that
// sidecar metadata agrees with the directory layout.
void verify_dataset(const std::filesystem::path& root);

std::uint64_t fnv1a64_file(const std::filesystem::path& path);

// Sorted recursive load of every slice under a dataset root.
std::vector<ImageSlice> load_dataset_dir(const std::filesystem::path& root);

}  // namespace xmid

// One 2-D grayscale cross-section plus its metadata. On disk a slice is a
// binary 16-bit portable graymap ("P5", maxval 65535, big-endian samples)
// with a key=value sidecar (<name>.meta) carrying the metadata.

#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "xmid/tensor.hpp"

namespace xmid {

struct ImageSlice {
    Tensor<float> pixels;  // rank 2, nonnegative intensities
    std::string mouse_id;
    std::string group;  // class label, e.g. "wild" or "pth"
    int week = 0;       // integer weeks since experiment start
    int slice_index = 0;

    std::int64_t height() const { return pixels.extent(0); }
    std::int64_t width() const { return pixels.extent(1); }
};

void write_pgm16(const Tensor<float>& pixels, const std::filesystem::path& path);
Tensor<float> read_pgm16(const std::filesystem::path& path);

// Writes <path> and <path>.meta; pixel values must lie in [0, 65535] and are
// rounded to the nearest integer sample.
void write_slice(const ImageSlice& slice, const std::filesystem::path& pgm_path);
ImageSlice read_slice(const std::filesystem::path& pgm_path);

// Line-oriented key=value files (metadata sidecars, manifests, configs).
std::map<std::string, std::string> read_kv_file(const std::filesystem::path& path);
void write_kv_file(const std::filesystem::path& path,
                   const std::map<std::string, std::string>& kv);

}  // namespace xmid

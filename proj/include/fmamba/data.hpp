#pragma once
// Preprocessing, synthetic pairs, dataset splits and manifests.

#include <cstdint>
#include <string>
#include <vector>

#include "fmamba/tensor.hpp"

namespace fmamba {

struct ImagePair {
  std::string id;
  Tensor a;  // [1, H, W] or [1, D, H, W]
  Tensor b;
  // Chroma planes of whichever input was colour; undefined for grayscale pairs.
  Tensor cb, cr;

  bool has_chroma() const { return cb.defined(); }
};

struct YCbCr {
  Tensor y, cb, cr;  // each [1, H, W]
};

/// Full-range BT.601.
YCbCr rgb_to_ycbcr(const Tensor& rgb);
Tensor ycbcr_to_rgb(const Tensor& y, const Tensor& cb, const Tensor& cr);

/// (x - min) / (max - min); constant input gives zeros.
Tensor normalize01(const Tensor& x);

/// Elementwise product. A non-binary mask only warns (to stderr) in checked mode.
Tensor apply_roi_mask(const Tensor& x, const Tensor& mask);

struct CropResampleOptions {
  std::int64_t crop_hw = 192;
  Shape target = {128, 128, 128};  // D, H, W
};

/// Center-crops H and W of a [1, D, H, W] volume, then resamples all three
/// axes trilinearly (corner-aligned) to `target`.
Tensor crop_resample_volume(const Tensor& v, const CropResampleOptions& opt = {});

/// Slices along D whose fraction of positive pixels is >= min_nonzero.
std::vector<Tensor> axial_slices(const Tensor& v, Real min_nonzero = 0.10);

struct SynthOptions {
  int min_blobs = 3;
  int max_blobs = 6;
  Real texture_amplitude = 0.04;
};

/// Deterministic co-registered pair; size is the edge length.
ImagePair synth_pair(std::uint64_t seed, int dims, std::int64_t size, const SynthOptions& opt = {});

/// Pearson correlation over all elements.
Real pixel_correlation(const Tensor& a, const Tensor& b);

struct SplitCounts {
  std::size_t train = 0;  // 0: everything left after test and validation
  std::size_t validation = 0;
  std::size_t test = 0;
};

struct DatasetSplit {
  std::vector<std::string> train, validation, test;
  std::uint64_t seed = 0;
};

DatasetSplit split_dataset(const std::vector<std::string>& ids, const SplitCounts& counts, std::uint64_t seed);

struct ManifestEntry {
  std::string id;
  std::string path_a, path_b, mask;  // resolved against the manifest directory
};

std::vector<ManifestEntry> read_manifest(const std::string& path);
/// Paths are written as given.
void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);

/// Loads one image or volume by extension: .pgm/.ppm (colour is converted
/// to YCbCr), anything else as FMT1. Values end up in [0, 1].
struct LoadedImage {
  Tensor luma;
  Tensor cb, cr;
};
LoadedImage load_image(const std::string& path, int dims);

ImagePair load_pair(const ManifestEntry& entry, int dims);

/// Stacks [1, ...] tensors into [N, 1, ...].
Tensor stack_batch(const std::vector<Tensor>& items);

}  // namespace fmamba

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fss/core/rng.hpp"
#include "fss/types.hpp"

namespace fss {

// Slicing axes of a 3D survey; depth is the third storage axis and is never
// sliced along.
enum class Axis { inline_dir = 0, crossline = 1 };

inline const char* axis_name(Axis a) {
  return a == Axis::inline_dir ? "inline" : "crossline";
}

// 3D amplitude volume with optional per-voxel class labels, stored row-major
// as (inline, crossline, depth).
struct SeismicVolume {
  std::vector<float> intensities;
  std::vector<uint8_t> labels;  // empty when unlabeled
  Index n_inline = 0;
  Index n_crossline = 0;
  Index n_depth = 0;
  int class_count = 0;
  std::array<std::string, 3> axis_names{"inline", "crossline", "depth"};

  Index voxel_count() const { return n_inline * n_crossline * n_depth; }
  bool has_labels() const { return !labels.empty(); }
  Index index(Index i, Index x, Index d) const { return (i * n_crossline + x) * n_depth + d; }

  float& at(Index i, Index x, Index d) { return intensities[index(i, x, d)]; }
  float at(Index i, Index x, Index d) const { return intensities[index(i, x, d)]; }
  uint8_t label_at(Index i, Index x, Index d) const { return labels[index(i, x, d)]; }

  Index slice_count(Axis a) const { return a == Axis::inline_dir ? n_inline : n_crossline; }

  // 2D sections: rows = depth, cols = the other horizontal axis.
  ImageArray intensity_slice(Axis a, Index idx) const;
  MaskArray label_slice(Axis a, Index idx) const;

  void validate() const;  // shape/label invariants
};

// Half-open [lo, hi) interval of slice indices.
struct IndexRange {
  Index lo = 0;
  Index hi = 0;
  bool contains(Index i) const { return i >= lo && i < hi; }
  bool empty() const { return hi <= lo; }
};

// Train/val/test intervals for one axis.
struct AxisSplit {
  std::vector<IndexRange> train;
  std::vector<IndexRange> val;
  std::vector<IndexRange> test;
};

struct SplitSpec {
  AxisSplit inline_split;
  AxisSplit crossline_split;

  const AxisSplit& axis(Axis a) const {
    return a == Axis::inline_dir ? inline_split : crossline_split;
  }
  void validate(const SeismicVolume& vol) const;
};

// A slice identity and the three partitions produced by apply_split.
struct SliceRef {
  Axis axis;
  Index index;
  auto operator<=>(const SliceRef&) const = default;
};

struct SplitSlices {
  std::vector<SliceRef> train;
  std::vector<SliceRef> val;
  std::vector<SliceRef> test;
};

struct PatchSource {
  Axis axis;
  Index slice_index;
  Index row_offset;
  Index col_offset;
};

struct Patch {
  ImageArray pixels;
  MaskArray mask;  // 0x0 when the volume is unlabeled
  PatchSource source;
};

// ---- operations ----

// Clips values outside the [lower_pct, upper_pct] percentile thresholds of
// the whole volume (linear-interpolation percentile convention).
SeismicVolume percentile_clip(const SeismicVolume& volume, double lower_pct,
                              double upper_pct);

// Affine map of [min, max] onto [0, 255]; a constant volume maps to zeros.
SeismicVolume rescale_to_byte_range(const SeismicVolume& volume);

// Linear-interpolation percentile of a sorted copy of the data.
double percentile_value(std::vector<float> values, double pct);

// Grid of patches covering one slice; the last row/column is anchored flush
// to the slice edge so coverage is complete without padding.
std::vector<Patch> extract_patches_from_slice(const SeismicVolume& volume, Axis axis,
                                              Index slice_index, Index patch_size,
                                              Index stride);
std::vector<Patch> extract_patches(const SeismicVolume& volume, Axis axis, Index patch_size,
                                   Index stride);

// Flush-anchored grid offsets for one dimension.
std::vector<Index> patch_anchors(Index extent, Index patch_size, Index stride);

SplitSlices apply_split(const SeismicVolume& volume, const SplitSpec& spec);

// Desk-scale stand-in for a real survey: depth-ordered facies bands with
// sinusoidal interface undulation and band-dependent Gaussian intensities.
SeismicVolume synthesize_layered_volume(uint64_t seed, Index n_inline, Index n_crossline,
                                        Index n_depth, int class_count, double undulation,
                                        double noise_sd);

// Raw-binary-plus-sidecar format: <base>.json (shape/classes/axes/dtypes),
// <base>.f32 (LE float32 payload), <base>.u8 (optional LE uint8 labels).
void save_volume(const SeismicVolume& volume, const std::string& base_path);
SeismicVolume load_volume(const std::string& base_path);

}  // namespace fss

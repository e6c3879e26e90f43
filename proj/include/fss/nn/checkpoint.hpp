#pragma once

#include <cstdint>
#include <map>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "fss/nn/module.hpp"

namespace fss {

// Single-file checkpoint: magic, JSON manifest, then named f64 tensors.
// The manifest carries {preset, widths, gp_strides, version, origin, ...};
// loading into a model with a different architecture manifest fails loudly.

struct Checkpoint {
  std::string manifest_json;
  std::map<std::string, TensorD> tensors;
};

void save_checkpoint(const std::string& path, const nlohmann::json& manifest,
                     const std::map<std::string, TensorD>& tensors);

Checkpoint load_checkpoint(const std::string& path);

// Snapshot of a module's parameters and buffers, keyed by hierarchical name.
std::map<std::string, TensorD> snapshot_state(const Module& m);

// Writes tensors into the module's parameters/buffers. With `prefix` only
// names under it are considered (prefix stripped before matching). Returns
// the number of tensors applied; throws on shape mismatch, and on missing
// names when strict.
size_t load_state(Module& m, const std::map<std::string, TensorD>& tensors,
                  const std::string& prefix = "", bool strict = true);

// FNV-1a over parameter and buffer bytes in name order; detects any mutation.
uint64_t state_checksum(const Module& m);

uint64_t fnv1a64(const void* data, size_t len, uint64_t seed = 0xcbf29ce484222325ull);

}  // namespace fss

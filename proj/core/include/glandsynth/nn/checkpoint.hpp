#pragma once

#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

#include "glandsynth/nn/tensor.hpp"

namespace gsyn::nn {

/// On-disk model snapshot: JSON metadata (configs, seed, kind) followed by raw float32 tensors.
struct Checkpoint {
    nlohmann::json meta;
    std::vector<Tensor> tensors;
};

void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& meta,
                     const std::vector<const Tensor*>& tensors);

Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies tensors into `dst` in order; shapes must match exactly.
void restore_tensors(const std::vector<Tensor>& src, const std::vector<Tensor*>& dst);

}  // namespace gsyn::nn

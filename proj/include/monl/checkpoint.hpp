#pragma once

#include <filesystem>
#include <vector>

#include <json.hpp>

#include "monl/denoiser.hpp"

namespace monl {

/// Denoiser weights plus EMA shadow, and optionally the optimizer state
/// needed to resume training bit-exactly.
struct Checkpoint {
    DenoiserParams params;
    nlohmann::json train_state; // null when the checkpoint is inference-only
    std::vector<double> adam_m;
    std::vector<double> adam_v;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);

/// Validates the tensor table against the layout implied by the stored
/// config. Throws FormatError / ChecksumError.
Checkpoint load_checkpoint(const std::filesystem::path& path);

} // namespace monl

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <json.hpp>

#include "monl/latent.hpp"

namespace monl {

/// Two-modality synthetic benchmark with a known cross-modal law.
/// Modality 0 is a sum of two sinusoids projected to width1 channels;
/// modality 1 is a fixed linear map of modality 0 delayed by `lag`
/// segments (circularly) plus Gaussian observation noise.
struct CoupledConfig {
    int segments = 8;
    int width1 = 4;
    int width2 = 6;
    double freq_min = 0.05; // cycles per segment
    double freq_max = 0.25;
    double amp_min = 0.5;
    double amp_max = 1.5;
    int lag = 1;
    double obs_noise = 0.05;
    std::uint64_t map_seed = 7; // fixes the projection and coupling maps

    void validate() const;
    LatentShape shape() const { return {segments, {width1, width2}}; }
    bool operator==(const CoupledConfig&) const = default;
};

void to_json(nlohmann::json& j, const CoupledConfig& c);
void from_json(const nlohmann::json& j, CoupledConfig& c);

struct CouplingMaps {
    RowMatrix projection; // width1 x 4 (two in-phase/quadrature pairs)
    RowMatrix coupling;   // width2 x width1
};

CouplingMaps coupling_maps(const CoupledConfig& config);

/// Per-modality scalar affine normalization: stored = (raw - mean) / sqrt(variance).
struct NormalizationStats {
    std::vector<double> mean;
    std::vector<double> variance;

    bool operator==(const NormalizationStats&) const = default;
};

struct Dataset {
    CoupledConfig config;
    std::uint64_t seed = 0;
    NormalizationStats stats;
    std::vector<MultimodalLatent> examples;
};

/// Raw (unnormalized) examples.
std::vector<MultimodalLatent> gen_coupled_raw(const CoupledConfig& config, int n_examples, std::uint64_t seed);

NormalizationStats compute_stats(const std::vector<MultimodalLatent>& raw);

/// Applies stats and rounds every value to float32 so the stored payload is exact.
void normalize_in_place(std::vector<MultimodalLatent>& examples, const NormalizationStats& stats);

/// Generates and globally normalizes a dataset.
Dataset gen_coupled(const CoupledConfig& config, int n_examples, std::uint64_t seed);

/// Generates with a different seed but normalizes with existing stats
/// (held-out split sharing the training normalization).
Dataset gen_coupled_with_stats(const CoupledConfig& config, int n_examples, std::uint64_t seed,
                               const NormalizationStats& stats);

void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

} // namespace monl

#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "monl/data.hpp"
#include "monl/denoiser.hpp"
#include "monl/eval.hpp"
#include "monl/sampling.hpp"
#include "monl/schedule.hpp"
#include "monl/training.hpp"

namespace monl {

/// Invalid or incomplete configuration file. The message names the field.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

constexpr int kRunConfigVersion = 1;

struct ScheduleConfig {
    int steps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;

    NoiseSchedule build() const { return NoiseSchedule::linear(steps, beta_start, beta_end); }
};

struct DataSection {
    CoupledConfig coupled;
    int train_examples = 4096;
    int eval_examples = 512;
};

struct TrainSection {
    TrainConfig train;
    int log_every = 10;
    int checkpoint_every = 500;
};

struct SampleSection {
    SamplerConfig sampler;
    TaskGeometry geometry;
    int n_samples = 256;
    double recon_lambda = 0.02;
    bool use_ema = true;
};

/// Relative paths are resolved against the directory of the config file.
struct PathsSection {
    std::filesystem::path data_dir = "data";
    std::filesystem::path run_dir = "run";
};

struct RunConfig {
    std::uint64_t seed = 0;
    ScheduleConfig schedule;
    DataSection data;
    DenoiserConfig model; // segments, widths and T follow data and schedule
    TrainSection train;
    SampleSection sample;
    PathsSection paths;

    void validate() const;

    std::filesystem::path train_data_path() const { return paths.data_dir / "train.monl"; }
    std::filesystem::path eval_data_path() const { return paths.data_dir / "eval.monl"; }
    std::filesystem::path checkpoint_path() const { return paths.run_dir / "checkpoint.ckpt"; }
    std::filesystem::path metrics_path() const { return paths.run_dir / "metrics.jsonl"; }
    std::filesystem::path samples_dir() const { return paths.run_dir / "samples"; }
    std::filesystem::path report_path() const { return paths.run_dir / "report.json"; }
};

/// Sub-seed streams derived from the master seed.
enum class SeedStream : std::uint64_t { TrainData = 1, EvalData = 2, ModelInit = 3, Training = 4, Sampling = 5 };

std::uint64_t sub_seed(const RunConfig& config, SeedStream stream);

/// Strict parse: every field must be present and no unknown fields are
/// accepted. `base_dir` anchors relative paths.
RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

/// Fully resolved form (absolute paths); parses back to the same config.
nlohmann::json to_json(const RunConfig& config);

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);

} // namespace monl

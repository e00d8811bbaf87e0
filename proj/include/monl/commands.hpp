#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "monl/eval.hpp"
#include "monl/run_config.hpp"

namespace monl {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitRuntime = 2 };

struct GenDataOptions {
    std::filesystem::path config;
    std::optional<std::uint64_t> seed;
    std::optional<std::filesystem::path> out_dir;
};

struct TrainOptions {
    std::filesystem::path config;
    std::optional<std::uint64_t> seed;
    std::optional<StrategyKind> strategy;
    std::optional<std::filesystem::path> run_dir;
    std::optional<std::filesystem::path> resume;
    /// Stop (and checkpoint) once this step is reached, without changing
    /// the learning-rate schedule.
    std::optional<std::int64_t> stop_at;
};

struct SampleOptions {
    std::filesystem::path config;
    std::optional<std::uint64_t> seed;
    Task task = Task::Joint;
    std::optional<double> guidance;
    std::optional<SamplerKind> sampler;
    std::optional<int> steps;
    std::optional<ConditioningMethod> baseline;
    std::optional<std::filesystem::path> checkpoint;
    std::optional<std::filesystem::path> out;
    std::optional<int> n_samples;
    bool raw_weights = false;
};

struct EvalOptions {
    std::filesystem::path config;
    std::optional<std::filesystem::path> samples_dir;
    std::optional<std::filesystem::path> dataset;
    std::optional<std::filesystem::path> out;
};

int cmd_gen_data(const GenDataOptions& options, std::ostream& out, std::ostream& err);
int cmd_train(const TrainOptions& options, std::ostream& out, std::ostream& err);
int cmd_sample(const SampleOptions& options, std::ostream& out, std::ostream& err);
int cmd_eval(const EvalOptions& options, std::ostream& out, std::ostream& err);
int cmd_inspect_schedule(const std::filesystem::path& config, int every, std::ostream& out, std::ostream& err);

/// Parses argv-style arguments (without the program name) and dispatches.
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace monl

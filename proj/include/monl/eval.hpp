#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "monl/latent.hpp"
#include "monl/predictor.hpp"
#include "monl/sampling.hpp"
#include "monl/schedule.hpp"

namespace monl {

class MetricError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// n_samples x feature_dim.
using FeatureSet = RowMatrix;

/// Squared 2-Wasserstein distance between Gaussians fitted to A and B.
/// Covariances get a 1e-6 ridge; the result is clamped at zero. Throws
/// MetricError when either set has no more rows than columns.
double frechet_gaussian(const FeatureSet& a, const FeatureSet& b);

/// Mean squared error over mask-false entries.
double conditional_mse(const MultimodalLatent& generated, const MultimodalLatent& truth, const ConditionMask& mask);

/// Mask-false entries of z in flatten() order.
std::vector<double> generated_region(const MultimodalLatent& z, const ConditionMask& mask);

/// One row per latent, generated region only.
FeatureSet region_features(std::span<const MultimodalLatent> latents, const ConditionMask& mask);

/// z0 ~ N(mean, diag(variance)) element-wise, laid out like a latent.
struct GaussianDataSpec {
    MultimodalLatent mean;
    MultimodalLatent variance;

    void validate() const;
};

/// Posterior mean E[eps | z_t] under the Gaussian spec; zero at t == 0.
MultimodalLatent analytic_optimal_eps(const GaussianDataSpec& spec, const MultimodalLatent& z_t,
                                      const TimestepVector& t, const NoiseSchedule& sched);

/// Bayes-optimal noise predictor for Gaussian data. Ignores self-conditioning.
class GaussianOracle final : public NoisePredictor {
public:
    GaussianOracle(GaussianDataSpec spec, const NoiseSchedule& sched);

    MultimodalLatent predict(const MultimodalLatent& z_t, const TimestepVector& t,
                             const MultimodalLatent* self_cond) const override;
    MultimodalLatent input_vjp(const MultimodalLatent& z_t, const TimestepVector& t,
                               const MultimodalLatent* self_cond,
                               const MultimodalLatent& output_grad) const override;

private:
    GaussianDataSpec spec_;
    const NoiseSchedule* sched_;
};

/// How conditional tasks are sampled: masked per-segment timesteps (models
/// trained with mixed noise levels), or one of the two baselines for
/// scalar-timestep models.
enum class ConditioningMethod { Masked, Replacement, ReconGuided };

std::string_view to_string(ConditioningMethod method);
std::optional<ConditioningMethod> parse_conditioning_method(std::string_view name);

struct BatteryOptions {
    SamplerConfig sampler;
    ConditioningMethod method = ConditioningMethod::Masked;
    double recon_lambda = 0.02;
    TaskGeometry geometry;
    int n_samples = 256;
    std::uint64_t seed = 0;
};

/// Runs one conditional generation for every one of the first n truth
/// examples; example i uses seed derive_seed(seed, i).
std::vector<MultimodalLatent> generate_task_samples(const NoisePredictor& model, const NoiseSchedule& sched,
                                                    std::span<const MultimodalLatent> truth, Task task,
                                                    const BatteryOptions& options);

struct TaskMetrics {
    Task task = Task::Joint;
    std::optional<double> frechet;
    std::optional<double> mse; // absent for joint generation
    int n = 0;
    std::uint64_t seed = 0;
    SamplerConfig sampler;
    std::string error; // non-empty when the task failed
};

/// Scores generated samples against the truth examples they were
/// conditioned on (pairwise, same order). Too few samples for the Frechet
/// distance leaves it empty and sets `error`.
TaskMetrics score_task(Task task, std::span<const MultimodalLatent> generated,
                       std::span<const MultimodalLatent> truth, const ConditionMask& mask);

std::vector<TaskMetrics> run_task_battery(const NoisePredictor& model, const NoiseSchedule& sched,
                                          std::span<const MultimodalLatent> truth, std::span<const Task> tasks,
                                          const BatteryOptions& options);

constexpr int kReportSchemaVersion = 1;

nlohmann::json metrics_report(std::span<const TaskMetrics> results, ConditioningMethod method);

/// Returns a description of the first schema violation, or nothing.
std::optional<std::string> validate_report(const nlohmann::json& report);

/// Number of metric values (non-null frechet/mse fields) in a report.
int count_metric_values(const nlohmann::json& report);

/// Generated samples for one task together with their provenance.
struct SampleSet {
    Task task = Task::Joint;
    ConditionMask mask;
    std::uint64_t seed = 0;
    SamplerConfig sampler;
    ConditioningMethod method = ConditioningMethod::Masked;
    std::string checkpoint;
    std::vector<MultimodalLatent> samples; // sample i conditioned on eval example i
};

void save_samples(const SampleSet& set, const std::filesystem::path& path);
SampleSet load_samples(const std::filesystem::path& path);

nlohmann::json sampler_json(const SamplerConfig& config);
SamplerConfig sampler_from_json(const nlohmann::json& j);

} // namespace monl

#pragma once

#include <optional>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "monl/latent.hpp"
#include "monl/predictor.hpp"
#include "monl/rng.hpp"
#include "monl/schedule.hpp"

namespace monl {

class SamplingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Which segments are given (mask true) and their clean values. An all-false
/// mask is unconditional joint generation.
struct ConditionSpec {
    ConditionMask mask;
    MultimodalLatent values;

    static ConditionSpec unconditional(const LatentShape& shape);
    void validate() const;
};

enum class SamplerKind { Ddpm, Ddim };
/// DDPM reverse-step variance: beta_t, or the posterior variance.
enum class SigmaRule { Beta, Posterior };

struct SamplerConfig {
    SamplerKind kind = SamplerKind::Ddim;
    int steps = 250; // DDIM only
    double guidance = 0.0;
    SigmaRule sigma = SigmaRule::Beta;
};

std::string_view to_string(SamplerKind kind);
std::optional<SamplerKind> parse_sampler_kind(std::string_view name);

enum class Task { Joint, A2V, V2A, Continue, Inpaint };

std::string_view to_string(Task task);
std::optional<Task> parse_task(std::string_view name);

struct TaskGeometry {
    int continue_segments = 3; // n_c
    int inpaint_tail = 2;      // k
};

/// a2v conditions modality 0, v2a modality 1; continue conditions the first
/// n_c segments of every modality; inpaint the first segment and last k.
ConditionMask task_mask(Task task, int modalities, int segments, const TaskGeometry& geometry = {});

/// Strided DDIM timesteps in descending order: floor(i*T/steps), i = steps..1.
std::vector<int> ddim_timesteps(int T, int steps);

/// Ancestral sampling with masked entries held clean at t = 0 and generated
/// entries at the current step. Masked output entries equal cond.values.
MultimodalLatent ddpm_sample(const NoisePredictor& model, const NoiseSchedule& sched, const ConditionSpec& cond,
                             Rng& rng, double guidance = 0.0, SigmaRule sigma = SigmaRule::Beta);

/// Deterministic (eta = 0) DDIM with the same masking contract.
MultimodalLatent ddim_sample(const NoisePredictor& model, const NoiseSchedule& sched, const ConditionSpec& cond,
                             Rng& rng, int steps, double guidance = 0.0);

MultimodalLatent sample(const NoisePredictor& model, const NoiseSchedule& sched, const ConditionSpec& cond, Rng& rng,
                        const SamplerConfig& config);

/// Guided prediction (1+s) eps_cond - s eps_uncond on generated entries,
/// where the unconditional branch replaces conditioned segments by fresh
/// unit noise at t = T. With s == 0 only the conditional branch runs.
MultimodalLatent cfg_denoise(const NoisePredictor& model, const MultimodalLatent& z_t,
                             const MultimodalLatent* self_cond, const ConditionSpec& cond, int tau, double s, int T,
                             Rng& rng);

/// Baseline for jointly-trained models: scalar-timestep reverse process with
/// the known segments overwritten by freshly noised ground truth after every
/// step, and by the clean values at the end.
MultimodalLatent replacement_sample(const NoisePredictor& model, const NoiseSchedule& sched,
                                    const ConditionSpec& cond, Rng& rng, const SamplerConfig& config = {SamplerKind::Ddpm});

struct ReconstructionGuidance {
    double error = 0.0;         // squared error of the step mean vs target on masked entries
    MultimodalLatent gradient;  // d(error)/d(z_tau), zero on masked entries
    MultimodalLatent mean;      // DDPM posterior mean for every entry
    MultimodalLatent eps_hat;
};

/// One reverse step of the scalar-timestep model plus the gradient of the
/// reconstruction error on conditioned entries with respect to the
/// generated entries of z_tau.
ReconstructionGuidance reconstruction_guidance(const NoisePredictor& model, const NoiseSchedule& sched,
                                               const MultimodalLatent& z_tau, const MultimodalLatent* self_cond,
                                               const MultimodalLatent& target_prev, const ConditionMask& mask,
                                               int tau, bool with_gradient = true);

/// Replacement sampling plus a gradient correction
/// -lambda * sqrt(1 - alpha_bar_tau) * grad on generated entries.
MultimodalLatent reconstruction_guided_sample(const NoisePredictor& model, const NoiseSchedule& sched,
                                              const ConditionSpec& cond, Rng& rng, double lambda);

} // namespace monl

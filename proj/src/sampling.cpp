#include "monl/sampling.hpp"

#include <cmath>
#include <string>

#include "monl/forward.hpp"

namespace monl {

namespace {

TimestepVector masked_timesteps(const ConditionMask& mask, int tau)
{
    TimestepVector t(mask.modalities(), mask.segments());
    for (int m = 0; m < mask.modalities(); ++m) {
        for (int n = 0; n < mask.segments(); ++n) {
            t.at(m, n) = mask.at(m, n) ? 0 : tau;
        }
    }
    return t;
}

/// Copies segments where `mask` equals `which` from src into dst.
void copy_segments(MultimodalLatent& dst, const MultimodalLatent& src, const ConditionMask& mask, bool which)
{
    for (int m = 0; m < dst.modalities(); ++m) {
        for (int n = 0; n < dst.segments(); ++n) {
            if (mask.at(m, n) == which) {
                dst.segment(m, n) = src.segment(m, n);
            }
        }
    }
}

void check_finite(const MultimodalLatent& z, int tau, const char* who)
{
    if (!z.all_finite()) {
        throw SamplingError(std::string(who) + ": non-finite state at step " + std::to_string(tau));
    }
}

double ddpm_sigma(const NoiseSchedule& sched, int tau, SigmaRule rule)
{
    if (rule == SigmaRule::Beta) {
        return std::sqrt(sched.beta(tau));
    }
    return std::sqrt(sched.beta(tau) * (1.0 - sched.alpha_bar(tau - 1)) / (1.0 - sched.alpha_bar(tau)));
}

/// z <- (z - beta/sqrt(1-abar) eps_hat) / sqrt(alpha) on entries where mask == false.
void ddpm_mean_step(MultimodalLatent& z, const MultimodalLatent& eps_hat, const ConditionMask& mask,
                    const NoiseSchedule& sched, int tau)
{
    const double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha(tau));
    const double coef = sched.beta(tau) / std::sqrt(1.0 - sched.alpha_bar(tau));
    for (int m = 0; m < z.modalities(); ++m) {
        for (int n = 0; n < z.segments(); ++n) {
            if (mask.at(m, n)) {
                continue;
            }
            auto zs = z.segment(m, n);
            auto es = eps_hat.segment(m, n);
            for (Eigen::Index k = 0; k < zs.size(); ++k) {
                zs[k] = inv_sqrt_alpha * (zs[k] - coef * es[k]);
            }
        }
    }
}

void add_scaled_noise(MultimodalLatent& z, const MultimodalLatent& noise, double sigma, const ConditionMask& mask)
{
    for (int m = 0; m < z.modalities(); ++m) {
        for (int n = 0; n < z.segments(); ++n) {
            if (mask.at(m, n)) {
                continue;
            }
            auto zs = z.segment(m, n);
            auto ns = noise.segment(m, n);
            for (Eigen::Index k = 0; k < zs.size(); ++k) {
                zs[k] = zs[k] + sigma * ns[k];
            }
        }
    }
}

/// Initial state: unit noise on generated entries, clean values elsewhere.
MultimodalLatent initial_state(const ConditionSpec& cond, Rng& rng)
{
    MultimodalLatent z = MultimodalLatent::standard_normal(cond.values.shape(), rng);
    copy_segments(z, cond.values, cond.mask, true);
    return z;
}

void check_model_shape(const ConditionSpec& cond, const NoiseSchedule& sched)
{
    cond.validate();
    if (sched.steps() < 1) {
        throw std::invalid_argument("sampler: empty schedule");
    }
}

} // namespace

ConditionSpec ConditionSpec::unconditional(const LatentShape& shape)
{
    return {ConditionMask(shape.modalities(), shape.segments, false), MultimodalLatent(shape)};
}

void ConditionSpec::validate() const
{
    if (mask.modalities() != values.modalities() || mask.segments() != values.segments()) {
        throw std::invalid_argument("condition spec: mask shape does not match values");
    }
    for (int m = 0; m < values.modalities(); ++m) {
        for (int n = 0; n < values.segments(); ++n) {
            if (mask.at(m, n) && !values.segment(m, n).allFinite()) {
                throw std::invalid_argument("condition spec: non-finite conditioning value");
            }
        }
    }
}

std::string_view to_string(SamplerKind kind) { return kind == SamplerKind::Ddpm ? "ddpm" : "ddim"; }

std::optional<SamplerKind> parse_sampler_kind(std::string_view name)
{
    if (name == "ddpm") {
        return SamplerKind::Ddpm;
    }
    if (name == "ddim") {
        return SamplerKind::Ddim;
    }
    return std::nullopt;
}

std::string_view to_string(Task task)
{
    switch (task) {
    case Task::Joint: return "joint";
    case Task::A2V: return "a2v";
    case Task::V2A: return "v2a";
    case Task::Continue: return "continue";
    case Task::Inpaint: return "inpaint";
    }
    return "?";
}

std::optional<Task> parse_task(std::string_view name)
{
    for (auto t : {Task::Joint, Task::A2V, Task::V2A, Task::Continue, Task::Inpaint}) {
        if (name == to_string(t)) {
            return t;
        }
    }
    return std::nullopt;
}

ConditionMask task_mask(Task task, int modalities, int segments, const TaskGeometry& g)
{
    ConditionMask mask(modalities, segments, false);
    switch (task) {
    case Task::Joint: break;
    case Task::A2V:
    case Task::V2A: {
        if (modalities < 2) {
            throw std::invalid_argument("cross-modal tasks need at least two modalities");
        }
        const int given = task == Task::A2V ? 0 : 1;
        for (int n = 0; n < segments; ++n) {
            mask.set(given, n, true);
        }
        break;
    }
    case Task::Continue:
        if (g.continue_segments < 1 || g.continue_segments >= segments) {
            throw std::invalid_argument("continue task: need 1 <= n_c < N");
        }
        for (int m = 0; m < modalities; ++m) {
            for (int n = 0; n < g.continue_segments; ++n) {
                mask.set(m, n, true);
            }
        }
        break;
    case Task::Inpaint:
        if (g.inpaint_tail < 1 || g.inpaint_tail + 1 >= segments) {
            throw std::invalid_argument("inpaint task: need 1 <= k and k + 1 < N");
        }
        for (int m = 0; m < modalities; ++m) {
            mask.set(m, 0, true);
            for (int n = segments - g.inpaint_tail; n < segments; ++n) {
                mask.set(m, n, true);
            }
        }
        break;
    }
    return mask;
}

std::vector<int> ddim_timesteps(int T, int steps)
{
    if (steps < 1 || steps > T) {
        throw std::invalid_argument("ddim: steps must be in [1, T]");
    }
    std::vector<int> out;
    out.reserve(steps);
    for (int i = steps; i >= 1; --i) {
        out.push_back(static_cast<int>((static_cast<long long>(i) * T) / steps));
    }
    return out;
}

MultimodalLatent cfg_denoise(const NoisePredictor& model, const MultimodalLatent& z_t,
                             const MultimodalLatent* self_cond, const ConditionSpec& cond, int tau, double s, int T,
                             Rng& rng)
{
    if (s < 0.0) {
        throw std::invalid_argument("cfg_denoise: guidance scale must be >= 0");
    }
    const TimestepVector t_cond = masked_timesteps(cond.mask, tau);
    MultimodalLatent eps_cond = model.predict(z_t, t_cond, self_cond);
    if (s == 0.0 || !cond.mask.any()) {
        return eps_cond;
    }
    MultimodalLatent z_uncond = z_t;
    copy_segments(z_uncond, MultimodalLatent::standard_normal(z_t.shape(), rng), cond.mask, true);
    TimestepVector t_uncond = t_cond;
    for (int m = 0; m < cond.mask.modalities(); ++m) {
        for (int n = 0; n < cond.mask.segments(); ++n) {
            if (cond.mask.at(m, n)) {
                t_uncond.at(m, n) = T;
            }
        }
    }
    MultimodalLatent eps_uncond = model.predict(z_uncond, t_uncond, self_cond);
    MultimodalLatent out = eps_cond;
    for (int m = 0; m < out.modalities(); ++m) {
        for (int n = 0; n < out.segments(); ++n) {
            if (!cond.mask.at(m, n)) {
                out.segment(m, n) = (1.0 + s) * eps_cond.segment(m, n) - s * eps_uncond.segment(m, n);
            }
        }
    }
    return out;
}

MultimodalLatent ddpm_sample(const NoisePredictor& model, const NoiseSchedule& sched, const ConditionSpec& cond,
                             Rng& rng, double guidance, SigmaRule sigma)
{
    check_model_shape(cond, sched);
    if (cond.mask.all()) {
        return cond.values;
    }
    const int T = sched.steps();
    MultimodalLatent z = initial_state(cond, rng);
    std::optional<MultimodalLatent> self_cond;
    for (int tau = T; tau >= 1; --tau) {
        const MultimodalLatent* sc = self_cond ? &*self_cond : nullptr;
        MultimodalLatent eps_hat = cfg_denoise(model, z, sc, cond, tau, guidance, T, rng);
        if (model.uses_self_conditioning()) {
            self_cond = estimate_clean(z, eps_hat, masked_timesteps(cond.mask, tau), sched, model.self_cond_clip());
        }
        ddpm_mean_step(z, eps_hat, cond.mask, sched, tau);
        if (tau > 1) {
            MultimodalLatent noise = MultimodalLatent::standard_normal(z.shape(), rng);
            add_scaled_noise(z, noise, ddpm_sigma(sched, tau, sigma), cond.mask);
        }
        check_finite(z, tau, "ddpm_sample");
    }
    return z;
}

MultimodalLatent ddim_sample(const NoisePredictor& model, const NoiseSchedule& sched, const ConditionSpec& cond,
                             Rng& rng, int steps, double guidance)
{
    check_model_shape(cond, sched);
    const std::vector<int> taus = ddim_timesteps(sched.steps(), steps);
    if (cond.mask.all()) {
        return cond.values;
    }
    const int T = sched.steps();
    MultimodalLatent z = initial_state(cond, rng);
    std::optional<MultimodalLatent> self_cond;
    for (std::size_t i = 0; i < taus.size(); ++i) {
        const int tau = taus[i];
        const int prev = i + 1 < taus.size() ? taus[i + 1] : 0;
        const MultimodalLatent* sc = self_cond ? &*self_cond : nullptr;
        MultimodalLatent eps_hat = cfg_denoise(model, z, sc, cond, tau, guidance, T, rng);
        const TimestepVector t = masked_timesteps(cond.mask, tau);
        MultimodalLatent x0 = estimate_clean(z, eps_hat, t, sched);
        if (model.uses_self_conditioning()) {
            self_cond = estimate_clean(z, eps_hat, t, sched, model.self_cond_clip());
        }
        const double ab_prev = sched.alpha_bar(prev);
        const double signal = std::sqrt(ab_prev);
        const double noise = std::sqrt(1.0 - ab_prev);
        for (int m = 0; m < z.modalities(); ++m) {
            for (int n = 0; n < z.segments(); ++n) {
                if (cond.mask.at(m, n)) {
                    continue;
                }
                auto zs = z.segment(m, n);
                auto xs = x0.segment(m, n);
                auto es = eps_hat.segment(m, n);
                for (Eigen::Index k = 0; k < zs.size(); ++k) {
                    zs[k] = signal * xs[k] + noise * es[k];
                }
            }
        }
        check_finite(z, tau, "ddim_sample");
    }
    return z;
}

MultimodalLatent sample(const NoisePredictor& model, const NoiseSchedule& sched, const ConditionSpec& cond, Rng& rng,
                        const SamplerConfig& config)
{
    if (config.kind == SamplerKind::Ddpm) {
        return ddpm_sample(model, sched, cond, rng, config.guidance, config.sigma);
    }
    return ddim_sample(model, sched, cond, rng, config.steps, config.guidance);
}

MultimodalLatent replacement_sample(const NoisePredictor& model, const NoiseSchedule& sched,
                                    const ConditionSpec& cond, Rng& rng, const SamplerConfig& config)
{
    check_model_shape(cond, sched);
    if (cond.mask.all()) {
        return cond.values;
    }
    const int T = sched.steps();
    const int M = cond.values.modalities();
    const int N = cond.values.segments();
    const ConditionMask none(M, N, false);
    std::vector<int> taus;
    if (config.kind == SamplerKind::Ddim) {
        taus = ddim_timesteps(T, config.steps);
    } else {
        for (int tau = T; tau >= 1; --tau) {
            taus.push_back(tau);
        }
    }

    MultimodalLatent z = MultimodalLatent::standard_normal(cond.values.shape(), rng);
    copy_segments(z, q_sample_scalar(cond.values, T, MultimodalLatent::standard_normal(z.shape(), rng), sched),
                  cond.mask, true);
    std::optional<MultimodalLatent> self_cond;
    for (std::size_t i = 0; i < taus.size(); ++i) {
        const int tau = taus[i];
        const int prev = i + 1 < taus.size() ? taus[i + 1] : 0;
        const TimestepVector t = constant_timestep_vector(tau, M, N, T);
        const MultimodalLatent* sc = self_cond ? &*self_cond : nullptr;
        MultimodalLatent eps_hat = model.predict(z, t, sc);
        if (model.uses_self_conditioning()) {
            self_cond = estimate_clean(z, eps_hat, t, sched, model.self_cond_clip());
        }
        if (config.kind == SamplerKind::Ddim) {
            MultimodalLatent x0 = estimate_clean(z, eps_hat, t, sched);
            z = q_sample_scalar(x0, prev, eps_hat, sched);
        } else {
            ddpm_mean_step(z, eps_hat, none, sched, tau);
            if (tau > 1) {
                MultimodalLatent noise = MultimodalLatent::standard_normal(z.shape(), rng);
                add_scaled_noise(z, noise, ddpm_sigma(sched, tau, config.sigma), none);
            }
        }
        copy_segments(z, q_sample_scalar(cond.values, prev, MultimodalLatent::standard_normal(z.shape(), rng), sched),
                      cond.mask, true);
        check_finite(z, tau, "replacement_sample");
    }
    copy_segments(z, cond.values, cond.mask, true);
    return z;
}

ReconstructionGuidance reconstruction_guidance(const NoisePredictor& model, const NoiseSchedule& sched,
                                               const MultimodalLatent& z_tau, const MultimodalLatent* self_cond,
                                               const MultimodalLatent& target_prev, const ConditionMask& mask,
                                               int tau, bool with_gradient)
{
    require_same_shape(z_tau, target_prev, "reconstruction_guidance");
    const int M = z_tau.modalities();
    const int N = z_tau.segments();
    const TimestepVector t = constant_timestep_vector(tau, M, N, sched.steps());
    ReconstructionGuidance out;
    out.eps_hat = model.predict(z_tau, t, self_cond);
    out.mean = z_tau;
    ddpm_mean_step(out.mean, out.eps_hat, ConditionMask(M, N, false), sched, tau);

    // d(mean)/d(eps_hat) = -beta / (sqrt(alpha) sqrt(1 - abar)) element-wise.
    const double deps = -sched.beta(tau) / (std::sqrt(sched.alpha(tau)) * std::sqrt(1.0 - sched.alpha_bar(tau)));
    MultimodalLatent out_grad(z_tau.shape());
    for (int m = 0; m < M; ++m) {
        for (int n = 0; n < N; ++n) {
            if (!mask.at(m, n)) {
                continue;
            }
            auto diff = (out.mean.segment(m, n) - target_prev.segment(m, n)).eval();
            out.error += diff.squaredNorm();
            out_grad.segment(m, n) = 2.0 * deps * diff;
        }
    }
    if (with_gradient) {
        out.gradient = model.input_vjp(z_tau, t, self_cond, out_grad);
        copy_segments(out.gradient, MultimodalLatent(z_tau.shape()), mask, true);
    }
    return out;
}

MultimodalLatent reconstruction_guided_sample(const NoisePredictor& model, const NoiseSchedule& sched,
                                              const ConditionSpec& cond, Rng& rng, double lambda)
{
    if (lambda < 0.0) {
        throw std::invalid_argument("reconstruction_guided_sample: lambda must be >= 0");
    }
    check_model_shape(cond, sched);
    if (cond.mask.all()) {
        return cond.values;
    }
    constexpr double kDivergenceNorm = 1e6;
    const int T = sched.steps();
    const int M = cond.values.modalities();
    const int N = cond.values.segments();

    // Same draw order as replacement_sample, so lambda = 0 reproduces it.
    MultimodalLatent z = MultimodalLatent::standard_normal(cond.values.shape(), rng);
    copy_segments(z, q_sample_scalar(cond.values, T, MultimodalLatent::standard_normal(z.shape(), rng), sched),
                  cond.mask, true);
    std::optional<MultimodalLatent> self_cond;
    for (int tau = T; tau >= 1; --tau) {
        MultimodalLatent noise;
        if (tau > 1) {
            noise = MultimodalLatent::standard_normal(z.shape(), rng);
        }
        const MultimodalLatent target =
            q_sample_scalar(cond.values, tau - 1, MultimodalLatent::standard_normal(z.shape(), rng), sched);
        const MultimodalLatent* sc = self_cond ? &*self_cond : nullptr;
        ReconstructionGuidance g = reconstruction_guidance(model, sched, z, sc, target, cond.mask, tau, lambda > 0.0);
        if (model.uses_self_conditioning()) {
            self_cond = estimate_clean(z, g.eps_hat, constant_timestep_vector(tau, M, N, T), sched,
                                       model.self_cond_clip());
        }
        MultimodalLatent next = z;
        copy_segments(next, g.mean, cond.mask, false);
        if (tau > 1) {
            add_scaled_noise(next, noise, ddpm_sigma(sched, tau, SigmaRule::Beta), cond.mask);
        }
        if (lambda > 0.0) {
            const double w = lambda * std::sqrt(1.0 - sched.alpha_bar(tau));
            for (int m = 0; m < M; ++m) {
                for (int n = 0; n < N; ++n) {
                    if (!cond.mask.at(m, n)) {
                        next.segment(m, n) -= w * g.gradient.segment(m, n);
                    }
                }
            }
        }
        copy_segments(next, target, cond.mask, true);
        z = std::move(next);
        check_finite(z, tau, "reconstruction_guided_sample");
        double norm_sq = 0.0;
        for (int m = 0; m < M; ++m) {
            norm_sq += z.modality(m).squaredNorm();
        }
        if (std::sqrt(norm_sq) > kDivergenceNorm) {
            throw SamplingError("reconstruction_guided_sample: state norm exceeded 1e6 at step " +
                                std::to_string(tau));
        }
    }
    copy_segments(z, cond.values, cond.mask, true);
    return z;
}

} // namespace monl

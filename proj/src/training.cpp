#include "monl/training.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "monl/forward.hpp"

namespace monl {

void TrainConfig::validate() const
{
    if (batch_size < 1) {
        throw std::invalid_argument("train config: batch_size must be >= 1");
    }
    if (!(learning_rate > 0.0)) {
        throw std::invalid_argument("train config: learning_rate must be positive");
    }
    if (warmup_steps < 0 || total_steps < 0 || warmup_steps > total_steps) {
        throw std::invalid_argument("train config: need 0 <= warmup_steps <= total_steps");
    }
    if (!(ema_decay >= 0.0 && ema_decay < 1.0)) {
        throw std::invalid_argument("train config: ema_decay must be in [0, 1)");
    }
    if (!(self_cond_rate >= 0.0 && self_cond_rate <= 1.0)) {
        throw std::invalid_argument("train config: self_cond_rate must be in [0, 1]");
    }
}

TrainState TrainState::fresh(DenoiserParams params, std::uint64_t seed)
{
    TrainState s;
    s.adam_m.assign(params.size(), 0.0);
    s.adam_v.assign(params.size(), 0.0);
    s.params = std::move(params);
    s.rng = Rng(seed);
    return s;
}

Checkpoint TrainState::to_checkpoint() const
{
    Checkpoint c;
    c.params = params;
    c.adam_m = adam_m;
    c.adam_v = adam_v;
    c.train_state = {{"step", step}, {"rng", rng.state()}, {"strategy_counts", strategy_counts}};
    return c;
}

TrainState TrainState::from_checkpoint(const Checkpoint& ckpt)
{
    if (ckpt.train_state.is_null() || ckpt.adam_m.empty()) {
        throw std::invalid_argument("checkpoint carries no training state to resume from");
    }
    TrainState s;
    s.params = ckpt.params;
    s.adam_m = ckpt.adam_m;
    s.adam_v = ckpt.adam_v;
    s.step = ckpt.train_state.at("step").get<std::int64_t>();
    s.rng.restore(ckpt.train_state.at("rng").get<std::string>());
    s.strategy_counts = ckpt.train_state.at("strategy_counts").get<std::array<std::int64_t, 4>>();
    return s;
}

ExampleDraw draw_example(StrategyKind kind, const LatentShape& shape, int T, double self_cond_rate, Rng& rng)
{
    ExampleDraw d;
    auto tv = sample_timestep_vector(kind, shape.modalities(), shape.segments, T, rng);
    d.t = std::move(tv.t);
    d.drawn = tv.drawn;
    d.eps = MultimodalLatent::standard_normal(shape, rng);
    d.self_cond = rng.uniform() < self_cond_rate;
    return d;
}

std::vector<TrainingExample> prepare_batch(const Denoiser& model, std::span<const MultimodalLatent> z0,
                                           std::span<const ExampleDraw> draws, const NoiseSchedule& sched)
{
    if (z0.size() != draws.size() || z0.empty()) {
        throw std::invalid_argument("prepare_batch: need one draw per example and a nonempty batch");
    }
    std::vector<TrainingExample> out;
    out.reserve(z0.size());
    for (std::size_t i = 0; i < z0.size(); ++i) {
        TrainingExample ex;
        ex.z_t = q_sample(z0[i], draws[i].t, draws[i].eps, sched);
        ex.t = draws[i].t;
        ex.eps = draws[i].eps;
        if (draws[i].self_cond && model.uses_self_conditioning()) {
            MultimodalLatent first = model.predict(ex.z_t, ex.t, nullptr);
            ex.self_cond = estimate_clean(ex.z_t, first, ex.t, sched, model.config().self_cond_clip);
        }
        out.push_back(std::move(ex));
    }
    return out;
}

double mse_loss(const MultimodalLatent& eps_hat, const MultimodalLatent& eps)
{
    require_same_shape(eps_hat, eps, "mse_loss");
    double sum = 0.0;
    for (int m = 0; m < eps.modalities(); ++m) {
        const double* a = eps_hat.modality(m).data();
        const double* b = eps.modality(m).data();
        for (Eigen::Index i = 0; i < eps.modality(m).size(); ++i) {
            double diff = a[i] - b[i];
            sum += diff * diff;
        }
    }
    return sum / static_cast<double>(eps.elements());
}

double batch_loss_and_grad(const Denoiser& model, std::span<const TrainingExample> batch, std::span<double> grad)
{
    if (batch.empty()) {
        throw std::invalid_argument("batch_loss_and_grad: empty batch");
    }
    const double count = static_cast<double>(batch.front().eps.elements());
    const double scale = 2.0 / (count * static_cast<double>(batch.size()));
    double total = 0.0;
    Denoiser::Cache cache;
    for (const auto& ex : batch) {
        const MultimodalLatent* sc = ex.self_cond ? &*ex.self_cond : nullptr;
        MultimodalLatent eps_hat = model.forward(ex.z_t, ex.t, sc, cache);
        total += mse_loss(eps_hat, ex.eps);
        if (!grad.empty()) {
            MultimodalLatent dout = eps_hat;
            for (int m = 0; m < dout.modalities(); ++m) {
                dout.modality(m) = (eps_hat.modality(m) - ex.eps.modality(m)) * scale;
            }
            model.backward(cache, dout, grad, nullptr);
        }
    }
    return total / static_cast<double>(batch.size());
}

double lr_at(std::int64_t step, const TrainConfig& config)
{
    const double peak = config.learning_rate;
    if (config.warmup_steps > 0 && step <= config.warmup_steps) {
        return peak * (static_cast<double>(step) / config.warmup_steps);
    }
    if (step >= config.total_steps) {
        return 0.0;
    }
    const double progress =
        static_cast<double>(step - config.warmup_steps) / static_cast<double>(config.total_steps - config.warmup_steps);
    return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void ema_update(std::span<double> ema, std::span<const double> params, double decay)
{
    if (ema.size() != params.size()) {
        throw std::invalid_argument("ema_update: size mismatch");
    }
    if (!(decay >= 0.0 && decay < 1.0)) {
        throw std::invalid_argument("ema_update: decay must be in [0, 1)");
    }
    for (std::size_t i = 0; i < ema.size(); ++i) {
        ema[i] = decay * ema[i] + (1.0 - decay) * params[i];
    }
}

StepReport train_step(TrainState& state, std::span<const MultimodalLatent> batch, const TrainConfig& config,
                      const NoiseSchedule& sched)
{
    if (batch.empty()) {
        throw std::invalid_argument("train_step: empty batch");
    }
    const LatentShape shape = state.params.config.latent_shape();
    for (const auto& z : batch) {
        if (!(z.shape() == shape)) {
            throw std::invalid_argument("train_step: batch example shape does not match model");
        }
    }

    StepReport report;
    std::vector<ExampleDraw> draws;
    draws.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        draws.push_back(draw_example(config.strategy, shape, sched.steps(), config.self_cond_rate, state.rng));
        ++report.drawn[concrete_index(draws.back().drawn)];
    }

    Denoiser model(state.params.config, state.params.weights);
    auto examples = prepare_batch(model, batch, draws, sched);
    std::vector<double> grad(state.params.size(), 0.0);
    report.loss = batch_loss_and_grad(model, examples, grad);

    if (!std::isfinite(report.loss)) {
        std::ostringstream msg;
        msg << "non-finite loss " << report.loss << " at step " << state.step << " (strategies drawn: Vanilla="
            << report.drawn[0] << " Pm=" << report.drawn[1] << " Pt=" << report.drawn[2] << " Ptm=" << report.drawn[3]
            << ")";
        throw TrainingDiverged(msg.str());
    }

    double norm_sq = 0.0;
    for (double g : grad) {
        norm_sq += g * g;
    }
    report.grad_norm = std::sqrt(norm_sq);
    if (config.grad_clip > 0.0 && report.grad_norm > config.grad_clip) {
        const double s = config.grad_clip / report.grad_norm;
        for (double& g : grad) {
            g *= s;
        }
    }

    // AdamW with decoupled weight decay.
    const std::int64_t k = state.step + 1;
    report.lr = lr_at(k, config);
    const double bc1 = 1.0 - std::pow(config.adam_beta1, static_cast<double>(k));
    const double bc2 = 1.0 - std::pow(config.adam_beta2, static_cast<double>(k));
    auto& w = state.params.weights;
    for (std::size_t i = 0; i < w.size(); ++i) {
        state.adam_m[i] = config.adam_beta1 * state.adam_m[i] + (1.0 - config.adam_beta1) * grad[i];
        state.adam_v[i] = config.adam_beta2 * state.adam_v[i] + (1.0 - config.adam_beta2) * grad[i] * grad[i];
        const double m_hat = state.adam_m[i] / bc1;
        const double v_hat = state.adam_v[i] / bc2;
        w[i] -= report.lr * (m_hat / (std::sqrt(v_hat) + config.adam_eps) + config.weight_decay * w[i]);
    }
    ema_update(state.params.ema, w, config.ema_decay);

    for (int s = 0; s < 4; ++s) {
        state.strategy_counts[s] += report.drawn[s];
    }
    state.step = k;
    report.step = k;
    return report;
}

void run_training(TrainState& state, std::span<const MultimodalLatent> data, const TrainConfig& config,
                  const NoiseSchedule& sched, const std::function<bool(const StepReport&, const TrainState&)>& on_step)
{
    config.validate();
    if (data.empty()) {
        throw std::invalid_argument("run_training: empty dataset");
    }
    std::vector<MultimodalLatent> batch(config.batch_size);
    while (state.step < config.total_steps) {
        for (auto& z : batch) {
            z = data[static_cast<std::size_t>(state.rng.uniform_int(0, static_cast<int>(data.size()) - 1))];
        }
        StepReport r = train_step(state, batch, config, sched);
        if (on_step && !on_step(r, state)) {
            break;
        }
    }
}

} // namespace monl

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "monl/checkpoint.hpp"
#include "monl/denoiser.hpp"
#include "monl/latent.hpp"
#include "monl/rng.hpp"
#include "monl/schedule.hpp"

namespace monl {

/// Desk-scale defaults. Reference large-scale values: lr 5e-4, 5K warmup,
/// batch 256, AdamW with cosine decay and EMA.
struct TrainConfig {
    StrategyKind strategy = StrategyKind::MoNL;
    int batch_size = 32;
    double learning_rate = 1e-3;
    int warmup_steps = 100;
    int total_steps = 3000;
    double ema_decay = 0.999;
    double self_cond_rate = 0.9;
    double weight_decay = 0.0;
    double grad_clip = 1.0; // global-norm cap, <= 0 disables
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;

    void validate() const;
};

class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TrainState {
    DenoiserParams params;
    std::vector<double> adam_m;
    std::vector<double> adam_v;
    std::int64_t step = 0;
    Rng rng;
    std::array<std::int64_t, 4> strategy_counts{}; // Vanilla, Pm, Pt, Ptm

    static TrainState fresh(DenoiserParams params, std::uint64_t seed);
    Checkpoint to_checkpoint() const;
    static TrainState from_checkpoint(const Checkpoint& ckpt);
};

/// Random quantities consumed per training example, in draw order.
struct ExampleDraw {
    TimestepVector t;
    StrategyKind drawn = StrategyKind::Vanilla;
    MultimodalLatent eps;
    bool self_cond = false;
};

ExampleDraw draw_example(StrategyKind kind, const LatentShape& shape, int T, double self_cond_rate, Rng& rng);

/// Network inputs and regression target for one example.
struct TrainingExample {
    MultimodalLatent z_t;
    TimestepVector t;
    MultimodalLatent eps;
    std::optional<MultimodalLatent> self_cond; // held fixed (no gradient)
};

/// Noises each example per its own timestep vector and, where requested,
/// runs the gradient-free self-conditioning pass.
std::vector<TrainingExample> prepare_batch(const Denoiser& model, std::span<const MultimodalLatent> z0,
                                           std::span<const ExampleDraw> draws, const NoiseSchedule& sched);

/// Mean squared error over every element of the batch. Accumulates the
/// gradient into `grad` when it is non-empty.
double batch_loss_and_grad(const Denoiser& model, std::span<const TrainingExample> batch, std::span<double> grad);

double mse_loss(const MultimodalLatent& eps_hat, const MultimodalLatent& eps);

/// Linear warmup to the peak rate, then cosine decay to zero at total_steps.
double lr_at(std::int64_t step, const TrainConfig& config);

void ema_update(std::span<double> ema, std::span<const double> params, double decay);

struct StepReport {
    std::int64_t step = 0; // value after the update
    double loss = 0.0;
    double lr = 0.0;
    double grad_norm = 0.0;
    std::array<int, 4> drawn{};
};

/// One optimizer step on the noise-prediction objective.
StepReport train_step(TrainState& state, std::span<const MultimodalLatent> batch, const TrainConfig& config,
                      const NoiseSchedule& sched);

/// Trains until config.total_steps, drawing batches uniformly (with
/// replacement) from `data` using the state's rng. Stops early when
/// `on_step` returns false.
void run_training(TrainState& state, std::span<const MultimodalLatent> data, const TrainConfig& config,
                  const NoiseSchedule& sched, const std::function<bool(const StepReport&, const TrainState&)>& on_step);

} // namespace monl

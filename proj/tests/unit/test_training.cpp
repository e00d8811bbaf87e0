#include <doctest.h>

#include <cmath>
#include <limits>
#include <numbers>

#include "monl/checkpoint.hpp"
#include "monl/data.hpp"
#include "monl/training.hpp"
#include "support/reference.hpp"
#include "support/temp_dir.hpp"

using namespace monl;

namespace {

DenoiserConfig tiny_config()
{
    DenoiserConfig c;
    c.model_dim = 16;
    c.heads = 2;
    c.layers = 1;
    c.timestep_embed_dim = 8;
    c.segments = 8;
    c.T = 1000;
    return c;
}

std::vector<MultimodalLatent> tiny_batch(int n, std::uint64_t seed)
{
    CoupledConfig cc;
    return gen_coupled(cc, n, seed).examples;
}

} // namespace

TEST_CASE("mse loss")
{
    Rng rng(1);
    const LatentShape shape{8, {4, 6}};
    const auto a = MultimodalLatent::standard_normal(shape, rng);
    CHECK(mse_loss(a, a) == 0.0);
    MultimodalLatent b = a;
    for (int m = 0; m < 2; ++m) {
        b.modality(m).array() += 1.0;
    }
    CHECK(mse_loss(b, a) == doctest::Approx(1.0).epsilon(1e-14));

    const auto c = MultimodalLatent::standard_normal(shape, rng);
    const auto fa = flatten(a), fc = flatten(c);
    double naive = 0.0;
    for (std::size_t i = 0; i < fa.size(); ++i) {
        naive += (fa[i] - fc[i]) * (fa[i] - fc[i]);
    }
    naive /= static_cast<double>(fa.size());
    CHECK(std::abs(mse_loss(a, c) - naive) < 1e-12);
    CHECK_THROWS_AS(mse_loss(a, MultimodalLatent(LatentShape{8, {4, 5}})), std::invalid_argument);
}

TEST_CASE("learning-rate schedule")
{
    TrainConfig c;
    c.learning_rate = 1e-3;
    c.warmup_steps = 100;
    c.total_steps = 1100;
    CHECK(lr_at(0, c) == 0.0);
    CHECK(lr_at(50, c) == doctest::Approx(5e-4));
    CHECK(lr_at(100, c) == 1e-3);
    CHECK(lr_at(600, c) == doctest::Approx(5e-4).epsilon(1e-12));
    const double frac = 250.0 / 1000.0;
    CHECK(lr_at(350, c) == doctest::Approx(1e-3 * 0.5 * (1.0 + std::cos(std::numbers::pi * frac))).epsilon(1e-12));
    CHECK(lr_at(1100, c) == 0.0);
    CHECK(lr_at(5000, c) == 0.0);
    for (int s = 101; s < 1100; ++s) {
        REQUIRE(lr_at(s, c) <= lr_at(s - 1, c));
    }
}

TEST_CASE("EMA update")
{
    std::vector<double> ema{0.0, 0.0}, params{1.0, -2.0};
    ema_update(ema, params, 0.0);
    CHECK(ema == params);

    std::vector<double> fixed{3.0};
    ema_update(fixed, std::vector<double>{3.0}, 0.9);
    CHECK(fixed[0] == 3.0);

    std::vector<double> e{0.0};
    const std::vector<double> one{1.0};
    ema_update(e, one, 0.5);
    ema_update(e, one, 0.5);
    CHECK(e[0] == 0.75);

    CHECK_THROWS_AS(ema_update(e, one, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(ema_update(e, std::vector<double>{1.0, 2.0}, 0.5), std::invalid_argument);
}

TEST_CASE("train config validation")
{
    TrainConfig c;
    c.warmup_steps = c.total_steps + 1;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = TrainConfig{};
    c.ema_decay = 1.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = TrainConfig{};
    c.self_cond_rate = 1.5;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = TrainConfig{};
    c.batch_size = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("training steps are reproducible on a frozen batch")
{
    const auto sched = NoiseSchedule::linear(1000);
    const auto batch = tiny_batch(8, 3);
    TrainConfig tc;
    tc.total_steps = 100;
    tc.warmup_steps = 5;
    auto run = [&] {
        Rng init(4);
        TrainState s = TrainState::fresh(init_denoiser(tiny_config(), init), 5);
        std::vector<double> losses;
        for (int i = 0; i < 5; ++i) {
            losses.push_back(train_step(s, batch, tc, sched).loss);
        }
        return std::make_pair(losses, s.params.weights);
    };
    const auto a = run();
    const auto b = run();
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
}

TEST_CASE("Vanilla training loss equals the scalar-timestep reference")
{
    const auto sched = NoiseSchedule::linear(1000);
    const auto ref_sched = monl::testing::RefSchedule::linear(1000, 1e-4, 0.02);
    const auto batch = tiny_batch(6, 6);
    TrainConfig tc;
    tc.strategy = StrategyKind::Vanilla;
    Rng init(7);
    TrainState s = TrainState::fresh(init_denoiser(tiny_config(), init), 8);
    for (int step = 0; step < 3; ++step) {
        const Denoiser model(s.params.config, s.params.weights);
        Rng mirror = s.rng;
        const double expected = monl::testing::reference_vanilla_loss(model, ref_sched, batch, tc.self_cond_rate, mirror);
        const auto report = train_step(s, batch, tc, sched);
        CHECK(report.loss == expected);
        CHECK(report.drawn[0] == 6);
        CHECK(s.rng.state() == mirror.state());
    }
}

TEST_CASE("strategy counters accumulate the drawn strategies")
{
    const auto sched = NoiseSchedule::linear(1000);
    const auto batch = tiny_batch(16, 9);
    TrainConfig tc;
    Rng init(10);
    TrainState s = TrainState::fresh(init_denoiser(tiny_config(), init), 11);
    std::array<std::int64_t, 4> sum{};
    for (int i = 0; i < 4; ++i) {
        const auto r = train_step(s, batch, tc, sched);
        for (int k = 0; k < 4; ++k) {
            sum[k] += r.drawn[k];
        }
    }
    CHECK(s.strategy_counts == sum);
    CHECK(sum[0] + sum[1] + sum[2] + sum[3] == 64);
    CHECK(s.step == 4);
}

TEST_CASE("non-finite loss aborts with a diagnostic")
{
    const auto sched = NoiseSchedule::linear(1000);
    auto batch = tiny_batch(4, 12);
    batch[1].modality(0)(0, 0) = std::numeric_limits<double>::infinity();
    TrainConfig tc;
    Rng init(13);
    TrainState s = TrainState::fresh(init_denoiser(tiny_config(), init), 14);
    std::string message;
    try {
        train_step(s, batch, tc, sched);
    } catch (const TrainingDiverged& e) {
        message = e.what();
    }
    CHECK(message.find("step 0") != std::string::npos);
    CHECK(message.find("Vanilla=") != std::string::npos);
    CHECK(message.find("loss") != std::string::npos);
}

TEST_CASE("resuming from a checkpoint continues the same trajectory")
{
    monl::testing::TempDir dir("resume");
    const auto sched = NoiseSchedule::linear(1000);
    const auto data = tiny_batch(64, 15);
    TrainConfig tc;
    tc.batch_size = 8;
    tc.total_steps = 8;
    tc.warmup_steps = 2;

    Rng init(16);
    const DenoiserParams p0 = init_denoiser(tiny_config(), init);
    TrainState full = TrainState::fresh(p0, 17);
    std::vector<double> full_losses;
    run_training(full, data, tc, sched, [&](const StepReport& r, const TrainState&) {
        full_losses.push_back(r.loss);
        return true;
    });

    TrainState first = TrainState::fresh(p0, 17);
    std::vector<double> losses;
    run_training(first, data, tc, sched, [&](const StepReport& r, const TrainState&) {
        losses.push_back(r.loss);
        return r.step < 3;
    });
    CHECK(first.step == 3);
    save_checkpoint(dir / "mid.ckpt", first.to_checkpoint());
    TrainState resumed = TrainState::from_checkpoint(load_checkpoint(dir / "mid.ckpt"));
    run_training(resumed, data, tc, sched, [&](const StepReport& r, const TrainState&) {
        losses.push_back(r.loss);
        return true;
    });
    CHECK(losses == full_losses);
    CHECK(resumed.params.weights == full.params.weights);
    CHECK(resumed.params.ema == full.params.ema);
    CHECK(resumed.strategy_counts == full.strategy_counts);
}

TEST_CASE("EMA stays within its drift bound")
{
    const auto sched = NoiseSchedule::linear(1000);
    const auto data = tiny_batch(64, 18);
    TrainConfig tc;
    tc.batch_size = 8;
    tc.total_steps = 60;
    tc.warmup_steps = 5;
    tc.ema_decay = 0.9;
    Rng init(19);
    TrainState s = TrainState::fresh(init_denoiser(tiny_config(), init), 20);
    std::vector<double> prev = s.params.weights;
    double max_step = 0.0;
    bool ok = true;
    run_training(s, data, tc, sched, [&](const StepReport&, const TrainState& st) {
        for (std::size_t i = 0; i < prev.size(); ++i) {
            max_step = std::max(max_step, std::abs(st.params.weights[i] - prev[i]));
        }
        prev = st.params.weights;
        for (std::size_t i = 0; i < prev.size(); ++i) {
            ok = ok && std::abs(st.params.ema[i] - st.params.weights[i]) <= max_step / (1.0 - tc.ema_decay) + 1e-15;
        }
        return true;
    });
    CHECK(ok);
    CHECK(max_step > 0.0);
}

TEST_CASE("a short run on the coupled data halves the loss")
{
    const auto sched = NoiseSchedule::linear(1000);
    const auto data = gen_coupled(CoupledConfig{}, 1024, 21).examples;
    DenoiserConfig c = tiny_config();
    c.layers = 2;
    TrainConfig tc;
    tc.batch_size = 16;
    tc.total_steps = 500;
    tc.warmup_steps = 20;
    Rng init(22);
    TrainState s = TrainState::fresh(init_denoiser(c, init), 23);
    std::vector<double> losses;
    run_training(s, data, tc, sched, [&](const StepReport& r, const TrainState&) {
        losses.push_back(r.loss);
        return true;
    });
    REQUIRE(losses.size() == 500);
    double start = 0.0, end = 0.0;
    for (int i = 0; i < 10; ++i) {
        start += losses[i] / 10.0;
        end += losses[490 + i] / 10.0;
    }
    MESSAGE("10-step average loss " << start << " -> " << end);
    CHECK(end <= 0.5 * start);
}

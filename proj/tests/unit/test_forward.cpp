#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "monl/forward.hpp"
#include "monl/rng.hpp"

using namespace monl;

namespace {

const LatentShape kShape{4, {3, 5}};

} // namespace

TEST_CASE("latent flatten order and round trip")
{
    MultimodalLatent z(LatentShape{2, {2, 1}});
    z.modality(0) << 1, 2, 3, 4;
    z.modality(1) << 5, 6;
    const auto flat = flatten(z);
    CHECK(flat == std::vector<double>{1, 2, 3, 4, 5, 6});
    CHECK(unflatten(z.shape(), flat.data()) == z);
    CHECK(z.elements() == 6);
}

TEST_CASE("condition mask helpers")
{
    ConditionMask mask(2, 3);
    CHECK_FALSE(mask.any());
    mask.set(1, 2, true);
    CHECK(mask.any());
    CHECK_FALSE(mask.all());
    const auto c = mask.complement();
    CHECK_FALSE(c.at(1, 2));
    CHECK(c.at(0, 0));
    CHECK(ConditionMask(2, 3, true).all());
}

TEST_CASE("zero timesteps leave the data untouched")
{
    const auto sched = NoiseSchedule::linear(1000);
    Rng rng(1);
    const auto z0 = MultimodalLatent::standard_normal(kShape, rng);
    const auto eps = MultimodalLatent::standard_normal(kShape, rng);
    CHECK(q_sample(z0, TimestepVector(2, 4, 0), eps, sched) == z0);
    CHECK(q_sample_scalar(z0, 0, eps, sched) == z0);
}

TEST_CASE("hand-evaluated scalar case")
{
    const auto sched = NoiseSchedule::linear(2, 0.1, 0.1); // alpha_bar(2) = 0.81
    MultimodalLatent z0(LatentShape{1, {1}}), eps(LatentShape{1, {1}});
    z0.modality(0)(0, 0) = 1.0;
    eps.modality(0)(0, 0) = 1.0;
    const auto out = q_sample_scalar(z0, 2, eps, sched);
    CHECK(out.modality(0)(0, 0) == doctest::Approx(0.9 + std::sqrt(0.19)).epsilon(1e-14));
    CHECK(out.modality(0)(0, 0) == doctest::Approx(1.33589).epsilon(1e-5));
}

TEST_CASE("mixed timestep vector matches segment-wise scalar noising")
{
    const auto sched = NoiseSchedule::linear(1000);
    Rng rng(2);
    const auto z0 = MultimodalLatent::standard_normal(kShape, rng);
    const auto eps = MultimodalLatent::standard_normal(kShape, rng);
    TimestepVector t(2, 4);
    for (int n = 0; n < 4; ++n) {
        t.at(0, n) = n % 2 == 0 ? 0 : 600;
        t.at(1, n) = n % 2 == 0 ? 600 : 0;
    }
    const auto out = q_sample(z0, t, eps, sched);
    const auto noised = q_sample_scalar(z0, 600, eps, sched);
    for (int m = 0; m < 2; ++m) {
        for (int n = 0; n < 4; ++n) {
            const auto& expect = t.at(m, n) == 0 ? z0 : noised;
            CHECK(out.segment(m, n) == expect.segment(m, n));
        }
    }
}

TEST_CASE("scalar wrapper equals the constant vector")
{
    const auto sched = NoiseSchedule::linear(1000);
    Rng rng(3);
    for (int i = 0; i < 20; ++i) {
        const int t = rng.uniform_int(0, 1000);
        const auto z0 = MultimodalLatent::standard_normal(kShape, rng);
        const auto eps = MultimodalLatent::standard_normal(kShape, rng);
        CHECK(q_sample_scalar(z0, t, eps, sched) == q_sample(z0, constant_timestep_vector(t, 2, 4, 1000), eps, sched));
    }
}

TEST_CASE("fully noised standard-normal data is close to unit normal")
{
    const auto sched = NoiseSchedule::linear(1000);
    const LatentShape one{1, {1}};
    Rng rng(4);
    constexpr int n = 100000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const auto z0 = MultimodalLatent::standard_normal(one, rng);
        const auto eps = MultimodalLatent::standard_normal(one, rng);
        const double v = q_sample_scalar(z0, 1000, eps, sched).modality(0)(0, 0);
        sum += v;
        sq += v * v;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    CHECK(std::abs(mean) < 4.0 / std::sqrt(n));
    CHECK(var == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("forward noising is deterministic and linear")
{
    const auto sched = NoiseSchedule::linear(1000);
    Rng rng(5);
    const auto t = sample_timestep_vector(StrategyKind::Ptm, 2, 4, 1000, rng).t;
    const auto a = MultimodalLatent::standard_normal(kShape, rng);
    const auto b = MultimodalLatent::standard_normal(kShape, rng);
    const auto ea = MultimodalLatent::standard_normal(kShape, rng);
    const auto eb = MultimodalLatent::standard_normal(kShape, rng);
    CHECK(q_sample(a, t, ea, sched) == q_sample(a, t, ea, sched));

    MultimodalLatent sum_z = a, sum_e = ea;
    for (int m = 0; m < 2; ++m) {
        sum_z.modality(m) = 2.0 * a.modality(m) - 3.0 * b.modality(m);
        sum_e.modality(m) = 2.0 * ea.modality(m) - 3.0 * eb.modality(m);
    }
    const auto lhs = q_sample(sum_z, t, sum_e, sched);
    const auto qa = q_sample(a, t, ea, sched);
    const auto qb = q_sample(b, t, eb, sched);
    for (int m = 0; m < 2; ++m) {
        const RowMatrix rhs = 2.0 * qa.modality(m) - 3.0 * qb.modality(m);
        CHECK((lhs.modality(m) - rhs).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("forward noising validates its inputs")
{
    const auto sched = NoiseSchedule::linear(100);
    Rng rng(6);
    const auto z0 = MultimodalLatent::standard_normal(kShape, rng);
    const auto other = MultimodalLatent::standard_normal(LatentShape{4, {3, 4}}, rng);
    CHECK_THROWS_AS(q_sample(z0, TimestepVector(2, 4, 1), other, sched), std::invalid_argument);
    CHECK_THROWS_AS(q_sample(z0, TimestepVector(2, 4, 101), z0, sched), std::out_of_range);
    CHECK_THROWS_AS(q_sample(z0, TimestepVector(2, 3, 1), z0, sched), std::invalid_argument);
    CHECK_THROWS_AS(q_sample_scalar(z0, -1, z0, sched), std::out_of_range);
}

TEST_CASE("clean estimate inverts the forward process")
{
    const auto sched = NoiseSchedule::linear(1000);
    Rng rng(7);
    const auto z0 = MultimodalLatent::standard_normal(kShape, rng);
    const auto eps = MultimodalLatent::standard_normal(kShape, rng);
    TimestepVector t = sample_timestep_vector(StrategyKind::Ptm, 2, 4, 1000, rng).t;
    t.at(0, 0) = 0;
    const auto zt = q_sample(z0, t, eps, sched);
    const auto back = estimate_clean(zt, eps, t, sched);
    for (int m = 0; m < 2; ++m) {
        for (int n = 0; n < 4; ++n) {
            const double tol = 1e-12 / std::sqrt(sched.alpha_bar(t.at(m, n)));
            CHECK((back.segment(m, n) - z0.segment(m, n)).cwiseAbs().maxCoeff() < tol);
        }
    }
    CHECK(back.segment(0, 0) == z0.segment(0, 0));

    const auto clipped = estimate_clean(zt, eps, constant_timestep_vector(999, 2, 4, 1000), sched, 1.5);
    for (int m = 0; m < 2; ++m) {
        CHECK(clipped.modality(m).cwiseAbs().maxCoeff() <= 1.5);
    }
}

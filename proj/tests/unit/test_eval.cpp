#include <doctest.h>

#include <cmath>

#include "monl/binary_io.hpp"
#include "monl/eval.hpp"
#include "monl/forward.hpp"
#include "support/temp_dir.hpp"

using namespace monl;
using monl::testing::TempDir;

namespace {

/// n points with sample mean exactly `mean` and unbiased variance `var`.
FeatureSet exact_1d(int n, double mean, double var, std::uint64_t seed)
{
    Rng rng(seed);
    Eigen::VectorXd u(n);
    for (int i = 0; i < n; ++i) {
        u[i] = rng.normal();
    }
    u.array() -= u.mean();
    u *= std::sqrt((n - 1) / u.squaredNorm());
    FeatureSet f(n, 1);
    f.col(0) = (mean + std::sqrt(var) * u.array()).matrix();
    return f;
}

FeatureSet gaussian_features(int n, int dim, double shift, std::uint64_t seed)
{
    Rng rng(seed);
    FeatureSet f(n, dim);
    for (int i = 0; i < n; ++i) {
        for (int k = 0; k < dim; ++k) {
            f(i, k) = shift + rng.normal();
        }
    }
    return f;
}

GaussianDataSpec gaussian_spec(const LatentShape& shape, double mean, double var)
{
    GaussianDataSpec spec{MultimodalLatent(shape), MultimodalLatent(shape)};
    for (int m = 0; m < shape.modalities(); ++m) {
        spec.mean.modality(m).setConstant(mean + m);
        spec.variance.modality(m).setConstant(var * (m + 1));
    }
    return spec;
}

} // namespace

TEST_CASE("Frechet distance of one-dimensional Gaussians")
{
    const auto ref = exact_1d(500, 0.0, 1.0, 1);
    CHECK(frechet_gaussian(ref, ref) < 1e-9);
    CHECK(frechet_gaussian(ref, exact_1d(500, 1.0, 1.0, 2)) == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(frechet_gaussian(ref, exact_1d(500, 0.0, 4.0, 3)) == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(frechet_gaussian(ref, exact_1d(500, 3.0, 9.0, 4)) == doctest::Approx(13.0).epsilon(1e-5));
}

TEST_CASE("Frechet distance properties")
{
    const auto a = gaussian_features(400, 5, 0.0, 5);
    const auto b = gaussian_features(400, 5, 0.5, 6);
    CHECK(frechet_gaussian(a, a) < 1e-9);
    CHECK(frechet_gaussian(a, b) == doctest::Approx(frechet_gaussian(b, a)).epsilon(1e-9));
    CHECK(frechet_gaussian(a, b) > 1.0);
    CHECK(frechet_gaussian(a, gaussian_features(400, 5, 0.0, 7)) >= 0.0);

    CHECK_THROWS_AS(frechet_gaussian(a, gaussian_features(400, 4, 0.0, 8)), std::invalid_argument);
    CHECK_THROWS_AS(frechet_gaussian(a, gaussian_features(5, 5, 0.0, 9)), MetricError);
    FeatureSet bad = a;
    bad(3, 2) = std::nan("");
    CHECK_THROWS(frechet_gaussian(a, bad));
}

TEST_CASE("conditional error counts only generated entries")
{
    const LatentShape shape{4, {2, 3}};
    MultimodalLatent truth(shape), gen(shape);
    const auto mask = task_mask(Task::Continue, 2, 4, {1, 1});
    for (int m = 0; m < 2; ++m) {
        gen.modality(m).setConstant(2.0);
        gen.modality(m).row(0).setConstant(100.0); // conditioned, ignored
    }
    CHECK(conditional_mse(gen, truth, mask) == doctest::Approx(4.0));
    CHECK(generated_region(gen, mask).size() == 3 * 5);
    const std::vector<MultimodalLatent> batch{gen, truth};
    const auto f = region_features(batch, mask);
    CHECK(f.rows() == 2);
    CHECK(f.cols() == 15);
    CHECK(f.row(0).maxCoeff() == 2.0);
    CHECK_THROWS_AS(conditional_mse(gen, truth, ConditionMask(2, 4, true)), MetricError);
}

TEST_CASE("Gaussian oracle closed forms")
{
    const auto sched = NoiseSchedule::linear(100);
    const LatentShape shape{3, {2, 1}};
    Rng rng(10);
    const auto z = MultimodalLatent::standard_normal(shape, rng);

    GaussianDataSpec unit{MultimodalLatent(shape), MultimodalLatent(shape)};
    for (int m = 0; m < 2; ++m) {
        unit.variance.modality(m).setOnes();
    }
    TimestepVector t(2, 3, 40);
    t.at(1, 2) = 7;
    const auto eps = analytic_optimal_eps(unit, z, t, sched);
    for (int m = 0; m < 2; ++m) {
        for (int n = 0; n < 3; ++n) {
            const double s = std::sqrt(1.0 - sched.alpha_bar(t.at(m, n)));
            CHECK((eps.segment(m, n) - s * z.segment(m, n)).cwiseAbs().maxCoeff() < 1e-14);
        }
    }
    const auto at_zero = analytic_optimal_eps(unit, z, TimestepVector(2, 3, 0), sched);
    CHECK(at_zero == MultimodalLatent(shape));

    GaussianDataSpec bad = unit;
    bad.variance.modality(0)(0, 0) = -1.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("Gaussian oracle is the minimum-error predictor")
{
    const auto sched = NoiseSchedule::linear(100);
    const LatentShape shape{3, {2, 2}};
    const auto spec = gaussian_spec(shape, 0.7, 0.3);
    const GaussianOracle oracle(spec, sched);
    Rng rng(11);
    const int n = 4000;
    const int tau = 30;
    const TimestepVector t(2, 3, tau);
    double err_oracle = 0.0, err_zero = 0.0, err_up = 0.0, err_down = 0.0;
    for (int i = 0; i < n; ++i) {
        auto z0 = MultimodalLatent::standard_normal(shape, rng);
        for (int m = 0; m < 2; ++m) {
            z0.modality(m) = (spec.mean.modality(m).array() +
                              spec.variance.modality(m).array().sqrt() * z0.modality(m).array())
                                 .matrix();
        }
        const auto eps = MultimodalLatent::standard_normal(shape, rng);
        const auto zt = q_sample(z0, t, eps, sched);
        const auto e = oracle.predict(zt, t, nullptr);
        for (int m = 0; m < 2; ++m) {
            err_oracle += (e.modality(m) - eps.modality(m)).squaredNorm();
            err_zero += eps.modality(m).squaredNorm();
            err_up += (1.1 * e.modality(m) - eps.modality(m)).squaredNorm();
            err_down += (0.9 * e.modality(m) - eps.modality(m)).squaredNorm();
        }
    }
    CHECK(err_oracle < err_zero);
    CHECK(err_oracle < err_up);
    CHECK(err_oracle < err_down);
}

TEST_CASE("Gaussian oracle input gradient matches finite differences")
{
    const auto sched = NoiseSchedule::linear(50);
    const LatentShape shape{2, {2, 1}};
    const GaussianOracle oracle(gaussian_spec(shape, -0.2, 0.5), sched);
    Rng rng(12);
    auto z = MultimodalLatent::standard_normal(shape, rng);
    const auto g = MultimodalLatent::standard_normal(shape, rng);
    TimestepVector t(2, 2, 20);
    t.at(0, 1) = 3;
    const auto vjp = oracle.input_vjp(z, t, nullptr, g);
    for (int m = 0; m < 2; ++m) {
        for (int n = 0; n < 2; ++n) {
            for (int k = 0; k < z.width(m); ++k) {
                const double saved = z.modality(m)(n, k);
                auto dot = [&] {
                    const auto e = oracle.predict(z, t, nullptr);
                    double s = 0.0;
                    for (int mm = 0; mm < 2; ++mm) {
                        s += e.modality(mm).cwiseProduct(g.modality(mm)).sum();
                    }
                    return s;
                };
                z.modality(m)(n, k) = saved + 1e-6;
                const double up = dot();
                z.modality(m)(n, k) = saved - 1e-6;
                const double down = dot();
                z.modality(m)(n, k) = saved;
                CHECK(vjp.modality(m)(n, k) == doctest::Approx((up - down) / 2e-6).epsilon(1e-6));
            }
        }
    }
}

TEST_CASE("oracle joint samples match the data distribution")
{
    // Short chain with endpoints steep enough that alpha_bar(T) is negligible.
    const auto sched = NoiseSchedule::linear(100, 1e-3, 0.2);
    const LatentShape shape{2, {2, 1}};
    const auto spec = gaussian_spec(shape, 0.5, 0.4);
    const GaussianOracle oracle(spec, sched);
    const int n = 1500;
    Rng rng(13);
    std::vector<MultimodalLatent> gen, ref;
    for (int i = 0; i < n; ++i) {
        gen.push_back(ddpm_sample(oracle, sched, ConditionSpec::unconditional(shape), rng));
        auto z = MultimodalLatent::standard_normal(shape, rng);
        for (int m = 0; m < 2; ++m) {
            z.modality(m) = (spec.mean.modality(m).array() + spec.variance.modality(m).array().sqrt() *
                                                                  z.modality(m).array())
                                .matrix();
        }
        ref.push_back(z);
    }
    const ConditionMask none(2, 2);
    const double fd = frechet_gaussian(region_features(gen, none), region_features(ref, none));
    MESSAGE("oracle joint Frechet " << fd);
    CHECK(fd < 0.05);
}

TEST_CASE("task battery on the oracle")
{
    const auto sched = NoiseSchedule::linear(60);
    const LatentShape shape{6, {2, 3}};
    const auto spec = gaussian_spec(shape, 0.1, 0.6);
    const GaussianOracle oracle(spec, sched);
    Rng rng(14);
    std::vector<MultimodalLatent> truth;
    for (int i = 0; i < 40; ++i) {
        truth.push_back(MultimodalLatent::standard_normal(shape, rng));
    }
    const Task tasks[] = {Task::Joint, Task::A2V, Task::V2A, Task::Continue, Task::Inpaint};
    BatteryOptions o;
    o.sampler = {SamplerKind::Ddim, 10};
    o.geometry = {2, 2};
    o.n_samples = 40;
    o.seed = 15;

    for (ConditioningMethod method :
         {ConditioningMethod::Masked, ConditioningMethod::Replacement, ConditioningMethod::ReconGuided}) {
        CAPTURE(to_string(method));
        o.method = method;
        const auto results = run_task_battery(oracle, sched, truth, tasks, o);
        const auto report = metrics_report(results, method);
        CHECK_FALSE(validate_report(report).has_value());
        CHECK(count_metric_values(report) == 9);
        CHECK(report.at("tasks").at("joint").at("mse").is_null());
        const auto again = metrics_report(run_task_battery(oracle, sched, truth, tasks, o), method);
        CHECK(again == report);
        CHECK(parse_conditioning_method(to_string(method)) == method);
    }
    CHECK_FALSE(parse_conditioning_method("inpaint").has_value());

    auto report = metrics_report(run_task_battery(oracle, sched, truth, tasks, o), o.method);
    report["tasks"]["v2a"].erase("frechet");
    CHECK(validate_report(report).has_value());
    report = metrics_report(run_task_battery(oracle, sched, truth, tasks, o), o.method);
    report["tasks"]["joint"]["mse"] = 0.5;
    CHECK(validate_report(report).has_value());
    report = nlohmann::json::object();
    CHECK(validate_report(report).has_value());
}

TEST_CASE("a failing task is reported without aborting the battery")
{
    std::vector<TaskMetrics> results(1);
    results[0].task = Task::Continue;
    results[0].error = "sampler diverged";
    const auto report = metrics_report(results, ConditioningMethod::Masked);
    CHECK(report.at("tasks").at("continue").at("error") == "sampler diverged");
    CHECK(count_metric_values(report) == 0);
}

TEST_CASE("sample files round trip")
{
    TempDir dir("samples");
    const LatentShape shape{4, {2, 3}};
    Rng rng(16);
    SampleSet set;
    set.task = Task::Inpaint;
    set.mask = task_mask(Task::Inpaint, 2, 4, {1, 1});
    set.seed = 99;
    set.sampler = {SamplerKind::Ddim, 25, 1.5, SigmaRule::Posterior};
    set.method = ConditioningMethod::ReconGuided;
    set.checkpoint = "run/checkpoint.ckpt";
    for (int i = 0; i < 5; ++i) {
        set.samples.push_back(MultimodalLatent::standard_normal(shape, rng));
    }
    save_samples(set, dir / "s.smpl");
    const auto loaded = load_samples(dir / "s.smpl");
    CHECK(loaded.task == set.task);
    CHECK(loaded.mask == set.mask);
    CHECK(loaded.seed == set.seed);
    CHECK(sampler_json(loaded.sampler) == sampler_json(set.sampler));
    CHECK(loaded.method == set.method);
    CHECK(loaded.checkpoint == set.checkpoint);
    REQUIRE(loaded.samples.size() == 5);
    for (int i = 0; i < 5; ++i) {
        CHECK(loaded.samples[i] == set.samples[i]);
    }

    SampleSet empty = set;
    empty.samples.clear();
    CHECK_THROWS_AS(save_samples(empty, dir / "e.smpl"), std::invalid_argument);
    SampleSet wrong_mask = set;
    wrong_mask.mask = ConditionMask(2, 3);
    CHECK_THROWS_AS(save_samples(wrong_mask, dir / "e.smpl"), std::invalid_argument);
}

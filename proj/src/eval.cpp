#include "monl/eval.hpp"

#include <cmath>

#include "monl/binary_io.hpp"
#include "monl/forward.hpp"
#include "monl/rng.hpp"

namespace monl {

namespace {

constexpr std::string_view kSampleMagic = "MONLSMPL";
constexpr std::uint32_t kSampleVersion = 1;
constexpr double kRidge = 1e-6;

Eigen::MatrixXd covariance(const FeatureSet& x, const Eigen::RowVectorXd& mean)
{
    Eigen::MatrixXd centered = x.rowwise() - mean;
    Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(x.rows() - 1);
    return 0.5 * (cov + cov.transpose());
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& a, const char* what)
{
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
    if (es.info() != Eigen::Success) {
        throw MetricError(std::string("frechet_gaussian: eigendecomposition failed for ") + what);
    }
    Eigen::VectorXd ev = es.eigenvalues();
    const double tol = 1e-10 * std::max(1.0, ev.cwiseAbs().maxCoeff());
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        if (ev[i] < -tol) {
            throw MetricError(std::string("frechet_gaussian: ") + what + " is not positive semi-definite (eigenvalue " +
                              std::to_string(ev[i]) + ")");
        }
        ev[i] = std::sqrt(std::max(ev[i], 0.0));
    }
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

void check_congruent(const MultimodalLatent& z, const ConditionMask& mask, const char* what)
{
    if (z.modalities() != mask.modalities() || z.segments() != mask.segments()) {
        throw std::invalid_argument(std::string(what) + ": mask shape does not match latent");
    }
}

} // namespace

double frechet_gaussian(const FeatureSet& a, const FeatureSet& b)
{
    if (a.cols() != b.cols() || a.cols() == 0) {
        throw std::invalid_argument("frechet_gaussian: feature dimensions differ or are zero");
    }
    const Eigen::Index dim = a.cols();
    if (a.rows() < dim + 1 || b.rows() < dim + 1) {
        throw MetricError("frechet_gaussian: need at least feature_dim + 1 samples per set (have " +
                          std::to_string(std::min(a.rows(), b.rows())) + ", dim " + std::to_string(dim) + ")");
    }
    const Eigen::RowVectorXd mu_a = a.colwise().mean();
    const Eigen::RowVectorXd mu_b = b.colwise().mean();
    const Eigen::MatrixXd ridge = kRidge * Eigen::MatrixXd::Identity(dim, dim);
    const Eigen::MatrixXd cov_a = covariance(a, mu_a) + ridge;
    const Eigen::MatrixXd cov_b = covariance(b, mu_b) + ridge;

    // Tr((A B)^{1/2}) = Tr((A^{1/2} B A^{1/2})^{1/2}), which is symmetric.
    const Eigen::MatrixXd sqrt_a = psd_sqrt(cov_a, "covariance A");
    Eigen::MatrixXd inner = sqrt_a * cov_b * sqrt_a;
    inner = 0.5 * (inner + inner.transpose());
    const double cross = psd_sqrt(inner, "covariance product").trace();

    const double value = (mu_a - mu_b).squaredNorm() + cov_a.trace() + cov_b.trace() - 2.0 * cross;
    if (!std::isfinite(value)) {
        throw MetricError("frechet_gaussian: non-finite result");
    }
    return std::max(value, 0.0);
}

std::vector<double> generated_region(const MultimodalLatent& z, const ConditionMask& mask)
{
    check_congruent(z, mask, "generated_region");
    std::vector<double> out;
    for (int m = 0; m < z.modalities(); ++m) {
        for (int n = 0; n < z.segments(); ++n) {
            if (mask.at(m, n)) {
                continue;
            }
            for (Eigen::Index k = 0; k < z.segment(m, n).size(); ++k) {
                out.push_back(z.segment(m, n)[k]);
            }
        }
    }
    return out;
}

FeatureSet region_features(std::span<const MultimodalLatent> latents, const ConditionMask& mask)
{
    if (latents.empty()) {
        throw std::invalid_argument("region_features: no latents");
    }
    const std::size_t dim = generated_region(latents.front(), mask).size();
    FeatureSet out(static_cast<Eigen::Index>(latents.size()), static_cast<Eigen::Index>(dim));
    for (std::size_t i = 0; i < latents.size(); ++i) {
        const std::vector<double> row = generated_region(latents[i], mask);
        if (row.size() != dim) {
            throw std::invalid_argument("region_features: latents have inconsistent shapes");
        }
        for (std::size_t k = 0; k < dim; ++k) {
            out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = row[k];
        }
    }
    return out;
}

double conditional_mse(const MultimodalLatent& generated, const MultimodalLatent& truth, const ConditionMask& mask)
{
    require_same_shape(generated, truth, "conditional_mse");
    check_congruent(generated, mask, "conditional_mse");
    double sum = 0.0;
    std::size_t count = 0;
    for (int m = 0; m < truth.modalities(); ++m) {
        for (int n = 0; n < truth.segments(); ++n) {
            if (mask.at(m, n)) {
                continue;
            }
            sum += (generated.segment(m, n) - truth.segment(m, n)).squaredNorm();
            count += static_cast<std::size_t>(truth.width(m));
        }
    }
    if (count == 0) {
        throw MetricError("conditional_mse: empty generated region");
    }
    return sum / static_cast<double>(count);
}

void GaussianDataSpec::validate() const
{
    require_same_shape(mean, variance, "GaussianDataSpec");
    for (int m = 0; m < variance.modalities(); ++m) {
        if (!(variance.modality(m).array() > 0.0).all()) {
            throw std::invalid_argument("GaussianDataSpec: variances must be positive");
        }
    }
}

MultimodalLatent analytic_optimal_eps(const GaussianDataSpec& spec, const MultimodalLatent& z_t,
                                      const TimestepVector& t, const NoiseSchedule& sched)
{
    require_same_shape(spec.mean, z_t, "analytic_optimal_eps");
    MultimodalLatent out(z_t.shape());
    for (int m = 0; m < z_t.modalities(); ++m) {
        for (int n = 0; n < z_t.segments(); ++n) {
            const int tt = t.at(m, n);
            if (tt == 0) {
                continue;
            }
            const double ab = sched.alpha_bar(tt);
            const double sa = std::sqrt(ab);
            const double s1 = std::sqrt(1.0 - ab);
            for (int k = 0; k < z_t.width(m); ++k) {
                const double mu = spec.mean.modality(m)(n, k);
                const double var = spec.variance.modality(m)(n, k);
                const double z = z_t.modality(m)(n, k);
                const double x0 = (sa * var * z + (1.0 - ab) * mu) / (ab * var + 1.0 - ab);
                out.modality(m)(n, k) = (z - sa * x0) / s1;
            }
        }
    }
    return out;
}

GaussianOracle::GaussianOracle(GaussianDataSpec spec, const NoiseSchedule& sched)
    : spec_(std::move(spec)), sched_(&sched)
{
    spec_.validate();
}

MultimodalLatent GaussianOracle::predict(const MultimodalLatent& z_t, const TimestepVector& t,
                                         const MultimodalLatent*) const
{
    return analytic_optimal_eps(spec_, z_t, t, *sched_);
}

MultimodalLatent GaussianOracle::input_vjp(const MultimodalLatent& z_t, const TimestepVector& t,
                                           const MultimodalLatent*, const MultimodalLatent& output_grad) const
{
    require_same_shape(z_t, output_grad, "GaussianOracle::input_vjp");
    // The Jacobian is diagonal: sqrt(1 - abar) / (abar var + 1 - abar).
    MultimodalLatent out(z_t.shape());
    for (int m = 0; m < z_t.modalities(); ++m) {
        for (int n = 0; n < z_t.segments(); ++n) {
            const int tt = t.at(m, n);
            if (tt == 0) {
                continue;
            }
            const double ab = sched_->alpha_bar(tt);
            for (int k = 0; k < z_t.width(m); ++k) {
                const double var = spec_.variance.modality(m)(n, k);
                out.modality(m)(n, k) = output_grad.modality(m)(n, k) * std::sqrt(1.0 - ab) / (ab * var + 1.0 - ab);
            }
        }
    }
    return out;
}

std::string_view to_string(ConditioningMethod method)
{
    switch (method) {
    case ConditioningMethod::Masked: return "masked";
    case ConditioningMethod::Replacement: return "replacement";
    case ConditioningMethod::ReconGuided: return "recon-guided";
    }
    return "?";
}

std::optional<ConditioningMethod> parse_conditioning_method(std::string_view name)
{
    for (auto m : {ConditioningMethod::Masked, ConditioningMethod::Replacement, ConditioningMethod::ReconGuided}) {
        if (to_string(m) == name) {
            return m;
        }
    }
    return std::nullopt;
}

std::vector<MultimodalLatent> generate_task_samples(const NoisePredictor& model, const NoiseSchedule& sched,
                                                    std::span<const MultimodalLatent> truth, Task task,
                                                    const BatteryOptions& options)
{
    if (options.n_samples < 1 || static_cast<std::size_t>(options.n_samples) > truth.size()) {
        throw std::invalid_argument("generate_task_samples: n_samples must be in [1, number of truth examples]");
    }
    const LatentShape shape = truth.front().shape();
    const ConditionMask mask = task_mask(task, shape.modalities(), shape.segments, options.geometry);
    std::vector<MultimodalLatent> out;
    out.reserve(options.n_samples);
    for (int i = 0; i < options.n_samples; ++i) {
        Rng rng(derive_seed(options.seed, static_cast<std::uint64_t>(i)));
        const ConditionSpec cond{mask, truth[i]};
        switch (options.method) {
        case ConditioningMethod::Masked:
            out.push_back(sample(model, sched, cond, rng, options.sampler));
            break;
        case ConditioningMethod::Replacement:
            out.push_back(replacement_sample(model, sched, cond, rng, options.sampler));
            break;
        case ConditioningMethod::ReconGuided:
            out.push_back(reconstruction_guided_sample(model, sched, cond, rng, options.recon_lambda));
            break;
        }
    }
    return out;
}

TaskMetrics score_task(Task task, std::span<const MultimodalLatent> generated,
                       std::span<const MultimodalLatent> truth, const ConditionMask& mask)
{
    if (generated.empty() || generated.size() > truth.size()) {
        throw std::invalid_argument("score_task: need 1..len(truth) generated samples");
    }
    TaskMetrics r;
    r.task = task;
    r.n = static_cast<int>(generated.size());
    try {
        r.frechet = frechet_gaussian(region_features(generated, mask),
                                     region_features(truth.subspan(0, generated.size()), mask));
    } catch (const MetricError& e) {
        r.error = e.what();
    }
    if (task != Task::Joint) {
        double sum = 0.0;
        for (std::size_t i = 0; i < generated.size(); ++i) {
            sum += conditional_mse(generated[i], truth[i], mask);
        }
        r.mse = sum / static_cast<double>(generated.size());
    }
    return r;
}

std::vector<TaskMetrics> run_task_battery(const NoisePredictor& model, const NoiseSchedule& sched,
                                          std::span<const MultimodalLatent> truth, std::span<const Task> tasks,
                                          const BatteryOptions& options)
{
    if (truth.empty()) {
        throw std::invalid_argument("run_task_battery: no truth examples");
    }
    const LatentShape shape = truth.front().shape();
    std::vector<TaskMetrics> out;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        BatteryOptions opt = options;
        opt.seed = derive_seed(options.seed, 1000 + static_cast<std::uint64_t>(tasks[i]));
        TaskMetrics r;
        try {
            const auto generated = generate_task_samples(model, sched, truth, tasks[i], opt);
            const ConditionMask mask = task_mask(tasks[i], shape.modalities(), shape.segments, opt.geometry);
            r = score_task(tasks[i], generated, truth, mask);
        } catch (const SamplingError& e) {
            r.task = tasks[i];
            r.n = opt.n_samples;
            r.error = e.what();
        } catch (const MetricError& e) {
            r.task = tasks[i];
            r.n = opt.n_samples;
            r.error = e.what();
        }
        r.seed = opt.seed;
        r.sampler = opt.sampler;
        out.push_back(std::move(r));
    }
    return out;
}

nlohmann::json sampler_json(const SamplerConfig& config)
{
    return {{"kind", to_string(config.kind)},
            {"steps", config.steps},
            {"guidance", config.guidance},
            {"sigma", config.sigma == SigmaRule::Beta ? "beta" : "posterior"}};
}

SamplerConfig sampler_from_json(const nlohmann::json& j)
{
    SamplerConfig c;
    const auto kind = parse_sampler_kind(j.at("kind").get<std::string>());
    if (!kind) {
        throw FormatError("unknown sampler kind " + j.at("kind").dump());
    }
    c.kind = *kind;
    c.steps = j.at("steps").get<int>();
    c.guidance = j.at("guidance").get<double>();
    const auto sigma = j.at("sigma").get<std::string>();
    if (sigma != "beta" && sigma != "posterior") {
        throw FormatError("unknown sigma rule " + sigma);
    }
    c.sigma = sigma == "beta" ? SigmaRule::Beta : SigmaRule::Posterior;
    return c;
}

namespace {

nlohmann::json mask_json(const ConditionMask& mask)
{
    nlohmann::json rows = nlohmann::json::array();
    for (int m = 0; m < mask.modalities(); ++m) {
        std::string row;
        for (int n = 0; n < mask.segments(); ++n) {
            row += mask.at(m, n) ? '1' : '0';
        }
        rows.push_back(row);
    }
    return rows;
}

ConditionMask mask_from_json(const nlohmann::json& rows, const LatentShape& shape)
{
    if (!rows.is_array() || static_cast<int>(rows.size()) != shape.modalities()) {
        throw FormatError("sample file: mask rows do not match shape");
    }
    ConditionMask mask(shape.modalities(), shape.segments);
    for (int m = 0; m < shape.modalities(); ++m) {
        const auto row = rows[m].get<std::string>();
        if (static_cast<int>(row.size()) != shape.segments) {
            throw FormatError("sample file: mask row length does not match shape");
        }
        for (int n = 0; n < shape.segments; ++n) {
            if (row[n] != '0' && row[n] != '1') {
                throw FormatError("sample file: mask rows must contain only 0 and 1");
            }
            mask.set(m, n, row[n] == '1');
        }
    }
    return mask;
}

} // namespace

nlohmann::json metrics_report(std::span<const TaskMetrics> results, ConditioningMethod method)
{
    nlohmann::json tasks = nlohmann::json::object();
    for (const auto& r : results) {
        nlohmann::json entry = {{"frechet", nullptr}, {"mse", nullptr}, {"n", r.n}, {"seed", r.seed},
                                {"sampler", sampler_json(r.sampler)}};
        if (r.frechet) {
            entry["frechet"] = *r.frechet;
        }
        if (r.mse) {
            entry["mse"] = *r.mse;
        }
        if (!r.error.empty()) {
            entry["error"] = r.error;
        }
        tasks[std::string(to_string(r.task))] = entry;
    }
    return {{"schema_version", kReportSchemaVersion}, {"method", to_string(method)}, {"tasks", tasks}};
}

std::optional<std::string> validate_report(const nlohmann::json& report)
{
    if (!report.is_object()) {
        return "report is not an object";
    }
    if (!report.contains("schema_version") || report["schema_version"] != kReportSchemaVersion) {
        return "schema_version missing or unsupported";
    }
    if (!report.contains("method") || !report["method"].is_string() ||
        !parse_conditioning_method(report["method"].get<std::string>())) {
        return "method missing or unknown";
    }
    if (!report.contains("tasks") || !report["tasks"].is_object() || report["tasks"].empty()) {
        return "tasks missing or empty";
    }
    for (const auto& [name, entry] : report["tasks"].items()) {
        const auto task = parse_task(name);
        if (!task) {
            return "unknown task " + name;
        }
        for (const char* key : {"frechet", "mse", "n", "seed", "sampler"}) {
            if (!entry.contains(key)) {
                return "task " + name + " lacks field " + key;
            }
        }
        const bool failed = entry.contains("error");
        if (!entry["n"].is_number_integer() || entry["n"].get<int>() < 1) {
            return "task " + name + ": n must be a positive integer";
        }
        if (!entry["seed"].is_number_unsigned() && !entry["seed"].is_number_integer()) {
            return "task " + name + ": seed must be an integer";
        }
        if (!failed) {
            if (!entry["frechet"].is_number() || entry["frechet"].get<double>() < 0.0) {
                return "task " + name + ": frechet must be a non-negative number";
            }
            const bool want_mse = *task != Task::Joint;
            if (want_mse != entry["mse"].is_number()) {
                return "task " + name + (want_mse ? ": mse must be a number" : ": joint task must have null mse");
            }
            if (want_mse && entry["mse"].get<double>() < 0.0) {
                return "task " + name + ": mse must be non-negative";
            }
        }
        try {
            (void)sampler_from_json(entry["sampler"]);
        } catch (const std::exception& e) {
            return "task " + name + ": bad sampler: " + e.what();
        }
    }
    return std::nullopt;
}

int count_metric_values(const nlohmann::json& report)
{
    int count = 0;
    for (const auto& [name, entry] : report.at("tasks").items()) {
        count += entry.at("frechet").is_number() ? 1 : 0;
        count += entry.at("mse").is_number() ? 1 : 0;
    }
    return count;
}

void save_samples(const SampleSet& set, const std::filesystem::path& path)
{
    if (set.samples.empty()) {
        throw std::invalid_argument("save_samples: no samples");
    }
    const LatentShape shape = set.samples.front().shape();
    if (set.mask.modalities() != shape.modalities() || set.mask.segments() != shape.segments) {
        throw std::invalid_argument("save_samples: mask does not match sample shape");
    }
    BlobFile blob;
    for (const auto& z : set.samples) {
        if (!(z.shape() == shape)) {
            throw std::invalid_argument("save_samples: samples have inconsistent shapes");
        }
        for (double v : flatten(z)) {
            append_f64(blob.payload, v);
        }
    }
    blob.header = {{"shape", {{"segments", shape.segments}, {"widths", shape.widths}}},
                   {"task", to_string(set.task)},
                   {"mask", mask_json(set.mask)},
                   {"seed", set.seed},
                   {"sampler", sampler_json(set.sampler)},
                   {"method", to_string(set.method)},
                   {"checkpoint", set.checkpoint},
                   {"count", set.samples.size()},
                   {"dtype", "f64le"},
                   {"checksum", crc32_of(blob.payload)}};
    write_blob(path, kSampleMagic, kSampleVersion, blob);
}

SampleSet load_samples(const std::filesystem::path& path)
{
    BlobFile blob = read_blob(path, kSampleMagic, kSampleVersion);
    const auto& h = blob.header;
    SampleSet set;
    try {
        LatentShape shape;
        shape.segments = h.at("shape").at("segments").get<int>();
        shape.widths = h.at("shape").at("widths").get<std::vector<int>>();
        const auto task = parse_task(h.at("task").get<std::string>());
        const auto method = parse_conditioning_method(h.at("method").get<std::string>());
        if (!task || !method) {
            throw FormatError(path.string() + ": unknown task or method in header");
        }
        set.task = *task;
        set.method = *method;
        set.mask = mask_from_json(h.at("mask"), shape);
        set.seed = h.at("seed").get<std::uint64_t>();
        set.sampler = sampler_from_json(h.at("sampler"));
        set.checkpoint = h.at("checkpoint").get<std::string>();
        const auto count = h.at("count").get<std::size_t>();
        if (blob.payload.size() != count * shape.elements() * 8) {
            throw FormatError(path.string() + ": payload length does not match header shape and count");
        }
        if (crc32_of(blob.payload) != h.at("checksum").get<std::uint32_t>()) {
            throw ChecksumError(path.string() + ": payload checksum mismatch");
        }
        std::vector<double> values(shape.elements());
        const unsigned char* cursor = blob.payload.data();
        for (std::size_t i = 0; i < count; ++i) {
            for (auto& v : values) {
                v = read_f64(cursor);
                cursor += 8;
            }
            set.samples.push_back(unflatten(shape, values.data()));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": malformed sample header: " + e.what());
    }
    return set;
}

} // namespace monl

#include "monl/commands.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <ostream>

#include <CLI11.hpp>

#include "monl/checkpoint.hpp"
#include "monl/rng.hpp"

namespace monl {

namespace {

namespace fs = std::filesystem;

/// Thrown for bad flag values detected after parsing.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

template <class Fn>
int guarded(std::ostream& err, const char* verb, Fn&& fn)
{
    try {
        return fn();
    } catch (const UsageError& e) {
        err << "monl " << verb << ": " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "monl " << verb << ": error: " << e.what() << '\n';
        return kExitRuntime;
    }
}

RunConfig load_with_seed(const fs::path& path, const std::optional<std::uint64_t>& seed)
{
    RunConfig c = load_run_config(path);
    if (seed) {
        c.seed = *seed;
    }
    return c;
}

void append_line(const fs::path& path, const nlohmann::json& j)
{
    std::ofstream out(path, std::ios::binary | std::ios::app);
    if (!out) {
        throw std::runtime_error("cannot append to " + path.string());
    }
    out << j.dump() << '\n';
}

void require_file(const fs::path& path, const char* what)
{
    if (!fs::is_regular_file(path)) {
        throw std::runtime_error(std::string(what) + " not found: " + path.string());
    }
}

std::uint64_t task_seed(const RunConfig& c, Task task)
{
    return derive_seed(sub_seed(c, SeedStream::Sampling), static_cast<std::uint64_t>(task));
}

} // namespace

int cmd_gen_data(const GenDataOptions& options, std::ostream& out, std::ostream& err)
{
    return guarded(err, "gen-data", [&] {
        RunConfig c = load_with_seed(options.config, options.seed);
        if (options.out_dir) {
            c.paths.data_dir = fs::absolute(*options.out_dir);
        }
        fs::create_directories(c.paths.data_dir);
        const Dataset train = gen_coupled(c.data.coupled, c.data.train_examples, sub_seed(c, SeedStream::TrainData));
        const Dataset eval = gen_coupled_with_stats(c.data.coupled, c.data.eval_examples,
                                                    sub_seed(c, SeedStream::EvalData), train.stats);
        save_dataset(train, c.train_data_path());
        save_dataset(eval, c.eval_data_path());
        write_json_file(c.paths.data_dir / "gen-data.config.json", to_json(c));
        out << "wrote " << c.train_data_path().string() << " (" << train.examples.size() << " examples) and "
            << c.eval_data_path().string() << " (" << eval.examples.size() << " examples)\n";
        out << std::setprecision(6);
        for (std::size_t m = 0; m < train.stats.mean.size(); ++m) {
            out << "modality " << m << ": mean " << train.stats.mean[m] << " variance " << train.stats.variance[m]
                << '\n';
        }
        return kExitOk;
    });
}

int cmd_train(const TrainOptions& options, std::ostream& out, std::ostream& err)
{
    return guarded(err, "train", [&] {
        RunConfig c = load_with_seed(options.config, options.seed);
        if (options.strategy) {
            c.train.train.strategy = *options.strategy;
        }
        if (options.run_dir) {
            c.paths.run_dir = fs::absolute(*options.run_dir);
        }
        require_file(c.train_data_path(), "training dataset");
        const Dataset data = load_dataset(c.train_data_path());
        if (!(data.config.shape() == c.model.latent_shape())) {
            throw std::runtime_error("dataset shape does not match the model configuration");
        }
        const NoiseSchedule sched = c.schedule.build();
        fs::create_directories(c.paths.run_dir);

        TrainState state;
        if (options.resume) {
            const Checkpoint ckpt = load_checkpoint(*options.resume);
            if (!(ckpt.params.config == c.model)) {
                throw std::runtime_error("checkpoint model config differs from the run config");
            }
            state = TrainState::from_checkpoint(ckpt);
            out << "resumed from " << options.resume->string() << " at step " << state.step << '\n';
        } else {
            Rng init_rng(sub_seed(c, SeedStream::ModelInit));
            state = TrainState::fresh(init_denoiser(c.model, init_rng), sub_seed(c, SeedStream::Training));
            std::ofstream(c.metrics_path(), std::ios::trunc);
        }
        write_json_file(c.paths.run_dir / "train.config.json", to_json(c));

        const auto& tc = c.train.train;
        out << "training " << to_string(tc.strategy) << " for " << tc.total_steps << " steps ("
            << state.params.size() << " parameters)\n";
        run_training(state, data.examples, tc, sched, [&](const StepReport& r, const TrainState& s) {
            const bool last = r.step >= tc.total_steps || (options.stop_at && r.step >= *options.stop_at);
            if (r.step % c.train.log_every == 0 || last) {
                nlohmann::json counts;
                for (auto kind : {StrategyKind::Vanilla, StrategyKind::Pm, StrategyKind::Pt, StrategyKind::Ptm}) {
                    counts[std::string(to_string(kind))] = s.strategy_counts[concrete_index(kind)];
                }
                append_line(c.metrics_path(), {{"step", r.step},
                                               {"loss", r.loss},
                                               {"lr", r.lr},
                                               {"grad_norm", r.grad_norm},
                                               {"strategy_counts", counts}});
            }
            if (r.step % c.train.checkpoint_every == 0 || last) {
                save_checkpoint(c.checkpoint_path(), s.to_checkpoint());
            }
            return !last;
        });
        out << "stopped at step " << state.step << "; checkpoint " << c.checkpoint_path().string() << '\n';
        return kExitOk;
    });
}

int cmd_sample(const SampleOptions& options, std::ostream& out, std::ostream& err)
{
    return guarded(err, "sample", [&] {
        RunConfig c = load_with_seed(options.config, options.seed);
        BatteryOptions bo;
        bo.sampler = c.sample.sampler;
        if (options.guidance) {
            bo.sampler.guidance = *options.guidance;
        }
        if (options.sampler) {
            bo.sampler.kind = *options.sampler;
        }
        if (options.steps) {
            bo.sampler.steps = *options.steps;
        }
        if (bo.sampler.guidance < 0.0) {
            throw UsageError("--guidance must be >= 0");
        }
        if (bo.sampler.steps < 1 || bo.sampler.steps > c.schedule.steps) {
            throw UsageError("--steps must be in [1, " + std::to_string(c.schedule.steps) + "]");
        }
        bo.method = options.baseline.value_or(ConditioningMethod::Masked);
        bo.recon_lambda = c.sample.recon_lambda;
        bo.geometry = c.sample.geometry;
        bo.n_samples = options.n_samples.value_or(c.sample.n_samples);
        bo.seed = task_seed(c, options.task);

        const fs::path ckpt_path = options.checkpoint.value_or(c.checkpoint_path());
        require_file(ckpt_path, "checkpoint");
        require_file(c.eval_data_path(), "eval dataset");
        const Checkpoint ckpt = load_checkpoint(ckpt_path);
        const Dataset eval = load_dataset(c.eval_data_path());
        if (!(ckpt.params.config.latent_shape() == eval.config.shape())) {
            throw std::runtime_error("checkpoint latent shape does not match the eval dataset");
        }
        if (ckpt.params.config.T != c.schedule.steps) {
            throw std::runtime_error("checkpoint T differs from the configured schedule");
        }
        if (bo.n_samples < 1 || static_cast<std::size_t>(bo.n_samples) > eval.examples.size()) {
            throw UsageError("--n must be in [1, " + std::to_string(eval.examples.size()) + "]");
        }
        const NoiseSchedule sched = c.schedule.build();
        const Denoiser model(ckpt.params, c.sample.use_ema && !options.raw_weights);

        SampleSet set;
        set.task = options.task;
        const LatentShape shape = eval.config.shape();
        set.mask = task_mask(options.task, shape.modalities(), shape.segments, bo.geometry);
        set.seed = bo.seed;
        set.sampler = bo.sampler;
        set.method = bo.method;
        set.checkpoint = fs::absolute(ckpt_path).string();
        set.samples = generate_task_samples(model, sched, eval.examples, options.task, bo);

        const fs::path path = options.out.value_or(c.samples_dir() / (std::string(to_string(options.task)) + ".smpl"));
        if (path.has_parent_path()) {
            fs::create_directories(path.parent_path());
        }
        save_samples(set, path);
        nlohmann::json resolved = {{"config", to_json(c)},
                                   {"task", to_string(set.task)},
                                   {"method", to_string(set.method)},
                                   {"sampler", sampler_json(set.sampler)},
                                   {"checkpoint", set.checkpoint},
                                   {"n_samples", bo.n_samples},
                                   {"use_ema", c.sample.use_ema && !options.raw_weights}};
        write_json_file(fs::path(path).replace_extension(".config.json"), resolved);
        out << "wrote " << set.samples.size() << " " << to_string(set.task) << " samples to " << path.string()
            << '\n';
        return kExitOk;
    });
}

int cmd_eval(const EvalOptions& options, std::ostream& out, std::ostream& err)
{
    return guarded(err, "eval", [&] {
        const RunConfig c = load_run_config(options.config);
        const fs::path dir = options.samples_dir.value_or(c.samples_dir());
        if (!fs::is_directory(dir)) {
            throw std::runtime_error("samples directory not found: " + dir.string());
        }
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(dir)) {
            if (entry.is_regular_file() && entry.path().extension() == ".smpl") {
                files.push_back(entry.path());
            }
        }
        std::sort(files.begin(), files.end());
        if (files.empty()) {
            throw std::runtime_error("no .smpl sample files in " + dir.string());
        }
        const fs::path data_path = options.dataset.value_or(c.eval_data_path());
        require_file(data_path, "eval dataset");
        const Dataset eval = load_dataset(data_path);

        std::vector<TaskMetrics> results;
        std::optional<ConditioningMethod> method;
        for (const auto& file : files) {
            const SampleSet set = load_samples(file);
            if (method && *method != set.method) {
                throw std::runtime_error("sample files mix conditioning methods (" + file.string() + ")");
            }
            method = set.method;
            for (const auto& r : results) {
                if (r.task == set.task) {
                    throw std::runtime_error("two sample files for task " + std::string(to_string(set.task)));
                }
            }
            if (!(set.samples.front().shape() == eval.config.shape())) {
                throw std::runtime_error(file.string() + ": sample shape does not match the eval dataset");
            }
            TaskMetrics r = score_task(set.task, set.samples, eval.examples, set.mask);
            r.seed = set.seed;
            r.sampler = set.sampler;
            results.push_back(std::move(r));
        }
        const nlohmann::json report = metrics_report(results, *method);
        if (auto problem = validate_report(report)) {
            throw std::runtime_error("metrics report violates schema: " + *problem);
        }
        const fs::path report_path = options.out.value_or(c.report_path());
        write_json_file(report_path, report);
        write_json_file(fs::path(report_path).replace_extension(".config.json"), to_json(c));
        out << report.dump(2) << '\n';
        return kExitOk;
    });
}

int cmd_inspect_schedule(const fs::path& config, int every, std::ostream& out, std::ostream& err)
{
    return guarded(err, "inspect-schedule", [&] {
        if (every < 1) {
            throw UsageError("--every must be >= 1");
        }
        const RunConfig c = load_run_config(config);
        const NoiseSchedule sched = c.schedule.build();
        out << std::setw(6) << "t" << std::setw(16) << "beta" << std::setw(16) << "alpha_bar" << '\n';
        out << std::scientific << std::setprecision(6);
        for (int t = 1; t <= sched.steps(); ++t) {
            if (t == 1 || t % every == 0 || t == sched.steps()) {
                out << std::setw(6) << t << std::setw(16) << sched.beta(t) << std::setw(16) << sched.alpha_bar(t)
                    << '\n';
            }
        }
        return kExitOk;
    });
}

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Mixture-of-noise-levels diffusion on synthetic multimodal latents", "monl"};
    app.require_subcommand(1);

    std::string config;
    std::optional<std::uint64_t> seed;
    std::string strategy, task = "joint", sampler, baseline;
    std::optional<double> guidance;
    std::optional<int> steps, n_samples;
    std::optional<std::int64_t> stop_at;
    std::string out_path, run_dir, resume, checkpoint, samples_dir, dataset;
    bool raw_weights = false;
    int every = 100;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config, "Run configuration (JSON)")->required();
    };

    CLI::App* gen = app.add_subcommand("gen-data", "Generate the train and eval datasets");
    add_common(gen);
    gen->add_option("--seed", seed, "Override the master seed");
    gen->add_option("--out", out_path, "Output directory (default: paths.data_dir)");

    CLI::App* train = app.add_subcommand("train", "Train a denoiser");
    add_common(train);
    train->add_option("--seed", seed, "Override the master seed");
    train->add_option("--strategy", strategy, "Vanilla, Pm, Pt, Ptm, MoNL or Pt/Pm/Ptm");
    train->add_option("--run-dir", run_dir, "Output directory (default: paths.run_dir)");
    train->add_option("--resume", resume, "Checkpoint to resume from");
    train->add_option("--stop-at", stop_at, "Stop after this step");

    CLI::App* samp = app.add_subcommand("sample", "Generate samples for one task");
    add_common(samp);
    samp->add_option("--seed", seed, "Override the master seed");
    samp->add_option("--task", task, "joint, a2v, v2a, continue or inpaint");
    samp->add_option("--guidance", guidance, "Guidance strength s");
    samp->add_option("--sampler", sampler, "ddpm or ddim");
    samp->add_option("--steps", steps, "DDIM steps");
    samp->add_option("--baseline", baseline, "replacement or recon-guided");
    samp->add_option("--checkpoint", checkpoint, "Checkpoint (default: run_dir/checkpoint.ckpt)");
    samp->add_option("--out", out_path, "Sample file (default: run_dir/samples/<task>.smpl)");
    samp->add_option("--n", n_samples, "Number of samples");
    samp->add_flag("--raw-weights", raw_weights, "Sample with raw weights instead of EMA");

    CLI::App* ev = app.add_subcommand("eval", "Score sample files against the eval set");
    add_common(ev);
    ev->add_option("--samples-dir", samples_dir, "Directory of .smpl files");
    ev->add_option("--dataset", dataset, "Eval dataset file");
    ev->add_option("--out", out_path, "Report path (default: run_dir/report.json)");

    CLI::App* insp = app.add_subcommand("inspect-schedule", "Print the beta / alpha_bar table");
    add_common(insp);
    insp->add_option("--every", every, "Row stride");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    auto opt_path = [](const std::string& s) -> std::optional<fs::path> {
        if (s.empty()) {
            return std::nullopt;
        }
        return fs::path(s);
    };

    if (gen->parsed()) {
        return cmd_gen_data({config, seed, opt_path(out_path)}, out, err);
    }
    if (train->parsed()) {
        TrainOptions o{config, seed, std::nullopt, opt_path(run_dir), opt_path(resume), stop_at};
        if (!strategy.empty()) {
            o.strategy = parse_strategy(strategy);
            if (!o.strategy) {
                err << "monl train: unknown strategy '" << strategy << "'\n";
                return kExitUsage;
            }
        }
        return cmd_train(o, out, err);
    }
    if (samp->parsed()) {
        SampleOptions o;
        o.config = config;
        o.seed = seed;
        const auto t = parse_task(task);
        if (!t) {
            err << "monl sample: unknown task '" << task << "'\n";
            return kExitUsage;
        }
        o.task = *t;
        o.guidance = guidance;
        if (!sampler.empty()) {
            o.sampler = parse_sampler_kind(sampler);
            if (!o.sampler) {
                err << "monl sample: unknown sampler '" << sampler << "'\n";
                return kExitUsage;
            }
        }
        o.steps = steps;
        if (!baseline.empty()) {
            const auto m = parse_conditioning_method(baseline);
            if (!m || *m == ConditioningMethod::Masked) {
                err << "monl sample: --baseline must be replacement or recon-guided\n";
                return kExitUsage;
            }
            o.baseline = m;
        }
        o.checkpoint = opt_path(checkpoint);
        o.out = opt_path(out_path);
        o.n_samples = n_samples;
        o.raw_weights = raw_weights;
        return cmd_sample(o, out, err);
    }
    if (ev->parsed()) {
        return cmd_eval({config, opt_path(samples_dir), opt_path(dataset), opt_path(out_path)}, out, err);
    }
    return cmd_inspect_schedule(config, every, out, err);
}

} // namespace monl

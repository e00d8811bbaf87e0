#include "monl/run_config.hpp"

#include <fstream>
#include <set>

#include "monl/rng.hpp"

namespace monl {

namespace {

/// Reads one JSON object, recording which keys were consumed so leftovers
/// can be reported as unknown.
class Section {
public:
    Section(const nlohmann::json& j, std::string prefix) : j_(j), prefix_(std::move(prefix))
    {
        if (!j_.is_object()) {
            throw ConfigError("field '" + name() + "' must be an object");
        }
    }

    template <class T>
    T get(const std::string& key)
    {
        const nlohmann::json& v = at(key);
        try {
            return v.get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError("field '" + prefix_ + key + "' has the wrong type (got " + v.dump() + ")");
        }
    }

    Section sub(const std::string& key) { return Section(at(key), prefix_ + key + "."); }

    void finish() const
    {
        for (const auto& [key, value] : j_.items()) {
            if (!seen_.contains(key)) {
                throw ConfigError("unknown field '" + prefix_ + key + "'");
            }
        }
    }

private:
    const nlohmann::json& at(const std::string& key)
    {
        if (!j_.contains(key)) {
            throw ConfigError("missing field '" + prefix_ + key + "'");
        }
        seen_.insert(key);
        return j_.at(key);
    }

    std::string name() const { return prefix_.empty() ? "<root>" : prefix_.substr(0, prefix_.size() - 1); }

    const nlohmann::json& j_;
    std::string prefix_;
    std::set<std::string> seen_;
};

template <class Fn>
void check(const char* section, Fn&& fn)
{
    try {
        fn();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("invalid ") + section + " section: " + e.what());
    }
}

std::filesystem::path anchor(const std::filesystem::path& p, const std::filesystem::path& base)
{
    return (p.is_absolute() ? p : base / p).lexically_normal();
}

} // namespace

void RunConfig::validate() const
{
    check("schedule", [&] { (void)schedule.build(); });
    check("data", [&] {
        data.coupled.validate();
        if (data.train_examples < 1 || data.eval_examples < 1) {
            throw std::invalid_argument("example counts must be >= 1");
        }
    });
    check("model", [&] {
        model.validate();
        if (!(model.latent_shape() == data.coupled.shape())) {
            throw std::invalid_argument("model latent shape differs from the data shape");
        }
        if (model.T != schedule.steps) {
            throw std::invalid_argument("model T differs from schedule steps");
        }
    });
    check("train", [&] {
        train.train.validate();
        if (train.log_every < 1 || train.checkpoint_every < 1) {
            throw std::invalid_argument("log_every and checkpoint_every must be >= 1");
        }
    });
    check("sample", [&] {
        if (sample.sampler.steps < 1 || sample.sampler.steps > schedule.steps) {
            throw std::invalid_argument("sampler steps must be in [1, schedule steps]");
        }
        if (sample.sampler.guidance < 0.0) {
            throw std::invalid_argument("guidance must be >= 0");
        }
        if (sample.n_samples < 1 || sample.n_samples > data.eval_examples) {
            throw std::invalid_argument("n_samples must be in [1, eval_examples]");
        }
        if (sample.recon_lambda < 0.0) {
            throw std::invalid_argument("recon_lambda must be >= 0");
        }
        (void)task_mask(Task::Inpaint, data.coupled.shape().modalities(), data.coupled.segments, sample.geometry);
        (void)task_mask(Task::Continue, data.coupled.shape().modalities(), data.coupled.segments, sample.geometry);
    });
}

std::uint64_t sub_seed(const RunConfig& config, SeedStream stream)
{
    return derive_seed(config.seed, static_cast<std::uint64_t>(stream));
}

RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir)
{
    RunConfig c;
    Section root(j, "");
    const int version = root.get<int>("version");
    if (version != kRunConfigVersion) {
        throw ConfigError("unsupported config version " + std::to_string(version) + " (expected " +
                          std::to_string(kRunConfigVersion) + ")");
    }
    c.seed = root.get<std::uint64_t>("seed");

    Section sched = root.sub("schedule");
    c.schedule.steps = sched.get<int>("steps");
    c.schedule.beta_start = sched.get<double>("beta_start");
    c.schedule.beta_end = sched.get<double>("beta_end");
    sched.finish();

    Section data = root.sub("data");
    CoupledConfig& cc = c.data.coupled;
    cc.segments = data.get<int>("segments");
    cc.width1 = data.get<int>("width1");
    cc.width2 = data.get<int>("width2");
    cc.freq_min = data.get<double>("freq_min");
    cc.freq_max = data.get<double>("freq_max");
    cc.amp_min = data.get<double>("amp_min");
    cc.amp_max = data.get<double>("amp_max");
    cc.lag = data.get<int>("lag");
    cc.obs_noise = data.get<double>("obs_noise");
    cc.map_seed = data.get<std::uint64_t>("map_seed");
    c.data.train_examples = data.get<int>("train_examples");
    c.data.eval_examples = data.get<int>("eval_examples");
    data.finish();

    Section model = root.sub("model");
    c.model.segments = cc.segments;
    c.model.widths = {cc.width1, cc.width2};
    c.model.T = c.schedule.steps;
    c.model.model_dim = model.get<int>("model_dim");
    c.model.layers = model.get<int>("layers");
    c.model.heads = model.get<int>("heads");
    c.model.timestep_embed_dim = model.get<int>("timestep_embed_dim");
    c.model.self_conditioning = model.get<bool>("self_conditioning");
    c.model.self_cond_clip = model.get<double>("self_cond_clip");
    model.finish();

    Section train = root.sub("train");
    TrainConfig& tc = c.train.train;
    const auto strategy_name = train.get<std::string>("strategy");
    const auto strategy = parse_strategy(strategy_name);
    if (!strategy) {
        throw ConfigError("field 'train.strategy' has unknown value '" + strategy_name + "'");
    }
    tc.strategy = *strategy;
    tc.batch_size = train.get<int>("batch_size");
    tc.learning_rate = train.get<double>("learning_rate");
    tc.warmup_steps = train.get<int>("warmup_steps");
    tc.total_steps = train.get<int>("total_steps");
    tc.ema_decay = train.get<double>("ema_decay");
    tc.self_cond_rate = train.get<double>("self_cond_rate");
    tc.weight_decay = train.get<double>("weight_decay");
    tc.grad_clip = train.get<double>("grad_clip");
    tc.adam_beta1 = train.get<double>("adam_beta1");
    tc.adam_beta2 = train.get<double>("adam_beta2");
    tc.adam_eps = train.get<double>("adam_eps");
    c.train.log_every = train.get<int>("log_every");
    c.train.checkpoint_every = train.get<int>("checkpoint_every");
    train.finish();

    Section sample = root.sub("sample");
    const auto kind_name = sample.get<std::string>("sampler");
    const auto kind = parse_sampler_kind(kind_name);
    if (!kind) {
        throw ConfigError("field 'sample.sampler' has unknown value '" + kind_name + "'");
    }
    c.sample.sampler.kind = *kind;
    c.sample.sampler.steps = sample.get<int>("steps");
    c.sample.sampler.guidance = sample.get<double>("guidance");
    const auto sigma = sample.get<std::string>("sigma");
    if (sigma != "beta" && sigma != "posterior") {
        throw ConfigError("field 'sample.sigma' must be \"beta\" or \"posterior\"");
    }
    c.sample.sampler.sigma = sigma == "beta" ? SigmaRule::Beta : SigmaRule::Posterior;
    c.sample.geometry.continue_segments = sample.get<int>("continue_segments");
    c.sample.geometry.inpaint_tail = sample.get<int>("inpaint_tail");
    c.sample.n_samples = sample.get<int>("n_samples");
    c.sample.recon_lambda = sample.get<double>("recon_lambda");
    c.sample.use_ema = sample.get<bool>("use_ema");
    sample.finish();

    Section paths = root.sub("paths");
    c.paths.data_dir = anchor(paths.get<std::string>("data_dir"), base_dir);
    c.paths.run_dir = anchor(paths.get<std::string>("run_dir"), base_dir);
    paths.finish();

    root.finish();
    c.validate();
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file " + path.string());
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return parse_run_config(j, std::filesystem::absolute(path).parent_path());
}

nlohmann::json to_json(const RunConfig& c)
{
    const CoupledConfig& cc = c.data.coupled;
    const TrainConfig& tc = c.train.train;
    const SamplerConfig& sc = c.sample.sampler;
    return {
        {"version", kRunConfigVersion},
        {"seed", c.seed},
        {"schedule",
         {{"steps", c.schedule.steps}, {"beta_start", c.schedule.beta_start}, {"beta_end", c.schedule.beta_end}}},
        {"data",
         {{"segments", cc.segments},
          {"width1", cc.width1},
          {"width2", cc.width2},
          {"freq_min", cc.freq_min},
          {"freq_max", cc.freq_max},
          {"amp_min", cc.amp_min},
          {"amp_max", cc.amp_max},
          {"lag", cc.lag},
          {"obs_noise", cc.obs_noise},
          {"map_seed", cc.map_seed},
          {"train_examples", c.data.train_examples},
          {"eval_examples", c.data.eval_examples}}},
        {"model",
         {{"model_dim", c.model.model_dim},
          {"layers", c.model.layers},
          {"heads", c.model.heads},
          {"timestep_embed_dim", c.model.timestep_embed_dim},
          {"self_conditioning", c.model.self_conditioning},
          {"self_cond_clip", c.model.self_cond_clip}}},
        {"train",
         {{"strategy", to_string(tc.strategy)},
          {"batch_size", tc.batch_size},
          {"learning_rate", tc.learning_rate},
          {"warmup_steps", tc.warmup_steps},
          {"total_steps", tc.total_steps},
          {"ema_decay", tc.ema_decay},
          {"self_cond_rate", tc.self_cond_rate},
          {"weight_decay", tc.weight_decay},
          {"grad_clip", tc.grad_clip},
          {"adam_beta1", tc.adam_beta1},
          {"adam_beta2", tc.adam_beta2},
          {"adam_eps", tc.adam_eps},
          {"log_every", c.train.log_every},
          {"checkpoint_every", c.train.checkpoint_every}}},
        {"sample",
         {{"sampler", to_string(sc.kind)},
          {"steps", sc.steps},
          {"guidance", sc.guidance},
          {"sigma", sc.sigma == SigmaRule::Beta ? "beta" : "posterior"},
          {"continue_segments", c.sample.geometry.continue_segments},
          {"inpaint_tail", c.sample.geometry.inpaint_tail},
          {"n_samples", c.sample.n_samples},
          {"recon_lambda", c.sample.recon_lambda},
          {"use_ema", c.sample.use_ema}}},
        {"paths", {{"data_dir", c.paths.data_dir.string()}, {"run_dir", c.paths.run_dir.string()}}},
    };
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j)
{
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out << j.dump(2) << '\n';
    if (!out) {
        throw std::runtime_error("write failed for " + path.string());
    }
}

} // namespace monl

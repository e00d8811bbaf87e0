#include "monl/data.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "monl/binary_io.hpp"
#include "monl/rng.hpp"

namespace monl {

namespace {

constexpr std::string_view kMagic = "MONLDATA";
constexpr std::uint32_t kVersion = 1;

} // namespace

void CoupledConfig::validate() const
{
    if (segments < 1 || width1 < 1 || width2 < 1) {
        throw std::invalid_argument("coupled config: segments and widths must be >= 1");
    }
    if (lag < 0 || lag >= segments) {
        throw std::invalid_argument("coupled config: need 0 <= lag < segments");
    }
    if (!(obs_noise >= 0.0)) {
        throw std::invalid_argument("coupled config: obs_noise must be >= 0");
    }
    if (!(freq_min > 0.0 && freq_min <= freq_max)) {
        throw std::invalid_argument("coupled config: need 0 < freq_min <= freq_max");
    }
    if (!(amp_min > 0.0 && amp_min <= amp_max)) {
        throw std::invalid_argument("coupled config: need 0 < amp_min <= amp_max");
    }
}

void to_json(nlohmann::json& j, const CoupledConfig& c)
{
    j = nlohmann::json{{"segments", c.segments}, {"width1", c.width1},     {"width2", c.width2},
                       {"freq_min", c.freq_min}, {"freq_max", c.freq_max}, {"amp_min", c.amp_min},
                       {"amp_max", c.amp_max},   {"lag", c.lag},           {"obs_noise", c.obs_noise},
                       {"map_seed", c.map_seed}};
}

void from_json(const nlohmann::json& j, CoupledConfig& c)
{
    j.at("segments").get_to(c.segments);
    j.at("width1").get_to(c.width1);
    j.at("width2").get_to(c.width2);
    j.at("freq_min").get_to(c.freq_min);
    j.at("freq_max").get_to(c.freq_max);
    j.at("amp_min").get_to(c.amp_min);
    j.at("amp_max").get_to(c.amp_max);
    j.at("lag").get_to(c.lag);
    j.at("obs_noise").get_to(c.obs_noise);
    j.at("map_seed").get_to(c.map_seed);
}

CouplingMaps coupling_maps(const CoupledConfig& config)
{
    Rng rng(config.map_seed);
    CouplingMaps maps;
    maps.projection.resize(config.width1, 4);
    for (Eigen::Index i = 0; i < maps.projection.size(); ++i) {
        maps.projection.data()[i] = rng.normal();
    }
    maps.coupling.resize(config.width2, config.width1);
    const double scale = 1.0 / std::sqrt(static_cast<double>(config.width1));
    for (Eigen::Index i = 0; i < maps.coupling.size(); ++i) {
        maps.coupling.data()[i] = scale * rng.normal();
    }
    return maps;
}

std::vector<MultimodalLatent> gen_coupled_raw(const CoupledConfig& config, int n_examples, std::uint64_t seed)
{
    config.validate();
    if (n_examples < 1) {
        throw std::invalid_argument("gen_coupled: n_examples must be >= 1");
    }
    const CouplingMaps maps = coupling_maps(config);
    const int N = config.segments;
    Rng rng(seed);
    std::vector<MultimodalLatent> out;
    out.reserve(n_examples);
    for (int i = 0; i < n_examples; ++i) {
        double freq[2], phase[2], amp[2];
        for (int s = 0; s < 2; ++s) {
            freq[s] = config.freq_min + (config.freq_max - config.freq_min) * rng.uniform();
            phase[s] = 2.0 * std::numbers::pi * rng.uniform();
            amp[s] = config.amp_min + (config.amp_max - config.amp_min) * rng.uniform();
        }
        RowMatrix features(N, 4);
        for (int n = 0; n < N; ++n) {
            for (int s = 0; s < 2; ++s) {
                const double angle = 2.0 * std::numbers::pi * freq[s] * n + phase[s];
                features(n, 2 * s) = amp[s] * std::cos(angle);
                features(n, 2 * s + 1) = amp[s] * std::sin(angle);
            }
        }
        MultimodalLatent z(config.shape());
        z.modality(0) = features * maps.projection.transpose();
        for (int n = 0; n < N; ++n) {
            const int src = (n - config.lag + N) % N;
            z.modality(1).row(n) = z.modality(0).row(src) * maps.coupling.transpose();
            for (int k = 0; k < config.width2; ++k) {
                z.modality(1)(n, k) += config.obs_noise * rng.normal();
            }
        }
        out.push_back(std::move(z));
    }
    return out;
}

NormalizationStats compute_stats(const std::vector<MultimodalLatent>& raw)
{
    if (raw.empty()) {
        throw std::invalid_argument("compute_stats: empty example list");
    }
    NormalizationStats stats;
    const int M = raw.front().modalities();
    for (int m = 0; m < M; ++m) {
        double sum = 0.0;
        double count = 0.0;
        for (const auto& z : raw) {
            sum += z.modality(m).sum();
            count += static_cast<double>(z.modality(m).size());
        }
        const double mean = sum / count;
        double sq = 0.0;
        for (const auto& z : raw) {
            sq += (z.modality(m).array() - mean).square().sum();
        }
        stats.mean.push_back(mean);
        stats.variance.push_back(sq / count);
    }
    return stats;
}

void normalize_in_place(std::vector<MultimodalLatent>& examples, const NormalizationStats& stats)
{
    for (auto& z : examples) {
        if (static_cast<std::size_t>(z.modalities()) != stats.mean.size()) {
            throw std::invalid_argument("normalize: stats do not match modality count");
        }
        for (int m = 0; m < z.modalities(); ++m) {
            const double inv_std = 1.0 / std::sqrt(stats.variance[m]);
            z.modality(m) = z.modality(m).unaryExpr([&](double v) {
                return static_cast<double>(static_cast<float>((v - stats.mean[m]) * inv_std));
            });
        }
    }
}

Dataset gen_coupled(const CoupledConfig& config, int n_examples, std::uint64_t seed)
{
    Dataset ds;
    ds.config = config;
    ds.seed = seed;
    ds.examples = gen_coupled_raw(config, n_examples, seed);
    ds.stats = compute_stats(ds.examples);
    normalize_in_place(ds.examples, ds.stats);
    return ds;
}

Dataset gen_coupled_with_stats(const CoupledConfig& config, int n_examples, std::uint64_t seed,
                               const NormalizationStats& stats)
{
    Dataset ds;
    ds.config = config;
    ds.seed = seed;
    ds.stats = stats;
    ds.examples = gen_coupled_raw(config, n_examples, seed);
    normalize_in_place(ds.examples, ds.stats);
    return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path)
{
    if (ds.examples.empty()) {
        throw std::invalid_argument("save_dataset: no examples");
    }
    const LatentShape shape = ds.examples.front().shape();
    BlobFile blob;
    blob.payload.reserve(ds.examples.size() * shape.elements() * 4);
    for (const auto& z : ds.examples) {
        if (!(z.shape() == shape)) {
            throw std::invalid_argument("save_dataset: examples have inconsistent shapes");
        }
        for (double v : flatten(z)) {
            append_f32(blob.payload, v);
        }
    }
    blob.header = {{"config", ds.config},
                   {"seed", ds.seed},
                   {"stats", {{"mean", ds.stats.mean}, {"variance", ds.stats.variance}}},
                   {"count", ds.examples.size()},
                   {"shape", {{"segments", shape.segments}, {"widths", shape.widths}}},
                   {"dtype", "f32le"},
                   {"order", "example,modality,segment,channel"},
                   {"payload_bytes", blob.payload.size()},
                   {"checksum", crc32_of(blob.payload)}};
    write_blob(path, kMagic, kVersion, blob);
}

Dataset load_dataset(const std::filesystem::path& path)
{
    BlobFile blob = read_blob(path, kMagic, kVersion);
    const auto& h = blob.header;
    Dataset ds;
    try {
        ds.config = h.at("config").get<CoupledConfig>();
        ds.seed = h.at("seed").get<std::uint64_t>();
        ds.stats.mean = h.at("stats").at("mean").get<std::vector<double>>();
        ds.stats.variance = h.at("stats").at("variance").get<std::vector<double>>();
        LatentShape shape;
        shape.segments = h.at("shape").at("segments").get<int>();
        shape.widths = h.at("shape").at("widths").get<std::vector<int>>();
        const auto count = h.at("count").get<std::size_t>();
        const auto bytes = h.at("payload_bytes").get<std::size_t>();
        if (bytes != count * shape.elements() * 4) {
            throw FormatError(path.string() + ": header shapes disagree with payload_bytes");
        }
        if (blob.payload.size() != bytes) {
            throw FormatError(path.string() + ": truncated payload (" + std::to_string(blob.payload.size()) + " of " +
                              std::to_string(bytes) + " bytes)");
        }
        if (crc32_of(blob.payload) != h.at("checksum").get<std::uint32_t>()) {
            throw ChecksumError(path.string() + ": payload checksum mismatch");
        }
        std::vector<double> values(shape.elements());
        const unsigned char* cursor = blob.payload.data();
        ds.examples.reserve(count);
        for (std::size_t i = 0; i < count; ++i) {
            for (auto& v : values) {
                v = read_f32(cursor);
                cursor += 4;
            }
            ds.examples.push_back(unflatten(shape, values.data()));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": malformed dataset header: " + e.what());
    }
    return ds;
}

} // namespace monl

#include "monl/checkpoint.hpp"

#include "monl/binary_io.hpp"

namespace monl {

namespace {

constexpr std::string_view kMagic = "MONLCKPT";
constexpr std::uint32_t kVersion = 1;

} // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt)
{
    const auto& p = ckpt.params;
    if (p.ema.size() != p.weights.size()) {
        throw std::invalid_argument("checkpoint: EMA shadow size mismatch");
    }
    const bool has_opt = !ckpt.adam_m.empty();
    if (has_opt && (ckpt.adam_m.size() != p.size() || ckpt.adam_v.size() != p.size())) {
        throw std::invalid_argument("checkpoint: optimizer moment size mismatch");
    }
    BlobFile blob;
    nlohmann::json tensors = nlohmann::json::array();
    for (const auto& s : p.slots) {
        tensors.push_back({{"name", s.name}, {"shape", {s.rows, s.cols}}});
    }
    std::vector<std::string> buffers{"weights", "ema"};
    if (has_opt) {
        buffers.insert(buffers.end(), {"adam_m", "adam_v"});
    }
    blob.payload.reserve(buffers.size() * p.size() * 8);
    for (const auto* buf : {&p.weights, &p.ema, &ckpt.adam_m, &ckpt.adam_v}) {
        for (double v : *buf) {
            append_f64(blob.payload, v);
        }
    }
    blob.header = {{"config", p.config},      {"tensors", tensors},
                   {"buffers", buffers},      {"parameter_count", p.size()},
                   {"train", ckpt.train_state}, {"checksum", crc32_of(blob.payload)}};
    write_blob(path, kMagic, kVersion, blob);
}

Checkpoint load_checkpoint(const std::filesystem::path& path)
{
    BlobFile blob = read_blob(path, kMagic, kVersion);
    const auto& h = blob.header;
    Checkpoint ckpt;
    try {
        ckpt.params.config = h.at("config").get<DenoiserConfig>();
        ckpt.params.config.validate();
        ckpt.params.slots = denoiser_layout(ckpt.params.config);
        const auto& tensors = h.at("tensors");
        if (tensors.size() != ckpt.params.slots.size()) {
            throw FormatError(path.string() + ": tensor count does not match config");
        }
        for (std::size_t i = 0; i < tensors.size(); ++i) {
            const auto& s = ckpt.params.slots[i];
            const auto shape = tensors[i].at("shape").get<std::vector<int>>();
            if (tensors[i].at("name").get<std::string>() != s.name || shape.size() != 2 || shape[0] != s.rows ||
                shape[1] != s.cols) {
                throw FormatError(path.string() + ": tensor " + s.name + " disagrees with config layout");
            }
        }
        const auto count = h.at("parameter_count").get<std::size_t>();
        const auto buffers = h.at("buffers").get<std::vector<std::string>>();
        if (count != ckpt.params.slots.back().offset + ckpt.params.slots.back().size()) {
            throw FormatError(path.string() + ": parameter count does not match config");
        }
        if (blob.payload.size() != buffers.size() * count * 8) {
            throw FormatError(path.string() + ": payload length does not match header");
        }
        if (crc32_of(blob.payload) != h.at("checksum").get<std::uint32_t>()) {
            throw ChecksumError(path.string() + ": checksum mismatch");
        }
        const unsigned char* cursor = blob.payload.data();
        auto take = [&](std::vector<double>& dst) {
            dst.resize(count);
            for (auto& v : dst) {
                v = read_f64(cursor);
                cursor += 8;
            }
        };
        take(ckpt.params.weights);
        take(ckpt.params.ema);
        if (buffers.size() == 4) {
            take(ckpt.adam_m);
            take(ckpt.adam_v);
        }
        ckpt.train_state = h.at("train");
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": malformed checkpoint header: " + e.what());
    }
    return ckpt;
}

} // namespace monl

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "monl/latent.hpp"
#include "monl/predictor.hpp"
#include "monl/rng.hpp"
#include "monl/schedule.hpp"

namespace monl {

struct DenoiserConfig {
    int segments = 8;
    std::vector<int> widths{4, 6};
    int model_dim = 32;
    int layers = 2;
    int heads = 4;
    int T = 1000;
    int timestep_embed_dim = 32;
    bool self_conditioning = true;
    /// Bound on self-conditioning clean estimates; <= 0 disables clipping.
    double self_cond_clip = 0.0;

    int modalities() const { return static_cast<int>(widths.size()); }
    int tokens() const { return modalities() * segments; }
    int input_width(int m) const { return widths[m] * (self_conditioning ? 2 : 1); }
    LatentShape latent_shape() const { return {segments, widths}; }

    /// Throws std::invalid_argument describing the first violated invariant.
    void validate() const;

    bool operator==(const DenoiserConfig&) const = default;
};

void to_json(nlohmann::json& j, const DenoiserConfig& c);
void from_json(const nlohmann::json& j, DenoiserConfig& c);

struct TensorSlot {
    std::string name;
    std::size_t offset = 0;
    int rows = 0;
    int cols = 0;

    std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
};

/// Named row-major tensors packed into one flat vector, in a layout fully
/// determined by the config. Linear weights are stored out x in.
std::vector<TensorSlot> denoiser_layout(const DenoiserConfig& config);

struct DenoiserParams {
    DenoiserConfig config;
    std::vector<TensorSlot> slots;
    std::vector<double> weights;
    std::vector<double> ema; // shadow copy used for sampling

    std::size_t size() const { return weights.size(); }
    const TensorSlot& slot(const std::string& name) const;
};

/// Scaled-normal weights, zero biases, zero AdaLN modulation maps; the EMA
/// shadow starts equal to the weights.
DenoiserParams init_denoiser(const DenoiserConfig& config, Rng& rng);

/// Per-token conditioning vectors (M*N x model_dim, token index m*N + n).
using ConditioningEmbedding = RowMatrix;

/// Transformer noise predictor over M*N tokens (one per modality segment)
/// with per-token AdaLN conditioning on the timestep vector. A view over a
/// flat weight vector; the weights must outlive the Denoiser.
class Denoiser final : public NoisePredictor {
public:
    Denoiser(const DenoiserConfig& config, std::span<const double> weights);
    /// Uses the EMA shadow when `use_ema` is set.
    explicit Denoiser(const DenoiserParams& params, bool use_ema = false);

    const DenoiserConfig& config() const { return config_; }

    MultimodalLatent predict(const MultimodalLatent& z_t, const TimestepVector& t,
                             const MultimodalLatent* self_cond) const override;
    MultimodalLatent input_vjp(const MultimodalLatent& z_t, const TimestepVector& t,
                               const MultimodalLatent* self_cond,
                               const MultimodalLatent& output_grad) const override;
    bool uses_self_conditioning() const override { return config_.self_conditioning; }
    double self_cond_clip() const override { return config_.self_cond_clip; }

    ConditioningEmbedding embed_timestep_vector(const TimestepVector& t) const;

    struct Cache;

    /// Forward pass that keeps every intermediate needed by backward().
    MultimodalLatent forward(const MultimodalLatent& z_t, const TimestepVector& t,
                             const MultimodalLatent* self_cond, Cache& cache) const;

    /// Accumulates d(loss)/d(weights) into `weight_grad` (when non-empty) and
    /// writes d(loss)/d(z_t) into `input_grad` (when non-null).
    void backward(const Cache& cache, const MultimodalLatent& output_grad, std::span<double> weight_grad,
                  MultimodalLatent* input_grad) const;

private:
    struct LayerIndex {
        int ada_w, ada_b, q_w, q_b, k_w, k_b, v_w, v_b, o_w, o_b, fc1_w, fc1_b, fc2_w, fc2_b;
    };
    struct Index {
        std::vector<int> in_w, in_b, pos, out_w, out_b;
        int modality, t1_w, t1_b, t2_w, t2_b, final_w, final_b;
        std::vector<LayerIndex> layers;
    };

    using ConstMap = Eigen::Map<const RowMatrix>;
    using GradMap = Eigen::Map<RowMatrix>;

    ConstMap tensor(int slot) const;
    GradMap grad_tensor(std::span<double> grad, int slot) const;
    void check_inputs(const MultimodalLatent& z_t, const TimestepVector& t, const MultimodalLatent* self_cond) const;
    void embed(const TimestepVector& t, Cache& cache) const;

    DenoiserConfig config_;
    std::vector<TensorSlot> slots_;
    std::span<const double> weights_;
    Index index_;
};

struct Denoiser::Cache {
    struct Layer {
        RowMatrix h_in, ln1, mod, xm1, q, k, v, o, att, h_mid, ln2, xm2, f1, gf, f2;
        Eigen::VectorXd rstd1, rstd2;
        std::vector<RowMatrix> probs; // per head, L x L
    };
    std::vector<RowMatrix> inputs; // per modality, N x input_width
    RowMatrix sinus, a1, g1, cond, silu_cond;
    std::vector<Layer> layers;
    RowMatrix h_final, lnf, modf, xf;
    Eigen::VectorXd rstdf;
};

/// Sinusoidal features of a scalar timestep: [cos(t f_i)..., sin(t f_i)...].
Eigen::RowVectorXd sinusoidal_embedding(double t, int dim);

} // namespace monl

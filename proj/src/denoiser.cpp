#include "monl/denoiser.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace monl {

namespace {

constexpr double kLayerNormEps = 1e-6;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double silu(double x) { return x * sigmoid(x); }

double silu_grad(double x)
{
    double s = sigmoid(x);
    return s * (1.0 + x * (1.0 - s));
}

constexpr double kGeluC = 0.7978845608028654; // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

double gelu(double x)
{
    return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

double gelu_grad(double x)
{
    double th = std::tanh(kGeluC * (x + kGeluA * x * x * x));
    return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

RowMatrix apply(const RowMatrix& x, double (*fn)(double))
{
    return x.unaryExpr([fn](double v) { return fn(v); });
}

/// Row-wise normalization without affine parameters.
void layer_norm(const RowMatrix& x, RowMatrix& y, Eigen::VectorXd& rstd)
{
    const Eigen::Index rows = x.rows();
    y.resize(rows, x.cols());
    rstd.resize(rows);
    for (Eigen::Index r = 0; r < rows; ++r) {
        double mean = x.row(r).mean();
        auto centered = (x.row(r).array() - mean).matrix();
        double var = centered.squaredNorm() / static_cast<double>(x.cols());
        rstd[r] = 1.0 / std::sqrt(var + kLayerNormEps);
        y.row(r) = centered * rstd[r];
    }
}

RowMatrix layer_norm_backward(const RowMatrix& y, const Eigen::VectorXd& rstd, const RowMatrix& dy)
{
    RowMatrix dx(y.rows(), y.cols());
    const double inv_cols = 1.0 / static_cast<double>(y.cols());
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
        double mean_dy = dy.row(r).sum() * inv_cols;
        double mean_dy_y = dy.row(r).dot(y.row(r)) * inv_cols;
        dx.row(r) = rstd[r] * (dy.row(r).array() - mean_dy - y.row(r).array() * mean_dy_y).matrix();
    }
    return dx;
}

template <typename W, typename B>
RowMatrix linear(const RowMatrix& x, const W& w, const B& b)
{
    RowMatrix y(x.rows(), w.rows());
    y.noalias() = x * w.transpose();
    y.rowwise() += b.row(0);
    return y;
}

void check_config(const DenoiserConfig& c) { c.validate(); }

} // namespace

void DenoiserConfig::validate() const
{
    if (widths.empty()) {
        throw std::invalid_argument("denoiser config: need at least one modality");
    }
    for (int w : widths) {
        if (w < 1) {
            throw std::invalid_argument("denoiser config: modality widths must be >= 1");
        }
    }
    if (segments < 1) {
        throw std::invalid_argument("denoiser config: segments must be >= 1");
    }
    if (model_dim < 1 || heads < 1 || model_dim % heads != 0) {
        throw std::invalid_argument("denoiser config: model_dim must be a positive multiple of heads");
    }
    if (layers < 1) {
        throw std::invalid_argument("denoiser config: layers must be >= 1");
    }
    if (T < 1) {
        throw std::invalid_argument("denoiser config: T must be >= 1");
    }
    if (timestep_embed_dim < 2 || timestep_embed_dim % 2 != 0) {
        throw std::invalid_argument("denoiser config: timestep_embed_dim must be even and >= 2");
    }
}

void to_json(nlohmann::json& j, const DenoiserConfig& c)
{
    j = nlohmann::json{{"segments", c.segments},
                       {"widths", c.widths},
                       {"model_dim", c.model_dim},
                       {"layers", c.layers},
                       {"heads", c.heads},
                       {"T", c.T},
                       {"timestep_embed_dim", c.timestep_embed_dim},
                       {"self_conditioning", c.self_conditioning},
                       {"self_cond_clip", c.self_cond_clip}};
}

void from_json(const nlohmann::json& j, DenoiserConfig& c)
{
    j.at("segments").get_to(c.segments);
    j.at("widths").get_to(c.widths);
    j.at("model_dim").get_to(c.model_dim);
    j.at("layers").get_to(c.layers);
    j.at("heads").get_to(c.heads);
    j.at("T").get_to(c.T);
    j.at("timestep_embed_dim").get_to(c.timestep_embed_dim);
    j.at("self_conditioning").get_to(c.self_conditioning);
    j.at("self_cond_clip").get_to(c.self_cond_clip);
}

std::vector<TensorSlot> denoiser_layout(const DenoiserConfig& c)
{
    check_config(c);
    std::vector<TensorSlot> slots;
    std::size_t offset = 0;
    auto add = [&](std::string name, int rows, int cols) {
        slots.push_back({std::move(name), offset, rows, cols});
        offset += static_cast<std::size_t>(rows) * cols;
    };
    const int d = c.model_dim;
    const int M = c.modalities();
    for (int m = 0; m < M; ++m) {
        add("input." + std::to_string(m) + ".weight", d, c.input_width(m));
        add("input." + std::to_string(m) + ".bias", 1, d);
    }
    for (int m = 0; m < M; ++m) {
        add("pos." + std::to_string(m), c.segments, d);
    }
    add("modality_embed", M, d);
    add("time.fc1.weight", d, c.timestep_embed_dim);
    add("time.fc1.bias", 1, d);
    add("time.fc2.weight", d, d);
    add("time.fc2.bias", 1, d);
    for (int l = 0; l < c.layers; ++l) {
        const std::string p = "blocks." + std::to_string(l) + ".";
        add(p + "adaln.weight", 6 * d, d);
        add(p + "adaln.bias", 1, 6 * d);
        for (const char* name : {"q", "k", "v", "o"}) {
            add(p + "attn." + name + ".weight", d, d);
            add(p + "attn." + name + ".bias", 1, d);
        }
        add(p + "mlp.fc1.weight", 4 * d, d);
        add(p + "mlp.fc1.bias", 1, 4 * d);
        add(p + "mlp.fc2.weight", d, 4 * d);
        add(p + "mlp.fc2.bias", 1, d);
    }
    add("final.adaln.weight", 2 * d, d);
    add("final.adaln.bias", 1, 2 * d);
    for (int m = 0; m < M; ++m) {
        add("output." + std::to_string(m) + ".weight", c.widths[m], d);
        add("output." + std::to_string(m) + ".bias", 1, c.widths[m]);
    }
    return slots;
}

const TensorSlot& DenoiserParams::slot(const std::string& name) const
{
    for (const auto& s : slots) {
        if (s.name == name) {
            return s;
        }
    }
    throw std::out_of_range("no parameter tensor named " + name);
}

DenoiserParams init_denoiser(const DenoiserConfig& config, Rng& rng)
{
    DenoiserParams p;
    p.config = config;
    p.slots = denoiser_layout(config);
    const auto& last = p.slots.back();
    p.weights.assign(last.offset + last.size(), 0.0);
    for (const auto& s : p.slots) {
        const bool is_bias = s.name.ends_with(".bias");
        const bool is_modulation = s.name.find("adaln") != std::string::npos;
        if (is_bias || is_modulation) {
            continue;
        }
        const bool is_embedding = s.name.starts_with("pos.") || s.name == "modality_embed";
        // Unit-scale embeddings: positions must be distinguishable from the
        // start for tokens to find their lagged cross-modal partners.
        const double scale = is_embedding ? 1.0 : 1.0 / std::sqrt(static_cast<double>(s.cols));
        for (std::size_t i = 0; i < s.size(); ++i) {
            p.weights[s.offset + i] = scale * rng.normal();
        }
    }
    p.ema = p.weights;
    return p;
}

Eigen::RowVectorXd sinusoidal_embedding(double t, int dim)
{
    const int half = dim / 2;
    Eigen::RowVectorXd e(dim);
    for (int i = 0; i < half; ++i) {
        double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / half);
        e[i] = std::cos(t * freq);
        e[half + i] = std::sin(t * freq);
    }
    return e;
}

Denoiser::Denoiser(const DenoiserConfig& config, std::span<const double> weights)
    : config_(config), slots_(denoiser_layout(config)), weights_(weights)
{
    if (weights.size() != slots_.back().offset + slots_.back().size()) {
        throw std::invalid_argument("denoiser: weight vector size does not match config");
    }
    auto find = [this](const std::string& name) {
        for (std::size_t i = 0; i < slots_.size(); ++i) {
            if (slots_[i].name == name) {
                return static_cast<int>(i);
            }
        }
        throw std::logic_error("denoiser layout missing " + name);
    };
    for (int m = 0; m < config_.modalities(); ++m) {
        const auto s = std::to_string(m);
        index_.in_w.push_back(find("input." + s + ".weight"));
        index_.in_b.push_back(find("input." + s + ".bias"));
        index_.pos.push_back(find("pos." + s));
        index_.out_w.push_back(find("output." + s + ".weight"));
        index_.out_b.push_back(find("output." + s + ".bias"));
    }
    index_.modality = find("modality_embed");
    index_.t1_w = find("time.fc1.weight");
    index_.t1_b = find("time.fc1.bias");
    index_.t2_w = find("time.fc2.weight");
    index_.t2_b = find("time.fc2.bias");
    index_.final_w = find("final.adaln.weight");
    index_.final_b = find("final.adaln.bias");
    for (int l = 0; l < config_.layers; ++l) {
        const std::string p = "blocks." + std::to_string(l) + ".";
        index_.layers.push_back({find(p + "adaln.weight"), find(p + "adaln.bias"), find(p + "attn.q.weight"),
                                 find(p + "attn.q.bias"), find(p + "attn.k.weight"), find(p + "attn.k.bias"),
                                 find(p + "attn.v.weight"), find(p + "attn.v.bias"), find(p + "attn.o.weight"),
                                 find(p + "attn.o.bias"), find(p + "mlp.fc1.weight"), find(p + "mlp.fc1.bias"),
                                 find(p + "mlp.fc2.weight"), find(p + "mlp.fc2.bias")});
    }
}

Denoiser::Denoiser(const DenoiserParams& params, bool use_ema)
    : Denoiser(params.config, use_ema ? std::span<const double>(params.ema) : std::span<const double>(params.weights))
{
}

Denoiser::ConstMap Denoiser::tensor(int slot) const
{
    const auto& s = slots_[slot];
    return ConstMap(weights_.data() + s.offset, s.rows, s.cols);
}

Denoiser::GradMap Denoiser::grad_tensor(std::span<double> grad, int slot) const
{
    const auto& s = slots_[slot];
    return GradMap(grad.data() + s.offset, s.rows, s.cols);
}

void Denoiser::check_inputs(const MultimodalLatent& z_t, const TimestepVector& t,
                            const MultimodalLatent* self_cond) const
{
    if (!(z_t.shape() == config_.latent_shape())) {
        throw std::invalid_argument("denoiser: latent shape does not match model config");
    }
    if (t.modalities() != config_.modalities() || t.segments() != config_.segments) {
        throw std::invalid_argument("denoiser: timestep vector shape does not match model config");
    }
    t.check_range(config_.T);
    if (self_cond != nullptr) {
        require_same_shape(z_t, *self_cond, "denoiser self-conditioning");
    }
}

void Denoiser::embed(const TimestepVector& t, Cache& cache) const
{
    const int N = config_.segments;
    const int L = config_.tokens();
    cache.sinus.resize(L, config_.timestep_embed_dim);
    for (int m = 0; m < config_.modalities(); ++m) {
        for (int n = 0; n < N; ++n) {
            cache.sinus.row(m * N + n) = sinusoidal_embedding(t.at(m, n), config_.timestep_embed_dim);
        }
    }
    cache.a1 = linear(cache.sinus, tensor(index_.t1_w), tensor(index_.t1_b));
    cache.g1 = apply(cache.a1, silu);
    cache.cond = linear(cache.g1, tensor(index_.t2_w), tensor(index_.t2_b));
    auto modality = tensor(index_.modality);
    for (int m = 0; m < config_.modalities(); ++m) {
        cache.cond.middleRows(m * N, N) += tensor(index_.pos[m]);
        cache.cond.middleRows(m * N, N).rowwise() += modality.row(m);
    }
    cache.silu_cond = apply(cache.cond, silu);
}

ConditioningEmbedding Denoiser::embed_timestep_vector(const TimestepVector& t) const
{
    if (t.modalities() != config_.modalities() || t.segments() != config_.segments) {
        throw std::invalid_argument("embed_timestep_vector: shape does not match model config");
    }
    t.check_range(config_.T);
    Cache cache;
    embed(t, cache);
    return cache.cond;
}

MultimodalLatent Denoiser::forward(const MultimodalLatent& z_t, const TimestepVector& t,
                                   const MultimodalLatent* self_cond, Cache& cache) const
{
    check_inputs(z_t, t, self_cond);
    const int M = config_.modalities();
    const int N = config_.segments;
    const int L = config_.tokens();
    const int d = config_.model_dim;
    const int heads = config_.heads;
    const int dh = d / heads;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

    embed(t, cache);

    // Token embeddings: per-modality projection plus positional and modality terms.
    RowMatrix h(L, d);
    cache.inputs.resize(M);
    auto modality = tensor(index_.modality);
    for (int m = 0; m < M; ++m) {
        const int w = config_.widths[m];
        RowMatrix& u = cache.inputs[m];
        u = RowMatrix::Zero(N, config_.input_width(m));
        u.leftCols(w) = z_t.modality(m);
        if (config_.self_conditioning && self_cond != nullptr) {
            u.rightCols(w) = self_cond->modality(m);
        }
        h.middleRows(m * N, N) = linear(u, tensor(index_.in_w[m]), tensor(index_.in_b[m]));
        h.middleRows(m * N, N) += tensor(index_.pos[m]);
        h.middleRows(m * N, N).rowwise() += modality.row(m);
    }

    cache.layers.resize(config_.layers);
    for (int l = 0; l < config_.layers; ++l) {
        const auto& ix = index_.layers[l];
        auto& c = cache.layers[l];
        c.h_in = h;
        c.mod = linear(cache.silu_cond, tensor(ix.ada_w), tensor(ix.ada_b));
        auto shift1 = c.mod.middleCols(0, d);
        auto scale1 = c.mod.middleCols(d, d);
        auto gate1 = c.mod.middleCols(2 * d, d);
        auto shift2 = c.mod.middleCols(3 * d, d);
        auto scale2 = c.mod.middleCols(4 * d, d);
        auto gate2 = c.mod.middleCols(5 * d, d);

        layer_norm(h, c.ln1, c.rstd1);
        c.xm1 = (c.ln1.array() * (1.0 + scale1.array()) + shift1.array()).matrix();
        c.q = linear(c.xm1, tensor(ix.q_w), tensor(ix.q_b));
        c.k = linear(c.xm1, tensor(ix.k_w), tensor(ix.k_b));
        c.v = linear(c.xm1, tensor(ix.v_w), tensor(ix.v_b));
        c.o.resize(L, d);
        c.probs.resize(heads);
        for (int hd = 0; hd < heads; ++hd) {
            RowMatrix scores = c.q.middleCols(hd * dh, dh) * c.k.middleCols(hd * dh, dh).transpose();
            scores *= inv_sqrt_dh;
            for (int r = 0; r < L; ++r) {
                double mx = scores.row(r).maxCoeff();
                scores.row(r) = (scores.row(r).array() - mx).exp().matrix();
                scores.row(r) /= scores.row(r).sum();
            }
            c.o.middleCols(hd * dh, dh).noalias() = scores * c.v.middleCols(hd * dh, dh);
            c.probs[hd] = std::move(scores);
        }
        c.att = linear(c.o, tensor(ix.o_w), tensor(ix.o_b));
        c.h_mid = h + (gate1.array() * c.att.array()).matrix();

        layer_norm(c.h_mid, c.ln2, c.rstd2);
        c.xm2 = (c.ln2.array() * (1.0 + scale2.array()) + shift2.array()).matrix();
        c.f1 = linear(c.xm2, tensor(ix.fc1_w), tensor(ix.fc1_b));
        c.gf = apply(c.f1, gelu);
        c.f2 = linear(c.gf, tensor(ix.fc2_w), tensor(ix.fc2_b));
        h = c.h_mid + (gate2.array() * c.f2.array()).matrix();
    }

    cache.h_final = h;
    cache.modf = linear(cache.silu_cond, tensor(index_.final_w), tensor(index_.final_b));
    layer_norm(h, cache.lnf, cache.rstdf);
    cache.xf = (cache.lnf.array() * (1.0 + cache.modf.middleCols(d, d).array()) +
                cache.modf.middleCols(0, d).array())
                   .matrix();

    MultimodalLatent out(config_.latent_shape());
    for (int m = 0; m < M; ++m) {
        RowMatrix xm = cache.xf.middleRows(m * N, N);
        out.modality(m) = linear(xm, tensor(index_.out_w[m]), tensor(index_.out_b[m]));
    }
    return out;
}

void Denoiser::backward(const Cache& cache, const MultimodalLatent& output_grad, std::span<double> weight_grad,
                        MultimodalLatent* input_grad) const
{
    if (!(output_grad.shape() == config_.latent_shape())) {
        throw std::invalid_argument("denoiser backward: gradient shape mismatch");
    }
    const bool want_w = !weight_grad.empty();
    if (want_w && weight_grad.size() != weights_.size()) {
        throw std::invalid_argument("denoiser backward: gradient buffer size mismatch");
    }
    const int M = config_.modalities();
    const int N = config_.segments;
    const int L = config_.tokens();
    const int d = config_.model_dim;
    const int heads = config_.heads;
    const int dhead = d / heads;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dhead));

    // dY = X W^T + b  =>  dW += dY^T X, db += colsum(dY)
    auto accumulate = [&](int w_slot, int b_slot, const auto& dy, const auto& x) {
        if (!want_w) {
            return;
        }
        grad_tensor(weight_grad, w_slot).noalias() += dy.transpose() * x;
        grad_tensor(weight_grad, b_slot).row(0) += dy.colwise().sum();
    };

    // Output projections.
    RowMatrix dxf(L, d);
    for (int m = 0; m < M; ++m) {
        const RowMatrix& dy = output_grad.modality(m);
        dxf.middleRows(m * N, N).noalias() = dy * tensor(index_.out_w[m]);
        accumulate(index_.out_w[m], index_.out_b[m], dy, cache.xf.middleRows(m * N, N));
    }

    // Final AdaLN.
    RowMatrix dsilu_cond = RowMatrix::Zero(L, d);
    {
        RowMatrix dmodf(L, 2 * d);
        dmodf.middleCols(0, d) = dxf;
        dmodf.middleCols(d, d) = (dxf.array() * cache.lnf.array()).matrix();
        accumulate(index_.final_w, index_.final_b, dmodf, cache.silu_cond);
        dsilu_cond.noalias() += dmodf * tensor(index_.final_w);
    }
    RowMatrix dh = layer_norm_backward(
        cache.lnf, cache.rstdf, (dxf.array() * (1.0 + cache.modf.middleCols(d, d).array())).matrix());

    for (int l = config_.layers - 1; l >= 0; --l) {
        const auto& ix = index_.layers[l];
        const auto& c = cache.layers[l];
        auto scale1 = c.mod.middleCols(d, d);
        auto gate1 = c.mod.middleCols(2 * d, d);
        auto scale2 = c.mod.middleCols(4 * d, d);
        auto gate2 = c.mod.middleCols(5 * d, d);
        RowMatrix dmod(L, 6 * d);

        // Feed-forward branch.
        RowMatrix dh_mid = dh;
        dmod.middleCols(5 * d, d) = (dh.array() * c.f2.array()).matrix();
        RowMatrix df2 = (dh.array() * gate2.array()).matrix();
        accumulate(ix.fc2_w, ix.fc2_b, df2, c.gf);
        RowMatrix dgf = df2 * tensor(ix.fc2_w);
        RowMatrix df1 = (dgf.array() * c.f1.unaryExpr([](double v) { return gelu_grad(v); }).array()).matrix();
        accumulate(ix.fc1_w, ix.fc1_b, df1, c.xm2);
        RowMatrix dxm2 = df1 * tensor(ix.fc1_w);
        dmod.middleCols(3 * d, d) = dxm2;
        dmod.middleCols(4 * d, d) = (dxm2.array() * c.ln2.array()).matrix();
        dh_mid += layer_norm_backward(c.ln2, c.rstd2, (dxm2.array() * (1.0 + scale2.array())).matrix());

        // Attention branch.
        RowMatrix dh_in = dh_mid;
        dmod.middleCols(2 * d, d) = (dh_mid.array() * c.att.array()).matrix();
        RowMatrix datt = (dh_mid.array() * gate1.array()).matrix();
        accumulate(ix.o_w, ix.o_b, datt, c.o);
        RowMatrix dout = datt * tensor(ix.o_w);
        RowMatrix dq(L, d), dk(L, d), dv(L, d);
        for (int hd = 0; hd < heads; ++hd) {
            const RowMatrix& p = c.probs[hd];
            RowMatrix doh = dout.middleCols(hd * dhead, dhead);
            RowMatrix dp = doh * c.v.middleCols(hd * dhead, dhead).transpose();
            dv.middleCols(hd * dhead, dhead).noalias() = p.transpose() * doh;
            RowMatrix ds(L, L);
            for (int r = 0; r < L; ++r) {
                double dot = dp.row(r).dot(p.row(r));
                ds.row(r) = (p.row(r).array() * (dp.row(r).array() - dot)).matrix();
            }
            ds *= inv_sqrt_dh;
            dq.middleCols(hd * dhead, dhead).noalias() = ds * c.k.middleCols(hd * dhead, dhead);
            dk.middleCols(hd * dhead, dhead).noalias() = ds.transpose() * c.q.middleCols(hd * dhead, dhead);
        }
        accumulate(ix.q_w, ix.q_b, dq, c.xm1);
        accumulate(ix.k_w, ix.k_b, dk, c.xm1);
        accumulate(ix.v_w, ix.v_b, dv, c.xm1);
        RowMatrix dxm1 = dq * tensor(ix.q_w);
        dxm1.noalias() += dk * tensor(ix.k_w);
        dxm1.noalias() += dv * tensor(ix.v_w);
        dmod.middleCols(0, d) = dxm1;
        dmod.middleCols(d, d) = (dxm1.array() * c.ln1.array()).matrix();
        dh_in += layer_norm_backward(c.ln1, c.rstd1, (dxm1.array() * (1.0 + scale1.array())).matrix());

        accumulate(ix.ada_w, ix.ada_b, dmod, cache.silu_cond);
        dsilu_cond.noalias() += dmod * tensor(ix.ada_w);
        dh = std::move(dh_in);
    }

    // Conditioning path: cond = MLP(sinusoid(t)) + pos + modality.
    RowMatrix dcond = (dsilu_cond.array() * cache.cond.unaryExpr([](double v) { return silu_grad(v); }).array())
                          .matrix();
    if (want_w) {
        accumulate(index_.t2_w, index_.t2_b, dcond, cache.g1);
        RowMatrix dg1 = dcond * tensor(index_.t2_w);
        RowMatrix da1 = (dg1.array() * cache.a1.unaryExpr([](double v) { return silu_grad(v); }).array()).matrix();
        accumulate(index_.t1_w, index_.t1_b, da1, cache.sinus);
    }

    // Token path.
    if (input_grad != nullptr) {
        *input_grad = MultimodalLatent(config_.latent_shape());
    }
    for (int m = 0; m < M; ++m) {
        auto dh_m = dh.middleRows(m * N, N);
        auto dcond_m = dcond.middleRows(m * N, N);
        if (want_w) {
            accumulate(index_.in_w[m], index_.in_b[m], dh_m, cache.inputs[m]);
            grad_tensor(weight_grad, index_.pos[m]) += dh_m + dcond_m;
            grad_tensor(weight_grad, index_.modality).row(m) += dh_m.colwise().sum() + dcond_m.colwise().sum();
        }
        if (input_grad != nullptr) {
            RowMatrix du = dh_m * tensor(index_.in_w[m]);
            input_grad->modality(m) = du.leftCols(config_.widths[m]);
        }
    }
}

MultimodalLatent Denoiser::predict(const MultimodalLatent& z_t, const TimestepVector& t,
                                   const MultimodalLatent* self_cond) const
{
    Cache cache;
    return forward(z_t, t, self_cond, cache);
}

MultimodalLatent Denoiser::input_vjp(const MultimodalLatent& z_t, const TimestepVector& t,
                                     const MultimodalLatent* self_cond, const MultimodalLatent& output_grad) const
{
    Cache cache;
    forward(z_t, t, self_cond, cache);
    MultimodalLatent dz;
    backward(cache, output_grad, {}, &dz);
    return dz;
}

} // namespace monl

#pragma once

#include "monl/latent.hpp"
#include "monl/schedule.hpp"

namespace monl {

/// Anything that predicts the noise in z_t given the timestep vector. The
/// learned transformer and the closed-form Gaussian oracle both implement it,
/// so every sampler can be driven by either.
class NoisePredictor {
public:
    virtual ~NoisePredictor() = default;

    /// `self_cond` may be null (treated as zeros).
    virtual MultimodalLatent predict(const MultimodalLatent& z_t, const TimestepVector& t,
                                     const MultimodalLatent* self_cond) const = 0;

    /// Vector-Jacobian product of predict() with respect to z_t.
    virtual MultimodalLatent input_vjp(const MultimodalLatent& z_t, const TimestepVector& t,
                                       const MultimodalLatent* self_cond,
                                       const MultimodalLatent& output_grad) const = 0;

    virtual bool uses_self_conditioning() const { return false; }
    /// Bound applied to self-conditioning clean estimates (<= 0: none).
    virtual double self_cond_clip() const { return 0.0; }
};

} // namespace monl

#pragma once

#include "monl/latent.hpp"
#include "monl/schedule.hpp"

namespace monl {

/// Element-wise forward diffusion: segment (m, n) is noised to level
/// t(m, n). Segments with t == 0 are copied from z0 unchanged.
MultimodalLatent q_sample(const MultimodalLatent& z0, const TimestepVector& t, const MultimodalLatent& eps,
                          const NoiseSchedule& sched);

MultimodalLatent q_sample_scalar(const MultimodalLatent& z0, int t, const MultimodalLatent& eps,
                                 const NoiseSchedule& sched);

/// Clean-data estimate implied by a noise prediction, per element with that
/// element's own alpha_bar. A positive `clip` bounds the result to
/// [-clip, clip]; t == 0 segments return z_t itself.
MultimodalLatent estimate_clean(const MultimodalLatent& z_t, const MultimodalLatent& eps_hat,
                                const TimestepVector& t, const NoiseSchedule& sched, double clip = 0.0);

} // namespace monl

#include "monl/forward.hpp"

#include <cmath>
#include <stdexcept>

namespace monl {

namespace {

void check_tvec(const MultimodalLatent& z, const TimestepVector& t, const NoiseSchedule& sched)
{
    if (t.modalities() != z.modalities() || t.segments() != z.segments()) {
        throw std::invalid_argument("timestep vector shape does not match latent");
    }
    t.check_range(sched.steps());
}

} // namespace

MultimodalLatent q_sample(const MultimodalLatent& z0, const TimestepVector& t, const MultimodalLatent& eps,
                          const NoiseSchedule& sched)
{
    require_same_shape(z0, eps, "q_sample");
    check_tvec(z0, t, sched);
    MultimodalLatent out = z0;
    for (int m = 0; m < z0.modalities(); ++m) {
        for (int n = 0; n < z0.segments(); ++n) {
            int tt = t.at(m, n);
            if (tt == 0) {
                continue;
            }
            double ab = sched.alpha_bar(tt);
            double signal = std::sqrt(ab);
            double noise = std::sqrt(1.0 - ab);
            auto dst = out.segment(m, n);
            auto src = z0.segment(m, n);
            auto e = eps.segment(m, n);
            for (Eigen::Index k = 0; k < dst.size(); ++k) {
                dst[k] = signal * src[k] + noise * e[k];
            }
        }
    }
    return out;
}

MultimodalLatent q_sample_scalar(const MultimodalLatent& z0, int t, const MultimodalLatent& eps,
                                 const NoiseSchedule& sched)
{
    return q_sample(z0, constant_timestep_vector(t, z0.modalities(), z0.segments(), sched.steps()), eps, sched);
}

MultimodalLatent estimate_clean(const MultimodalLatent& z_t, const MultimodalLatent& eps_hat,
                                const TimestepVector& t, const NoiseSchedule& sched, double clip)
{
    require_same_shape(z_t, eps_hat, "estimate_clean");
    check_tvec(z_t, t, sched);
    MultimodalLatent out = z_t;
    for (int m = 0; m < z_t.modalities(); ++m) {
        for (int n = 0; n < z_t.segments(); ++n) {
            int tt = t.at(m, n);
            if (tt == 0) {
                continue;
            }
            double ab = sched.alpha_bar(tt);
            double inv_signal = 1.0 / std::sqrt(ab);
            double noise = std::sqrt(1.0 - ab);
            auto dst = out.segment(m, n);
            auto e = eps_hat.segment(m, n);
            for (Eigen::Index k = 0; k < dst.size(); ++k) {
                double v = (dst[k] - noise * e[k]) * inv_signal;
                if (clip > 0.0) {
                    v = std::fmin(std::fmax(v, -clip), clip);
                }
                dst[k] = v;
            }
        }
    }
    return out;
}

} // namespace monl

#include "monl/schedule.hpp"

#include <array>
#include <stdexcept>
#include <string>

namespace monl {

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start, double beta_end)
{
    if (steps < 1) {
        throw std::invalid_argument("schedule: T must be >= 1, got " + std::to_string(steps));
    }
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
        throw std::invalid_argument("schedule: need 0 < beta_start <= beta_end < 1");
    }
    NoiseSchedule s;
    s.betas_.assign(steps + 1, 0.0);
    s.alpha_bars_.assign(steps + 1, 1.0);
    for (int t = 1; t <= steps; ++t) {
        double frac = steps == 1 ? 0.0 : static_cast<double>(t - 1) / (steps - 1);
        s.betas_[t] = beta_start + frac * (beta_end - beta_start);
        s.alpha_bars_[t] = s.alpha_bars_[t - 1] * (1.0 - s.betas_[t]);
    }
    return s;
}

std::string_view to_string(StrategyKind kind)
{
    switch (kind) {
    case StrategyKind::Vanilla: return "Vanilla";
    case StrategyKind::Pm: return "Pm";
    case StrategyKind::Pt: return "Pt";
    case StrategyKind::Ptm: return "Ptm";
    case StrategyKind::MoNL: return "MoNL";
    case StrategyKind::PtPmPtm: return "Pt/Pm/Ptm";
    }
    return "?";
}

std::optional<StrategyKind> parse_strategy(std::string_view name)
{
    for (auto k : {StrategyKind::Vanilla, StrategyKind::Pm, StrategyKind::Pt, StrategyKind::Ptm,
                   StrategyKind::MoNL, StrategyKind::PtPmPtm}) {
        if (name == to_string(k)) {
            return k;
        }
    }
    if (name == "PtPmPtm") {
        return StrategyKind::PtPmPtm;
    }
    return std::nullopt;
}

TimestepVector::TimestepVector(int modalities, int segments, int fill)
    : modalities_(modalities), segments_(segments),
      entries_(static_cast<std::size_t>(modalities) * segments, fill)
{
    if (modalities < 1 || segments < 1) {
        throw std::invalid_argument("timestep vector: M and N must be >= 1");
    }
}

void TimestepVector::check_range(int T) const
{
    for (int v : entries_) {
        if (v < 0 || v > T) {
            throw std::out_of_range("timestep " + std::to_string(v) + " outside [0, " + std::to_string(T) + "]");
        }
    }
}

TimestepVector broadcast_reference(StrategyKind concrete, const TimestepVector& ref)
{
    TimestepVector t(ref.modalities(), ref.segments());
    for (int m = 0; m < ref.modalities(); ++m) {
        for (int n = 0; n < ref.segments(); ++n) {
            switch (concrete) {
            case StrategyKind::Vanilla: t.at(m, n) = ref.at(0, 0); break;
            case StrategyKind::Pm: t.at(m, n) = ref.at(m, 0); break;
            case StrategyKind::Pt: t.at(m, n) = ref.at(0, n); break;
            case StrategyKind::Ptm: t.at(m, n) = ref.at(m, n); break;
            default: throw std::invalid_argument("broadcast_reference: strategy must be concrete");
            }
        }
    }
    return t;
}

TimestepDraw sample_timestep_vector(StrategyKind kind, int modalities, int segments, int T, Rng& rng)
{
    if (T < 1) {
        throw std::invalid_argument("sample_timestep_vector: T must be >= 1");
    }
    if (kind == StrategyKind::MoNL) {
        static constexpr std::array mixture{StrategyKind::Vanilla, StrategyKind::Pt, StrategyKind::Pm, StrategyKind::Ptm};
        kind = mixture[rng.uniform_int(0, 3)];
    } else if (kind == StrategyKind::PtPmPtm) {
        static constexpr std::array mixture{StrategyKind::Pt, StrategyKind::Pm, StrategyKind::Ptm};
        kind = mixture[rng.uniform_int(0, 2)];
    }
    TimestepVector ref(modalities, segments);
    for (int m = 0; m < modalities; ++m) {
        for (int n = 0; n < segments; ++n) {
            ref.at(m, n) = rng.uniform_int(1, T);
        }
    }
    return {broadcast_reference(kind, ref), kind};
}

TimestepVector constant_timestep_vector(int tau, int modalities, int segments, int T)
{
    if (tau < 0 || tau > T) {
        throw std::out_of_range("constant_timestep_vector: tau " + std::to_string(tau) + " outside [0, " +
                                std::to_string(T) + "]");
    }
    return TimestepVector(modalities, segments, tau);
}

} // namespace monl

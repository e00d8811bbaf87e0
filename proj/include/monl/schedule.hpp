#pragma once

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "monl/rng.hpp"

namespace monl {

/// Discrete variance schedule. Index 0 of the cumulative table is the clean
/// data marker: alpha_bar(0) == 1 exactly.
class NoiseSchedule {
public:
    static NoiseSchedule linear(int steps, double beta_start = 1e-4, double beta_end = 0.02);

    int steps() const { return static_cast<int>(betas_.size()) - 1; }

    /// t in [1, T].
    double beta(int t) const { return betas_.at(t); }
    double alpha(int t) const { return 1.0 - betas_.at(t); }
    /// t in [0, T].
    double alpha_bar(int t) const { return alpha_bars_.at(t); }

private:
    NoiseSchedule() = default;

    std::vector<double> betas_;      // betas_[0] unused
    std::vector<double> alpha_bars_; // alpha_bars_[0] == 1
};

enum class StrategyKind {
    Vanilla,
    Pm,
    Pt,
    Ptm,
    MoNL,
    /// Uniform mixture over {Pt, Pm, Ptm} (ablation without Vanilla).
    PtPmPtm,
};

std::string_view to_string(StrategyKind kind);
std::optional<StrategyKind> parse_strategy(std::string_view name);

/// Counters are indexed by the four concrete strategies in this order.
constexpr int concrete_index(StrategyKind kind)
{
    switch (kind) {
    case StrategyKind::Vanilla: return 0;
    case StrategyKind::Pm: return 1;
    case StrategyKind::Pt: return 2;
    case StrategyKind::Ptm: return 3;
    default: return -1;
    }
}

/// M x N integer matrix of per-(modality, segment) diffusion timesteps.
class TimestepVector {
public:
    TimestepVector() = default;
    TimestepVector(int modalities, int segments, int fill = 0);

    int modalities() const { return modalities_; }
    int segments() const { return segments_; }

    int& at(int m, int n) { return entries_[index(m, n)]; }
    int at(int m, int n) const { return entries_[index(m, n)]; }

    const std::vector<int>& entries() const { return entries_; }

    /// Throws std::out_of_range when any entry leaves [0, T].
    void check_range(int T) const;

    bool operator==(const TimestepVector&) const = default;

private:
    std::size_t index(int m, int n) const { return static_cast<std::size_t>(m) * segments_ + n; }

    int modalities_ = 0;
    int segments_ = 0;
    std::vector<int> entries_;
};

struct TimestepDraw {
    TimestepVector t;
    StrategyKind drawn; // concrete strategy actually used
};

/// Broadcasts a full reference matrix according to a concrete strategy.
TimestepVector broadcast_reference(StrategyKind concrete, const TimestepVector& reference);

/// Draws the strategy (for mixtures) and then a full M x N reference matrix
/// uniformly on {1..T}, and broadcasts it.
TimestepDraw sample_timestep_vector(StrategyKind kind, int modalities, int segments, int T, Rng& rng);

TimestepVector constant_timestep_vector(int tau, int modalities, int segments, int T);

} // namespace monl

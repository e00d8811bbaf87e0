#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace monl {

/// Seeded random source shared by every stochastic routine. All draws go
/// through this class so that independently written reference code can
/// consume the stream in the same order.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0);

    double normal();
    /// Uniform on [0, 1).
    double uniform();
    /// Uniform integer on the closed range [lo, hi].
    int uniform_int(int lo, int hi);

    /// Serialized engine + distribution state (for checkpoint resume).
    std::string state() const;
    void restore(const std::string& state);

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_;
};

/// Stateless sub-seed derivation (splitmix64 finalizer over master ^ stream).
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

} // namespace monl

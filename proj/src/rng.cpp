#include "monl/rng.hpp"

#include <sstream>
#include <stdexcept>

namespace monl {

Rng::Rng(std::uint64_t seed) : engine_(seed), normal_(0.0, 1.0) {}

double Rng::normal() { return normal_(engine_); }

double Rng::uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

int Rng::uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }

std::string Rng::state() const
{
    std::ostringstream out;
    out << engine_ << '\n' << normal_;
    return out.str();
}

void Rng::restore(const std::string& state)
{
    std::istringstream in(state);
    in >> engine_ >> normal_;
    if (!in) {
        throw std::runtime_error("rng: malformed serialized state");
    }
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream)
{
    std::uint64_t z = master ^ (0x9e3779b97f4a7c15ULL * (stream + 1));
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

} // namespace monl

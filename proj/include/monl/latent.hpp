#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Dense>

namespace monl {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct LatentShape {
    int segments = 0;
    std::vector<int> widths; // d_m per modality

    int modalities() const { return static_cast<int>(widths.size()); }
    std::size_t elements() const;
    bool operator==(const LatentShape&) const = default;
};

/// M sequences sharing a time axis of N segments; modality m is N x d_m.
/// Holds clean data, noisy states and noise draws alike.
class MultimodalLatent {
public:
    MultimodalLatent() = default;
    explicit MultimodalLatent(const LatentShape& shape); // zero-filled

    LatentShape shape() const;
    int modalities() const { return static_cast<int>(mods_.size()); }
    int segments() const { return mods_.empty() ? 0 : static_cast<int>(mods_.front().rows()); }
    int width(int m) const { return static_cast<int>(mods_[m].cols()); }
    std::size_t elements() const;

    RowMatrix& modality(int m) { return mods_[m]; }
    const RowMatrix& modality(int m) const { return mods_[m]; }

    /// Segment (m, n) as a row view of width d_m.
    auto segment(int m, int n) { return mods_[m].row(n); }
    auto segment(int m, int n) const { return mods_[m].row(n); }

    bool all_finite() const;

    /// Exact element-wise equality (bit pattern of doubles compared by ==).
    bool operator==(const MultimodalLatent& other) const;

    static MultimodalLatent standard_normal(const LatentShape& shape, class Rng& rng);

private:
    std::vector<RowMatrix> mods_;
};

/// Flattens in modality-major, segment-major, channel order.
std::vector<double> flatten(const MultimodalLatent& z);
MultimodalLatent unflatten(const LatentShape& shape, const double* data);

void require_same_shape(const MultimodalLatent& a, const MultimodalLatent& b, const char* what);

/// Boolean M x N mask; true marks conditioned (clean, known) segments.
class ConditionMask {
public:
    ConditionMask() = default;
    ConditionMask(int modalities, int segments, bool fill = false);

    int modalities() const { return modalities_; }
    int segments() const { return segments_; }

    bool at(int m, int n) const { return bits_[static_cast<std::size_t>(m) * segments_ + n] != 0; }
    void set(int m, int n, bool value) { bits_[static_cast<std::size_t>(m) * segments_ + n] = value ? 1 : 0; }

    bool any() const;
    bool all() const;
    ConditionMask complement() const;

    bool operator==(const ConditionMask&) const = default;

private:
    int modalities_ = 0;
    int segments_ = 0;
    std::vector<unsigned char> bits_;
};

} // namespace monl

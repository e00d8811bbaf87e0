#include "monl/latent.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>

#include "monl/rng.hpp"

namespace monl {

std::size_t LatentShape::elements() const
{
    std::size_t per_segment = std::accumulate(widths.begin(), widths.end(), std::size_t{0});
    return per_segment * static_cast<std::size_t>(segments);
}

MultimodalLatent::MultimodalLatent(const LatentShape& shape)
{
    if (shape.segments < 1 || shape.widths.empty()) {
        throw std::invalid_argument("latent: need at least one modality and one segment");
    }
    mods_.reserve(shape.widths.size());
    for (int w : shape.widths) {
        if (w < 1) {
            throw std::invalid_argument("latent: modality width must be >= 1");
        }
        mods_.push_back(RowMatrix::Zero(shape.segments, w));
    }
}

LatentShape MultimodalLatent::shape() const
{
    LatentShape s;
    s.segments = segments();
    for (const auto& m : mods_) {
        s.widths.push_back(static_cast<int>(m.cols()));
    }
    return s;
}

std::size_t MultimodalLatent::elements() const
{
    std::size_t total = 0;
    for (const auto& m : mods_) {
        total += static_cast<std::size_t>(m.size());
    }
    return total;
}

bool MultimodalLatent::all_finite() const
{
    return std::all_of(mods_.begin(), mods_.end(), [](const RowMatrix& m) { return m.allFinite(); });
}

bool MultimodalLatent::operator==(const MultimodalLatent& other) const
{
    if (mods_.size() != other.mods_.size()) {
        return false;
    }
    for (std::size_t m = 0; m < mods_.size(); ++m) {
        if (mods_[m].rows() != other.mods_[m].rows() || mods_[m].cols() != other.mods_[m].cols()) {
            return false;
        }
        if (!std::equal(mods_[m].data(), mods_[m].data() + mods_[m].size(), other.mods_[m].data())) {
            return false;
        }
    }
    return true;
}

MultimodalLatent MultimodalLatent::standard_normal(const LatentShape& shape, Rng& rng)
{
    MultimodalLatent z(shape);
    for (auto& mod : z.mods_) {
        for (Eigen::Index i = 0; i < mod.size(); ++i) {
            mod.data()[i] = rng.normal();
        }
    }
    return z;
}

std::vector<double> flatten(const MultimodalLatent& z)
{
    std::vector<double> out;
    out.reserve(z.elements());
    for (int m = 0; m < z.modalities(); ++m) {
        const auto& mod = z.modality(m);
        out.insert(out.end(), mod.data(), mod.data() + mod.size());
    }
    return out;
}

MultimodalLatent unflatten(const LatentShape& shape, const double* data)
{
    MultimodalLatent z(shape);
    for (int m = 0; m < z.modalities(); ++m) {
        auto& mod = z.modality(m);
        std::copy(data, data + mod.size(), mod.data());
        data += mod.size();
    }
    return z;
}

void require_same_shape(const MultimodalLatent& a, const MultimodalLatent& b, const char* what)
{
    if (!(a.shape() == b.shape())) {
        throw std::invalid_argument(std::string(what) + ": latent shape mismatch");
    }
}

ConditionMask::ConditionMask(int modalities, int segments, bool fill)
    : modalities_(modalities), segments_(segments),
      bits_(static_cast<std::size_t>(modalities) * segments, fill ? 1 : 0)
{
}

bool ConditionMask::any() const
{
    return std::any_of(bits_.begin(), bits_.end(), [](unsigned char b) { return b != 0; });
}

bool ConditionMask::all() const
{
    return std::all_of(bits_.begin(), bits_.end(), [](unsigned char b) { return b != 0; });
}

ConditionMask ConditionMask::complement() const
{
    ConditionMask c = *this;
    for (auto& b : c.bits_) {
        b = b ? 0 : 1;
    }
    return c;
}

} // namespace monl

#include "freqmix/spectral.hpp"

#include <cmath>

namespace freqmix {

SpectralBasis::SpectralBasis(std::size_t frames, Tensor m)
    : frames_(frames), matrix_(std::move(m)), matrix_t_(transpose(matrix_)) {}

SpectralBasis SpectralBasis::dct(std::size_t frames) {
    if (frames == 0) throw std::invalid_argument("SpectralBasis: frame count must be positive");
    const double f = static_cast<double>(frames);
    Tensor b({frames, frames});
    const double pi = 3.14159265358979323846264338327950288;
    for (std::size_t i = 0; i < frames; ++i) {
        // row i holds 1-based bin i+1; the i=0 row carries the extra 1/√2
        const double norm = std::sqrt(2.0 / f) / (i == 0 ? std::sqrt(2.0) : 1.0);
        for (std::size_t t = 0; t < frames; ++t) {
            b(i, t) = norm * std::cos(pi * (2.0 * static_cast<double>(t) + 1.0) *
                                      static_cast<double>(i) / (2.0 * f));
        }
    }
    return SpectralBasis(frames, std::move(b));
}

SpectralBasis SpectralBasis::from_matrix(Tensor m) {
    if (m.rank() != 2 || m.dim(0) != m.dim(1)) {
        throw ShapeError("SpectralBasis: matrix must be square, got " + m.shape_str());
    }
    const std::size_t frames = m.dim(0);
    return SpectralBasis(frames, std::move(m));
}

namespace {

Tensor apply_basis_last(const Tensor& x, const Tensor& m, std::size_t frames,
                        const char* what) {
    if (x.rank() == 0 || x.dim(x.rank() - 1) != frames) {
        throw ShapeError(std::string(what) + ": last axis of " + x.shape_str() +
                         " does not match basis size " + std::to_string(frames));
    }
    const std::size_t lead = x.size() / frames;
    Tensor out(x.shape());
    for (std::size_t l = 0; l < lead; ++l) {
        const double* xi = x.data() + l * frames;
        double* oi = out.data() + l * frames;
        for (std::size_t i = 0; i < frames; ++i) {
            const double* row = m.data() + i * frames;
            double s = 0.0;
            for (std::size_t t = 0; t < frames; ++t) s += row[t] * xi[t];
            oi[i] = s;
        }
    }
    return out;
}

}  // namespace

Tensor dct_forward(const Tensor& x, const SpectralBasis& basis) {
    return apply_basis_last(x, basis.matrix(), basis.frames(), "dct_forward");
}

Tensor idct(const Tensor& c, const SpectralBasis& basis) {
    return apply_basis_last(c, basis.matrix_t(), basis.frames(), "idct");
}

void FrequencyOperatorConfig::validate(std::size_t frames) const {
    if (enhanced_bins > frames) {
        throw std::invalid_argument("frequency operator: N_c = " + std::to_string(enhanced_bins) +
                                    " exceeds bin count " + std::to_string(frames));
    }
    if (!(phi > 0.0 && phi < 1.0)) {
        throw std::invalid_argument("frequency operator: phi must lie in (0, 1), got " +
                                    std::to_string(phi));
    }
}

std::vector<double> frequency_scales(std::size_t frames, const FrequencyOperatorConfig& cfg) {
    cfg.validate(frames);
    std::vector<double> s(frames, cfg.phi);
    // 1-based bins i > F − N_c are high; 0-based indices >= F − N_c
    for (std::size_t i = frames - cfg.enhanced_bins; i < frames; ++i) s[i] = 1.0 + cfg.phi;
    return s;
}

Tensor frequency_operator(const Tensor& c, const FrequencyOperatorConfig& cfg) {
    if (c.rank() == 0) throw ShapeError("frequency_operator: empty input");
    const std::vector<double> s = frequency_scales(c.dim(0), cfg);
    Tensor out = c;
    const std::size_t inner = c.size() / c.dim(0);
    for (std::size_t f = 0; f < s.size(); ++f)
        for (std::size_t i = 0; i < inner; ++i) out[f * inner + i] *= s[f];
    return out;
}

Tensor spectral_energy(const Tensor& c) {
    Tensor out(c.shape());
    for (std::size_t i = 0; i < c.size(); ++i) out[i] = c[i] * c[i];
    return out;
}

}  // namespace freqmix

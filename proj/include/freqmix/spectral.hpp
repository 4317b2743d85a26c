#pragma once

#include <cstddef>
#include <vector>

#include "freqmix/tensor.hpp"

namespace freqmix {

/// Orthonormal DCT-II basis over F frames.
///
/// B[i][f] = √(2/F) · (1/√(1+δ_{i1})) · cos[π(2f−1)(i−1)/(2F)]   (1-based i, f)
///
/// Stored 0-based: row r holds bin r+1, so row 0 is the constant DC row
/// 1/√F and larger row index means higher frequency. Forward transform is
/// c = B·x, inverse is x = Bᵀ·c; B·Bᵀ = I.
class SpectralBasis {
public:
    /// Canonical DCT-II basis of size F.
    static SpectralBasis dct(std::size_t frames);

    /// Arbitrary square basis (test hook; e.g. the identity matrix turns the
    /// DCT-domain attention paths into plain time-domain attention).
    static SpectralBasis from_matrix(Tensor m);

    std::size_t frames() const { return frames_; }
    const Tensor& matrix() const { return matrix_; }
    const Tensor& matrix_t() const { return matrix_t_; }

private:
    SpectralBasis(std::size_t frames, Tensor m);

    std::size_t frames_ = 0;
    Tensor matrix_;    // F×F
    Tensor matrix_t_;  // transpose, cached for the inverse path
};

/// Per-trailing-vector forward transform c = B·x along the last axis.
Tensor dct_forward(const Tensor& x, const SpectralBasis& basis);

/// Inverse transform x = Bᵀ·c along the last axis.
Tensor idct(const Tensor& c, const SpectralBasis& basis);

/// High/low band split for the frequency operator ψ: with 1-based bin index
/// i, bins i > F − enhanced_bins are "high" and are scaled by (1+phi); the
/// rest are scaled by phi.
struct FrequencyOperatorConfig {
    std::size_t enhanced_bins = 12;  // N_c
    double phi = 0.5;

    void validate(std::size_t frames) const;
};

/// Scale factor per 0-based bin index.
std::vector<double> frequency_scales(std::size_t frames, const FrequencyOperatorConfig& cfg);

/// ψ applied along the leading axis (bin axis) of c.
Tensor frequency_operator(const Tensor& c, const FrequencyOperatorConfig& cfg);

/// Elementwise squared coefficients.
Tensor spectral_energy(const Tensor& c);

}  // namespace freqmix

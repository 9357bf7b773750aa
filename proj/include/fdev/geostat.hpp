#pragma once

#include "fdev/field.hpp"
#include "fdev/rng.hpp"

namespace fdev {

enum class VariogramStructure { gaussian, exponential };

// Anisotropic correlation model. Ranges are in cells; azimuth is degrees
// clockwise from north (the +y grid axis).
struct Variogram {
    VariogramStructure structure = VariogramStructure::gaussian;
    double range_major = 1.0;
    double range_minor = 1.0;
    double azimuth = 0.0;

    void validate() const;
};

enum class CloudTransformKind { linear, log };

// Unconditional stationary Gaussian random field with the requested mean,
// standard deviation and anisotropic correlation structure (moving-average
// convolution of white noise).
Field2D sample_gaussian_field(int nx, int ny, const Variogram& vario,
                              double mean, double std, Rng& rng);

// Rank-preserving stochastic mapping from one spatial property to another.
// The source is normal-scored, perturbed by independent Gaussian noise
// (variance-preserving blend weighted by noise_fraction), and mapped to the
// target marginal. For the log kind, target_mean/target_std act in log
// space, giving a log-normal marginal. Negative rank coupling is obtained
// by negating the source values before the call.
Field2D cloud_transform(const Field2D& source, double target_mean,
                        double target_std, CloudTransformKind kind,
                        double noise_fraction, Rng& rng);

// 0/1 indicator of cells inside the given ellipse (cx, cy in cell units,
// theta in radians).
Field2D ellipse_mask(int nx, int ny, double cx, double cy, double semi_a,
                     double semi_b, double theta);

// Randomly centered, randomly oriented ellipse; semi-axes in
// [0.3, 0.55]*min(nx,ny), center within the middle half of the grid.
// Resamples until at least 25% of cells are active.
Field2D elliptical_active_mask(int nx, int ny, Rng& rng);

// Inverse standard normal CDF (Acklam's rational approximation, refined
// with one Halley step).
double inverse_normal_cdf(double p);

}  // namespace fdev

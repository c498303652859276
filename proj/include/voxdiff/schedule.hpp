#pragma once

#include <vector>

#include "voxdiff/errors.hpp"

namespace voxdiff {

// Corruption schedule for uniform categorical diffusion. At step t a voxel
// keeps its label with probability 1 - beta_t and is otherwise resampled
// uniformly over all K classes, so
//   Q_t    = (1 - beta_t) I + beta_t / K * J
//   Qbar_t = abar_t I + (1 - abar_t) / K * J,   abar_t = prod_{s<=t} (1 - beta_s).
// Both are two-scalar mixtures; no K x K matrix is ever materialized.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> betas;      // betas[t-1] = beta_t, t in [1, T]
    std::vector<double> alpha_bars; // alpha_bars[t] = abar_t, t in [0, T]

    double beta(int t) const;      // t in [1, T]
    double alpha_bar(int t) const; // t in [0, T]
};

// beta_t = 1 / (T - t + 1): the cumulative keep probability decays linearly,
// abar_t = (T - t) / T, and abar_T is exactly zero.
NoiseSchedule default_schedule(int T);

// Custom betas; each must lie in [0, 1] and the list must be non-empty.
NoiseSchedule schedule_from_betas(std::vector<double> betas);

// One row of a mixture matrix: value `diag` at the source class, `off`
// everywhere else. diag = keep + off where keep is the identity weight.
struct MixtureRow {
    double diag = 0;
    double off = 0;
};

MixtureRow q_step_coeffs(const NoiseSchedule& s, int t, int num_classes);
MixtureRow q_cumulative_coeffs(const NoiseSchedule& s, int t, int num_classes);

// Dense rows of Q_t and Qbar_t for a given source class; test-friendly form.
std::vector<double> q_step_row(const NoiseSchedule& s, int t, int from, int num_classes);
std::vector<double> q_cumulative_row(const NoiseSchedule& s, int t, int from, int num_classes);

} // namespace voxdiff

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "voxdiff/grid.hpp"
#include "voxdiff/rng.hpp"
#include "voxdiff/schedule.hpp"

namespace voxdiff {

// Draw x_t ~ q(x_t | x_0) for every voxel independently: keep the label with
// probability abar_t, otherwise resample uniformly. One rng draw per voxel.
SemanticGrid forward_sample(const SemanticGrid& x0, const NoiseSchedule& s, int t,
                            const VoxelRng& rng, uint64_t stream);

// Fully random grid, i.e. the t = T endpoint of the forward process.
SemanticGrid init_noise(Dims3 dims, int num_classes, const VoxelRng& rng, uint64_t stream);

// Exact posterior q(x_{t-1} = k | x_t, x0) as a dense row:
//   row[k] proportional to Q_t[k, x_t] * Qbar_{t-1}[x0, k].
// When every product is zero (possible once beta_t = 0 meets an inconsistent
// pair) the row falls back to the point mass at x0.
std::vector<double> posterior_row(const NoiseSchedule& s, int t, int x_t, int x0,
                                  int num_classes);

// Model reverse kernel: mix the posterior over the predicted clean-label
// distribution, p(x_{t-1} = k | x_t) = sum_c softmax(logits)_c * posterior_c[k].
std::vector<double> reverse_step_distribution(const NoiseSchedule& s, int t, int x_t,
                                              std::span<const float> x0_logits);

// One reverse transition for a whole grid. `x0_logits` holds per-voxel class
// logits from a denoiser. With `deterministic` the per-voxel argmax is taken
// (ties to the lowest class); otherwise one rng draw decides each voxel.
SemanticGrid sample_reverse_step(const Field& x0_logits, const SemanticGrid& x_t,
                                 const NoiseSchedule& s, int t, const VoxelRng& rng,
                                 uint64_t stream, bool deterministic);

// Training objective at one timestep, averaged over voxels:
//   total = KL(q(x_{t-1} | x_t, x0) || p(x_{t-1} | x_t)) + lambda_aux * CE(x0, logits).
struct LossBreakdown {
    double total = 0;
    double kl = 0;
    double aux = 0;
};

LossBreakdown hybrid_loss(const Field& x0_logits, const SemanticGrid& x0,
                          const SemanticGrid& x_t, const NoiseSchedule& s, int t,
                          double lambda_aux);

// Loss plus its exact gradient with respect to the logits; this is the hand
// derivative the trainer seeds the tape with. Gradients use the same
// mean-over-voxels normalization as the loss.
LossBreakdown hybrid_loss_grad(const Field& x0_logits, const SemanticGrid& x0,
                               const SemanticGrid& x_t, const NoiseSchedule& s, int t,
                               double lambda_aux, Field* grad_out);

} // namespace voxdiff

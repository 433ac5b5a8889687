// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "cassi/cassi_forward.hpp"
#include "cassi/hsi_data.hpp"

namespace cassi {

struct SolverConfig {
  int iterations = 50;
  double rho = 0.1;
  double tv_weight = 0.05;
  int tv_inner_iters = 20;

  void validate() const;
};

// Anisotropic TV objective 0.5*||z - x||^2 + lam * TV(z), forward
// differences, summed over bands. Used for the monotonicity checks.
double tv_objective(const HSICube& z, const HSICube& x, double lam);

// Approximate prox of lam*TV via Chambolle-style dual projections, applied
// band by band. When objectives is non-null the full-cube objective is
// recorded after every inner iteration.
HSICube tv_denoise(const HSICube& x, double lam, int inner_iters,
                   std::vector<double>* objectives = nullptr);

// Proximal gradient descent with the TV prox: v = x - rho Phi^T(Phi x - y),
// x = tv_denoise(v, rho*lam). Returns Phi^T y when iterations == 0.
HSICube pgd_tv_solve(const Measurement& y, const OperatorRep& op,
                     const SolverConfig& config,
                     std::vector<double>* fidelity_trace = nullptr);

// Generalized alternating projection: the correction step divides the
// residual by diag(Phi Phi^T) (clamped at 1e-8), which lands exactly on the
// measurement for noiseless data, then TV-denoises.
HSICube gap_tv_solve(const Measurement& y, const OperatorRep& op,
                     const SolverConfig& config,
                     std::vector<double>* fidelity_trace = nullptr);

}  // namespace cassi

#pragma once

// Invariant suites shared by `mtta selftest` and the acceptance binary. Each
// suite is deterministic under its seed and reports one result per property.

#include <cstdint>
#include <string>
#include <vector>

namespace mtta::checks {

struct Result {
  std::string name;
  bool pass = false;
  std::string detail;
};

bool all_pass(const std::vector<Result>& results);

// Every differentiable primitive, the kinematic ops, the 2D loss, L_F and L_M
// against central finite differences (relative error < 1e-4), `instances`
// random cases each; plus the stop-gradient contract.
std::vector<Result> gradient_suite(std::uint64_t seed, int instances = 20);

// quantize vs per-layer exhaustive nearest-code search (N_c <= 8, k <= 3) and
// the reconstruction identity to 1e-12.
std::vector<Result> quantization_suite(std::uint64_t seed, int instances = 1000);

// ema_update vs mu*c + (1-mu)*mean(assigned) to 1e-12 at mu = 0.99 and 0.999.
std::vector<Result> ema_suite(std::uint64_t seed);

// Soft-reset endpoints mu_F = 1 / 0 bit-exact and the 0.95 blend exact.
std::vector<Result> soft_reset_suite(std::uint64_t seed);

// 6D rotation round trip, phi round trip, the squared-error ordering of
// Procrustes vs root alignment, and PA invariance under similarity transforms.
std::vector<Result> geometry_suite(std::uint64_t seed);

// Mean-distance MPJPE-PA <= MPJPE over random pose pairs. Not an identity:
// Procrustes minimises squared distance, so about 1% of random pairs whose
// error sits in a single limb come out the other way.
Result mpjpe_pa_pairs(std::uint64_t seed, int pairs = 100);

}  // namespace mtta::checks

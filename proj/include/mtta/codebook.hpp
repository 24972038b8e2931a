#pragma once

// Residual vector-quantization codebook clustered by exponential moving
// averages. Each layer quantizes what the previous layers left over.

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "mtta/array.hpp"
#include "mtta/networks.hpp"

namespace mtta {

struct CodebookConfig {
  std::size_t layers = 3;  // k
  std::size_t codes = 32;  // N_c
  std::size_t dim = 32;    // d
};

class ResidualCodebook {
 public:
  explicit ResidualCodebook(CodebookConfig cfg = {});

  CodebookConfig config;
  std::vector<Array> layers;  // k arrays of [N_c, d]
  Array usage;                // [k, N_c] EMA of assignment counts

  std::size_t depth() const { return layers.size(); }
  const double* code(std::size_t layer, std::size_t index) const;
  void validate() const;

  // First k layers only (k = 0 yields an empty codebook that quantizes to zero).
  ResidualCodebook prefix(std::size_t k) const;

  // Entries "layer{i}" and "usage".
  WeightSnapshot to_snapshot() const;
  static ResidualCodebook from_snapshot(const WeightSnapshot& snap);
  std::uint64_t hash() const;
};

struct Quantized {
  std::vector<std::size_t> codes;           // k
  std::vector<std::vector<double>> inputs;  // r_1..r_k, the residual each layer saw
  std::vector<double> c_sum;                // sum of selected codes
  std::vector<double> residual;             // r_{k+1} = z - c_sum (built by subtraction)
};

Quantized quantize(const ResidualCodebook& cb, std::span<const double> z);
// Row-wise quantize of z [n, d].
std::vector<Quantized> quantize_rows(const ResidualCodebook& cb, const Array& z);
// [n, d] array of c_sum rows.
Array quantized_sum(const std::vector<Quantized>& q, std::size_t dim);

struct Assignment {
  std::size_t layer = 0;
  std::size_t code = 0;
  std::vector<double> residual;  // r_i routed to this code
};
std::vector<Assignment> assignments_of(const std::vector<Quantized>& q);

// Per used code: code <- mu*code + (1-mu)*mean(assigned r_i). Usage is
// updated for every code (unassigned ones decay toward zero).
void ema_update(ResidualCodebook& cb, const std::vector<Assignment>& assignments, double decay);

struct CodeSample {
  std::vector<std::size_t> indices;
  std::vector<double> vector;
};
CodeSample sample_random_code(const ResidualCodebook& cb, std::mt19937_64& rng);
// n windows of kLatentSteps independently sampled codes: [n, 4, d].
Array sample_latent_windows(const ResidualCodebook& cb, std::size_t n, std::mt19937_64& rng);

// pool[layer] holds vectors that layer would see (residual inputs r_i).
using RevivalPool = std::vector<std::vector<std::vector<double>>>;
RevivalPool revival_pool(const std::vector<Quantized>& q);
// Replaces every code whose usage is below usage_floor by a random member of
// its layer's pool; its usage is reset to the layer's mean usage. Returns the
// number of replaced codes.
std::size_t revive_dead_codes(ResidualCodebook& cb, const RevivalPool& pool, double usage_floor, std::mt19937_64& rng);

// Seeds every layer with k-means++ on the residuals left by earlier layers.
void init_kmeanspp(ResidualCodebook& cb, const Array& latents, std::mt19937_64& rng);

// Fraction of all codes whose usage exceeds usage_floor.
double utilization(const ResidualCodebook& cb, double usage_floor);

// Mean absolute difference between the two decoders' outputs over the given
// latent windows ([n, 4, d]).
double drift_metric(const MotionDenoiser& live, const MotionDenoiser& frozen, const Array& latent_windows);

}  // namespace mtta

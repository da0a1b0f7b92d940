#pragma once

// Straightforward 64-bit reference implementations used to cross-check the
// library. They share no code with it beyond plain containers.

#include <array>
#include <cstdint>
#include <vector>

namespace pv::oracle {

/// Dense row-major array with an explicit shape.
struct Array {
  std::vector<std::size_t> shape;
  std::vector<double> v;
};

/// Direct 7-deep loop convolution, stride 1, symmetric zero padding.
Array conv3d(const Array& x, const Array& w, const Array& b, std::array<std::size_t, 3> pad);
/// Non-overlapping max pooling with floor rule; first maximum wins.
Array maxpool3d(const Array& x, std::array<std::size_t, 3> kernel);

/// Soft VLAD computed from distances: a_k proportional to
/// exp(-alpha ||x - c_k||^2), V_k = sum_i a_ik (x_i - c_k). x: (M, D),
/// centers (K, D); returns (K, D).
Array soft_vlad(const Array& x, const Array& centers, double alpha);
/// Nearest-center residual sums.
Array hard_vlad(const Array& x, const Array& centers);
/// Row-wise L2 normalization followed by whole-vector normalization.
std::vector<double> normalize_vlad(const Array& vlad);

/// -log softmax(v . cols / tau)[0] where cols[0] is the true column.
double oim_nll(const std::vector<double>& v, const std::vector<std::vector<double>>& cols, double tau);

/// Rank of the first same-identity gallery item and the average precision,
/// by counting how many items precede each one; `skip` marks excluded
/// gallery items.
struct ProbeScore {
  bool valid = false;
  std::size_t first_rank = 0;  // 1-based
  double ap = 0.0;
};
ProbeScore score_probe(const std::vector<double>& probe, long identity,
                       const std::vector<std::vector<double>>& gallery, const std::vector<long>& gallery_ids,
                       const std::vector<bool>& skip);

/// Window starts by marking covered frames one stride at a time.
std::vector<std::size_t> clip_windows(std::size_t frames, std::size_t clip_len, std::size_t overlap);

/// Adam on f(x) = 0.5 a x^2 + b x from x0, returning the iterate after each step.
std::vector<double> adam_quadratic(double x0, double a, double b, double lr, double beta1, double beta2, double eps,
                                   std::size_t steps);

}  // namespace pv::oracle

#include "pv/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace pv::oracle {

Array conv3d(const Array& x, const Array& w, const Array& b, std::array<std::size_t, 3> pad) {
  const std::size_t N = x.shape[0], C = x.shape[1], L = x.shape[2], H = x.shape[3], W = x.shape[4];
  const std::size_t O = w.shape[0], kd = w.shape[2], kh = w.shape[3], kw = w.shape[4];
  if (w.shape[1] != C) throw std::invalid_argument("oracle conv3d: channel mismatch");
  const std::size_t Lo = L + 2 * pad[0] - kd + 1, Ho = H + 2 * pad[1] - kh + 1, Wo = W + 2 * pad[2] - kw + 1;
  Array y{{N, O, Lo, Ho, Wo}, std::vector<double>(N * O * Lo * Ho * Wo, 0.0)};
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t l = 0; l < Lo; ++l)
        for (std::size_t i = 0; i < Ho; ++i)
          for (std::size_t j = 0; j < Wo; ++j) {
            double s = b.v[o];
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t a = 0; a < kd; ++a)
                for (std::size_t p = 0; p < kh; ++p)
                  for (std::size_t q = 0; q < kw; ++q) {
                    const long ll = static_cast<long>(l + a) - static_cast<long>(pad[0]);
                    const long ii = static_cast<long>(i + p) - static_cast<long>(pad[1]);
                    const long jj = static_cast<long>(j + q) - static_cast<long>(pad[2]);
                    if (ll < 0 || ii < 0 || jj < 0 || ll >= static_cast<long>(L) || ii >= static_cast<long>(H) ||
                        jj >= static_cast<long>(W)) {
                      continue;
                    }
                    s += w.v[(((o * C + c) * kd + a) * kh + p) * kw + q] *
                         x.v[(((n * C + c) * L + ll) * H + ii) * W + jj];
                  }
            y.v[(((n * O + o) * Lo + l) * Ho + i) * Wo + j] = s;
          }
  return y;
}

Array maxpool3d(const Array& x, std::array<std::size_t, 3> k) {
  const std::size_t N = x.shape[0], C = x.shape[1], L = x.shape[2], H = x.shape[3], W = x.shape[4];
  const std::size_t Lo = L / k[0], Ho = H / k[1], Wo = W / k[2];
  Array y{{N, C, Lo, Ho, Wo}, std::vector<double>(N * C * Lo * Ho * Wo)};
  for (std::size_t nc = 0; nc < N * C; ++nc)
    for (std::size_t l = 0; l < Lo; ++l)
      for (std::size_t i = 0; i < Ho; ++i)
        for (std::size_t j = 0; j < Wo; ++j) {
          double best = -std::numeric_limits<double>::infinity();
          for (std::size_t a = 0; a < k[0]; ++a)
            for (std::size_t p = 0; p < k[1]; ++p)
              for (std::size_t q = 0; q < k[2]; ++q) {
                best = std::max(best, x.v[((nc * L + l * k[0] + a) * H + i * k[1] + p) * W + j * k[2] + q]);
              }
          y.v[((nc * Lo + l) * Ho + i) * Wo + j] = best;
        }
  return y;
}

namespace {

double sqdist(const double* a, const double* b, std::size_t D) {
  double s = 0.0;
  for (std::size_t j = 0; j < D; ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
  return s;
}

}  // namespace

Array soft_vlad(const Array& x, const Array& centers, double alpha) {
  const std::size_t M = x.shape[0], D = x.shape[1], K = centers.shape[0];
  Array V{{K, D}, std::vector<double>(K * D, 0.0)};
  std::vector<double> d(K);
  for (std::size_t i = 0; i < M; ++i) {
    double dmin = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < K; ++k) {
      d[k] = sqdist(&x.v[i * D], &centers.v[k * D], D);
      dmin = std::min(dmin, d[k]);
    }
    double z = 0.0;
    for (std::size_t k = 0; k < K; ++k) z += std::exp(-alpha * (d[k] - dmin));
    for (std::size_t k = 0; k < K; ++k) {
      const double a = std::exp(-alpha * (d[k] - dmin)) / z;
      for (std::size_t j = 0; j < D; ++j) V.v[k * D + j] += a * (x.v[i * D + j] - centers.v[k * D + j]);
    }
  }
  return V;
}

Array hard_vlad(const Array& x, const Array& centers) {
  const std::size_t M = x.shape[0], D = x.shape[1], K = centers.shape[0];
  Array V{{K, D}, std::vector<double>(K * D, 0.0)};
  for (std::size_t i = 0; i < M; ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < K; ++k) {
      if (sqdist(&x.v[i * D], &centers.v[k * D], D) < sqdist(&x.v[i * D], &centers.v[best * D], D)) best = k;
    }
    for (std::size_t j = 0; j < D; ++j) V.v[best * D + j] += x.v[i * D + j] - centers.v[best * D + j];
  }
  return V;
}

std::vector<double> normalize_vlad(const Array& vlad) {
  const std::size_t K = vlad.shape[0], D = vlad.shape[1];
  std::vector<double> out(vlad.v);
  for (std::size_t k = 0; k < K; ++k) {
    double n = 0.0;
    for (std::size_t j = 0; j < D; ++j) n += out[k * D + j] * out[k * D + j];
    n = std::max(std::sqrt(n), 1e-12);
    for (std::size_t j = 0; j < D; ++j) out[k * D + j] /= n;
  }
  double n = 0.0;
  for (double v : out) n += v * v;
  n = std::max(std::sqrt(n), 1e-12);
  for (double& v : out) v /= n;
  return out;
}

double oim_nll(const std::vector<double>& v, const std::vector<std::vector<double>>& cols, double tau) {
  std::vector<double> logits;
  for (const auto& c : cols) {
    double s = 0.0;
    for (std::size_t j = 0; j < v.size(); ++j) s += v[j] * c[j];
    logits.push_back(s / tau);
  }
  const double top = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - top);
  return -(logits[0] - top - std::log(z));
}

ProbeScore score_probe(const std::vector<double>& probe, long identity,
                       const std::vector<std::vector<double>>& gallery, const std::vector<long>& gallery_ids,
                       const std::vector<bool>& skip) {
  const std::size_t G = gallery.size();
  std::vector<double> d(G);
  for (std::size_t g = 0; g < G; ++g) d[g] = sqdist(probe.data(), gallery[g].data(), probe.size());
  std::vector<std::size_t> rank(G, 0);
  for (std::size_t g = 0; g < G; ++g) {
    if (skip[g]) continue;
    std::size_t ahead = 0;
    for (std::size_t h = 0; h < G; ++h) {
      if (!skip[h] && (d[h] < d[g] || (d[h] == d[g] && h < g))) ++ahead;
    }
    rank[g] = ahead + 1;
  }
  ProbeScore s;
  std::size_t relevant = 0;
  for (std::size_t g = 0; g < G; ++g) {
    if (skip[g] || gallery_ids[g] != identity) continue;
    ++relevant;
    std::size_t hits = 0;
    for (std::size_t h = 0; h < G; ++h) {
      if (!skip[h] && gallery_ids[h] == identity && rank[h] <= rank[g]) ++hits;
    }
    s.ap += static_cast<double>(hits) / static_cast<double>(rank[g]);
    s.first_rank = s.valid ? std::min(s.first_rank, rank[g]) : rank[g];
    s.valid = true;
  }
  if (relevant > 0) s.ap /= static_cast<double>(relevant);
  return s;
}

std::vector<std::size_t> clip_windows(std::size_t frames, std::size_t clip_len, std::size_t overlap) {
  if (frames <= clip_len) return {0};
  std::vector<bool> covered(frames, false);
  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s + clip_len <= frames; s += clip_len - overlap) {
    starts.push_back(s);
    for (std::size_t f = s; f < s + clip_len; ++f) covered[f] = true;
  }
  if (!covered[frames - 1]) starts.push_back(frames - clip_len);
  return starts;
}

std::vector<double> adam_quadratic(double x0, double a, double b, double lr, double beta1, double beta2, double eps,
                                   std::size_t steps) {
  double x = x0, m = 0.0, v = 0.0;
  std::vector<double> out;
  for (std::size_t t = 1; t <= steps; ++t) {
    const double g = a * x + b;
    m = beta1 * m + (1.0 - beta1) * g;
    v = beta2 * v + (1.0 - beta2) * g * g;
    const double mh = m / (1.0 - std::pow(beta1, static_cast<double>(t)));
    const double vh = v / (1.0 - std::pow(beta2, static_cast<double>(t)));
    x -= lr * mh / (std::sqrt(vh) + eps);
    out.push_back(x);
  }
  return out;
}

}  // namespace pv::oracle

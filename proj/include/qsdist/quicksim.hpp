#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "qsdist/complex_point.hpp"
#include "qsdist/error.hpp"
#include "qsdist/parallel.hpp"

namespace qsdist {

/// Comparisons made by quicksort with the first element as pivot. Each
/// sublist of length k costs k-1 comparisons and is split stably into the
/// smaller and larger elements, which are then sorted the same way.
/// `work` is scratch space reused across calls; `buffer` likewise.
inline std::uint64_t quicksort_cost_unchecked(std::vector<std::uint32_t>& work, std::vector<std::uint32_t>& buffer) {
  const std::size_t n = work.size();
  if (n < 2) return 0;
  buffer.resize(n);
  std::uint64_t cost = 0;
  std::vector<std::pair<std::size_t, std::size_t>> stack;
  stack.emplace_back(0, n);
  while (!stack.empty()) {
    const auto [lo, hi] = stack.back();
    stack.pop_back();
    const std::size_t k = hi - lo;
    if (k < 2) continue;
    cost += k - 1;
    const std::uint32_t pivot = work[lo];
    std::size_t left = lo;
    std::size_t right = hi;
    for (std::size_t i = lo + 1; i < hi; ++i) {
      if (work[i] < pivot)
        buffer[left++] = work[i];
      else
        buffer[--right] = work[i];
    }
    std::copy(buffer.begin() + lo, buffer.begin() + left, work.begin() + lo);
    work[left] = pivot;
    // larger elements were written back to front; restore their order
    std::reverse_copy(buffer.begin() + right, buffer.begin() + hi, work.begin() + left + 1);
    stack.emplace_back(left + 1, hi);
    stack.emplace_back(lo, left);
  }
  return cost;
}

/// Validated entry point: perm must be a permutation of 1..n.
inline std::uint64_t quicksort_cost(std::span<const std::uint32_t> perm) {
  const std::size_t n = perm.size();
  std::vector<char> seen(n + 1, 0);
  for (std::uint32_t v : perm) {
    if (v < 1 || v > n || seen[v])
      fail(ErrorKind::InvalidPermutation, "entry " + std::to_string(v) + " is out of range or repeated");
    seen[v] = 1;
  }
  std::vector<std::uint32_t> work(perm.begin(), perm.end()), buffer;
  return quicksort_cost_unchecked(work, buffer);
}

inline std::uint64_t quicksort_cost(std::initializer_list<std::uint32_t> perm) {
  return quicksort_cost(std::span<const std::uint32_t>(perm.begin(), perm.size()));
}

enum class DistributionKind { Exact, Empirical };

/// Law of the comparison count X_n. Exact laws keep integer counts over
/// `total` outcomes so probabilities are exact rationals counts[k]/total.
struct CostDistribution {
  int n = 0;
  DistributionKind kind = DistributionKind::Exact;
  std::map<std::uint64_t, std::uint64_t> counts;
  std::uint64_t total = 0;

  double probability(std::uint64_t k) const {
    const auto it = counts.find(k);
    return it == counts.end() ? 0.0 : double(it->second) / double(total);
  }

  /// probability as a reduced fraction (numerator, denominator)
  std::pair<std::uint64_t, std::uint64_t> rational(std::uint64_t k) const {
    const auto it = counts.find(k);
    if (it == counts.end()) return {0, 1};
    const std::uint64_t g = std::gcd(it->second, total);
    return {it->second / g, total / g};
  }

  double mean() const {
    long double s = 0;
    for (const auto& [k, c] : counts) s += static_cast<long double>(k) * c;
    return static_cast<double>(s / total);
  }
};

/// All n! permutations enumerated; n <= 10.
inline CostDistribution exact_distribution(int n) {
  require(n >= 0, ErrorKind::InvalidArgument, "n must be nonnegative");
  if (n > 10) fail(ErrorKind::TooLarge, "exact enumeration limited to n <= 10, got " + std::to_string(n));
  CostDistribution d;
  d.n = n;
  d.kind = DistributionKind::Exact;
  std::vector<std::uint32_t> perm(n), work, buffer;
  std::iota(perm.begin(), perm.end(), 1u);
  do {
    work = perm;
    ++d.counts[quicksort_cost_unchecked(work, buffer)];
    ++d.total;
  } while (std::next_permutation(perm.begin(), perm.end()));
  return d;
}

/// Neumaier-compensated running sum.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      comp_ += (sum_ - t) + x;
    else
      comp_ += (x - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

/// E X_n from E X_0 = 0, E X_n = (n-1) + (2/n) Σ_{k<n} E X_k.
inline double exact_mean(long n) {
  require(n >= 0, ErrorKind::InvalidArgument, "n must be nonnegative");
  CompensatedSum sum;
  double e = 0.0;
  for (long m = 1; m <= n; ++m) {
    sum.add(e);  // adds E X_{m-1}
    e = double(m - 1) + 2.0 * sum.value() / double(m);
  }
  return e;
}

// ---------------------------------------------------------------------------
// Monte Carlo
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Seed of shard `index`, independent of thread scheduling.
inline std::uint64_t shard_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(splitmix64(seed) ^ splitmix64(index + 1));
}

/// Uniform integer in [0, range) by Lemire's multiply-and-reject method.
inline std::uint64_t bounded_uniform(std::mt19937_64& rng, std::uint64_t range) {
  using u128 = unsigned __int128;
  std::uint64_t x = rng();
  u128 m = u128(x) * range;
  auto low = static_cast<std::uint64_t>(m);
  if (low < range) {
    const std::uint64_t threshold = (0 - range) % range;
    while (low < threshold) {
      x = rng();
      m = u128(x) * range;
      low = static_cast<std::uint64_t>(m);
    }
  }
  return static_cast<std::uint64_t>(m >> 64);
}

/// Fisher–Yates shuffle of perm in place.
inline void shuffle(std::vector<std::uint32_t>& perm, std::mt19937_64& rng) {
  for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[bounded_uniform(rng, i)]);
}

/// (1/m) Σ e^{i t y_j}
inline cplx empirical_cf(std::span<const double> y, double t) {
  if (t == 0.0) return 1.0;
  double re = 0, im = 0;
  for (double v : y) {
    re += std::cos(t * v);
    im += std::sin(t * v);
  }
  return {re / double(y.size()), im / double(y.size())};
}

inline std::vector<double> default_ecf_grid() {
  std::vector<double> t;
  for (int k = 0; k <= 20; ++k) t.push_back(0.5 * k);
  return t;
}

struct SimSummary {
  long n = 0;
  long samples = 0;
  std::uint64_t seed = 0;
  double exact_mean = 0.0;
  double empirical_mean = 0.0;      // of X_n
  double mean_y = 0.0;              // of y = (X_n - E X_n)/n
  double empirical_variance = 0.0;  // of y
  std::vector<std::pair<double, cplx>> ecf;
  std::vector<double> y;            // raw normalized costs, in sample order
};

struct SimOptions {
  unsigned shards = 16;
  std::vector<double> ecf_grid = default_ecf_grid();
};

/// Draws `samples` uniform permutations of 1..n. Sample j belongs to shard
/// floor(j·shards/samples) and is drawn from that shard's generator, so the
/// output depends only on (n, samples, seed, shards).
inline SimSummary simulate(long n, long samples, std::uint64_t seed, const SimOptions& opt = {}) {
  require(n >= 2, ErrorKind::InvalidArgument, "simulate needs n >= 2");
  require(samples >= 1000, ErrorKind::InvalidArgument, "simulate needs samples >= 1000");
  require(opt.shards >= 1, ErrorKind::InvalidArgument, "shard count must be positive");
  require(n <= 0xFFFFFFFFl, ErrorKind::InvalidArgument, "n too large");
  SimSummary s;
  s.n = n;
  s.samples = samples;
  s.seed = seed;
  s.exact_mean = exact_mean(n);
  std::vector<std::uint64_t> costs(samples);
  const std::size_t shards = opt.shards;
  parallel_for(shards, [&](std::size_t shard) {
    const std::size_t lo = std::size_t(samples) * shard / shards;
    const std::size_t hi = std::size_t(samples) * (shard + 1) / shards;
    std::mt19937_64 rng(shard_seed(seed, shard));
    std::vector<std::uint32_t> perm(n), buffer;
    for (std::size_t j = lo; j < hi; ++j) {
      std::iota(perm.begin(), perm.end(), 1u);
      shuffle(perm, rng);
      costs[j] = quicksort_cost_unchecked(perm, buffer);
    }
  });
  s.y.resize(samples);
  CompensatedSum sx, sy;
  for (long j = 0; j < samples; ++j) {
    sx.add(double(costs[j]));
    s.y[j] = (double(costs[j]) - s.exact_mean) / double(n);
    sy.add(s.y[j]);
  }
  s.empirical_mean = sx.value() / double(samples);
  s.mean_y = sy.value() / double(samples);
  CompensatedSum sv;
  for (double v : s.y) sv.add((v - s.mean_y) * (v - s.mean_y));
  s.empirical_variance = sv.value() / double(samples - 1);
  for (double t : opt.ecf_grid) s.ecf.emplace_back(t, empirical_cf(s.y, t));
  return s;
}

inline nlohmann::ordered_json to_json(const SimSummary& s) {
  nlohmann::ordered_json j;
  j["n"] = s.n;
  j["samples"] = s.samples;
  j["seed"] = s.seed;
  j["exact_mean"] = s.exact_mean;
  j["empirical_mean"] = s.empirical_mean;
  j["empirical_mean_y"] = s.mean_y;
  j["empirical_variance"] = s.empirical_variance;
  auto arr = nlohmann::ordered_json::array();
  for (const auto& [t, v] : s.ecf) arr.push_back({t, v.real(), v.imag()});
  j["ecf"] = std::move(arr);
  return j;
}

}  // namespace qsdist

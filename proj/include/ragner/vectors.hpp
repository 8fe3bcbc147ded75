#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "ragner/error.hpp"

namespace ragner {

/// Term-id -> weight pairs sorted by term id.
struct SparseVector {
  std::vector<std::pair<std::uint32_t, double>> entries;

  bool empty() const noexcept { return entries.empty(); }
  bool operator==(const SparseVector&) const = default;
};

struct DenseVector {
  std::vector<double> values;

  std::size_t dim() const noexcept { return values.size(); }
  bool operator==(const DenseVector&) const = default;
};

/// One row per token; all rows share a dimension.
struct TokenMatrix {
  std::vector<DenseVector> rows;

  std::size_t dim() const noexcept { return rows.empty() ? 0 : rows.front().dim(); }
  bool operator==(const TokenMatrix&) const = default;
};

inline double dot(const SparseVector& a, const SparseVector& b) {
  double s = 0.0;
  auto i = a.entries.begin();
  auto j = b.entries.begin();
  while (i != a.entries.end() && j != b.entries.end()) {
    if (i->first < j->first) {
      ++i;
    } else if (j->first < i->first) {
      ++j;
    } else {
      s += i->second * j->second;
      ++i;
      ++j;
    }
  }
  return s;
}

inline double norm(const SparseVector& v) {
  double s = 0.0;
  for (const auto& [id, w] : v.entries) s += w * w;
  return std::sqrt(s);
}

inline double dot(const DenseVector& a, const DenseVector& b) {
  if (a.dim() != b.dim()) {
    throw ScoringError("dimension mismatch: " + std::to_string(a.dim()) + " vs " + std::to_string(b.dim()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) s += a.values[i] * b.values[i];
  return s;
}

inline double norm(const DenseVector& v) {
  double s = 0.0;
  for (double x : v.values) s += x * x;
  return std::sqrt(s);
}

/// Cosine similarity; 0 when either side is the zero vector.
template <class V>
double cosine(const V& a, const V& b) {
  const double d = dot(a, b);
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(d / (na * nb), -1.0, 1.0);
}

template <class V>
void normalize(V& v) {
  const double n = norm(v);
  if (n == 0.0) return;
  if constexpr (std::is_same_v<V, SparseVector>) {
    for (auto& e : v.entries) e.second /= n;
  } else {
    for (auto& x : v.values) x /= n;
  }
}

/// Late-interaction score: for each query row, the best dot product against
/// any document row, summed over query rows.
inline double maxsim(const TokenMatrix& query, const TokenMatrix& doc) {
  if (query.rows.empty() || doc.rows.empty()) throw ScoringError("maxsim: empty token matrix");
  if (query.dim() != doc.dim()) {
    throw ScoringError("dimension mismatch: " + std::to_string(query.dim()) + " vs " + std::to_string(doc.dim()));
  }
  double total = 0.0;
  for (const auto& q : query.rows) {
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& d : doc.rows) best = std::max(best, dot(q, d));
    total += best;
  }
  return total;
}

}  // namespace ragner

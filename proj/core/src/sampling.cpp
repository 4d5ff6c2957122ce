#include "exal/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "exal/error.hpp"

namespace exal {
namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double d = a[j] - b[j];
    s += d * d;
  }
  return s;
}

void require_capacity(std::size_t available, std::size_t k, const char* who) {
  if (available < k) {
    throw InvalidArgument(std::string(who) + ": pool exhausted (" + std::to_string(available) +
                          " unused samples, display needs " + std::to_string(k) + ")");
  }
}

}  // namespace

std::string_view strategy_name(Strategy s) {
  switch (s) {
    case Strategy::virtual_ambient: return "virtual";
    case Strategy::virtual_latent: return "virtual-latent";
    case Strategy::random: return "random";
    case Strategy::maxmin: return "maxmin";
    case Strategy::uncertainty: return "uncertainty";
  }
  return "unknown";
}

Strategy parse_strategy(std::string_view name) {
  for (Strategy s : {Strategy::virtual_ambient, Strategy::virtual_latent, Strategy::random,
                     Strategy::maxmin, Strategy::uncertainty}) {
    if (strategy_name(s) == name) return s;
  }
  throw InvalidArgument("unknown strategy '" + std::string(name) + "'");
}

std::vector<std::size_t> unused_ids(const PoolView& pool) {
  std::vector<std::size_t> used(pool.used.begin(), pool.used.end());
  std::sort(used.begin(), used.end());
  std::vector<std::size_t> out;
  out.reserve(pool.pool.size());
  for (std::size_t id : pool.pool) {
    if (id >= pool.features.rows()) {
      throw InvalidArgument("pool id " + std::to_string(id) + " out of range");
    }
    if (!std::binary_search(used.begin(), used.end(), id)) out.push_back(id);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

Display select_virtual(const PoolView& pool, const Matrix& v, std::size_t k) {
  if (v.cols() < k) throw InvalidArgument("select_virtual: fewer exemplars than display slots");
  if (v.rows() != pool.features.cols()) {
    throw InvalidArgument("select_virtual: exemplar dimension mismatch");
  }
  std::vector<std::size_t> candidates = unused_ids(pool);
  require_capacity(candidates.size(), k, "select_virtual");
  std::vector<char> taken(candidates.size(), 0);
  Display out{{}, Strategy::virtual_ambient, 0};
  std::vector<double> exemplar(v.rows());
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t r = 0; r < v.rows(); ++r) exemplar[r] = v(r, j);
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_pos = candidates.size();
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      if (taken[c]) continue;
      const double dist = sq_dist(exemplar, pool.features.row(candidates[c]));
      if (dist < best) {
        best = dist;
        best_pos = c;
      }
    }
    if (best_pos == candidates.size()) {
      // Only non-finite distances left; fall back to the smallest free id.
      best_pos = static_cast<std::size_t>(std::find(taken.begin(), taken.end(), 0) - taken.begin());
    }
    taken[best_pos] = 1;
    out.ids.push_back(candidates[best_pos]);
  }
  return out;
}

Display select_random(const PoolView& pool, std::size_t k, Rng& rng) {
  std::vector<std::size_t> candidates = unused_ids(pool);
  require_capacity(candidates.size(), k, "select_random");
  Display out{{}, Strategy::random, 0};
  for (std::size_t idx : rng.sample_without_replacement(candidates.size(), k)) {
    out.ids.push_back(candidates[idx]);
  }
  return out;
}

Display select_maxmin(const PoolView& pool, std::span<const std::size_t> labeled, std::size_t k) {
  if (labeled.empty()) throw InvalidArgument("select_maxmin: labeled set must be nonempty");
  std::vector<std::size_t> candidates = unused_ids(pool);
  require_capacity(candidates.size(), k, "select_maxmin");
  std::vector<double> min_dist(candidates.size(), std::numeric_limits<double>::infinity());
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    auto xc = pool.features.row(candidates[c]);
    for (std::size_t id : labeled) {
      min_dist[c] = std::min(min_dist[c], sq_dist(xc, pool.features.row(id)));
    }
  }
  std::vector<char> taken(candidates.size(), 0);
  Display out{{}, Strategy::maxmin, 0};
  for (std::size_t j = 0; j < k; ++j) {
    std::size_t best_pos = candidates.size();
    double best = -1.0;
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      if (!taken[c] && min_dist[c] > best) {
        best = min_dist[c];
        best_pos = c;
      }
    }
    taken[best_pos] = 1;
    const std::size_t pick = candidates[best_pos];
    out.ids.push_back(pick);
    auto xp = pool.features.row(pick);
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      if (!taken[c]) min_dist[c] = std::min(min_dist[c], sq_dist(pool.features.row(candidates[c]), xp));
    }
  }
  return out;
}

double class_entropy(double p0, double p1) {
  double h = 0.0;
  if (p0 > 0.0) h -= p0 * std::log(p0);
  if (p1 > 0.0) h -= p1 * std::log(p1);
  return h;
}

Display select_uncertainty(const PoolView& pool, const InvertibleGcn& net, std::size_t k) {
  std::vector<std::size_t> candidates = unused_ids(pool);
  require_capacity(candidates.size(), k, "select_uncertainty");
  Matrix rows(candidates.size(), pool.features.cols());
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    auto src = pool.features.row(candidates[c]);
    std::copy(src.begin(), src.end(), rows.row(c).begin());
  }
  const Matrix probs = net.class_probs_rows(rows);
  std::vector<std::pair<double, std::size_t>> scored(candidates.size());
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    scored[c] = {class_entropy(probs(c, 0), probs(c, 1)), candidates[c]};
  }
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(),
                    [](const auto& a, const auto& b) {
                      return a.first != b.first ? a.first > b.first : a.second < b.second;
                    });
  Display out{{}, Strategy::uncertainty, 0};
  for (std::size_t j = 0; j < k; ++j) out.ids.push_back(scored[j].second);
  return out;
}

}  // namespace exal

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "exal/gcn.hpp"
#include "exal/matrix.hpp"
#include "exal/rng.hpp"

namespace exal {

enum class Strategy { virtual_ambient, virtual_latent, random, maxmin, uncertainty };

/// Stable identifiers: virtual, virtual-latent, random, maxmin, uncertainty.
std::string_view strategy_name(Strategy s);
Strategy parse_strategy(std::string_view name);

struct Display {
  std::vector<std::size_t> ids;
  Strategy strategy = Strategy::random;
  std::size_t iteration = 0;
};

/// Candidate samples for a display. `features` holds one ambient vector per
/// dataset id (row i = id i); `pool` lists the ids that may be queried at all;
/// `used` lists ids already shown to the oracle.
struct PoolView {
  const Matrix& features;
  std::span<const std::size_t> pool;
  std::span<const std::size_t> used;
};

/// Pool ids not yet used, in ascending order.
std::vector<std::size_t> unused_ids(const PoolView& pool);

/// Nearest unused sample to each exemplar column of V (d x K), in exemplar
/// order; a sample taken by an earlier exemplar is skipped.
Display select_virtual(const PoolView& pool, const Matrix& v, std::size_t k);

Display select_random(const PoolView& pool, std::size_t k, Rng& rng);

/// Greedy farthest-point selection against `labeled` plus earlier picks.
Display select_maxmin(const PoolView& pool, std::span<const std::size_t> labeled, std::size_t k);

/// Top-k unused samples by class-probability entropy.
Display select_uncertainty(const PoolView& pool, const InvertibleGcn& net, std::size_t k);

/// Binary entropy of (p0, p1) in nats.
double class_entropy(double p0, double p1);

}  // namespace exal

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "exal/matrix.hpp"

namespace exal {

struct PatchShape {
  std::size_t h = 8;
  std::size_t w = 8;
  std::size_t c = 3;

  std::size_t nodes() const noexcept { return h * w; }
  /// Values per patch (h*w*c); also the ambient dimension d = s*n.
  std::size_t values() const noexcept { return h * w * c; }
  friend bool operator==(const PatchShape&, const PatchShape&) = default;
};

/// Two co-registered patches stored h x w x c, channel fastest, values in [0,1].
struct PatchPair {
  std::size_t id = 0;
  std::vector<float> p;
  std::vector<float> q;

  friend bool operator==(const PatchPair&, const PatchPair&) = default;
};

class PatchPairDataset {
 public:
  PatchPairDataset() = default;
  PatchPairDataset(PatchShape shape, std::vector<PatchPair> pairs,
                   std::optional<std::vector<int>> labels, std::string source = "");

  const PatchShape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return pairs_.size(); }
  const std::vector<PatchPair>& pairs() const noexcept { return pairs_; }
  const PatchPair& pair(std::size_t i) const { return pairs_.at(i); }
  bool has_labels() const noexcept { return labels_.has_value(); }
  const std::vector<int>& labels() const;
  const std::string& source() const noexcept { return source_; }

  friend bool operator==(const PatchPairDataset&, const PatchPairDataset&) = default;

 private:
  PatchShape shape_;
  std::vector<PatchPair> pairs_;
  std::optional<std::vector<int>> labels_;
  std::string source_;
};

/// Difference signal on the pixel graph of one pair.
struct GraphSignal {
  Matrix u;  // s x n, u(ch, node) = q - p
  std::shared_ptr<const Matrix> adjacency_template;  // n x n
};

GraphSignal pair_signal(const PatchPair& pair, const PatchShape& shape);

/// Flattened signal u (channel-major), the ambient vector of length s*n.
std::vector<double> ambient_vector(const PatchPair& pair, const PatchShape& shape);

/// One ambient vector per row, row i = pair i.
Matrix ambient_matrix(const PatchPairDataset& ds);

/// Row-normalised 4-neighbourhood grid adjacency with self-loops.
Matrix build_grid_adjacency(std::size_t h, std::size_t w);

struct SyntheticConfig {
  std::size_t n_pairs = 2200;
  std::size_t positive_count = 39;
  std::size_t h = 8;
  std::size_t w = 8;
  std::size_t c = 3;
  std::uint64_t seed = 0;
};

/// Jefferson-like stand-in: vegetated terrain patches whose second acquisition
/// carries illumination drift, sensor noise and cloud blobs; positives also
/// get a bright debris rectangle covering 40-80% of the patch.
PatchPairDataset generate_synthetic(const SyntheticConfig& cfg);

void write_dataset(const PatchPairDataset& ds, const std::filesystem::path& dir);
PatchPairDataset load_dataset(const std::filesystem::path& dir);

/// Lower-case hex SHA-256 of a byte buffer.
std::string sha256_hex(const void* data, std::size_t len);

}  // namespace exal

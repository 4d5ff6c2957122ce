#include "exal/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>

#include <openssl/evp.h>

#include "json.hpp"

#include "exal/error.hpp"
#include "exal/rng.hpp"

namespace exal {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr int kFormatVersion = 1;
constexpr const char* kLayout = "pair-major [n][2][h][w][c]";
constexpr const char* kManifest = "manifest.json";
constexpr const char* kTensor = "tensor.bin";

static_assert(std::endian::native == std::endian::little,
              "tensor I/O assumes a little-endian host");

std::shared_ptr<const Matrix> cached_grid(std::size_t h, std::size_t w) {
  static std::mutex mu;
  static std::map<std::pair<std::size_t, std::size_t>, std::shared_ptr<const Matrix>> cache;
  std::lock_guard lock(mu);
  auto& slot = cache[{h, w}];
  if (!slot) slot = std::make_shared<const Matrix>(build_grid_adjacency(h, w));
  return slot;
}

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

// Per-channel reflectance of the undisturbed scene and of debris/bare soil.
double vegetation_base(std::size_t ch) {
  static constexpr double kRgb[3] = {0.22, 0.38, 0.18};
  return ch < 3 ? kRgb[ch] : 0.30;
}
double debris_base(std::size_t ch) {
  static constexpr double kRgb[3] = {0.95, 0.25, 0.10};
  return ch < 3 ? kRgb[ch] : 0.55;
}

void synthesize_pair(const SyntheticConfig& cfg, bool positive, Rng rng, PatchPair& out) {
  const std::size_t h = cfg.h, w = cfg.w, c = cfg.c;
  const std::size_t len = h * w * c;
  std::vector<double> p(len), q(len);

  // Scene: per-pair base colour plus a low-frequency texture and speckle.
  std::vector<double> base(c);
  for (std::size_t ch = 0; ch < c; ++ch) base[ch] = vegetation_base(ch) + rng.normal(0.0, 0.04);
  double fy[3], fx[3], ph[3], amp[3];
  for (int k = 0; k < 3; ++k) {
    fy[k] = rng.uniform(0.2, 1.2);
    fx[k] = rng.uniform(0.2, 1.2);
    ph[k] = rng.uniform(0.0, 6.283185307179586);
    amp[k] = rng.uniform(0.01, 0.04);
  }
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double tex = 0.0;
      for (int k = 0; k < 3; ++k) tex += amp[k] * std::cos(fy[k] * y + fx[k] * x + ph[k]);
      for (std::size_t ch = 0; ch < c; ++ch) {
        p[(y * w + x) * c + ch] = base[ch] + tex + rng.normal(0.0, 0.02);
      }
    }
  }
  for (double& v : p) v = std::clamp(v, 0.0, 1.0);
  q = p;

  if (positive) {
    // Bare-soil debris rectangle over 40-80% of the patch.
    const std::size_t min_area = static_cast<std::size_t>(std::ceil(0.4 * static_cast<double>(h * w)));
    std::size_t rh = 0, rw = 0;
    do {
      rh = 1 + static_cast<std::size_t>(rng.below(h));
      rw = 1 + static_cast<std::size_t>(rng.below(w));
    } while (rh * rw < min_area || rh * rw > (h * w * 8) / 10);
    const std::size_t y0 = static_cast<std::size_t>(rng.below(h - rh + 1));
    const std::size_t x0 = static_cast<std::size_t>(rng.below(w - rw + 1));
    for (std::size_t y = y0; y < y0 + rh; ++y) {
      for (std::size_t x = x0; x < x0 + rw; ++x) {
        const double speckle = rng.uniform(-0.08, 0.08);
        for (std::size_t ch = 0; ch < c; ++ch) {
          q[(y * w + x) * c + ch] = debris_base(ch) + speckle + rng.normal(0.0, 0.02);
        }
      }
    }
  }

  // Radiometric drift: global offset plus a smooth ramp, same on all channels.
  const double offset = rng.uniform(-0.06, 0.06);
  const double gy = rng.uniform(-0.03, 0.03);
  const double gx = rng.uniform(-0.03, 0.03);
  // Cloud blob on a quarter of the pairs, over either acquisition.
  const bool cloudy = rng.uniform() < 0.25;
  const double cy = rng.uniform(0.0, static_cast<double>(h));
  const double cx = rng.uniform(0.0, static_cast<double>(w));
  const double radius = rng.uniform(0.2, 0.45) * static_cast<double>(std::max(h, w));
  const double opacity = rng.uniform(0.3, 0.7);
  std::vector<double>& clouded = rng.uniform() < 0.5 ? q : p;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double ny = h > 1 ? static_cast<double>(y) / static_cast<double>(h - 1) - 0.5 : 0.0;
      const double nx = w > 1 ? static_cast<double>(x) / static_cast<double>(w - 1) - 0.5 : 0.0;
      const double drift = offset + gy * ny + gx * nx;
      double cloud = 0.0;
      if (cloudy) {
        const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
        cloud = opacity * std::exp(-(dy * dy + dx * dx) / (2.0 * radius * radius));
      }
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t i = (y * w + x) * c + ch;
        q[i] += drift + rng.normal(0.0, 0.02);
        clouded[i] = (1.0 - cloud) * clouded[i] + cloud * 0.9;
      }
    }
  }

  out.p.resize(len);
  out.q.resize(len);
  for (std::size_t i = 0; i < len; ++i) {
    out.p[i] = clamp01(p[i]);
    out.q[i] = clamp01(q[i]);
  }
}

std::vector<char> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<char>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

PatchPairDataset::PatchPairDataset(PatchShape shape, std::vector<PatchPair> pairs,
                                   std::optional<std::vector<int>> labels, std::string source)
    : shape_(shape), pairs_(std::move(pairs)), labels_(std::move(labels)), source_(std::move(source)) {
  if (shape_.h == 0 || shape_.w == 0 || shape_.c == 0) {
    throw InvalidArgument("PatchPairDataset: empty patch shape");
  }
  const std::size_t len = shape_.values();
  for (const auto& pr : pairs_) {
    if (pr.p.size() != len || pr.q.size() != len) {
      throw InvalidArgument("PatchPairDataset: pair " + std::to_string(pr.id) +
                            " does not match the declared shape");
    }
    auto in_range = [](float v) { return v >= 0.0f && v <= 1.0f; };
    if (!std::all_of(pr.p.begin(), pr.p.end(), in_range) ||
        !std::all_of(pr.q.begin(), pr.q.end(), in_range)) {
      throw InvalidArgument("PatchPairDataset: pair " + std::to_string(pr.id) +
                            " has values outside [0,1]");
    }
  }
  if (labels_) {
    if (labels_->size() != pairs_.size()) {
      throw InvalidArgument("PatchPairDataset: label count differs from pair count");
    }
    for (int y : *labels_) {
      if (y != 0 && y != 1) throw InvalidArgument("PatchPairDataset: labels must be 0 or 1");
    }
  }
}

const std::vector<int>& PatchPairDataset::labels() const {
  if (!labels_) throw InvalidArgument("dataset has no labels");
  return *labels_;
}

GraphSignal pair_signal(const PatchPair& pair, const PatchShape& shape) {
  const std::size_t n = shape.nodes(), s = shape.c;
  if (pair.p.size() != shape.values() || pair.q.size() != shape.values()) {
    throw InvalidArgument("pair_signal: patch shape mismatch");
  }
  GraphSignal sig{Matrix(s, n), cached_grid(shape.h, shape.w)};
  for (std::size_t node = 0; node < n; ++node) {
    for (std::size_t ch = 0; ch < s; ++ch) {
      const std::size_t k = node * s + ch;
      sig.u(ch, node) = static_cast<double>(pair.q[k]) - static_cast<double>(pair.p[k]);
    }
  }
  return sig;
}

std::vector<double> ambient_vector(const PatchPair& pair, const PatchShape& shape) {
  GraphSignal sig = pair_signal(pair, shape);
  return {sig.u.values().begin(), sig.u.values().end()};
}

Matrix ambient_matrix(const PatchPairDataset& ds) {
  const std::size_t d = ds.shape().values();
  Matrix out(ds.size(), d);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto v = ambient_vector(ds.pair(i), ds.shape());
    std::copy(v.begin(), v.end(), out.row(i).begin());
  }
  return out;
}

Matrix build_grid_adjacency(std::size_t h, std::size_t w) {
  if (h == 0 || w == 0) throw InvalidArgument("build_grid_adjacency: empty grid");
  const std::size_t n = h * w;
  Matrix a(n, n);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t i = y * w + x;
      a(i, i) = 1.0;
      if (y > 0) a(i, i - w) = 1.0;
      if (y + 1 < h) a(i, i + w) = 1.0;
      if (x > 0) a(i, i - 1) = 1.0;
      if (x + 1 < w) a(i, i + 1) = 1.0;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    double deg = 0.0;
    for (double v : a.row(i)) deg += v;
    for (double& v : a.row(i)) v /= deg;
  }
  return a;
}

PatchPairDataset generate_synthetic(const SyntheticConfig& cfg) {
  if (cfg.n_pairs == 0) throw InvalidArgument("generate_synthetic: n_pairs must be positive");
  if (cfg.positive_count > cfg.n_pairs) {
    throw InvalidArgument("generate_synthetic: positive_count exceeds n_pairs");
  }
  if (cfg.h == 0 || cfg.w == 0 || cfg.c == 0) {
    throw InvalidArgument("generate_synthetic: empty patch shape");
  }
  Rng root(cfg.seed);
  Rng pick = root.split(0);
  std::vector<int> labels(cfg.n_pairs, 0);
  for (std::size_t idx : pick.sample_without_replacement(cfg.n_pairs, cfg.positive_count)) {
    labels[idx] = 1;
  }
  std::vector<PatchPair> pairs(cfg.n_pairs);
  for (std::size_t i = 0; i < cfg.n_pairs; ++i) {
    pairs[i].id = i;
    synthesize_pair(cfg, labels[i] == 1, root.split(1000 + i), pairs[i]);
  }
  return PatchPairDataset(PatchShape{cfg.h, cfg.w, cfg.c}, std::move(pairs), std::move(labels),
                          "synthetic-jefferson/seed=" + std::to_string(cfg.seed));
}

std::string sha256_hex(const void* data, std::size_t len) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int out_len = 0;
  if (EVP_Digest(data, len, digest, &out_len, EVP_sha256(), nullptr) != 1) {
    throw IoError("sha256 computation failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  hex.reserve(out_len * 2);
  for (unsigned int i = 0; i < out_len; ++i) {
    hex.push_back(kHex[digest[i] >> 4]);
    hex.push_back(kHex[digest[i] & 0xF]);
  }
  return hex;
}

void write_dataset(const PatchPairDataset& ds, const fs::path& dir) {
  const std::size_t len = ds.shape().values();
  std::vector<float> tensor;
  tensor.reserve(ds.size() * 2 * len);
  for (const auto& pr : ds.pairs()) {
    tensor.insert(tensor.end(), pr.p.begin(), pr.p.end());
    tensor.insert(tensor.end(), pr.q.begin(), pr.q.end());
  }
  const std::size_t bytes = tensor.size() * sizeof(float);

  json manifest;
  manifest["version"] = kFormatVersion;
  manifest["n_pairs"] = ds.size();
  manifest["h"] = ds.shape().h;
  manifest["w"] = ds.shape().w;
  manifest["c"] = ds.shape().c;
  manifest["dtype"] = "f32le";
  manifest["layout"] = kLayout;
  manifest["labels"] = ds.has_labels() ? json(ds.labels()) : json(nullptr);
  manifest["checksum_sha256"] = sha256_hex(tensor.data(), bytes);
  if (!ds.source().empty()) manifest["source"] = ds.source();

  fs::create_directories(dir);
  {
    std::ofstream out(dir / kTensor, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + (dir / kTensor).string());
    out.write(reinterpret_cast<const char*>(tensor.data()), static_cast<std::streamsize>(bytes));
  }
  std::ofstream out(dir / kManifest, std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir / kManifest).string());
  out << manifest.dump(2) << '\n';
}

PatchPairDataset load_dataset(const fs::path& dir) {
  const fs::path manifest_path = dir / kManifest;
  const fs::path tensor_path = dir / kTensor;
  if (!fs::exists(manifest_path)) throw IoError("missing " + manifest_path.string());
  if (!fs::exists(tensor_path)) throw IoError("missing " + tensor_path.string());

  json manifest;
  try {
    std::ifstream in(manifest_path);
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    throw ManifestError("unreadable manifest: " + std::string(e.what()));
  }

  std::size_t n = 0;
  PatchShape shape;
  std::string checksum;
  std::optional<std::vector<int>> labels;
  try {
    if (manifest.at("version").get<int>() != kFormatVersion) {
      throw ManifestError("unsupported dataset version");
    }
    if (manifest.at("dtype").get<std::string>() != "f32le") {
      throw ManifestError("unsupported dtype");
    }
    if (manifest.at("layout").get<std::string>() != kLayout) {
      throw ManifestError("unsupported layout");
    }
    n = manifest.at("n_pairs").get<std::size_t>();
    shape = {manifest.at("h").get<std::size_t>(), manifest.at("w").get<std::size_t>(),
             manifest.at("c").get<std::size_t>()};
    checksum = manifest.at("checksum_sha256").get<std::string>();
    const auto& lab = manifest.at("labels");
    if (!lab.is_null()) {
      labels = lab.get<std::vector<int>>();
      if (labels->size() != n) throw ManifestError("label count differs from n_pairs");
    }
  } catch (const json::exception& e) {
    throw ManifestError("malformed manifest: " + std::string(e.what()));
  }
  if (shape.values() == 0) throw ManifestError("manifest declares an empty patch shape");

  const std::vector<char> raw = read_file(tensor_path);
  const std::size_t len = shape.values();
  const std::size_t expected = n * 2 * len * sizeof(float);
  if (raw.size() < expected) {
    throw TruncatedTensor("tensor holds " + std::to_string(raw.size()) + " bytes, manifest needs " +
                          std::to_string(expected));
  }
  if (raw.size() > expected) {
    throw ManifestError("tensor holds " + std::to_string(raw.size()) +
                        " bytes, more than the manifest's " + std::to_string(expected));
  }
  if (sha256_hex(raw.data(), raw.size()) != checksum) {
    throw ChecksumMismatch("tensor checksum does not match manifest");
  }

  std::vector<PatchPair> pairs(n);
  const char* cursor = raw.data();
  for (std::size_t i = 0; i < n; ++i) {
    pairs[i].id = i;
    pairs[i].p.resize(len);
    pairs[i].q.resize(len);
    std::memcpy(pairs[i].p.data(), cursor, len * sizeof(float));
    cursor += len * sizeof(float);
    std::memcpy(pairs[i].q.data(), cursor, len * sizeof(float));
    cursor += len * sizeof(float);
  }
  std::string source = manifest.value("source", std::string{});
  return PatchPairDataset(shape, std::move(pairs), std::move(labels), std::move(source));
}

}  // namespace exal

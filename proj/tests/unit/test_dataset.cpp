#include <algorithm>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "json.hpp"
#include "exal/dataset.hpp"
#include "exal/error.hpp"

using namespace exal;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("exal_test_dataset_" + name);
  fs::remove_all(p);
  return p;
}

PatchPair make_pair(std::vector<float> p, std::vector<float> q) {
  PatchPair out;
  out.p = std::move(p);
  out.q = std::move(q);
  return out;
}

}  // namespace

TEST_CASE("pair_signal is q - p on the pixel graph") {
  const PatchShape shape{2, 2, 1};
  const GraphSignal sig = pair_signal(make_pair({0, .5f, .5f, 0}, {1, .5f, 0, 0}), shape);
  REQUIRE(sig.u.rows() == 1);
  REQUIRE(sig.u.cols() == 4);
  CHECK(sig.u(0, 0) == 1.0);
  CHECK(sig.u(0, 1) == 0.0);
  CHECK(sig.u(0, 2) == -0.5);
  CHECK(sig.u(0, 3) == 0.0);
  REQUIRE(sig.adjacency_template);
  CHECK(sig.adjacency_template->rows() == 4);

  const PatchShape rgb{2, 3, 3};
  std::vector<float> zeros(18, 0.0f), ones(18, 1.0f), ramp(18);
  for (std::size_t i = 0; i < 18; ++i) ramp[i] = static_cast<float>(i) / 17.0f;
  CHECK(max_abs(pair_signal(make_pair(ramp, ramp), rgb).u) == 0.0);
  const GraphSignal full = pair_signal(make_pair(zeros, ones), rgb);
  for (double v : full.u.values()) CHECK(v == 1.0);

  // Channel-major flattening: u(ch, node) with node = y*w + x.
  const GraphSignal r = pair_signal(make_pair(zeros, ramp), rgb);
  for (std::size_t node = 0; node < 6; ++node)
    for (std::size_t ch = 0; ch < 3; ++ch)
      CHECK(r.u(ch, node) == doctest::Approx(ramp[node * 3 + ch]));
  const auto amb = ambient_vector(make_pair(zeros, ramp), rgb);
  CHECK(amb[1 * 6 + 4] == doctest::Approx(ramp[4 * 3 + 1]));

  // Antisymmetry.
  const Matrix fwd = pair_signal(make_pair(ramp, ones), rgb).u;
  const Matrix bwd = pair_signal(make_pair(ones, ramp), rgb).u;
  CHECK(fwd + bwd == Matrix(3, 6));

  CHECK_THROWS_AS(pair_signal(make_pair({0, 0, 0}, {0, 0, 0, 0}), shape), InvalidArgument);
}

TEST_CASE("grid adjacency") {
  CHECK(build_grid_adjacency(1, 1) == Matrix{{1}});
  CHECK(build_grid_adjacency(1, 2) == Matrix{{.5, .5}, {.5, .5}});
  const Matrix a = build_grid_adjacency(3, 3);
  for (std::size_t j = 0; j < 9; ++j) {
    if (j == 1 || j == 3 || j == 4 || j == 5 || j == 7) {
      CHECK(a(4, j) == doctest::Approx(0.2));
    } else {
      CHECK(a(4, j) == 0.0);
    }
  }
  const Matrix big = build_grid_adjacency(5, 7);
  for (double s : row_sums(big)) CHECK(std::abs(s - 1.0) <= 1e-15);
  for (double v : big.values()) CHECK(v >= 0.0);
  // Symmetric pattern before normalisation.
  for (std::size_t i = 0; i < big.rows(); ++i)
    for (std::size_t j = 0; j < big.cols(); ++j) CHECK((big(i, j) > 0) == (big(j, i) > 0));
  CHECK_THROWS_AS(build_grid_adjacency(0, 3), InvalidArgument);
}

TEST_CASE("synthetic generator") {
  SyntheticConfig cfg;
  cfg.n_pairs = 2200;
  cfg.positive_count = 39;
  cfg.h = cfg.w = 30;
  const PatchPairDataset big = generate_synthetic(cfg);
  CHECK(big.size() == 2200);
  CHECK(std::count(big.labels().begin(), big.labels().end(), 1) == 39);
  CHECK(std::count(big.labels().begin(), big.labels().end(), 0) == 2161);
  CHECK(big.shape() == PatchShape{30, 30, 3});

  SyntheticConfig small;
  small.n_pairs = 10;
  small.positive_count = 0;
  const PatchPairDataset none = generate_synthetic(small);
  CHECK(std::all_of(none.labels().begin(), none.labels().end(), [](int y) { return y == 0; }));

  SyntheticConfig c2;
  c2.n_pairs = 300;
  c2.positive_count = 30;
  c2.seed = 5;
  const PatchPairDataset a = generate_synthetic(c2), b = generate_synthetic(c2);
  CHECK(a == b);
  c2.seed = 6;
  CHECK_FALSE(a == generate_synthetic(c2));
  for (const auto& pair : a.pairs()) {
    for (float v : pair.p) REQUIRE((v >= 0.0f && v <= 1.0f));
    for (float v : pair.q) REQUIRE((v >= 0.0f && v <= 1.0f));
  }
  // Positives carry a larger difference signal than the typical negative.
  const Matrix x = ambient_matrix(a);
  double pos = 0, neg = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double s = 0;
    for (double v : x.row(i)) s += v * v;
    (a.labels()[i] ? pos : neg) += s;
  }
  CHECK(pos / 30 > 2 * neg / 270);

  SyntheticConfig bad;
  bad.n_pairs = 5;
  bad.positive_count = 6;
  CHECK_THROWS_AS(generate_synthetic(bad), InvalidArgument);
}

TEST_CASE("dataset round trip and corruption") {
  SyntheticConfig cfg;
  cfg.n_pairs = 12;
  cfg.positive_count = 3;
  const PatchPairDataset ds = generate_synthetic(cfg);
  const fs::path dir = scratch_dir("rt");
  write_dataset(ds, dir);
  const PatchPairDataset back = load_dataset(dir);
  CHECK(back.shape() == ds.shape());
  CHECK(back.labels() == ds.labels());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CHECK(back.pair(i).p == ds.pair(i).p);
    CHECK(back.pair(i).q == ds.pair(i).q);
  }

  std::ifstream mf(dir / "manifest.json");
  const auto manifest = nlohmann::json::parse(mf);
  CHECK(manifest.at("version") == 1);
  CHECK(manifest.at("dtype") == "f32le");
  CHECK(manifest.at("layout") == "pair-major [n][2][h][w][c]");
  CHECK(manifest.at("n_pairs") == 12);
  CHECK(fs::file_size(dir / "tensor.bin") == 12 * 2 * 8 * 8 * 3 * 4);

  SUBCASE("truncated tensor") {
    fs::resize_file(dir / "tensor.bin", fs::file_size(dir / "tensor.bin") - 8 * 8 * 3 * 2 * 4);
    CHECK_THROWS_AS(load_dataset(dir), TruncatedTensor);
  }
  SUBCASE("tampered byte") {
    std::fstream f(dir / "tensor.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.seekg(100);
    char c = 0;
    f.read(&c, 1);
    c = static_cast<char>(c ^ 0x40);
    f.seekp(100);
    f.write(&c, 1);
    f.close();
    CHECK_THROWS_AS(load_dataset(dir), ChecksumMismatch);
  }
  SUBCASE("manifest disagreement") {
    auto m = manifest;
    m["c"] = 4;
    std::ofstream(dir / "manifest.json") << m.dump();
    CHECK_THROWS_AS(load_dataset(dir), IoError);
  }
  SUBCASE("missing directory") {
    CHECK_THROWS_AS(load_dataset(dir / "nope"), IoError);
  }
  fs::remove_all(dir);
}

TEST_CASE("unlabelled dataset round trip") {
  SyntheticConfig cfg;
  cfg.n_pairs = 4;
  cfg.positive_count = 1;
  const PatchPairDataset labelled = generate_synthetic(cfg);
  const PatchPairDataset ds(labelled.shape(), labelled.pairs(), std::nullopt, "unlabelled");
  const fs::path dir = scratch_dir("unl");
  write_dataset(ds, dir);
  const PatchPairDataset back = load_dataset(dir);
  CHECK_FALSE(back.has_labels());
  CHECK_THROWS_AS(back.labels(), InvalidArgument);
  fs::remove_all(dir);
}

TEST_CASE("sha256") {
  CHECK(sha256_hex("abc", 3) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

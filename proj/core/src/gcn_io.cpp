#include <cstring>
#include <fstream>

#include "json.hpp"

#include "exal/error.hpp"
#include "exal/gcn.hpp"

namespace exal {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kModelJson = "model.json";
constexpr const char* kWeightsBin = "weights.bin";

const char* aggregation_name(AggregationActivation a) {
  return a == AggregationActivation::identity ? "identity" : "leaky_relu";
}

AggregationActivation parse_aggregation(const std::string& s) {
  if (s == "identity") return AggregationActivation::identity;
  if (s == "leaky_relu") return AggregationActivation::leaky_relu;
  throw ManifestError("unknown aggregation activation '" + s + "'");
}

}  // namespace

void save_model(const InvertibleGcn& net, const fs::path& dir) {
  const auto& arch = net.architecture();
  json meta;
  meta["format"] = 1;
  meta["architecture"] = {
      {"grid_h", arch.grid_h},
      {"grid_w", arch.grid_w},
      {"channels", arch.channels},
      {"graph_layers", arch.graph_layers},
      {"dense_layers", arch.dense_layers},
      {"aggregation", aggregation_name(arch.aggregation)},
  };
  json layers = json::array();
  for (const auto& layer : net.layers()) {
    layers.push_back({{"uses_adjacency", layer.uses_adjacency},
                      {"rows", layer.weight.rows()},
                      {"cols", layer.weight.cols()}});
  }
  meta["layers"] = layers;
  meta["lambda"] = net.lambda();
  meta["slopes"] = {{"positive", kPositiveSlope}, {"negative", kNegativeSlope}};
  meta["class_coords"] = {{"no_change", arch.no_change_coord}, {"change", arch.change_coord}};
  meta["seed"] = net.seed();
  meta["weights"] = {{"dtype", "f64le"}, {"order", "A, W1..WL, row-major"}};

  fs::create_directories(dir);
  {
    std::ofstream out(dir / kWeightsBin, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + (dir / kWeightsBin).string());
    auto dump = [&out](const Matrix& m) {
      out.write(reinterpret_cast<const char*>(m.data()),
                static_cast<std::streamsize>(m.size() * sizeof(double)));
    };
    dump(net.adjacency());
    for (const auto& layer : net.layers()) dump(layer.weight);
  }
  std::ofstream out(dir / kModelJson, std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir / kModelJson).string());
  out << meta.dump(2) << '\n';
}

InvertibleGcn load_model(const fs::path& dir) {
  json meta;
  {
    std::ifstream in(dir / kModelJson);
    if (!in) throw IoError("missing " + (dir / kModelJson).string());
    try {
      meta = json::parse(in);
    } catch (const json::exception& e) {
      throw ManifestError("unreadable model.json: " + std::string(e.what()));
    }
  }
  GcnArchitecture arch;
  std::vector<std::pair<bool, std::pair<std::size_t, std::size_t>>> shapes;
  double lambda = 0.0;
  std::uint64_t seed = 0;
  try {
    const auto& a = meta.at("architecture");
    arch.grid_h = a.at("grid_h").get<std::size_t>();
    arch.grid_w = a.at("grid_w").get<std::size_t>();
    arch.channels = a.at("channels").get<std::size_t>();
    arch.graph_layers = a.at("graph_layers").get<std::size_t>();
    arch.dense_layers = a.at("dense_layers").get<std::size_t>();
    arch.aggregation = parse_aggregation(a.at("aggregation").get<std::string>());
    arch.no_change_coord = meta.at("class_coords").at("no_change").get<std::size_t>();
    arch.change_coord = meta.at("class_coords").at("change").get<std::size_t>();
    lambda = meta.at("lambda").get<double>();
    seed = meta.at("seed").get<std::uint64_t>();
    if (meta.at("slopes").at("positive").get<double>() != kPositiveSlope ||
        meta.at("slopes").at("negative").get<double>() != kNegativeSlope) {
      throw ManifestError("model slopes differ from the fixed leaky-ReLU slopes");
    }
    for (const auto& l : meta.at("layers")) {
      shapes.push_back({l.at("uses_adjacency").get<bool>(),
                        {l.at("rows").get<std::size_t>(), l.at("cols").get<std::size_t>()}});
    }
  } catch (const json::exception& e) {
    throw ManifestError("malformed model.json: " + std::string(e.what()));
  }
  const std::size_t d = arch.dim(), s = arch.channels, n = arch.nodes();
  if (shapes.size() != arch.depth()) throw ManifestError("layer count disagrees with architecture");
  bool any_graph = false;
  for (const auto& [graph, shape] : shapes) {
    const std::size_t want = graph ? s : d;
    if (shape.first != want || shape.second != want) {
      throw ManifestError("layer shape disagrees with architecture");
    }
    any_graph = any_graph || graph;
  }

  std::ifstream in(dir / kWeightsBin, std::ios::binary);
  if (!in) throw IoError("missing " + (dir / kWeightsBin).string());
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t expected = any_graph ? n * n : 0;
  for (const auto& sh : shapes) expected += sh.second.first * sh.second.second;
  if (raw.size() != expected * sizeof(double)) {
    throw TruncatedTensor("weights.bin holds " + std::to_string(raw.size()) + " bytes, expected " +
                          std::to_string(expected * sizeof(double)));
  }
  const char* cursor = raw.data();
  auto take = [&cursor](std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    std::memcpy(m.data(), cursor, m.size() * sizeof(double));
    cursor += m.size() * sizeof(double);
    return m;
  };
  Matrix adjacency = any_graph ? take(n, n) : Matrix();
  std::vector<GcnLayer> layers;
  for (const auto& [graph, shape] : shapes) layers.push_back({take(shape.first, shape.second), graph});
  return InvertibleGcn(arch, std::move(adjacency), std::move(layers), lambda, seed);
}

}  // namespace exal

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "config_json.hpp"
#include "exal/error.hpp"

namespace exal {
namespace detail {

using nlohmann::json;

const char* space_name(ExemplarSpace s) {
  return s == ExemplarSpace::latent ? "latent" : "ambient";
}

ExemplarSpace parse_space(const std::string& s) {
  if (s == "ambient") return ExemplarSpace::ambient;
  if (s == "latent") return ExemplarSpace::latent;
  throw InvalidArgument("unknown exemplar space '" + s + "'");
}

json to_json(const SessionConfig& cfg) {
  json train = {{"epochs", cfg.train.epochs},
                {"learning_rate", cfg.train.learning_rate},
                {"batch_size", cfg.train.batch_size},
                {"ce_weight", cfg.train.ce_weight},
                {"class_balanced", cfg.train.class_balanced}};
  train["lambda"] = cfg.train.lambda ? json(*cfg.train.lambda) : json(nullptr);
  return {
      {"strategy", std::string(strategy_name(cfg.strategy))},
      {"budget", cfg.budget},
      {"display_size", cfg.solver.display_size},
      {"alpha", cfg.solver.alpha},
      {"beta", cfg.solver.beta},
      {"gamma", cfg.solver.gamma},
      {"rep_weight", cfg.solver.rep_weight},
      {"epsilon", cfg.solver.epsilon},
      {"maxiter", cfg.solver.maxiter},
      {"space", space_name(cfg.solver.space)},
      {"graph_layers", cfg.graph_layers},
      {"dense_layers", cfg.dense_layers},
      {"aggregation",
       cfg.aggregation == AggregationActivation::leaky_relu ? "leaky_relu" : "identity"},
      {"seed", cfg.seed},
      {"train", train},
  };
}

namespace {

template <typename T>
T get_as(const json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("config field '") + key + "': " + e.what());
  }
}

std::size_t get_count(const json& j, const char* key) {
  const json& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw InvalidArgument(std::string("config field '") + key + "' must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

}  // namespace

SessionConfig session_config_from_json(const json& j, SessionConfig cfg) {
  if (!j.is_object()) throw InvalidArgument("config must be a JSON object");
  static const std::set<std::string> known = {
      "strategy", "budget",       "display_size", "alpha",       "beta",
      "gamma",    "rep_weight",   "epsilon",      "maxiter",     "space",
      "seed",     "graph_layers", "dense_layers", "aggregation", "train"};
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw InvalidArgument("unknown config field '" + key + "'");
  }
  if (j.contains("strategy")) cfg.strategy = parse_strategy(get_as<std::string>(j, "strategy"));
  if (j.contains("budget")) cfg.budget = get_count(j, "budget");
  if (j.contains("display_size")) cfg.solver.display_size = get_count(j, "display_size");
  if (j.contains("alpha")) cfg.solver.alpha = get_as<double>(j, "alpha");
  if (j.contains("beta")) cfg.solver.beta = get_as<double>(j, "beta");
  if (j.contains("gamma")) cfg.solver.gamma = get_as<double>(j, "gamma");
  if (j.contains("rep_weight")) cfg.solver.rep_weight = get_as<double>(j, "rep_weight");
  if (j.contains("epsilon")) cfg.solver.epsilon = get_as<double>(j, "epsilon");
  if (j.contains("maxiter")) cfg.solver.maxiter = get_count(j, "maxiter");
  if (j.contains("space")) cfg.solver.space = parse_space(get_as<std::string>(j, "space"));
  if (j.contains("seed")) cfg.seed = get_as<std::uint64_t>(j, "seed");
  if (j.contains("graph_layers")) cfg.graph_layers = get_count(j, "graph_layers");
  if (j.contains("dense_layers")) cfg.dense_layers = get_count(j, "dense_layers");
  if (j.contains("aggregation")) {
    const auto a = get_as<std::string>(j, "aggregation");
    if (a == "identity") {
      cfg.aggregation = AggregationActivation::identity;
    } else if (a == "leaky_relu") {
      cfg.aggregation = AggregationActivation::leaky_relu;
    } else {
      throw InvalidArgument("unknown aggregation '" + a + "'");
    }
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    if (t.contains("epochs")) cfg.train.epochs = get_count(t, "epochs");
    if (t.contains("learning_rate")) cfg.train.learning_rate = get_as<double>(t, "learning_rate");
    if (t.contains("batch_size")) cfg.train.batch_size = get_count(t, "batch_size");
    if (t.contains("ce_weight")) cfg.train.ce_weight = get_as<double>(t, "ce_weight");
    if (t.contains("class_balanced")) cfg.train.class_balanced = get_as<bool>(t, "class_balanced");
    if (t.contains("lambda")) {
      cfg.train.lambda = t.at("lambda").is_null()
                             ? std::nullopt
                             : std::optional<double>(get_as<double>(t, "lambda"));
    }
  }
  if (cfg.strategy == Strategy::virtual_latent) cfg.solver.space = ExemplarSpace::latent;
  return cfg;
}

}  // namespace detail

using nlohmann::json;

std::string metrics_json(const std::vector<IterationReport>& metrics) {
  json arr = json::array();
  for (const IterationReport& r : metrics) {
    json e = {{"t", r.t}, {"samp_percent", r.samp_percent}};
    e["eer_percent"] = std::isfinite(r.eer_percent) ? json(r.eer_percent) : json(nullptr);
    arr.push_back(std::move(e));
  }
  return arr.dump();
}

namespace {

std::string iter_dir_name(std::size_t t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "iter_%03zu", t);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + tmp);
    out << text;
    if (!out) throw IoError("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

void save_session(const ActiveSession& session, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "models");
  const auto& h = session.history();
  json displays = json::array();
  for (const Display& d : h.displays) {
    displays.push_back({{"iteration", d.iteration},
                        {"strategy", std::string(strategy_name(d.strategy))},
                        {"ids", d.ids}});
  }
  json metrics = json::array();
  for (const IterationReport& r : h.metrics) {
    json e = {{"t", r.t},
              {"samp_percent", r.samp_percent},
              {"solver_iterations", r.solver_iterations},
              {"solver_converged", r.solver_converged},
              {"strategy", std::string(strategy_name(r.strategy))},
              {"positives_labeled", r.positives_labeled}};
    e["eer_percent"] = std::isfinite(r.eer_percent) ? json(r.eer_percent) : json(nullptr);
    metrics.push_back(std::move(e));
  }
  const auto& data = session.data();
  json doc = {
      {"version", 1},
      {"state", std::string(phase_name(session.phase()))},
      {"iteration", session.iteration()},
      {"config", detail::to_json(session.config())},
      {"dataset",
       {{"source", data.dataset.source()},
        {"n_pairs", data.dataset.size()},
        {"h", data.dataset.shape().h},
        {"w", data.dataset.shape().w},
        {"c", data.dataset.shape().c},
        {"split_seed", data.split_seed}}},
      {"displays", displays},
      {"labels", h.labels},
      {"metrics", metrics},
  };
  const auto& models = session.models();
  for (std::size_t i = 0; i < models.size(); ++i) {
    const auto target = dir / "models" / iter_dir_name(i + 1);
    if (models[i] && !std::filesystem::exists(target / "model.json")) save_model(*models[i], target);
  }
  // session.json last: a crash mid-save leaves the previous consistent state.
  write_text(dir / "session.json", doc.dump(2) + "\n");
}

ActiveSession load_session(std::shared_ptr<const ExperimentData> data,
                           const std::filesystem::path& dir) {
  std::ifstream in(dir / "session.json");
  if (!in) throw IoError("cannot open " + (dir / "session.json").string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ManifestError(std::string("session.json: ") + e.what());
  }
  try {
    if (doc.at("version").get<int>() != 1) throw ManifestError("unsupported session version");
    const json& ds = doc.at("dataset");
    if (ds.at("n_pairs").get<std::size_t>() != data->dataset.size() ||
        ds.at("h").get<std::size_t>() != data->dataset.shape().h ||
        ds.at("w").get<std::size_t>() != data->dataset.shape().w ||
        ds.at("c").get<std::size_t>() != data->dataset.shape().c ||
        ds.at("split_seed").get<std::uint64_t>() != data->split_seed) {
      throw ManifestError("session was recorded against a different dataset or split");
    }
    SessionConfig cfg = detail::session_config_from_json(doc.at("config"), SessionConfig{});
    ActiveSession::History h;
    for (const json& d : doc.at("displays")) {
      Display disp;
      disp.iteration = d.at("iteration").get<std::size_t>();
      disp.strategy = parse_strategy(d.at("strategy").get<std::string>());
      disp.ids = d.at("ids").get<std::vector<std::size_t>>();
      h.displays.push_back(std::move(disp));
    }
    h.labels = doc.at("labels").get<std::vector<std::vector<int>>>();
    for (const json& m : doc.at("metrics")) {
      IterationReport r;
      r.t = m.at("t").get<std::size_t>();
      r.samp_percent = m.at("samp_percent").get<double>();
      r.eer_percent = m.at("eer_percent").is_null() ? std::nan("") : m.at("eer_percent").get<double>();
      r.solver_iterations = m.at("solver_iterations").get<std::size_t>();
      r.solver_converged = m.at("solver_converged").get<bool>();
      r.strategy = parse_strategy(m.at("strategy").get<std::string>());
      r.positives_labeled = m.at("positives_labeled").get<std::size_t>();
      h.metrics.push_back(r);
    }
    ActiveSession s = ActiveSession::restore(std::move(data), std::move(cfg), std::move(h));
    return s;
  } catch (const json::exception& e) {
    throw ManifestError(std::string("session.json: ") + e.what());
  }
}

}  // namespace exal

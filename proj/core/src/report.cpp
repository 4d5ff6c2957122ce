#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "config_json.hpp"
#include "exal/error.hpp"
#include "exal/eval.hpp"

namespace exal {

using nlohmann::json;

namespace {

json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json nums(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) a.push_back(num(x));
  return a;
}

std::string fmt(double v) {
  if (!std::isfinite(v)) return "nan";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

}  // namespace

std::string report_meta_json(const SessionConfig& base, const HarnessOptions& opts,
                             const PatchPairDataset& ds) {
  json meta = {{"config", detail::to_json(base)},
               {"seeds", opts.seeds},
               {"dataset",
                {{"source", ds.source()},
                 {"n_pairs", ds.size()},
                 {"h", ds.shape().h},
                 {"w", ds.shape().w},
                 {"c", ds.shape().c}}}};
  return meta.dump();
}

std::string report_json(const Report& r) {
  json grid = json::array(), auc = json::array(), rows = json::array();
  for (const GridRow& row : r.rows) {
    grid.push_back(nums(row.eer_mean));
    auc.push_back(num(row.auc_mean));
    rows.push_back({{"label", row.label},
                    {"eer_mean", nums(row.eer_mean)},
                    {"eer_std", nums(row.eer_std)},
                    {"auc_mean", num(row.auc_mean)},
                    {"auc_per_seed", nums(row.auc_per_seed)},
                    {"errors", row.errors}});
  }
  json doc = {{"kind", r.kind}, {"iterations", r.iterations}, {"samp", nums(r.samp)},
              {"grid", grid},   {"auc", auc},                 {"rows", rows}};
  if (!r.fully_supervised_eer.empty()) {
    double sum = 0.0;
    for (double e : r.fully_supervised_eer) sum += e;
    doc["fully_supervised"] = {
        {"eer_per_seed", nums(r.fully_supervised_eer)},
        {"eer_mean", num(sum / static_cast<double>(r.fully_supervised_eer.size()))}};
  }
  doc["meta"] = r.meta_json.empty() ? json::object() : json::parse(r.meta_json);
  return doc.dump(2) + "\n";
}

std::string curves_csv(const Report& r) {
  std::ostringstream out;
  out << "strategy,seed,iter,samp_percent,eer_percent\n";
  for (const CurvePoint& p : r.curves) {
    out << p.series << ',' << p.seed << ',' << p.t << ',' << fmt(p.samp_percent) << ','
        << fmt(p.eer_percent) << '\n';
  }
  return out.str();
}

void write_report(const Report& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& [name, text] : {std::pair{"report.json", report_json(r)},
                                   std::pair{"curves.csv", curves_csv(r)}}) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw IoError("cannot write " + (dir / name).string());
    out << text;
    if (!out) throw IoError("write failed: " + (dir / name).string());
  }
}

ScoredSet read_scores_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  ScoredSet s;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, ',');) fields.push_back(trim(f));
    if (fields.size() != 3) {
      throw InvalidArgument(path.string() + ":" + std::to_string(lineno) +
                            ": expected id,score,label");
    }
    double score = 0.0;
    int label = 0;
    const auto& sf = fields[1];
    const auto& lf = fields[2];
    const auto r1 = std::from_chars(sf.data(), sf.data() + sf.size(), score);
    const auto r2 = std::from_chars(lf.data(), lf.data() + lf.size(), label);
    const bool ok = r1.ec == std::errc() && r1.ptr == sf.data() + sf.size() &&
                    r2.ec == std::errc() && r2.ptr == lf.data() + lf.size();
    if (!ok) {
      if (lineno == 1 && s.scores.empty()) continue;  // header
      throw InvalidArgument(path.string() + ":" + std::to_string(lineno) + ": malformed row");
    }
    s.scores.push_back(score);
    s.labels.push_back(label);
  }
  if (s.scores.empty()) throw InvalidArgument(path.string() + ": no score rows");
  return s;
}

}  // namespace exal

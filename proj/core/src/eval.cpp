#include "exal/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <numeric>
#include <thread>

#include "exal/error.hpp"

namespace exal {

double compute_eer(const ScoredSet& s) {
  const std::size_t n = s.scores.size();
  if (n != s.labels.size()) throw InvalidArgument("compute_eer: scores/labels length mismatch");
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(s.scores[i])) throw InvalidArgument("compute_eer: non-finite score");
    if (s.labels[i] != 0 && s.labels[i] != 1) throw InvalidArgument("compute_eer: labels must be 0/1");
    pos += static_cast<std::size_t>(s.labels[i]);
  }
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) throw InvalidArgument("compute_eer: both classes must be present");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return s.scores[a] < s.scores[b]; });

  // Threshold at the j-th unique score: everything below is rejected.
  // far = accepted negatives / neg, frr = rejected positives / pos.
  double rejected_pos = 0.0, rejected_neg = 0.0;
  double prev_far = 1.0, prev_frr = 0.0;
  auto crossing = [](double far0, double frr0, double far1, double frr1) {
    const double d0 = far0 - frr0;
    const double d1 = far1 - frr1;
    if (d0 == d1) return 0.5 * (far0 + frr0);
    const double w = d0 / (d0 - d1);
    return far0 + w * (far1 - far0);
  };
  std::size_t i = 0;
  while (i < n) {
    const double v = s.scores[order[i]];
    while (i < n && s.scores[order[i]] == v) {
      (s.labels[order[i]] == 1 ? rejected_pos : rejected_neg) += 1.0;
      ++i;
    }
    // Next threshold (the next unique score, or +inf) rejects everything up to v.
    const double far = (static_cast<double>(neg) - rejected_neg) / static_cast<double>(neg);
    const double frr = rejected_pos / static_cast<double>(pos);
    if (far - frr <= 0.0) return 100.0 * crossing(prev_far, prev_frr, far, frr);
    prev_far = far;
    prev_frr = frr;
  }
  return 100.0 * prev_far;  // unreachable: the last point has far = 0, frr = 1
}

double auc_of_eers(std::span<const double> eers) {
  if (eers.empty()) throw InvalidArgument("auc_of_eers: empty list");
  return std::accumulate(eers.begin(), eers.end(), 0.0) / static_cast<double>(eers.size());
}

std::string AblationSpec::label() const {
  std::string out;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out += '+';
    out += name;
  };
  add(rep_on, "rep");
  add(div_on, "div");
  add(amb_on, "amb");
  return out.empty() ? "none" : out;
}

std::vector<AblationSpec> ablation_grid() {
  return {
      {true, false, false}, {false, true, false}, {false, false, true},
      {true, true, false},  {true, false, true},  {false, true, true},
      {true, true, true},
  };
}

SolverConfig apply_ablation(const SolverConfig& base, const AblationSpec& spec) {
  if (!spec.rep_on && !spec.div_on && !spec.amb_on) {
    throw InvalidArgument("ablation spec must keep at least one term");
  }
  SolverConfig out = base;
  if (!spec.rep_on) out.rep_weight = 0.0;
  if (!spec.div_on) out.alpha = 0.0;
  if (!spec.amb_on) out.beta = 0.0;
  return out;
}

namespace {

std::vector<int> labels_of(const ExperimentData& data, std::span<const std::size_t> ids) {
  std::vector<int> out;
  out.reserve(ids.size());
  for (std::size_t id : ids) out.push_back(data.dataset.labels()[id]);
  return out;
}

struct Series {
  std::string label;
  SessionConfig cfg;
};

struct CellResult {
  std::vector<IterationReport> metrics;
  std::string error;
};

/// Runs every (series, seed) cell, optionally on a worker pool. Cells share
/// only immutable data; results land in preassigned slots.
std::vector<std::vector<CellResult>> run_cells(
    const std::vector<std::shared_ptr<const ExperimentData>>& data_per_seed,
    const std::vector<Series>& series, const HarnessOptions& opts) {
  const std::size_t n_seeds = opts.seeds.size();
  std::vector<std::vector<CellResult>> out(series.size(), std::vector<CellResult>(n_seeds));
  std::atomic<std::size_t> next{0};
  const std::size_t total = series.size() * n_seeds;
  auto worker = [&] {
    for (std::size_t c = next++; c < total; c = next++) {
      const std::size_t r = c / n_seeds, s = c % n_seeds;
      CellResult& cell = out[r][s];
      try {
        SessionConfig cfg = series[r].cfg;
        cfg.seed = opts.seeds[s];
        SimulatedOracle oracle(data_per_seed[s]->dataset.labels());
        ActiveSession session = run_session(data_per_seed[s], cfg, oracle);
        cell.metrics = session.metrics();
      } catch (const std::exception& e) {
        cell.error = e.what();
      }
    }
  };
  const std::size_t workers = std::clamp<std::size_t>(opts.workers, 1, std::max<std::size_t>(total, 1));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return out;
}

Report assemble(std::string kind, const SessionConfig& base, const std::vector<Series>& series,
                const std::vector<std::vector<CellResult>>& cells, const HarnessOptions& opts,
                std::size_t dataset_size) {
  Report rep;
  rep.kind = std::move(kind);
  const std::size_t first = base.budget >= kFirstReportedIteration ? kFirstReportedIteration : 1;
  for (std::size_t t = first; t <= base.budget; ++t) {
    rep.iterations.push_back(t);
    rep.samp.push_back(sampling_rate(t, base.display_size(), dataset_size));
  }
  for (std::size_t r = 0; r < series.size(); ++r) {
    GridRow row;
    row.label = series[r].label;
    std::vector<std::vector<double>> per_iter(rep.iterations.size());
    for (std::size_t s = 0; s < cells[r].size(); ++s) {
      const CellResult& cell = cells[r][s];
      if (!cell.error.empty()) {
        row.errors.push_back("seed " + std::to_string(opts.seeds[s]) + ": " + cell.error);
        continue;
      }
      std::vector<double> eers;
      for (const IterationReport& m : cell.metrics) {
        rep.curves.push_back({row.label, opts.seeds[s], m.t, m.samp_percent, m.eer_percent});
        if (m.t >= first) {
          per_iter[m.t - first].push_back(m.eer_percent);
          eers.push_back(m.eer_percent);
        }
      }
      row.auc_per_seed.push_back(eers.empty() ? std::nan("") : auc_of_eers(eers));
    }
    for (const auto& v : per_iter) {
      if (v.empty()) {
        row.eer_mean.push_back(std::nan(""));
        row.eer_std.push_back(std::nan(""));
        continue;
      }
      const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
      double ss = 0.0;
      for (double e : v) ss += (e - mean) * (e - mean);
      row.eer_mean.push_back(mean);
      row.eer_std.push_back(v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0);
    }
    row.auc_mean = row.auc_per_seed.empty() ? std::nan("") : auc_of_eers(row.auc_per_seed);
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

std::vector<std::shared_ptr<const ExperimentData>> prepare_all(const PatchPairDataset& ds,
                                                               const HarnessOptions& opts) {
  if (!ds.has_labels()) throw InvalidArgument("harness needs a labelled dataset");
  if (opts.seeds.empty()) throw InvalidArgument("harness needs at least one seed");
  std::vector<std::shared_ptr<const ExperimentData>> out;
  for (std::uint64_t seed : opts.seeds) out.push_back(prepare_experiment(ds, seed));
  return out;
}

}  // namespace

std::string report_meta_json(const SessionConfig& base, const HarnessOptions& opts,
                             const PatchPairDataset& ds);

Report run_ablation(const PatchPairDataset& ds, const SessionConfig& base,
                    const std::vector<AblationSpec>& specs, const HarnessOptions& opts) {
  validate(base);
  const auto data = prepare_all(ds, opts);
  std::vector<Series> series;
  for (const AblationSpec& spec : specs) {
    SessionConfig cfg = base;
    cfg.solver = apply_ablation(base.solver, spec);
    series.push_back({spec.label(), cfg});
  }
  Report rep = assemble("ablation", base, series, run_cells(data, series, opts), opts, ds.size());
  rep.meta_json = report_meta_json(base, opts, ds);
  return rep;
}

Report session_report(const ActiveSession& session) {
  const SessionConfig& cfg = session.config();
  HarnessOptions opts;
  opts.seeds = {cfg.seed};
  std::vector<Series> series{{std::string(strategy_name(cfg.strategy)), cfg}};
  std::vector<std::vector<CellResult>> cells{{CellResult{session.metrics(), ""}}};
  Report rep = assemble("session", cfg, series, cells, opts, session.data().dataset.size());
  rep.meta_json = report_meta_json(cfg, opts, session.data().dataset);
  return rep;
}

double fully_supervised_eer(const ExperimentData& data, const SessionConfig& cfg) {
  GcnArchitecture arch;
  arch.grid_h = data.dataset.shape().h;
  arch.grid_w = data.dataset.shape().w;
  arch.channels = data.dataset.shape().c;
  arch.graph_layers = cfg.graph_layers;
  arch.dense_layers = cfg.dense_layers;
  arch.aggregation = cfg.aggregation;
  Rng rng = Rng(cfg.seed).split(0xf5);
  const InvertibleGcn init = InvertibleGcn::orthonormal(arch, rng.next_u64());
  Matrix x(data.train_ids.size(), data.features.cols());
  for (std::size_t i = 0; i < data.train_ids.size(); ++i) {
    auto src = data.features.row(data.train_ids[i]);
    std::copy(src.begin(), src.end(), x.row(i).begin());
  }
  TrainConfig tc = cfg.train;
  tc.seed = rng.next_u64();
  const TrainResult tr = train(init, x, labels_of(data, data.train_ids), tc);
  ScoredSet s{eval_scores(data, &tr.net), labels_of(data, data.eval_ids)};
  return compute_eer(s);
}

Report run_comparison(const PatchPairDataset& ds, const SessionConfig& base,
                      const std::vector<Strategy>& strategies, const HarnessOptions& opts) {
  validate(base);
  if (strategies.empty()) throw InvalidArgument("compare needs at least one strategy");
  const auto data = prepare_all(ds, opts);
  std::vector<Series> series;
  for (Strategy s : strategies) {
    SessionConfig cfg = base;
    cfg.strategy = s;
    cfg.solver.space = s == Strategy::virtual_latent ? ExemplarSpace::latent : ExemplarSpace::ambient;
    series.push_back({std::string(strategy_name(s)), cfg});
  }
  Report rep = assemble("comparison", base, series, run_cells(data, series, opts), opts, ds.size());
  for (std::size_t s = 0; s < opts.seeds.size(); ++s) {
    SessionConfig cfg = base;
    cfg.seed = opts.seeds[s];
    rep.fully_supervised_eer.push_back(fully_supervised_eer(*data[s], cfg));
  }
  rep.meta_json = report_meta_json(base, opts, ds);
  return rep;
}

}  // namespace exal

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "exal/activeloop.hpp"

namespace exal {

struct ScoredSet {
  std::vector<double> scores;  // change probability per sample
  std::vector<int> labels;     // 1 = change
};

/// Equal error rate in percent. Thresholds sweep the sorted unique scores
/// (a sample is flagged as change when score >= threshold); the crossing of
/// false-acceptance and false-rejection rates is interpolated linearly
/// between the two bracketing thresholds.
double compute_eer(const ScoredSet& s);

/// Arithmetic mean of per-iteration EERs.
double auc_of_eers(std::span<const double> eers);

struct AblationSpec {
  bool rep_on = true;
  bool div_on = true;
  bool amb_on = true;
  std::string label() const;  // e.g. "rep+div+amb"
};

/// The seven non-empty term combinations: singles, pairs, then the full model.
std::vector<AblationSpec> ablation_grid();

/// Copy of `base` with the disabled terms' weights zeroed (gamma untouched).
SolverConfig apply_ablation(const SolverConfig& base, const AblationSpec& spec);

/// First iteration shown in the reports (the first column of the grid).
inline constexpr std::size_t kFirstReportedIteration = 2;

struct CurvePoint {
  std::string series;
  std::uint64_t seed = 0;
  std::size_t t = 0;
  double samp_percent = 0.0;
  double eer_percent = 0.0;
};

struct GridRow {
  std::string label;
  std::vector<double> eer_mean;  // per reported iteration
  std::vector<double> eer_std;
  double auc_mean = 0.0;
  std::vector<double> auc_per_seed;
  std::vector<std::string> errors;  // failed cells, recorded not fatal
};

struct Report {
  std::string kind;  // "ablation" or "comparison"
  std::vector<std::size_t> iterations;
  std::vector<double> samp;
  std::vector<GridRow> rows;
  std::vector<CurvePoint> curves;
  /// Comparison only: EER of a model trained on the whole labelled training half.
  std::vector<double> fully_supervised_eer;
  std::string meta_json;  // configuration and seeds
};

struct HarnessOptions {
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  /// Worker threads over independent cells (1 = serial).
  std::size_t workers = 1;
};

Report run_ablation(const PatchPairDataset& ds, const SessionConfig& base,
                    const std::vector<AblationSpec>& specs, const HarnessOptions& opts);

Report run_comparison(const PatchPairDataset& ds, const SessionConfig& base,
                      const std::vector<Strategy>& strategies, const HarnessOptions& opts);

/// One-row report for a finished session.
Report session_report(const ActiveSession& session);

/// EER of a single model trained on every labelled training sample.
double fully_supervised_eer(const ExperimentData& data, const SessionConfig& cfg);

/// report.json: {kind, grid, auc, samp, iterations, rows, fully_supervised, meta}.
std::string report_json(const Report& r);
/// curves.csv: strategy,seed,iter,samp_percent,eer_percent.
std::string curves_csv(const Report& r);
void write_report(const Report& r, const std::filesystem::path& dir);

/// Reads `id,score,label` rows (header optional).
ScoredSet read_scores_csv(const std::filesystem::path& path);

}  // namespace exal

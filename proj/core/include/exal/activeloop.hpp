#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "exal/dataset.hpp"
#include "exal/exemplar.hpp"
#include "exal/gcn.hpp"
#include "exal/matrix.hpp"
#include "exal/sampling.hpp"

namespace exal {

/// Dataset plus everything derived from it once: ambient features and the
/// fixed class-stratified 50/50 train/eval split.
struct ExperimentData {
  PatchPairDataset dataset;
  Matrix features;  // N x d, row i = ambient vector of pair i
  std::vector<std::size_t> train_ids;
  std::vector<std::size_t> eval_ids;
  std::uint64_t split_seed = 0;
};

/// Stratified by label when labels exist, otherwise a plain random halving.
std::shared_ptr<const ExperimentData> prepare_experiment(PatchPairDataset ds,
                                                         std::uint64_t split_seed);

/// (t * K) / (N / 2) * 100 for constant display size K.
double sampling_rate(std::size_t t, std::size_t display_size, std::size_t dataset_size);

enum class OracleMode { simulated, deferred };

class Oracle {
 public:
  virtual ~Oracle() = default;
  /// Labels for `ids`, or nullopt when the answer is not available yet.
  virtual std::optional<std::vector<int>> label(std::span<const std::size_t> ids) = 0;
  virtual OracleMode mode() const noexcept = 0;
};

/// Answers from ground truth, flipping each answer with probability `noise`.
/// The flip for a given id is fixed by (seed, id), independent of query order.
class SimulatedOracle final : public Oracle {
 public:
  explicit SimulatedOracle(std::vector<int> truth, double noise = 0.0, std::uint64_t seed = 0);
  std::optional<std::vector<int>> label(std::span<const std::size_t> ids) override;
  OracleMode mode() const noexcept override { return OracleMode::simulated; }

 private:
  std::vector<int> truth_;
  double noise_;
  std::uint64_t seed_;
};

/// Parks every request until labels are posted from outside.
class DeferredOracle final : public Oracle {
 public:
  std::optional<std::vector<int>> label(std::span<const std::size_t> ids) override;
  OracleMode mode() const noexcept override { return OracleMode::deferred; }
  void post(std::vector<int> labels) { pending_ = std::move(labels); }
  bool has_pending() const noexcept { return pending_.has_value(); }

 private:
  std::optional<std::vector<int>> pending_;
};

/// Default training schedule used by sessions and the CLI.
TrainConfig default_train_config();

struct SessionConfig {
  Strategy strategy = Strategy::virtual_ambient;
  std::size_t budget = 10;
  SolverConfig solver;
  TrainConfig train = default_train_config();
  std::size_t graph_layers = 1;
  std::size_t dense_layers = 2;
  AggregationActivation aggregation = AggregationActivation::identity;
  std::uint64_t seed = 0;

  std::size_t display_size() const noexcept { return solver.display_size; }
};

void validate(const SessionConfig& cfg);

enum class SessionPhase { running, awaiting_labels, training, done };
std::string_view phase_name(SessionPhase p);
SessionPhase parse_phase(std::string_view s);

struct IterationReport {
  std::size_t t = 0;  // displays labelled so far
  double samp_percent = 0.0;
  double eer_percent = 0.0;
  std::size_t solver_iterations = 0;
  bool solver_converged = true;
  Strategy strategy = Strategy::random;
  std::size_t positives_labeled = 0;
};

/// One active-learning run: random D_0, then per iteration
/// label -> train f_t -> eval EER -> select D_{t+1}.
class ActiveSession {
 public:
  ActiveSession(std::shared_ptr<const ExperimentData> data, SessionConfig cfg);

  struct History {
    std::vector<Display> displays;
    std::vector<std::vector<int>> labels;
    std::vector<IterationReport> metrics;
    SessionPhase phase = SessionPhase::awaiting_labels;
  };
  /// Rebuilds a session from persisted history (models are not restored).
  static ActiveSession restore(std::shared_ptr<const ExperimentData> data, SessionConfig cfg,
                               History history);

  const SessionConfig& config() const noexcept { return cfg_; }
  const ExperimentData& data() const noexcept { return *data_; }
  std::shared_ptr<const ExperimentData> data_ptr() const noexcept { return data_; }
  SessionPhase phase() const noexcept { return history_.phase; }
  /// Completed iterations.
  std::size_t iteration() const noexcept { return history_.labels.size(); }
  const Display& current_display() const;
  const History& history() const noexcept { return history_; }
  const std::vector<IterationReport>& metrics() const noexcept { return history_.metrics; }
  /// Model trained at each completed iteration (in memory only).
  const std::vector<std::shared_ptr<const InvertibleGcn>>& models() const noexcept {
    return models_;
  }
  std::vector<std::size_t> labeled_ids() const;

  /// Consumes labels for the current display (aligned with its ids) and
  /// advances one iteration. Strong guarantee: on any exception the session
  /// is unchanged.
  IterationReport submit_labels(std::span<const int> labels);

  /// Called with a stage name ("trained", "evaluated", "selected") during
  /// submit_labels; tests use it to inject faults.
  void set_stage_hook(std::function<void(std::string_view)> hook) { hook_ = std::move(hook); }

 private:
  struct Step;
  Step compute_step(std::span<const int> labels) const;

  std::shared_ptr<const ExperimentData> data_;
  SessionConfig cfg_;
  History history_;
  std::vector<std::shared_ptr<const InvertibleGcn>> models_;
  std::function<void(std::string_view)> hook_;
};

/// Drives a session until it completes or the oracle parks it.
void run_session(ActiveSession& session, Oracle& oracle,
                 const std::function<void(const ActiveSession&)>& on_iteration = {});

/// Convenience: fresh session driven by `oracle`.
ActiveSession run_session(std::shared_ptr<const ExperimentData> data, const SessionConfig& cfg,
                          Oracle& oracle);

/// Per-iteration metrics as compact JSON: [{"t":..,"samp_percent":..,"eer_percent":..}, ...].
/// Used verbatim by the CLI and the service so the two can be compared byte for byte.
std::string metrics_json(const std::vector<IterationReport>& metrics);

/// session.json plus models/iter_XXX/ checkpoints for the models held in memory.
void save_session(const ActiveSession& session, const std::filesystem::path& dir);
ActiveSession load_session(std::shared_ptr<const ExperimentData> data,
                           const std::filesystem::path& dir);

/// Change-probability scores of the evaluation half under `net`
/// (0.5 everywhere when net is null).
std::vector<double> eval_scores(const ExperimentData& data, const InvertibleGcn* net);

}  // namespace exal

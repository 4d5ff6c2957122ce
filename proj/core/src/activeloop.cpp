#include "exal/activeloop.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "exal/error.hpp"
#include "exal/eval.hpp"

namespace exal {
namespace {

// Stream ids under the session seed.
constexpr std::uint64_t kInitialDisplayStream = 1;
constexpr std::uint64_t kInitStreamBase = 1000;
constexpr std::uint64_t kTrainStreamBase = 2000;
constexpr std::uint64_t kSolverStreamBase = 3000;
constexpr std::uint64_t kRandomStreamBase = 4000;

std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) {
  return Rng(seed).split(stream).next_u64();
}

Matrix gather_rows(const Matrix& features, std::span<const std::size_t> ids) {
  Matrix out(ids.size(), features.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto src = features.row(ids[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

Matrix gather_columns(const Matrix& features, std::span<const std::size_t> ids) {
  Matrix out(features.cols(), ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto src = features.row(ids[i]);
    for (std::size_t r = 0; r < src.size(); ++r) out(r, i) = src[r];
  }
  return out;
}

GcnArchitecture architecture_for(const ExperimentData& data, const SessionConfig& cfg) {
  GcnArchitecture arch;
  arch.grid_h = data.dataset.shape().h;
  arch.grid_w = data.dataset.shape().w;
  arch.channels = data.dataset.shape().c;
  arch.graph_layers = cfg.graph_layers;
  arch.dense_layers = cfg.dense_layers;
  arch.aggregation = cfg.aggregation;
  return arch;
}

}  // namespace

std::shared_ptr<const ExperimentData> prepare_experiment(PatchPairDataset ds,
                                                         std::uint64_t split_seed) {
  const std::size_t n = ds.size();
  if (n < 2) throw InvalidArgument("dataset needs at least two pairs");
  auto data = std::make_shared<ExperimentData>();
  data->features = ambient_matrix(ds);
  data->split_seed = split_seed;
  Rng rng = Rng(split_seed).split(0x5b1e);
  if (ds.has_labels()) {
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < n; ++i) (ds.labels()[i] == 1 ? pos : neg).push_back(i);
    rng.shuffle(std::span<std::size_t>(pos));
    rng.shuffle(std::span<std::size_t>(neg));
    const std::size_t train_pos = pos.size() / 2;
    const std::size_t train_neg = std::min(neg.size(), n / 2 - train_pos);
    data->train_ids.assign(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(train_pos));
    data->train_ids.insert(data->train_ids.end(), neg.begin(),
                           neg.begin() + static_cast<std::ptrdiff_t>(train_neg));
    data->eval_ids.assign(pos.begin() + static_cast<std::ptrdiff_t>(train_pos), pos.end());
    data->eval_ids.insert(data->eval_ids.end(),
                          neg.begin() + static_cast<std::ptrdiff_t>(train_neg), neg.end());
  } else {
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    rng.shuffle(std::span<std::size_t>(all));
    data->train_ids.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n / 2));
    data->eval_ids.assign(all.begin() + static_cast<std::ptrdiff_t>(n / 2), all.end());
  }
  std::sort(data->train_ids.begin(), data->train_ids.end());
  std::sort(data->eval_ids.begin(), data->eval_ids.end());
  data->dataset = std::move(ds);
  return data;
}

double sampling_rate(std::size_t t, std::size_t display_size, std::size_t dataset_size) {
  if (dataset_size < 2) throw InvalidArgument("sampling_rate: dataset_size must be >= 2");
  return static_cast<double>(t * display_size) / (static_cast<double>(dataset_size) / 2.0) *
         100.0;
}

SimulatedOracle::SimulatedOracle(std::vector<int> truth, double noise, std::uint64_t seed)
    : truth_(std::move(truth)), noise_(noise), seed_(seed) {
  if (!(noise >= 0.0 && noise <= 1.0)) throw InvalidArgument("oracle noise must lie in [0,1]");
}

std::optional<std::vector<int>> SimulatedOracle::label(std::span<const std::size_t> ids) {
  std::vector<int> out;
  out.reserve(ids.size());
  const Rng base(seed_);
  for (std::size_t id : ids) {
    if (id >= truth_.size()) {
      throw InvalidArgument("oracle: id " + std::to_string(id) + " out of range");
    }
    int y = truth_[id];
    if (noise_ > 0.0 && base.split(id).uniform() < noise_) y = 1 - y;
    out.push_back(y);
  }
  return out;
}

std::optional<std::vector<int>> DeferredOracle::label(std::span<const std::size_t> ids) {
  if (!pending_) return std::nullopt;
  if (pending_->size() != ids.size()) {
    throw InvalidArgument("deferred oracle: posted label count does not match the display");
  }
  std::optional<std::vector<int>> out = std::move(pending_);
  pending_.reset();
  return out;
}

void validate(const SessionConfig& cfg) {
  validate(cfg.solver);
  if (cfg.budget == 0) throw InvalidArgument("budget must be >= 1");
  if (cfg.solver.display_size == 0) throw InvalidArgument("display_size must be >= 1");
  if (cfg.graph_layers + cfg.dense_layers == 0) throw InvalidArgument("network needs a layer");
  if (cfg.train.epochs == 0 || cfg.train.batch_size == 0 || !(cfg.train.learning_rate > 0.0)) {
    throw InvalidArgument("training config needs epochs, batch_size and learning_rate > 0");
  }
  if (cfg.strategy == Strategy::virtual_latent && cfg.solver.space != ExemplarSpace::latent) {
    throw InvalidArgument("strategy virtual-latent requires the latent exemplar space");
  }
}

TrainConfig default_train_config() {
  TrainConfig t;
  t.epochs = 100;
  t.learning_rate = 5e-2;
  t.batch_size = 32;
  t.class_balanced = true;
  return t;
}

std::string_view phase_name(SessionPhase p) {
  switch (p) {
    case SessionPhase::running: return "RUNNING";
    case SessionPhase::awaiting_labels: return "AWAITING_LABELS";
    case SessionPhase::training: return "TRAINING";
    case SessionPhase::done: return "DONE";
  }
  return "UNKNOWN";
}

SessionPhase parse_phase(std::string_view s) {
  for (SessionPhase p : {SessionPhase::running, SessionPhase::awaiting_labels,
                         SessionPhase::training, SessionPhase::done}) {
    if (phase_name(p) == s) return p;
  }
  throw InvalidArgument("unknown session state '" + std::string(s) + "'");
}

std::vector<double> eval_scores(const ExperimentData& data, const InvertibleGcn* net) {
  if (!net) return std::vector<double>(data.eval_ids.size(), 0.5);
  const Matrix probs = net->class_probs_rows(gather_rows(data.features, data.eval_ids));
  std::vector<double> out(probs.rows());
  for (std::size_t i = 0; i < probs.rows(); ++i) out[i] = probs(i, 1);
  return out;
}

// ---------------------------------------------------------------------------

struct ActiveSession::Step {
  IterationReport report;
  std::optional<Display> next;
  std::shared_ptr<const InvertibleGcn> net;
};

ActiveSession::ActiveSession(std::shared_ptr<const ExperimentData> data, SessionConfig cfg)
    : data_(std::move(data)), cfg_(std::move(cfg)) {
  if (!data_) throw InvalidArgument("session needs data");
  validate(cfg_);
  if (cfg_.display_size() * cfg_.budget > data_->train_ids.size()) {
    throw InvalidArgument("budget * display_size exceeds the training half (" +
                          std::to_string(data_->train_ids.size()) + " samples)");
  }
  Rng rng = Rng(cfg_.seed).split(kInitialDisplayStream);
  Display d0 = select_random(PoolView{data_->features, data_->train_ids, {}},
                             cfg_.display_size(), rng);
  d0.iteration = 0;
  history_.displays.push_back(std::move(d0));
  history_.phase = SessionPhase::awaiting_labels;
}

ActiveSession ActiveSession::restore(std::shared_ptr<const ExperimentData> data, SessionConfig cfg,
                                     History history) {
  ActiveSession s(std::move(data), std::move(cfg));
  const std::size_t done = history.labels.size();
  if (history.metrics.size() != done) throw InvalidArgument("restore: metrics/labels mismatch");
  if (done > s.cfg_.budget) throw InvalidArgument("restore: more iterations than budget");
  const bool finished = done == s.cfg_.budget;
  if (history.displays.size() != (finished ? done : done + 1)) {
    throw InvalidArgument("restore: display history has the wrong length");
  }
  if (history.displays.front().ids != s.history_.displays.front().ids) {
    throw InvalidArgument("restore: initial display does not match the session seed");
  }
  std::vector<std::size_t> seen;
  for (const Display& d : history.displays) {
    if (d.ids.size() != s.cfg_.display_size()) throw InvalidArgument("restore: display size");
    seen.insert(seen.end(), d.ids.begin(), d.ids.end());
  }
  std::sort(seen.begin(), seen.end());
  if (std::adjacent_find(seen.begin(), seen.end()) != seen.end()) {
    throw InvalidArgument("restore: a sample appears in two displays");
  }
  history.phase = finished ? SessionPhase::done : SessionPhase::awaiting_labels;
  s.history_ = std::move(history);
  s.models_.assign(done, nullptr);
  return s;
}

const Display& ActiveSession::current_display() const {
  if (history_.phase == SessionPhase::done) throw InvalidArgument("session is complete");
  return history_.displays.back();
}

std::vector<std::size_t> ActiveSession::labeled_ids() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < history_.labels.size(); ++i) {
    const auto& ids = history_.displays[i].ids;
    out.insert(out.end(), ids.begin(), ids.end());
  }
  return out;
}

ActiveSession::Step ActiveSession::compute_step(std::span<const int> labels) const {
  const Display& display = current_display();
  const std::size_t k = cfg_.display_size();
  if (labels.size() != k) {
    throw InvalidArgument("expected " + std::to_string(k) + " labels, got " +
                          std::to_string(labels.size()));
  }
  for (int y : labels) {
    if (y != 0 && y != 1) throw InvalidArgument("labels must be 0 or 1");
  }
  const std::size_t j = iteration();

  std::vector<std::size_t> ids = labeled_ids();
  ids.insert(ids.end(), display.ids.begin(), display.ids.end());
  std::vector<int> y;
  y.reserve(ids.size());
  for (const auto& past : history_.labels) y.insert(y.end(), past.begin(), past.end());
  y.insert(y.end(), labels.begin(), labels.end());

  const GcnArchitecture arch = architecture_for(*data_, cfg_);
  InvertibleGcn init = InvertibleGcn::orthonormal(arch, derive(cfg_.seed, kInitStreamBase + j));
  const std::size_t positives = static_cast<std::size_t>(std::count(y.begin(), y.end(), 1));
  std::shared_ptr<const InvertibleGcn> net;
  if (positives > 0 && positives < y.size()) {
    TrainConfig tc = cfg_.train;
    tc.seed = derive(cfg_.seed, kTrainStreamBase + j);
    net = std::make_shared<InvertibleGcn>(
        train(init, gather_rows(data_->features, ids), y, tc).net);
  } else {
    // Single-class labelled set: the untrained initialisation stands in for f_t.
    net = std::make_shared<InvertibleGcn>(std::move(init));
  }
  if (hook_) hook_("trained");

  Step step;
  step.net = net;
  step.report.t = j + 1;
  step.report.samp_percent = sampling_rate(j + 1, k, data_->dataset.size());
  step.report.strategy = cfg_.strategy;
  step.report.positives_labeled = positives;
  if (data_->dataset.has_labels()) {
    ScoredSet s;
    s.scores = eval_scores(*data_, net.get());
    s.labels.reserve(data_->eval_ids.size());
    for (std::size_t id : data_->eval_ids) s.labels.push_back(data_->dataset.labels()[id]);
    step.report.eer_percent = compute_eer(s);
  } else {
    step.report.eer_percent = std::numeric_limits<double>::quiet_NaN();
  }
  if (hook_) hook_("evaluated");

  if (j + 1 < cfg_.budget) {
    const PoolView pool{data_->features, data_->train_ids, ids};
    Display next;
    switch (cfg_.strategy) {
      case Strategy::virtual_ambient:
      case Strategy::virtual_latent: {
        const std::vector<std::size_t> unlabeled = unused_ids(pool);
        SolverConfig sc = cfg_.solver;
        sc.seed = derive(cfg_.seed, kSolverStreamBase + j);
        const SolveResult r = solve(gather_columns(data_->features, unlabeled), net.get(), sc);
        step.report.solver_iterations = r.iterations;
        step.report.solver_converged = r.converged;
        next = select_virtual(pool, r.v, k);
        break;
      }
      case Strategy::random: {
        Rng rng = Rng(cfg_.seed).split(kRandomStreamBase + j);
        next = select_random(pool, k, rng);
        break;
      }
      case Strategy::maxmin:
        next = select_maxmin(pool, ids, k);
        break;
      case Strategy::uncertainty:
        next = select_uncertainty(pool, *net, k);
        break;
    }
    next.strategy = cfg_.strategy;
    next.iteration = j + 1;
    step.next = std::move(next);
    if (hook_) hook_("selected");
  }
  return step;
}

IterationReport ActiveSession::submit_labels(std::span<const int> labels) {
  Step step = compute_step(labels);
  // Commit. Reserve first so the pushes below cannot throw halfway.
  history_.labels.reserve(history_.labels.size() + 1);
  history_.metrics.reserve(history_.metrics.size() + 1);
  history_.displays.reserve(history_.displays.size() + 1);
  models_.reserve(models_.size() + 1);
  std::vector<int> copy(labels.begin(), labels.end());

  history_.labels.push_back(std::move(copy));
  history_.metrics.push_back(step.report);
  models_.push_back(std::move(step.net));
  if (step.next) {
    history_.displays.push_back(std::move(*step.next));
    history_.phase = SessionPhase::awaiting_labels;
  } else {
    history_.phase = SessionPhase::done;
  }
  return history_.metrics.back();
}

void run_session(ActiveSession& session, Oracle& oracle,
                 const std::function<void(const ActiveSession&)>& on_iteration) {
  while (session.phase() != SessionPhase::done) {
    std::optional<std::vector<int>> y = oracle.label(session.current_display().ids);
    if (!y) return;  // parked until labels arrive
    session.submit_labels(*y);
    if (on_iteration) on_iteration(session);
  }
}

ActiveSession run_session(std::shared_ptr<const ExperimentData> data, const SessionConfig& cfg,
                          Oracle& oracle) {
  ActiveSession s(std::move(data), cfg);
  run_session(s, oracle);
  return s;
}

}  // namespace exal

#include "cli.hpp"

#include <charconv>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <thread>

#include "CLI11.hpp"

#include "exal/activeloop.hpp"
#include "exal/dataset.hpp"
#include "exal/error.hpp"
#include "exal/eval.hpp"
#include "exal/service.hpp"

namespace exal::cli {
namespace {

struct SessionFlags {
  std::string strategy = "virtual";
  std::size_t budget = 10;
  std::size_t display_size = 16;
  double alpha = 1.0;
  double beta = 1.0;
  double gamma = 1.0;
  std::string space = "ambient";
  double epsilon = 1e-4;
  std::size_t maxiter = 500;
  std::uint64_t seed = 0;
  std::size_t epochs = default_train_config().epochs;
  double learning_rate = default_train_config().learning_rate;
  std::size_t batch_size = default_train_config().batch_size;
  std::size_t graph_layers = 1;
  std::size_t dense_layers = 2;
  bool leaky_aggregation = false;

  SessionConfig to_config() const {
    SessionConfig cfg;
    cfg.strategy = parse_strategy(strategy);
    cfg.budget = budget;
    cfg.solver.display_size = display_size;
    cfg.solver.alpha = alpha;
    cfg.solver.beta = beta;
    cfg.solver.gamma = gamma;
    cfg.solver.epsilon = epsilon;
    cfg.solver.maxiter = maxiter;
    if (space == "ambient") {
      cfg.solver.space = ExemplarSpace::ambient;
    } else if (space == "latent") {
      cfg.solver.space = ExemplarSpace::latent;
    } else {
      throw InvalidArgument("--space must be ambient or latent");
    }
    if (cfg.strategy == Strategy::virtual_latent) cfg.solver.space = ExemplarSpace::latent;
    if (cfg.strategy == Strategy::virtual_ambient && cfg.solver.space == ExemplarSpace::latent) {
      cfg.strategy = Strategy::virtual_latent;
    }
    cfg.train = default_train_config();
    cfg.train.epochs = epochs;
    cfg.train.learning_rate = learning_rate;
    cfg.train.batch_size = batch_size;
    cfg.graph_layers = graph_layers;
    cfg.dense_layers = dense_layers;
    cfg.aggregation =
        leaky_aggregation ? AggregationActivation::leaky_relu : AggregationActivation::identity;
    cfg.seed = seed;
    return cfg;
  }
};

void add_session_flags(CLI::App* app, SessionFlags& f, bool with_strategy) {
  if (with_strategy) {
    app->add_option("--strategy", f.strategy,
                    "virtual | virtual-latent | random | maxmin | uncertainty");
  }
  app->add_option("--budget", f.budget, "Iterations T");
  app->add_option("--display-size", f.display_size, "Samples per display K");
  app->add_option("--alpha", f.alpha, "Diversity weight");
  app->add_option("--beta", f.beta, "Ambiguity weight");
  app->add_option("--gamma", f.gamma, "Membership entropy weight");
  app->add_option("--space", f.space, "Exemplar space: ambient | latent");
  app->add_option("--epsilon", f.epsilon, "Solver L1 stopping threshold");
  app->add_option("--maxiter", f.maxiter, "Solver sweep cap");
  app->add_option("--seed", f.seed, "Session seed");
  app->add_option("--epochs", f.epochs, "Training epochs per iteration");
  app->add_option("--lr", f.learning_rate, "Training learning rate");
  app->add_option("--batch-size", f.batch_size, "Training mini-batch size");
  app->add_option("--graph-layers", f.graph_layers, "Graph convolution layers");
  app->add_option("--dense-layers", f.dense_layers, "Dense layers");
  app->add_flag("--leaky-aggregation", f.leaky_aggregation,
                "Leaky-ReLU after adjacency aggregation");
}

std::vector<std::uint64_t> seed_list(std::size_t n) {
  std::vector<std::uint64_t> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = i;
  return out;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

std::string fmt(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, 4);
  return std::string(buf, r.ptr);
}

void print_report(const Report& r, std::ostream& out) {
  out << std::left << std::setw(16) << "samp";
  for (double s : r.samp) out << std::setw(9) << fmt(s);
  out << "AUC\n";
  for (const GridRow& row : r.rows) {
    out << std::setw(16) << row.label;
    for (double e : row.eer_mean) out << std::setw(9) << fmt(e);
    out << fmt(row.auc_mean) << '\n';
    for (const auto& e : row.errors) out << "  error: " << e << '\n';
  }
}

}  // namespace

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Exemplar-driven active learning for change detection", "exal"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);

  // gen-data
  SyntheticConfig gen;
  std::size_t patch = 8;
  std::filesystem::path gen_out;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic patch-pair dataset");
  gen_cmd->add_option("--n", gen.n_pairs, "Number of pairs");
  gen_cmd->add_option("--positives", gen.positive_count, "Number of change pairs");
  gen_cmd->add_option("--patch", patch, "Patch side length");
  gen_cmd->add_option("--channels", gen.c, "Channels per pixel");
  gen_cmd->add_option("--seed", gen.seed, "Generator seed");
  gen_cmd->add_option("--out", gen_out, "Output directory")->required();

  // run
  SessionFlags run_flags;
  std::filesystem::path run_dataset, run_out;
  double noise = 0.0;
  auto* run_cmd = app.add_subcommand("run", "Run one simulated-oracle active-learning session");
  run_cmd->add_option("--dataset", run_dataset, "Dataset directory")->required();
  add_session_flags(run_cmd, run_flags, true);
  run_cmd->add_option("--noise", noise, "Oracle label flip probability");
  run_cmd->add_option("--out", run_out, "Output directory")->required();

  // ablate
  SessionFlags abl_flags;
  std::filesystem::path abl_dataset, abl_out;
  std::size_t abl_seeds = 5;
  std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
  auto* abl_cmd = app.add_subcommand("ablate", "Objective-term ablation grid");
  abl_cmd->add_option("--dataset", abl_dataset, "Dataset directory")->required();
  abl_cmd->add_option("--seeds", abl_seeds, "Number of seeds (0..N-1)");
  abl_cmd->add_option("--workers", workers, "Parallel cells");
  add_session_flags(abl_cmd, abl_flags, false);
  abl_cmd->add_option("--out", abl_out, "Output directory")->required();

  // compare
  SessionFlags cmp_flags;
  std::filesystem::path cmp_dataset, cmp_out;
  std::size_t cmp_seeds = 5;
  std::vector<std::string> strategies{"virtual", "random", "maxmin", "uncertainty"};
  auto* cmp_cmd = app.add_subcommand("compare", "Sampling strategy comparison");
  cmp_cmd->add_option("--dataset", cmp_dataset, "Dataset directory")->required();
  cmp_cmd->add_option("--strategies", strategies, "Comma-separated strategies")->delimiter(',');
  cmp_cmd->add_option("--seeds", cmp_seeds, "Number of seeds (0..N-1)");
  cmp_cmd->add_option("--workers", workers, "Parallel cells");
  add_session_flags(cmp_cmd, cmp_flags, false);
  cmp_cmd->add_option("--out", cmp_out, "Output directory")->required();

  // eer
  std::filesystem::path scores_path;
  auto* eer_cmd = app.add_subcommand("eer", "Equal error rate of an id,score,label CSV");
  eer_cmd->add_option("--scores", scores_path, "Score file")->required();

  // serve
  int port = 8080;
  std::string host = "127.0.0.1";
  std::filesystem::path serve_dataset, serve_sessions;
  auto* serve_cmd = app.add_subcommand("serve", "HTTP session API (EXEMPLAR_AL_PORT overrides --port)");
  serve_cmd->add_option("--port", port, "Listen port");
  serve_cmd->add_option("--host", host, "Listen address");
  serve_cmd->add_option("--dataset", serve_dataset, "Default dataset directory");
  serve_cmd->add_option("--sessions", serve_sessions, "Directory for persisted sessions");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen_cmd) {
      gen.h = gen.w = patch;
      const PatchPairDataset ds = generate_synthetic(gen);
      write_dataset(ds, gen_out);
      out << "wrote " << ds.size() << " pairs to " << gen_out.string() << '\n';
    } else if (*run_cmd) {
      const SessionConfig cfg = run_flags.to_config();
      PatchPairDataset ds = load_dataset(run_dataset);
      if (!ds.has_labels()) throw InvalidArgument("run needs a labelled dataset for the simulated oracle");
      SimulatedOracle oracle(ds.labels(), noise, cfg.seed);
      auto data = prepare_experiment(std::move(ds), cfg.seed);
      ActiveSession session(data, cfg);
      std::filesystem::create_directories(run_out);
      run_session(session, oracle, [&](const ActiveSession& s) {
        const IterationReport& m = s.metrics().back();
        out << "t=" << m.t << " samp=" << fmt(m.samp_percent) << "% eer=" << fmt(m.eer_percent)
            << "% solver_iters=" << m.solver_iterations << '\n';
        save_session(s, run_out / "session");
      });
      save_session(session, run_out / "session");
      const Report rep = session_report(session);
      write_report(rep, run_out);
      write_file(run_out / "metrics.json", metrics_json(session.metrics()) + "\n");
      out << "AUC(t>=" << kFirstReportedIteration << ")=" << fmt(rep.rows.front().auc_mean) << '\n';
    } else if (*abl_cmd) {
      const SessionConfig cfg = abl_flags.to_config();
      const PatchPairDataset ds = load_dataset(abl_dataset);
      HarnessOptions opts{seed_list(abl_seeds), workers};
      const Report rep = run_ablation(ds, cfg, ablation_grid(), opts);
      write_report(rep, abl_out);
      print_report(rep, out);
    } else if (*cmp_cmd) {
      const SessionConfig cfg = cmp_flags.to_config();
      std::vector<Strategy> strats;
      for (const auto& s : strategies) strats.push_back(parse_strategy(s));
      const PatchPairDataset ds = load_dataset(cmp_dataset);
      HarnessOptions opts{seed_list(cmp_seeds), workers};
      const Report rep = run_comparison(ds, cfg, strats, opts);
      write_report(rep, cmp_out);
      print_report(rep, out);
      double fs = 0.0;
      for (double e : rep.fully_supervised_eer) fs += e;
      out << "fully-supervised EER=" << fmt(fs / static_cast<double>(rep.fully_supervised_eer.size()))
          << '\n';
    } else if (*eer_cmd) {
      const ScoredSet s = read_scores_csv(scores_path);
      out << fmt(compute_eer(s)) << '\n';
    } else if (*serve_cmd) {
      ServiceOptions so;
      if (!serve_dataset.empty()) so.dataset_dir = serve_dataset;
      if (!serve_sessions.empty()) so.sessions_dir = serve_sessions;
      so.defaults.train = default_train_config();
      Service service(so);
      const int p = resolve_port(port);
      out << "listening on http://" << host << ':' << p << "/v1" << std::endl;
      service.listen(host, p);
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

}  // namespace exal::cli

#include "exal/service.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <condition_variable>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include "httplib.h"

#include "config_json.hpp"
#include "exal/error.hpp"

namespace exal {

using nlohmann::json;

namespace {

std::string base64_f32le(const std::vector<float>& values) {
  static_assert(sizeof(float) == 4);
  std::string raw(values.size() * 4, '\0');
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, &values[i], 4);
    for (int b = 0; b < 4; ++b) raw[4 * i + b] = static_cast<char>((bits >> (8 * b)) & 0xff);
  }
  std::string out(4 * ((raw.size() + 2) / 3) + 1, '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(raw.data()),
                                static_cast<int>(raw.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

void send_json(httplib::Response& res, int status, const std::string& body) {
  res.status = status;
  res.set_content(body, "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& code,
                const std::string& message) {
  send_json(res, status, json{{"code", code}, {"message", message}}.dump());
}

/// Read-side view of a session, replaced wholesale on every transition.
struct Snapshot {
  SessionPhase phase = SessionPhase::awaiting_labels;
  std::size_t t = 0;
  std::size_t budget = 0;
  std::size_t display_size = 0;
  std::string strategy;
  std::optional<Display> display;
  std::string metrics;  // metrics_json()
  std::string last_error;
};

}  // namespace

struct Service::Impl {
  struct Entry {
    std::string id;
    std::mutex mutate;  // serialises transitions
    std::unique_ptr<ActiveSession> session;
    std::thread worker;
    bool busy = false;
    std::condition_variable idle_cv;

    mutable std::mutex snap_mu;
    std::shared_ptr<const Snapshot> snap;

    std::shared_ptr<const Snapshot> snapshot() const {
      std::lock_guard lk(snap_mu);
      return snap;
    }
    void publish(std::shared_ptr<const Snapshot> s) {
      std::lock_guard lk(snap_mu);
      snap = std::move(s);
    }
  };

  ServiceOptions opts;
  httplib::Server server;

  std::mutex registry_mu;
  std::map<std::string, std::shared_ptr<Entry>> sessions;
  std::size_t next_id = 1;

  std::mutex data_mu;
  std::map<std::string, PatchPairDataset> datasets;  // by resolved path
  std::map<std::pair<std::string, std::uint64_t>, std::shared_ptr<const ExperimentData>> prepared;

  explicit Impl(ServiceOptions o) : opts(std::move(o)) { routes(); }

  ~Impl() {
    server.stop();
    std::lock_guard lk(registry_mu);
    for (auto& [_, e] : sessions) {
      if (e->worker.joinable()) e->worker.join();
    }
  }

  std::shared_ptr<Entry> find(const std::string& id) {
    std::lock_guard lk(registry_mu);
    auto it = sessions.find(id);
    return it == sessions.end() ? nullptr : it->second;
  }

  static std::shared_ptr<const Snapshot> make_snapshot(const ActiveSession& s, bool training,
                                                       std::string last_error) {
    auto snap = std::make_shared<Snapshot>();
    snap->phase = training ? SessionPhase::training : s.phase();
    snap->t = s.iteration();
    snap->budget = s.config().budget;
    snap->display_size = s.config().display_size();
    snap->strategy = std::string(strategy_name(s.config().strategy));
    if (s.phase() != SessionPhase::done) snap->display = s.current_display();
    snap->metrics = metrics_json(s.metrics());
    snap->last_error = std::move(last_error);
    return snap;
  }

  /// Throws IoError when the dataset cannot be found.
  std::shared_ptr<const ExperimentData> resolve_data(const std::optional<std::string>& ref,
                                                     std::uint64_t seed) {
    std::filesystem::path dir;
    if (!ref || ref->empty() || *ref == "default") {
      if (!opts.dataset_dir) throw IoError("no default dataset configured; pass dataset_ref");
      dir = *opts.dataset_dir;
    } else {
      dir = *ref;
      if (dir.is_relative() && opts.dataset_dir && !std::filesystem::exists(dir)) {
        dir = opts.dataset_dir->parent_path() / dir;
      }
    }
    if (!std::filesystem::exists(dir / "manifest.json")) {
      throw IoError("dataset '" + dir.string() + "' not found");
    }
    const std::string key = std::filesystem::weakly_canonical(dir).string();
    std::lock_guard lk(data_mu);
    auto pit = prepared.find({key, seed});
    if (pit != prepared.end()) return pit->second;
    auto dit = datasets.find(key);
    if (dit == datasets.end()) dit = datasets.emplace(key, load_dataset(dir)).first;
    auto data = prepare_experiment(dit->second, seed);
    prepared.emplace(std::pair{key, seed}, data);
    return data;
  }

  void persist(const Entry& e) {
    if (opts.sessions_dir) save_session(*e.session, *opts.sessions_dir / e.id);
  }

  void create(const httplib::Request& req, httplib::Response& res) {
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::exception& ex) {
      return send_error(res, 400, "invalid_json", ex.what());
    }
    if (!body.is_object()) return send_error(res, 400, "invalid_config", "body must be an object");
    std::optional<std::string> ref;
    if (body.contains("dataset_ref")) {
      if (!body["dataset_ref"].is_string()) {
        return send_error(res, 400, "invalid_config", "dataset_ref must be a string");
      }
      ref = body["dataset_ref"].get<std::string>();
      body.erase("dataset_ref");
    }
    SessionConfig cfg;
    try {
      cfg = detail::session_config_from_json(body, opts.defaults);
      validate(cfg);
    } catch (const std::exception& ex) {
      return send_error(res, 400, "invalid_config", ex.what());
    }
    std::shared_ptr<const ExperimentData> data;
    try {
      data = resolve_data(ref, cfg.seed);
    } catch (const IoError& ex) {
      return send_error(res, 404, "dataset_not_found", ex.what());
    }
    auto entry = std::make_shared<Entry>();
    try {
      entry->session = std::make_unique<ActiveSession>(data, cfg);
    } catch (const InvalidArgument& ex) {
      return send_error(res, 400, "invalid_config", ex.what());
    }
    entry->publish(make_snapshot(*entry->session, false, ""));
    {
      std::lock_guard lk(registry_mu);
      char buf[32];
      std::snprintf(buf, sizeof buf, "s%06zu", next_id++);
      entry->id = buf;
      sessions.emplace(entry->id, entry);
    }
    try {
      persist(*entry);
    } catch (const std::exception& ex) {
      return send_error(res, 500, "persist_failed", ex.what());
    }
    res.set_header("Location", "/v1/sessions/" + entry->id);
    send_json(res, 201, json{{"session_id", entry->id}}.dump());
  }

  void get_session(const std::string& id, httplib::Response& res) {
    auto e = find(id);
    if (!e) return send_error(res, 404, "not_found", "unknown session '" + id + "'");
    auto s = e->snapshot();
    json doc = {{"session_id", id},
                {"state", std::string(phase_name(s->phase))},
                {"t", s->t},
                {"budget", s->budget},
                {"display_size", s->display_size},
                {"strategy", s->strategy}};
    doc["last_error"] = s->last_error.empty() ? json(nullptr) : json(s->last_error);
    send_json(res, 200, doc.dump());
  }

  void get_display(const std::string& id, httplib::Response& res) {
    auto e = find(id);
    if (!e) return send_error(res, 404, "not_found", "unknown session '" + id + "'");
    auto s = e->snapshot();
    if (s->phase != SessionPhase::awaiting_labels || !s->display) {
      return send_error(res, 409, "not_awaiting_labels",
                        "session is " + std::string(phase_name(s->phase)));
    }
    const ExperimentData& data = e->session->data();  // immutable, shared
    const PatchShape& shape = data.dataset.shape();
    json items = json::array();
    for (std::size_t pid : s->display->ids) {
      const PatchPair& p = data.dataset.pair(pid);
      items.push_back({{"id", pid},
                       {"patch_p", base64_f32le(p.p)},
                       {"patch_q", base64_f32le(p.q)},
                       {"shape", {shape.h, shape.w, shape.c}}});
    }
    send_json(res, 200, json{{"iteration", s->t}, {"items", items}}.dump());
  }

  void get_metrics(const std::string& id, httplib::Response& res) {
    auto e = find(id);
    if (!e) return send_error(res, 404, "not_found", "unknown session '" + id + "'");
    auto s = e->snapshot();
    // metrics is embedded verbatim so it stays byte-identical to the CLI output.
    send_json(res, 200,
              "{\"metrics\":" + s->metrics + ",\"state\":\"" + std::string(phase_name(s->phase)) +
                  "\",\"t\":" + std::to_string(s->t) + "}");
  }

  void post_labels(const std::string& id, const httplib::Request& req, httplib::Response& res) {
    auto e = find(id);
    if (!e) return send_error(res, 404, "not_found", "unknown session '" + id + "'");
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::exception& ex) {
      return send_error(res, 422, "invalid_json", ex.what());
    }
    std::unique_lock lk(e->mutate);
    if (e->busy || e->session->phase() != SessionPhase::awaiting_labels) {
      return send_error(res, 409, "not_awaiting_labels", "session is not awaiting labels");
    }
    const std::size_t t = e->session->iteration();
    if (!body.is_object() || !body.contains("iteration") || !body["iteration"].is_number_integer()) {
      return send_error(res, 422, "invalid_body", "body needs an integer 'iteration'");
    }
    if (body["iteration"].get<long long>() != static_cast<long long>(t)) {
      return send_error(res, 409, "stale_iteration",
                        "iteration " + body["iteration"].dump() + " does not match current t=" +
                            std::to_string(t));
    }
    const Display& display = e->session->current_display();
    std::map<std::size_t, int> given;
    try {
      for (const json& item : body.at("labels")) {
        const auto pid = item.at("id").get<std::size_t>();
        const auto y = item.at("label").get<int>();
        if (y != 0 && y != 1) throw InvalidArgument("label must be 0 or 1");
        if (!given.emplace(pid, y).second) {
          throw InvalidArgument("duplicate id " + std::to_string(pid));
        }
      }
    } catch (const std::exception& ex) {
      return send_error(res, 422, "invalid_labels", ex.what());
    }
    std::vector<int> labels;
    for (std::size_t pid : display.ids) {
      auto it = given.find(pid);
      if (it == given.end()) {
        return send_error(res, 422, "incomplete_labels", "missing label for id " + std::to_string(pid));
      }
      labels.push_back(it->second);
    }
    if (given.size() != display.ids.size()) {
      return send_error(res, 422, "extra_labels", "labels given for ids outside the display");
    }
    if (e->worker.joinable()) e->worker.join();
    e->busy = true;
    e->publish(make_snapshot(*e->session, true, ""));
    e->worker = std::thread([this, e, labels = std::move(labels)] {
      std::string err;
      try {
        e->session->submit_labels(labels);
        persist(*e);
      } catch (const std::exception& ex) {
        err = ex.what();
      }
      std::lock_guard lk2(e->mutate);
      e->publish(make_snapshot(*e->session, false, err));
      e->busy = false;
      e->idle_cv.notify_all();
    });
    send_json(res, 202, json{{"session_id", id}, {"state", "TRAINING"}, {"t", t}}.dump());
  }

  void routes() {
    server.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
    server.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
      res.status = 204;
    });
    server.Post("/v1/sessions",
                [this](const httplib::Request& req, httplib::Response& res) { create(req, res); });
    server.Get(R"(/v1/sessions/([A-Za-z0-9_-]+))",
               [this](const httplib::Request& req, httplib::Response& res) {
                 get_session(req.matches[1], res);
               });
    server.Get(R"(/v1/sessions/([A-Za-z0-9_-]+)/display)",
               [this](const httplib::Request& req, httplib::Response& res) {
                 get_display(req.matches[1], res);
               });
    server.Get(R"(/v1/sessions/([A-Za-z0-9_-]+)/metrics)",
               [this](const httplib::Request& req, httplib::Response& res) {
                 get_metrics(req.matches[1], res);
               });
    server.Post(R"(/v1/sessions/([A-Za-z0-9_-]+)/labels)",
                [this](const httplib::Request& req, httplib::Response& res) {
                  post_labels(req.matches[1], req, res);
                });
    server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (res.body.empty()) {
        const std::string code = res.status == 404 ? "not_found" : "http_error";
        send_error(res, res.status, code, "no such endpoint");
      }
    });
    server.set_exception_handler(
        [](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
          try {
            std::rethrow_exception(ep);
          } catch (const std::exception& ex) {
            send_error(res, 500, "internal", ex.what());
          } catch (...) {
            send_error(res, 500, "internal", "unknown error");
          }
        });
  }
};

Service::Service(ServiceOptions opts) : impl_(std::make_unique<Impl>(std::move(opts))) {}
Service::~Service() = default;

void Service::listen(const std::string& host, int port) {
  if (!impl_->server.listen(host, port)) {
    throw IoError("cannot listen on " + host + ":" + std::to_string(port));
  }
}

int Service::bind_any_port(const std::string& host) {
  const int port = impl_->server.bind_to_any_port(host);
  if (port < 0) throw IoError("cannot bind " + host);
  return port;
}

void Service::listen_after_bind() { impl_->server.listen_after_bind(); }
void Service::stop() { impl_->server.stop(); }
bool Service::is_running() const { return impl_->server.is_running(); }

bool Service::wait_idle(const std::string& session_id, std::chrono::milliseconds timeout) {
  auto e = impl_->find(session_id);
  if (!e) return true;
  std::unique_lock lk(e->mutate);
  return e->idle_cv.wait_for(lk, timeout, [&] { return !e->busy; });
}

int resolve_port(int flag) {
  if (const char* env = std::getenv("EXEMPLAR_AL_PORT")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0 && v < 65536) return static_cast<int>(v);
  }
  return flag;
}

}  // namespace exal

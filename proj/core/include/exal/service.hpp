#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "exal/activeloop.hpp"

namespace exal {

struct ServiceOptions {
  /// Dataset served when a create request names no dataset_ref (or names this one).
  std::optional<std::filesystem::path> dataset_dir;
  /// Sessions are persisted under <sessions_dir>/<id>/ after every transition.
  std::optional<std::filesystem::path> sessions_dir;
  /// Base for fields the create request leaves out (training schedule etc.).
  SessionConfig defaults;
};

/// HTTP/JSON session API under /v1. Each session advances through a deferred
/// oracle: labels posted by a client are consumed on a background worker.
class Service {
 public:
  explicit Service(ServiceOptions opts);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds and serves until stop(); blocking.
  void listen(const std::string& host, int port);
  /// Binds to a free port and returns it; pair with listen_after_bind().
  int bind_any_port(const std::string& host);
  void listen_after_bind();
  void stop();
  bool is_running() const;

  /// Blocks until no label post is being processed for `session_id`
  /// (or the timeout expires). Returns false on timeout.
  bool wait_idle(const std::string& session_id, std::chrono::milliseconds timeout);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// `flag` unless EXEMPLAR_AL_PORT is set to a valid port.
int resolve_port(int flag);

}  // namespace exal

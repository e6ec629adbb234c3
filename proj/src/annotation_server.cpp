#include <httplib.h>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "cxgame/annotation.hpp"

namespace cxgame {

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

json progress_json(const Progress& p) {
  json j{{"answered", p.answered}, {"total", p.total}, {"complete", p.complete()}};
  if (!p.complete()) {
    j["index"] = p.answered + 1;
    j["label"] = p.label();
  }
  return j;
}

int status_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ValidationError: return 400;
    case ErrorKind::UnknownItem: return 404;
    default: return 500;
  }
}

}  // namespace

struct AnnotationServer::Impl {
  std::filesystem::path root;
  httplib::Server server;
  std::mutex stores_mutex;
  std::map<std::string, std::unique_ptr<AnnotationStore>> stores;

  AnnotationStore& store(const std::string& set_id) {
    if (!is_safe_token(set_id)) throw Error(ErrorKind::UnknownItem, "unknown set");
    std::lock_guard lock(stores_mutex);
    auto& slot = stores[set_id];
    if (!slot) {
      const auto dir = root / set_id;
      if (!std::filesystem::exists(dir / "items.json")) {
        stores.erase(set_id);
        throw Error(ErrorKind::UnknownItem, "unknown set: " + set_id);
      }
      slot = std::make_unique<AnnotationStore>(dir);
    }
    return *slot;
  }

  AnnotationStore& rater_store(const httplib::Request& req, std::string& rater) {
    auto& s = store(req.path_params.at("set"));
    rater = req.path_params.at("rater");
    if (!is_safe_token(rater) || !s.has_rater(rater)) {
      throw Error(ErrorKind::UnknownItem, "unknown rater");
    }
    return s;
  }

  template <typename Fn>
  httplib::Server::Handler guarded(Fn fn) {
    return [fn](const httplib::Request& req, httplib::Response& res) {
      try {
        fn(req, res);
      } catch (const Error& e) {
        send_json(res, status_for(e.kind()),
                  json{{"error", std::string(to_string(e.kind()))}, {"message", e.what()}});
      } catch (const std::exception& e) {
        spdlog::error("annotation request {} failed: {}", req.path, e.what());
        send_json(res, 500, json{{"error", "internal"}});
      }
    };
  }

  void routes() {
    server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                {"Access-Control-Allow-Headers", "Content-Type"},
                                {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                                {"Cache-Control", "no-store"}});
    server.Options(".*", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    server.Get("/api/sets/:set/meta", guarded([this](const auto& req, auto& res) {
      auto& s = store(req.path_params.at("set"));
      send_json(res, 200, json{{"set_id", s.set_id()}, {"N", s.size()}});
    }));

    server.Get("/api/sets/:set/raters/:rater/next", guarded([this](const auto& req, auto& res) {
      std::string rater;
      auto& s = rater_store(req, rater);
      try {
        const auto next = s.next_item(rater);
        send_json(res, 200,
                  json{{"complete", false},
                       {"item", next.item},
                       {"progress", progress_json(next.progress)}});
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::SessionComplete) throw;
        send_json(res, 200, json{{"complete", true}, {"progress", progress_json(s.progress(rater))}});
      }
    }));

    server.Post("/api/sets/:set/raters/:rater/responses",
                guarded([this](const auto& req, auto& res) {
                  std::string rater;
                  auto& s = rater_store(req, rater);
                  json body;
                  try {
                    body = json::parse(req.body);
                  } catch (const json::exception&) {
                    throw Error(ErrorKind::ValidationError, "body is not JSON");
                  }
                  auto response = parse_response(body);
                  response.submitted_at.clear();
                  const auto public_id = response.public_id;
                  const auto p = s.submit(rater, std::move(response));
                  send_json(res, 200,
                            json{{"ok", true}, {"public_id", public_id},
                                 {"progress", progress_json(p)}});
                }));

    server.Get("/api/sets/:set/raters/:rater/progress",
               guarded([this](const auto& req, auto& res) {
                 std::string rater;
                 auto& s = rater_store(req, rater);
                 send_json(res, 200, progress_json(s.progress(rater)));
               }));
  }
};

AnnotationServer::AnnotationServer(std::filesystem::path annotation_root)
    : impl_(std::make_unique<Impl>()) {
  impl_->root = std::move(annotation_root);
  impl_->routes();
}

AnnotationServer::~AnnotationServer() { stop(); }

int AnnotationServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = impl_->server.bind_to_any_port(host);
    if (bound < 0) throw Error(ErrorKind::IoError, "could not bind " + host);
    return bound;
  }
  if (!impl_->server.bind_to_port(host, port)) {
    throw Error(ErrorKind::IoError, fmt::format("could not bind {}:{}", host, port));
  }
  return port;
}

void AnnotationServer::listen() { impl_->server.listen_after_bind(); }

void AnnotationServer::stop() {
  if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

}  // namespace cxgame

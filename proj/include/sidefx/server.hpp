#pragma once

// HTTP binding of the annotation workspace.

#include <filesystem>
#include <string>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "sidefx/error.hpp"
#include "sidefx/workspace.hpp"

namespace sidefx {

class AnnotationServer {
 public:
  explicit AnnotationServer(Workspace& ws) : ws_(ws) {
    // httplib's default adds SO_REUSEPORT, which lets a second server share
    // a busy port silently. A busy port must fail instead.
    svr_.set_socket_options([](socket_t sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof yes);
    });
    routes();
  }

  /// Bind or throw; port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port) {
    if (port == 0) {
      port_ = svr_.bind_to_any_port(host);
      if (port_ < 0) throw IoError("cannot bind " + host);
    } else {
      if (!svr_.bind_to_port(host, port)) throw IoError("cannot bind " + host + ":" + std::to_string(port));
      port_ = port;
    }
    return port_;
  }

  void listen() { svr_.listen_after_bind(); }
  void stop() { svr_.stop(); }
  bool running() const { return svr_.is_running(); }
  int port() const { return port_; }

 private:
  static void send_json(httplib::Response& res, const nlohmann::json& body, int status = 200) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void send_error(httplib::Response& res, int status, const std::string& code, const std::string& msg) {
    send_json(res, {{"error", {{"code", code}, {"message", msg}}}}, status);
  }

  static nlohmann::json body_of(const httplib::Request& req) {
    if (req.body.empty()) return nlohmann::json::object();
    try {
      return nlohmann::json::parse(req.body);
    } catch (const nlohmann::json::exception& ex) {
      throw ApiError(400, "bad_json", ex.what());
    }
  }

  static int round_of(const httplib::Request& req) {
    try {
      return std::stoi(req.matches[1].str());
    } catch (const std::exception&) {
      throw ApiError(400, "bad_round", "round must be an integer");
    }
  }

  template <typename F>
  httplib::Server::Handler guarded(F fn) {
    return [fn](const httplib::Request& req, httplib::Response& res) {
      try {
        fn(req, res);
      } catch (const ApiError& e) {
        send_error(res, e.status, e.code, e.what());
      } catch (const IoError& e) {
        send_error(res, 500, "io_error", e.what());
      } catch (const DataError& e) {
        send_error(res, 400, "bad_request", e.what());
      } catch (const std::exception& e) {
        send_error(res, 500, "internal", e.what());
      }
    };
  }

  void routes() {
    svr_.Get("/api/health", guarded([this](const auto&, auto& res) { send_json(res, ws_.health()); }));
    svr_.Get("/api/rounds", guarded([this](const auto&, auto& res) { send_json(res, ws_.rounds()); }));
    svr_.Post("/api/rounds",
              guarded([this](const auto& req, auto& res) { send_json(res, ws_.create_round(body_of(req)), 201); }));
    svr_.Get(R"(/api/rounds/(\d+)/tasks)",
             guarded([this](const auto& req, auto& res) { send_json(res, ws_.tasks(round_of(req))); }));
    svr_.Post(R"(/api/rounds/(\d+)/annotations)", guarded([this](const auto& req, auto& res) {
                send_json(res, ws_.submit(round_of(req), req.get_header_value("X-Annotator-Id"), body_of(req)));
              }));
    svr_.Get(R"(/api/rounds/(\d+)/annotations)", guarded([this](const auto& req, auto& res) {
               send_json(res, ws_.annotations(round_of(req), req.get_param_value("annotator")));
             }));
    svr_.Post(R"(/api/rounds/(\d+)/reconcile)",
              guarded([this](const auto& req, auto& res) { send_json(res, ws_.reconcile(round_of(req))); }));
    svr_.Get(R"(/api/rounds/(\d+)/agreement)",
             guarded([this](const auto& req, auto& res) { send_json(res, ws_.agreement(round_of(req))); }));
    svr_.Get("/api/lexicon/candidates", guarded([this](const auto& req, auto& res) {
               if (!req.has_param("round")) throw ApiError(400, "bad_request", "round parameter is required");
               int round = 0;
               try {
                 round = std::stoi(req.get_param_value("round"));
               } catch (const std::exception&) {
                 throw ApiError(400, "bad_round", "round must be an integer");
               }
               send_json(res, ws_.candidates(round));
             }));
    svr_.Post("/api/lexicon/approve",
              guarded([this](const auto& req, auto& res) { send_json(res, ws_.approve(body_of(req)), 201); }));
    svr_.Get("/api/eval/history", guarded([this](const auto&, auto& res) { send_json(res, ws_.eval_history()); }));
    svr_.Post("/api/eval/run", guarded([this](const auto&, auto& res) { send_json(res, ws_.run_eval()); }));

    if (const auto ui = ws_.dir() / "ui"; std::filesystem::is_directory(ui)) svr_.set_mount_point("/", ui.string());
  }

  Workspace& ws_;
  httplib::Server svr_;
  int port_ = -1;
};

}  // namespace sidefx

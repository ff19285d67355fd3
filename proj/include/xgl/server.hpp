#pragma once

// HTTP/JSON front of the session manager.
//
//   POST /sessions                          create
//   GET  /sessions/{id}/explanation         current rules
//   POST /sessions/{id}/feedback            label a batch (200, or 202 + poll handle)
//   GET  /sessions/{id}/operations/{op}     poll a pending feedback
//   GET  /sessions/{id}/metrics             per-iteration series
//   GET  /sessions/{id}/instances[?rule=k]  unlabeled instances grouped by rule
//   GET  /sessions/{id}/audit               append-only audit log

#include <httplib.h>

#include "xgl/session.hpp"

namespace xgl {

namespace detail {

inline void send(httplib::Response& res, const Reply& r) {
  res.status = r.status;
  res.set_content(r.body.dump(), "application/json");
}

inline std::optional<nlohmann::json> parse_body(const httplib::Request& req, httplib::Response& res) {
  try {
    return nlohmann::json::parse(req.body);
  } catch (const nlohmann::json::parse_error& e) {
    send(res, error_reply(422, "parse_error", std::string("body is not valid JSON: ") + e.what()));
    return std::nullopt;
  }
}

}  // namespace detail

inline void install_routes(httplib::Server& server, SessionManager& m) {
  using detail::send;
  server.Post("/sessions", [&m](const httplib::Request& req, httplib::Response& res) {
    if (const auto body = detail::parse_body(req, res)) send(res, m.create(*body));
  });
  server.Get("/sessions/:id/explanation", [&m](const httplib::Request& req, httplib::Response& res) {
    send(res, m.explanation(req.path_params.at("id")));
  });
  server.Get("/sessions/:id/metrics", [&m](const httplib::Request& req, httplib::Response& res) {
    send(res, m.metrics(req.path_params.at("id")));
  });
  server.Get("/sessions/:id/audit", [&m](const httplib::Request& req, httplib::Response& res) {
    send(res, m.audit(req.path_params.at("id")));
  });
  server.Get("/sessions/:id/instances", [&m](const httplib::Request& req, httplib::Response& res) {
    std::optional<int> rule;
    if (req.has_param("rule")) {
      const std::string s = req.get_param_value("rule");
      int v = 0;
      const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc() || p != s.data() + s.size() || v < 0) {
        send(res, error_reply(422, "invalid_argument", "'rule' must be a non-negative integer"));
        return;
      }
      rule = v;
    }
    send(res, m.instances(req.path_params.at("id"), rule));
  });
  server.Post("/sessions/:id/feedback", [&m](const httplib::Request& req, httplib::Response& res) {
    if (const auto body = detail::parse_body(req, res)) send(res, m.feedback(req.path_params.at("id"), *body));
  });
  server.Get("/sessions/:id/operations/:op", [&m](const httplib::Request& req, httplib::Response& res) {
    send(res, m.operation(req.path_params.at("id"), req.path_params.at("op")));
  });
  server.Get("/health", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"v":1,"status":"ok"})", "application/json");
  });
  server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    Reply r = error_reply(500, "internal", "unexpected error");
    try {
      std::rethrow_exception(ep);
    } catch (const Error& e) {
      r = error_reply(e);
    } catch (const std::exception& e) {
      r = error_reply(500, "internal", e.what());
    }
    send(res, r);
  });
}

}  // namespace xgl

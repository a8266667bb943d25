#pragma once

#include <memory>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "keystroke/capture_service.hpp"
#include "keystroke/keycodes.hpp"

namespace keystroke::capture {

inline int http_status(Errc code) {
  switch (code) {
    case Errc::Unauthorized: return 401;
    case Errc::UnknownUser:
    case Errc::UnknownSession: return 404;
    case Errc::AlreadyRegistered: return 409;
    case Errc::InvalidInput:
    case Errc::FormatError: return 400;
    case Errc::TextMismatch:
    case Errc::MalformedStream:
    case Errc::UnmatchedEvent:
    case Errc::SessionComplete:
    case Errc::NoImpostorTargets: return 422;
    default: return 500;
  }
}

inline nlohmann::ordered_json to_json(const Progress& p) {
  nlohmann::ordered_json j;
  j["step"] = std::string(to_string(p.step));
  j["remaining"] = p.remaining;
  j["total"] = p.total;
  j["completed"] = p.completed;
  return j;
}

inline nlohmann::ordered_json to_json(const SessionView& s) {
  nlohmann::ordered_json j;
  j["session_id"] = s.id;
  j["user"] = s.user;
  j["session_no"] = s.session_no;
  j["progress"] = to_json(s.progress);
  if (s.targets) {
    j["targets"] = {{"login", s.targets->login}, {"password", s.targets->password}};
  } else {
    j["targets"] = nullptr;
  }
  j["impostor_targets"] = s.impostor_targets;
  return j;
}

/// The key filter as data, for clients that mirror it.
inline nlohmann::ordered_json keycode_table() {
  nlohmann::ordered_json j;
  j["printable_threshold"] = keycodes::kPrintableThreshold;
  j["tracked_below_threshold"] = keycodes::kTrackedBelowThreshold;
  j["ignored"] = keycodes::kIgnoredOsKeys;
  j["ignored_ranges"] = {{keycodes::kFirstFunctionKey, keycodes::kLastFunctionKey}};
  return j;
}

/// HTTP front of CaptureService. Request and response bodies are JSON;
/// errors carry {"error": <reason code>, "message": ...}.
///
///   POST /register                 {"user","login","password"} -> {"user","token"}
///   POST /session/start            {"user"}                    -> session
///   POST /session/{id}/sample      {"login_text","password_text",
///                                   "login_events","password_events","env"}
///   GET  /session/{id}/progress
///   GET  /export                   operator only, canonical dataset file
///   GET  /keycodes                 key filter table
///
/// Session endpoints take "Authorization: Bearer <token>"; /export takes
/// the operator token.
class CaptureServer {
 public:
  CaptureServer(CaptureService& service, std::string operator_token)
      : service_(service), operator_token_(std::move(operator_token)) {
    routes();
  }

  int bind_to_any_port(const std::string& host) { return server_.bind_to_any_port(host); }
  bool bind(const std::string& host, int port) { return server_.bind_to_port(host, port); }
  bool listen_after_bind() { return server_.listen_after_bind(); }
  void stop() { server_.stop(); }
  void wait_until_ready() { server_.wait_until_ready(); }
  bool is_running() const { return server_.is_running(); }

 private:
  static std::string bearer(const httplib::Request& req) {
    const auto h = req.get_header_value("Authorization");
    constexpr std::string_view prefix = "Bearer ";
    if (h.compare(0, prefix.size(), prefix) != 0) return {};
    return h.substr(prefix.size());
  }

  static void send_json(httplib::Response& res, int status, const nlohmann::ordered_json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void send_error(httplib::Response& res, Errc code, const std::string& message) {
    nlohmann::ordered_json body;
    body["error"] = std::string(to_string(code));
    body["message"] = message;
    send_json(res, http_status(code), body);
  }

  template <typename Handler>
  static auto guarded(Handler handler) {
    return [handler](const httplib::Request& req, httplib::Response& res) {
      try {
        handler(req, res);
      } catch (const Error& e) {
        send_error(res, e.code(), e.what());
      } catch (const nlohmann::json::exception& e) {
        send_error(res, Errc::InvalidInput, e.what());
      }
    };
  }

  static EventStream events(const nlohmann::json& j, Field field) {
    return detail::events_from_json(j, field);
  }

  void routes() {
    server_.Post("/register", guarded([this](const httplib::Request& req, httplib::Response& res) {
                   const auto body = nlohmann::json::parse(req.body);
                   const auto user = body.at("user").get<std::string>();
                   const auto token = service_.register_user(
                       user, body.at("login").get<std::string>(),
                       body.at("password").get<std::string>());
                   send_json(res, 201, {{"user", user}, {"token", token}});
                 }));

    server_.Post("/session/start",
                 guarded([this](const httplib::Request& req, httplib::Response& res) {
                   const auto body = nlohmann::json::parse(req.body);
                   const auto view =
                       service_.start_session(body.at("user").get<std::string>(), bearer(req));
                   send_json(res, 200, to_json(view));
                 }));

    server_.Post(R"(/session/([^/]+)/sample)",
                 guarded([this](const httplib::Request& req, httplib::Response& res) {
                   const auto body = nlohmann::json::parse(req.body);
                   SampleSubmission s;
                   s.login_text = body.at("login_text").get<std::string>();
                   s.password_text = body.at("password_text").get<std::string>();
                   try {
                     s.login_events = events(body.at("login_events"), Field::Login);
                     s.password_events = events(body.at("password_events"), Field::Password);
                   } catch (const Error& e) {
                     throw Error(Errc::MalformedStream, e.what());
                   }
                   if (body.contains("env"))
                     s.env = body.at("env").get<std::map<std::string, std::string>>();
                   const auto out = service_.submit_sample(req.matches[1], bearer(req), s);
                   nlohmann::ordered_json j;
                   j["status"] = out.accepted ? "accepted" : "rejected";
                   if (out.reason) {
                     j["reason"] = std::string(to_string(*out.reason));
                     j["message"] = out.message;
                   }
                   j["remaining"] = out.session.progress.remaining;
                   j["advanced"] = out.advanced;
                   j["session"] = to_json(out.session);
                   send_json(res, out.accepted ? 200 : http_status(*out.reason), j);
                 }));

    server_.Get(R"(/session/([^/]+)/progress)",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
                  send_json(res, 200, to_json(service_.progress(req.matches[1], bearer(req))));
                }));

    server_.Get("/keycodes", [](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, keycode_table());
    });

    server_.Get("/export", guarded([this](const httplib::Request& req, httplib::Response& res) {
                  if (operator_token_.empty() || !same_token(bearer(req), operator_token_))
                    throw Error(Errc::Unauthorized, "export requires the operator token");
                  res.status = 200;
                  res.set_content(service_.export_canonical(), "application/x-ndjson");
                }));
  }

  CaptureService& service_;
  std::string operator_token_;
  httplib::Server server_;
};

}  // namespace keystroke::capture

#include "cardiac/platform/http.hpp"

#include <httplib.h>

#include <charconv>

namespace cardiac::platform {

namespace {

void send_json(httplib::Response& res, int status, const Json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, const Error& e) {
  Json body = {{"error", std::string(to_string(e.code()))}, {"message", e.what()}};
  if (const auto* pe = dynamic_cast<const PipelineError*>(&e)) {
    body["stage"] = pe->stage();
    body["cause"] = std::string(to_string(pe->cause()));
  }
  const auto* pe = dynamic_cast<const PipelineError*>(&e);
  send_json(res, pe && pe->cause() == ErrorCode::UntrainedModel ? 503 : http_status(e.code()), body);
}

std::string bearer(const httplib::Request& req) {
  const auto h = req.get_header_value("Authorization");
  constexpr std::string_view prefix = "Bearer ";
  if (h.size() <= prefix.size() || h.compare(0, prefix.size(), prefix) != 0) return {};
  return h.substr(prefix.size());
}

Json body_json(const httplib::Request& req) {
  if (req.body.empty()) return Json::object();
  auto j = Json::parse(req.body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw Error(ErrorCode::InvalidArgument, "request body must be a JSON object");
  return j;
}

std::string required_string(const Json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_string()) throw Error(ErrorCode::InvalidArgument, std::string("missing string field '") + key + "'");
  return j[key].get<std::string>();
}

using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

Handler guarded(Handler h) {
  return [h = std::move(h)](const httplib::Request& req, httplib::Response& res) {
    try {
      h(req, res);
    } catch (const Error& e) {
      send_error(res, e);
    } catch (const Json::exception& e) {
      send_json(res, 400, {{"error", "InvalidArgument"}, {"message", e.what()}});
    } catch (const std::exception& e) {
      send_json(res, 500, {{"error", "InternalError"}, {"message", e.what()}});
    }
  };
}

}  // namespace

HttpApi::HttpApi(Service& service) : service_(service), server_(std::make_unique<httplib::Server>()) {
  auto& s = *server_;
  auto& svc = service_;
  s.set_payload_max_length(svc.config().upload_cap + (1u << 20));
  const std::string id = "([A-Za-z0-9_-]+)";

  auto authed = [&svc](std::function<void(const User&, const httplib::Request&, httplib::Response&)> f) {
    return guarded([&svc, f = std::move(f)](const httplib::Request& req, httplib::Response& res) {
      const User u = svc.authenticate(bearer(req));
      f(u, req, res);
    });
  };

  s.Post("/api/auth/register", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
           const auto j = body_json(req);
           send_json(res, 201,
                     svc.register_user(required_string(j, "name"), required_string(j, "password"),
                                       required_string(j, "role"), j.value("display_name", ""), j.value("profile_link", "")));
         }));
  s.Post("/api/auth/login", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
           const auto j = body_json(req);
           send_json(res, 200, svc.login(required_string(j, "name"), required_string(j, "password")));
         }));
  s.Post("/api/auth/logout", authed([&svc](const User&, const httplib::Request& req, httplib::Response& res) {
           svc.logout(bearer(req));
           send_json(res, 200, {{"ok", true}});
         }));
  s.Get("/api/doctors", guarded([&svc](const httplib::Request&, httplib::Response& res) { send_json(res, 200, svc.doctors()); }));
  s.Get("/api/me", authed([&svc](const User& u, const httplib::Request&, httplib::Response& res) {
          send_json(res, 200, svc.me(u));
        }));
  s.Put("/api/me", authed([&svc](const User& u, const httplib::Request& req, httplib::Response& res) {
          send_json(res, 200, svc.update_me(u, body_json(req)));
        }));

  s.Post("/api/studies", authed([&svc](const User& u, const httplib::Request& req, httplib::Response& res) {
           if (!u.is_patient()) throw Error(ErrorCode::Forbidden, "only patients upload studies");
           if (!req.is_multipart_form_data() || !req.has_file("volume"))
             throw Error(ErrorCode::InvalidArgument, "expected multipart form data with a 'volume' part");
           const auto& vol = req.get_file_value("volume").content;
           Json meta = Json::object();
           if (req.has_file("meta")) {
             meta = Json::parse(req.get_file_value("meta").content, nullptr, false);
             if (meta.is_discarded()) throw Error(ErrorCode::InvalidArgument, "meta part is not JSON");
           }
           const std::span<const std::uint8_t> bytes(reinterpret_cast<const std::uint8_t*>(vol.data()), vol.size());
           send_json(res, 201, svc.upload_study(u, bytes, meta));
         }));
  s.Get("/api/studies", authed([&svc](const User& u, const httplib::Request&, httplib::Response& res) {
          send_json(res, 200, svc.list_studies(u));
        }));
  s.Get("/api/studies/" + id, authed([&svc](const User& u, const httplib::Request& req, httplib::Response& res) {
          send_json(res, 200, svc.get_study(u, req.matches[1]));
        }));
  s.Post("/api/studies/" + id + "/analyze", authed([&svc](const User& u, const httplib::Request& req, httplib::Response& res) {
           send_json(res, 200, svc.analyze_study(u, req.matches[1]));
         }));
  s.Get("/api/studies/" + id + "/report", authed([&svc](const User& u, const httplib::Request& req, httplib::Response& res) {
          send_json(res, 200, svc.get_report(u, req.matches[1]));
        }));
  s.Get("/api/studies/" + id + "/overlay", authed([&svc](const User& u, const httplib::Request& req, httplib::Response& res) {
          const auto phase = req.has_param("phase") ? req.get_param_value("phase") : std::string("ed");
          int slice = 0;
          if (req.has_param("slice")) {
            const auto v = req.get_param_value("slice");
            const auto r = std::from_chars(v.data(), v.data() + v.size(), slice);
            if (r.ec != std::errc() || r.ptr != v.data() + v.size()) throw Error(ErrorCode::InvalidArgument, "slice must be an integer");
          }
          const auto png = svc.overlay_png(u, req.matches[1], phase, slice);
          res.status = 200;
          res.set_content(std::string(png.begin(), png.end()), "image/png");
        }));
  s.Post("/api/studies/" + id + "/share", authed([&svc](const User& u, const httplib::Request& req, httplib::Response& res) {
           send_json(res, 200, svc.share_study(u, req.matches[1], required_string(body_json(req), "doctor_id")));
         }));
  s.Delete("/api/studies/" + id + "/share/" + id,
           authed([&svc](const User& u, const httplib::Request& req, httplib::Response& res) {
             send_json(res, 200, svc.revoke_share(u, req.matches[1], req.matches[2]));
           }));
  s.Delete("/api/studies/" + id, authed([&svc](const User& u, const httplib::Request& req, httplib::Response& res) {
             svc.delete_study(u, req.matches[1]);
             send_json(res, 200, {{"deleted", std::string(req.matches[1])}});
           }));
  s.Post("/api/reports/" + id + "/comments", authed([&svc](const User& u, const httplib::Request& req, httplib::Response& res) {
           const auto j = body_json(req);
           send_json(res, 201, svc.add_comment(u, req.matches[1], required_string(j, "body"), j.value("kind", "recommendation")));
         }));
  s.Put("/api/comments/" + id, authed([&svc](const User& u, const httplib::Request& req, httplib::Response& res) {
          send_json(res, 200, svc.edit_comment(u, req.matches[1], required_string(body_json(req), "body")));
        }));
  s.Get("/api/notifications", authed([&svc](const User& u, const httplib::Request&, httplib::Response& res) {
          send_json(res, 200, svc.notifications(u));
        }));

  s.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return;
    const char* name = res.status == 404 ? "NotFound" : res.status == 413 ? "PayloadTooLarge" : "HttpError";
    send_json(res, res.status, {{"error", name}});
  });
}

HttpApi::~HttpApi() = default;

void HttpApi::listen(const std::string& host, int port, const std::function<void(int)>& on_bound) {
  int bound = port;
  if (port == 0) {
    bound = server_->bind_to_any_port(host);
    if (bound < 0) throw Error(ErrorCode::StorageFailure, "cannot bind a port on " + host);
  } else if (!server_->bind_to_port(host, port)) {
    throw Error(ErrorCode::StorageFailure, "cannot bind " + host + ":" + std::to_string(port));
  }
  if (on_bound) on_bound(bound);
  server_->listen_after_bind();
}

void HttpApi::stop() { server_->stop(); }

}  // namespace cardiac::platform

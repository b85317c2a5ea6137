#include <doctest.h>

#include <httplib.h>
#include <sodium.h>

#include <filesystem>
#include <fstream>
#include <future>
#include <thread>

#include "cardiac/error.hpp"
#include "cardiac/nifti.hpp"
#include "cardiac/platform/http.hpp"
#include "cardiac/platform/service.hpp"
#include "cardiac/platform/store.hpp"
#include "fixtures.hpp"

using namespace cardiac;
using namespace cardiac::platform;

namespace {

std::filesystem::path fresh_dir(const std::string& name) {
  const auto d = std::filesystem::temp_directory_path() / ("cardiac-test-" + name);
  std::filesystem::remove_all(d);
  return d;
}

ServiceConfig fast_config(const std::filesystem::path& dir) {
  ServiceConfig c;
  c.data_dir = dir;
  c.pw_opslimit = crypto_pwhash_OPSLIMIT_MIN;
  c.pw_memlimit = crypto_pwhash_MEMLIMIT_MIN;
  return c;
}

std::vector<std::uint8_t> phantom_nifti(std::uint64_t seed) {
  const auto c = phantom::generate_phantom(phantom::sample_spec(clf::Diagnosis::MINF, seed, phantom::desk_spec()));
  return nifti::gzip(nifti::write(c.image, nifti::DataType::Float32));
}

template <typename F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::InvalidArgument;
}

}  // namespace

TEST_CASE("document store basics") {
  const auto dir = fresh_dir("store");
  DocumentStore s(dir);
  CHECK_FALSE(s.get("users", "a").has_value());
  s.put("users", "a", {{"x", 1}});
  CHECK(s.get("users", "a")->at("x") == 1);
  CHECK_FALSE(s.create("users", "a", {{"x", 2}}));
  CHECK(s.create("users", "b", {{"x", 3}}));
  auto ids = s.list("users");
  std::sort(ids.begin(), ids.end());
  CHECK(ids == std::vector<std::string>{"a", "b"});
  CHECK(s.remove("users", "a"));
  CHECK_FALSE(s.remove("users", "a"));
  const std::vector<std::uint8_t> blob{1, 2, 3};
  s.put_blob("volumes", "v", blob);
  CHECK(*s.get_blob("volumes", "v") == blob);
  CHECK(s.remove_blob("volumes", "v"));
  CHECK_FALSE(DocumentStore::valid_id("../etc"));
  CHECK_FALSE(DocumentStore::valid_id(""));
  CHECK(DocumentStore::valid_id("abc_DEF-09"));
  CHECK_THROWS_AS(s.put("users", "../x", {}), Error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("stale temporary files are swept and never listed") {
  const auto dir = fresh_dir("sweep");
  {
    DocumentStore s(dir);
    s.put("users", "kept", {{"ok", true}});
  }
  std::ofstream(dir / "users" / ".tmp-kept-123") << "{partial";
  DocumentStore s(dir);
  CHECK(s.list("users") == std::vector<std::string>{"kept"});
  CHECK_FALSE(std::filesystem::exists(dir / "users" / ".tmp-kept-123"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("HTTP status mapping") {
  CHECK(http_status(ErrorCode::Unauthorized) == 401);
  CHECK(http_status(ErrorCode::ExpiredSession) == 401);
  CHECK(http_status(ErrorCode::Forbidden) == 403);
  CHECK(http_status(ErrorCode::NoSuchStudy) == 404);
  CHECK(http_status(ErrorCode::PayloadTooLarge) == 413);
  CHECK(http_status(ErrorCode::BadMagic) == 400);
  CHECK(http_status(ErrorCode::PipelineFailed) == 422);
}

TEST_CASE("service workflow") {
  const auto dir = fresh_dir("service");
  Service svc(fast_config(dir), fixture::untrained_seg_model(), fixture::small_bundle());

  const auto pat = svc.register_user("pat", "password-1", "patient");
  const auto doc = svc.register_user("doc", "password-2", "doctor", "Dr. Doc", "https://example.org/doc");
  CHECK(code_of([&] { svc.register_user("pat", "password-3", "patient"); }) == ErrorCode::NameTaken);
  CHECK(code_of([&] { svc.register_user("x", "short", "patient"); }) == ErrorCode::InvalidArgument);
  CHECK(code_of([&] { svc.login("pat", "wrong-password"); }) == ErrorCode::BadCredentials);
  CHECK(code_of([&] { svc.authenticate("nope"); }) == ErrorCode::Unauthorized);

  const auto p = svc.authenticate(svc.login("pat", "password-1")["token"]);
  const auto d = svc.authenticate(svc.login("doc", "password-2")["token"]);
  CHECK(p.is_patient());
  CHECK(d.is_doctor());
  CHECK(svc.doctors().size() == 1);
  CHECK(svc.doctors()[0]["profile_link"] == "https://example.org/doc");

  const auto vol = phantom_nifti(3);
  CHECK(code_of([&] { svc.upload_study(d, vol, {}); }) == ErrorCode::Forbidden);
  CHECK(code_of([&] { svc.upload_study(p, std::vector<std::uint8_t>(400, 7), {}); }) != ErrorCode::Forbidden);
  const auto study = svc.upload_study(p, vol, {{"ed_frame", 0}, {"es_frame", 4}});
  const std::string id = study["id"];
  CHECK(study["status"] == "uploaded");
  CHECK(svc.list_studies(p).size() == 1);
  CHECK(svc.list_studies(d).empty());
  CHECK(code_of([&] { svc.get_report(p, id); }) == ErrorCode::NoSuchReport);

  const auto report = svc.analyze_study(p, id);
  double sum = 0;
  for (auto& [k, v] : report["probabilities"].items()) sum += v.get<double>();
  CHECK(std::abs(sum - 1.0) <= 1e-6);
  CHECK(report["features"].size() == 20);
  CHECK(svc.get_study(p, id)["status"] == "analyzed");
  CHECK(svc.analyze_study(p, id)["created"] == report["created"]);

  CHECK(code_of([&] { svc.get_report(d, id); }) == ErrorCode::Forbidden);
  CHECK(code_of([&] { svc.add_comment(d, id, "hello", "recommendation"); }) == ErrorCode::Forbidden);
  CHECK(code_of([&] { svc.share_study(p, id, "ffff"); }) == ErrorCode::NoSuchDoctor);
  svc.share_study(p, id, d.id);
  CHECK(svc.get_report(d, id)["final_label"] == report["final_label"]);
  CHECK(svc.list_studies(d).size() == 1);

  CHECK(code_of([&] { svc.add_comment(p, id, "self", "recommendation"); }) == ErrorCode::Forbidden);
  CHECK(code_of([&] { svc.add_comment(d, id, "x", "shout"); }) == ErrorCode::InvalidArgument);
  const auto c1 = svc.add_comment(d, id, "Please repeat the scan.", "recommendation");
  const auto c2 = svc.add_comment(d, id, "Segmentation misses the apex.", "model_feedback");
  CHECK(c2["seq"].get<std::int64_t>() > c1["seq"].get<std::int64_t>());
  svc.edit_comment(d, c1["id"], "Please repeat the scan next week.");
  CHECK(code_of([&] { svc.edit_comment(p, c1["id"], "mine now"); }) == ErrorCode::Forbidden);

  const auto notes = svc.notifications(p);
  REQUIRE(notes.size() == 2);
  CHECK(notes[0]["body"] == "Please repeat the scan next week.");
  CHECK(svc.notifications(p).empty());
  CHECK(svc.get_report(p, id)["comments"].size() == 2);

  const auto png = svc.overlay_png(p, id, "es", 2);
  CHECK(png.size() > 8);
  CHECK(code_of([&] { svc.overlay_png(p, id, "mid", 2); }) == ErrorCode::InvalidArgument);

  svc.revoke_share(p, id, d.id);
  CHECK(code_of([&] { svc.get_report(d, id); }) == ErrorCode::Forbidden);
  CHECK(code_of([&] { svc.delete_study(d, id); }) == ErrorCode::Forbidden);
  svc.delete_study(p, id);
  CHECK(code_of([&] { svc.get_study(p, id); }) == ErrorCode::NoSuchStudy);

  svc.logout(svc.login("pat", "password-1")["token"]);
  std::filesystem::remove_all(dir);
}

TEST_CASE("records survive a service restart") {
  const auto dir = fresh_dir("restart");
  std::string token, id;
  {
    Service svc(fast_config(dir), fixture::untrained_seg_model(), fixture::small_bundle());
    svc.register_user("pat", "password-1", "patient");
    token = svc.login("pat", "password-1")["token"];
    id = svc.upload_study(svc.authenticate(token), phantom_nifti(4), {})["id"];
  }
  Service again(fast_config(dir), nullptr, nullptr);
  const auto u = again.authenticate(token);
  CHECK(again.get_study(u, id)["status"] == "uploaded");
  try {
    again.analyze_study(u, id);
    FAIL("expected a PipelineError");
  } catch (const PipelineError& e) {
    CHECK(e.stage() == "models");
    CHECK(e.cause() == ErrorCode::UntrainedModel);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("failed analyses are recorded with their stage") {
  const auto dir = fresh_dir("failed");
  Service svc(fast_config(dir), fixture::untrained_seg_model(), fixture::small_bundle());
  svc.register_user("pat", "password-1", "patient");
  const auto u = svc.authenticate(svc.login("pat", "password-1")["token"]);
  Volume4D blank({64, 64, 8, 8}, VoxelSpacing{3.125, 3.125, 10, 0});
  const std::string id = svc.upload_study(u, nifti::write(blank, nifti::DataType::UInt8), {})["id"];
  try {
    svc.analyze_study(u, id);
    FAIL("expected a PipelineError");
  } catch (const PipelineError& e) {
    CHECK(e.stage() == "roi");
  }
  const auto s = svc.get_study(u, id);
  CHECK(s["status"] == "failed");
  CHECK(s["error"]["stage"] == "roi");
  std::filesystem::remove_all(dir);
}

TEST_CASE("upload cap") {
  const auto dir = fresh_dir("cap");
  auto cfg = fast_config(dir);
  cfg.upload_cap = 1000;
  Service svc(cfg, nullptr, nullptr);
  svc.register_user("pat", "password-1", "patient");
  const auto u = svc.authenticate(svc.login("pat", "password-1")["token"]);
  CHECK(code_of([&] { svc.upload_study(u, phantom_nifti(1), {}); }) == ErrorCode::PayloadTooLarge);
  std::filesystem::remove_all(dir);
}

TEST_CASE("HTTP API enforces auth and returns JSON errors") {
  const auto dir = fresh_dir("http");
  Service svc(fast_config(dir), nullptr, nullptr);
  HttpApi api(svc);
  std::promise<int> bound;
  std::thread server([&] { api.listen("127.0.0.1", 0, [&](int port) { bound.set_value(port); }); });
  const int port = bound.get_future().get();
  httplib::Client cli("127.0.0.1", port);

  for (const auto& [method, path] : std::vector<std::pair<std::string, std::string>>{
           {"GET", "/api/studies"}, {"GET", "/api/studies/abc"}, {"POST", "/api/studies/abc/analyze"},
           {"GET", "/api/studies/abc/report"}, {"POST", "/api/studies/abc/share"}, {"DELETE", "/api/studies/abc"},
           {"POST", "/api/reports/abc/comments"}, {"GET", "/api/notifications"}, {"GET", "/api/me"},
           {"POST", "/api/studies"}, {"GET", "/api/studies/abc/overlay"}, {"PUT", "/api/comments/abc"},
           {"DELETE", "/api/studies/abc/share/def"}, {"POST", "/api/auth/logout"}}) {
    CAPTURE(path);
    httplib::Result r = method == "GET"    ? cli.Get(path)
                        : method == "POST" ? cli.Post(path, "{}", "application/json")
                        : method == "PUT"  ? cli.Put(path, "{}", "application/json")
                                           : cli.Delete(path);
    REQUIRE(r);
    CHECK(r->status == 401);
    CHECK(Json::parse(r->body)["error"] == "Unauthorized");
  }

  auto reg = cli.Post("/api/auth/register", R"({"name":"p","password":"password-1","role":"patient"})", "application/json");
  REQUIRE(reg);
  CHECK(reg->status == 201);
  auto dup = cli.Post("/api/auth/register", R"({"name":"p","password":"password-1","role":"patient"})", "application/json");
  CHECK(dup->status == 409);
  auto bad = cli.Post("/api/auth/login", "{not json", "application/json");
  CHECK(bad->status == 400);
  auto login = cli.Post("/api/auth/login", R"({"name":"p","password":"password-1"})", "application/json");
  REQUIRE(login->status == 200);
  const std::string token = Json::parse(login->body)["token"];
  httplib::Headers auth{{"Authorization", "Bearer " + token}};
  CHECK(cli.Get("/api/me", auth)->status == 200);
  CHECK(cli.Get("/api/doctors")->status == 200);
  CHECK(cli.Get("/api/studies/none", auth)->status == 404);
  CHECK(cli.Get("/api/me", httplib::Headers{{"Authorization", "Bearer junk"}})->status == 401);

  api.stop();
  server.join();
  std::filesystem::remove_all(dir);
}

#include "cardiac/platform/service.hpp"

#include <sodium.h>

#include <algorithm>
#include <atomic>
#include <cstdlib>

#include "cardiac/nifti.hpp"
#include "cardiac/overlay.hpp"

namespace cardiac::platform {

namespace {

std::int64_t now_seconds() {
  return std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch()).count();
}

std::string to_hex(const unsigned char* p, std::size_t n) {
  std::string out(n * 2 + 1, '\0');
  sodium_bin2hex(out.data(), out.size(), p, n);
  out.pop_back();
  return out;
}

std::string random_hex(std::size_t bytes) {
  std::vector<unsigned char> buf(bytes);
  randombytes_buf(buf.data(), buf.size());
  return to_hex(buf.data(), buf.size());
}

std::string digest_hex(std::string_view s, std::size_t out_len) {
  std::vector<unsigned char> h(out_len);
  crypto_generichash(h.data(), h.size(), reinterpret_cast<const unsigned char*>(s.data()), s.size(), nullptr, 0);
  return to_hex(h.data(), h.size());
}

std::string session_key(std::string_view token) { return digest_hex(token, 32); }
std::string name_key(std::string_view name) { return digest_hex(name, 16); }

std::optional<std::string> env(const char* name) {
  const char* v = std::getenv(name);
  if (!v || !*v) return std::nullopt;
  return std::string(v);
}

bool contains(const Json& arr, const std::string& v) {
  return std::any_of(arr.begin(), arr.end(), [&](const Json& x) { return x.get<std::string>() == v; });
}

Json study_summary(const Json& s) {
  Json out = s;
  out["has_report"] = s.value("status", "") == "analyzed";
  return out;
}

}  // namespace

ServiceConfig ServiceConfig::from_env() {
  ServiceConfig c;
  if (auto v = env("CARDIAC_DATA_DIR")) c.data_dir = *v;
  if (auto v = env("CARDIAC_PORT")) c.port = std::stoi(*v);
  if (auto v = env("CARDIAC_SEG_MODEL")) c.seg_model = *v;
  if (auto v = env("CARDIAC_CLF_MODEL")) c.clf_model = *v;
  if (auto v = env("CARDIAC_UPLOAD_CAP")) c.upload_cap = std::stoull(*v);
  if (auto v = env("CARDIAC_PW_OPSLIMIT")) c.pw_opslimit = std::stoull(*v);
  if (auto v = env("CARDIAC_PW_MEMLIMIT")) c.pw_memlimit = std::stoull(*v);
  return c;
}

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::Unauthorized:
    case ErrorCode::ExpiredSession:
    case ErrorCode::BadCredentials:
      return 401;
    case ErrorCode::Forbidden:
      return 403;
    case ErrorCode::NoSuchStudy:
    case ErrorCode::NoSuchReport:
    case ErrorCode::NoSuchDoctor:
      return 404;
    case ErrorCode::NameTaken:
      return 409;
    case ErrorCode::PayloadTooLarge:
      return 413;
    case ErrorCode::PipelineFailed:
      return 422;
    case ErrorCode::StorageFailure:
      return 500;
    case ErrorCode::UntrainedModel:
      return 503;
    default:
      return 400;
  }
}

Service::Service(ServiceConfig cfg, std::shared_ptr<SegmentationModel> seg, std::shared_ptr<const clf::ModelBundle> bundle)
    : cfg_(std::move(cfg)), store_(cfg_.data_dir), seg_(std::move(seg)), bundle_(std::move(bundle)) {
  if (sodium_init() < 0) throw Error(ErrorCode::StorageFailure, "libsodium initialisation failed");
  if (cfg_.pw_opslimit == 0) cfg_.pw_opslimit = crypto_pwhash_OPSLIMIT_INTERACTIVE;
  if (cfg_.pw_memlimit == 0) cfg_.pw_memlimit = crypto_pwhash_MEMLIMIT_INTERACTIVE;
  if (seg_ && bundle_) analyzer_ = std::make_unique<Analyzer>(seg_, bundle_);
}

Service::Service(ServiceConfig cfg)
    : Service(cfg,
              cfg.seg_model ? std::make_shared<SegmentationModel>(load_segmentation_model(*cfg.seg_model)) : nullptr,
              cfg.clf_model ? std::make_shared<const clf::ModelBundle>(clf::load_bundle_file(*cfg.clf_model)) : nullptr) {}

Json Service::register_user(const std::string& name, const std::string& password, const std::string& role,
                            const std::string& display_name, const std::string& profile_link) {
  if (name.empty() || name.size() > 64) throw Error(ErrorCode::InvalidArgument, "name must have 1 to 64 characters");
  if (password.size() < 8 || password.size() > 1024) throw Error(ErrorCode::InvalidArgument, "password needs at least 8 characters");
  if (role != "patient" && role != "doctor") throw Error(ErrorCode::InvalidArgument, "role must be patient or doctor");

  char hash[crypto_pwhash_STRBYTES];
  if (crypto_pwhash_str(hash, password.data(), password.size(), cfg_.pw_opslimit, cfg_.pw_memlimit) != 0)
    throw Error(ErrorCode::StorageFailure, "password hashing ran out of memory");

  const std::string id = random_hex(8);
  Json user = {{"id", id},
               {"name", name},
               {"role", role},
               {"display_name", display_name.empty() ? name : display_name},
               {"profile_link", role == "doctor" ? profile_link : ""},
               {"password_hash", hash},
               {"created", now_seconds()}};
  std::lock_guard g(mu_);
  if (!store_.create("names", name_key(name), {{"user_id", id}})) throw Error(ErrorCode::NameTaken, "name already registered");
  store_.put("users", id, user);
  return user_public(user);
}

Json Service::login(const std::string& name, const std::string& password) {
  std::optional<Json> user;
  {
    std::lock_guard g(mu_);
    if (const auto idx = store_.get("names", name_key(name))) user = store_.get("users", (*idx)["user_id"].get<std::string>());
  }
  if (!user) throw Error(ErrorCode::BadCredentials, "unknown name or wrong password");
  const auto hash = (*user)["password_hash"].get<std::string>();
  if (crypto_pwhash_str_verify(hash.c_str(), password.data(), password.size()) != 0)
    throw Error(ErrorCode::BadCredentials, "unknown name or wrong password");

  const std::string token = random_hex(16);
  const auto expires = now_seconds() + cfg_.session_ttl.count();
  {
    std::lock_guard g(mu_);
    store_.put("sessions", session_key(token), {{"user_id", (*user)["id"]}, {"expires", expires}});
  }
  return {{"token", token}, {"expires", expires}, {"user", user_public(*user)}};
}

User Service::authenticate(const std::string& token) {
  if (token.empty() || token.size() > 256) throw Error(ErrorCode::Unauthorized, "missing session token");
  const auto key = session_key(token);
  std::lock_guard g(mu_);
  const auto s = store_.get("sessions", key);
  if (!s) throw Error(ErrorCode::Unauthorized, "unknown session token");
  if ((*s)["expires"].get<std::int64_t>() <= now_seconds()) {
    store_.remove("sessions", key);
    throw Error(ErrorCode::ExpiredSession, "session expired");
  }
  const auto rec = store_.get("users", (*s)["user_id"].get<std::string>());
  if (!rec) throw Error(ErrorCode::Unauthorized, "account no longer exists");
  return User{(*rec)["id"], (*rec)["name"], (*rec)["role"], rec->value("display_name", ""), rec->value("profile_link", "")};
}

void Service::logout(const std::string& token) {
  std::lock_guard g(mu_);
  store_.remove("sessions", session_key(token));
}

Json Service::user_public(const Json& rec) const {
  return {{"id", rec["id"]},
          {"name", rec["name"]},
          {"role", rec["role"]},
          {"display_name", rec.value("display_name", "")},
          {"profile_link", rec.value("profile_link", "")}};
}

Json Service::me(const User& u) const {
  std::lock_guard g(mu_);
  const auto rec = store_.get("users", u.id);
  if (!rec) throw Error(ErrorCode::Unauthorized, "account no longer exists");
  return user_public(*rec);
}

Json Service::update_me(const User& u, const Json& patch) {
  std::lock_guard g(mu_);
  auto rec = store_.get("users", u.id);
  if (!rec) throw Error(ErrorCode::Unauthorized, "account no longer exists");
  if (patch.contains("display_name")) {
    const auto v = patch["display_name"].get<std::string>();
    if (v.empty() || v.size() > 128) throw Error(ErrorCode::InvalidArgument, "display_name must have 1 to 128 characters");
    (*rec)["display_name"] = v;
  }
  if (patch.contains("profile_link")) {
    if (!u.is_doctor()) throw Error(ErrorCode::Forbidden, "only doctors have a profile link");
    (*rec)["profile_link"] = patch["profile_link"].get<std::string>();
  }
  store_.put("users", u.id, *rec);
  return user_public(*rec);
}

Json Service::doctors() const {
  std::lock_guard g(mu_);
  Json out = Json::array();
  for (const auto& id : store_.list("users")) {
    const auto rec = store_.get("users", id);
    if (rec && (*rec)["role"] == "doctor") out.push_back(user_public(*rec));
  }
  return out;
}

Json Service::load_study(const std::string& id) const {
  auto s = store_.get("studies", id);
  if (!s) throw Error(ErrorCode::NoSuchStudy, "no study " + id);
  return *s;
}

void Service::require_view(const User& u, const Json& study) const {
  if (study["owner"] == u.id) return;
  if (u.is_doctor() && contains(study["shared_with"], u.id)) return;
  throw Error(ErrorCode::Forbidden, "no access to this study");
}

std::shared_ptr<std::mutex> Service::study_lock(const std::string& id) {
  std::lock_guard g(locks_mu_);
  for (auto it = study_locks_.begin(); it != study_locks_.end();)
    it = it->second.expired() ? study_locks_.erase(it) : std::next(it);
  auto& w = study_locks_[id];
  auto m = w.lock();
  if (!m) {
    m = std::make_shared<std::mutex>();
    w = m;
  }
  return m;
}

Json Service::upload_study(const User& u, std::span<const std::uint8_t> volume_bytes, const Json& meta) {
  if (!u.is_patient()) throw Error(ErrorCode::Forbidden, "only patients upload studies");
  if (volume_bytes.size() > cfg_.upload_cap) throw Error(ErrorCode::PayloadTooLarge, "volume exceeds the upload cap");
  const Volume4D v = nifti::read(volume_bytes);

  StudyMeta m;
  if (!meta.is_null() && !meta.is_object()) throw Error(ErrorCode::InvalidArgument, "meta must be a JSON object");
  if (meta.is_object()) {
    m.ed_frame = meta.value("ed_frame", 0);
    m.es_frame = meta.value("es_frame", -1);
    m.patient_id = meta.value("patient_id", std::string());
  }
  if (m.ed_frame < 0 || m.ed_frame >= v.nt()) throw Error(ErrorCode::IndexOutOfRange, "ed_frame outside the series");
  if (m.es_frame < -1 || m.es_frame >= v.nt()) throw Error(ErrorCode::IndexOutOfRange, "es_frame outside the series");
  if (v.nt() < 2) throw Error(ErrorCode::NeedsMultipleFrames, "a cine study needs at least two frames");

  const std::string id = random_hex(8);
  Json study = {{"id", id},
                {"owner", u.id},
                {"status", "uploaded"},
                {"meta", {{"ed_frame", m.ed_frame}, {"es_frame", m.es_frame}, {"patient_id", m.patient_id}}},
                {"dims", {v.nx(), v.ny(), v.nz(), v.nt()}},
                {"spacing", {v.spacing().dx, v.spacing().dy, v.spacing().dz}},
                {"shared_with", Json::array()},
                {"created", now_seconds()}};
  std::lock_guard g(mu_);
  store_.put_blob("volumes", id, volume_bytes);
  store_.put("studies", id, study);  // commit point
  return study_summary(study);
}

Json Service::list_studies(const User& u) const {
  std::lock_guard g(mu_);
  Json out = Json::array();
  for (const auto& id : store_.list("studies")) {
    const auto s = store_.get("studies", id);
    if (!s) continue;
    if ((*s)["owner"] == u.id || (u.is_doctor() && contains((*s)["shared_with"], u.id))) out.push_back(study_summary(*s));
  }
  std::stable_sort(out.begin(), out.end(), [](const Json& a, const Json& b) { return a["created"] < b["created"]; });
  return out;
}

Json Service::get_study(const User& u, const std::string& id) const {
  std::lock_guard g(mu_);
  const auto s = load_study(id);
  require_view(u, s);
  return study_summary(s);
}

Json Service::analyze_study(const User& u, const std::string& id) {
  const auto lock = study_lock(id);
  std::lock_guard study_guard(*lock);

  Json study;
  std::vector<std::uint8_t> bytes;
  {
    std::lock_guard g(mu_);
    study = load_study(id);
    if (study["owner"] != u.id) throw Error(ErrorCode::Forbidden, "only the owner analyzes a study");
    if (study["status"] == "analyzed") {
      const auto r = store_.get("reports", id);
      if (r) return *r;
    }
    if (study["status"] == "failed") {
      const auto& e = study["error"];
      throw PipelineError(e.value("stage", "unknown"), ErrorCode::PipelineFailed, e.value("message", ""));
    }
    auto blob = store_.get_blob("volumes", id);
    if (!blob) throw Error(ErrorCode::StorageFailure, "volume bytes missing for study " + id);
    bytes = std::move(*blob);
  }
  if (!analyzer_) throw PipelineError("models", ErrorCode::UntrainedModel, "the service has no trained models loaded");

  StudyMeta meta;
  meta.ed_frame = study["meta"].value("ed_frame", 0);
  meta.es_frame = study["meta"].value("es_frame", -1);
  meta.patient_id = study["meta"].value("patient_id", "");

  AnalysisResult r;
  try {
    const Volume4D v = nifti::read(bytes);
    std::lock_guard a(analyzer_mu_);
    r = analyzer_->analyze(v, meta);
  } catch (const PipelineError& e) {
    std::lock_guard g(mu_);
    if (auto s = store_.get("studies", id)) {
      (*s)["status"] = "failed";
      (*s)["error"] = {{"stage", e.stage()}, {"message", e.what()}, {"cause", std::string(to_string(e.cause()))}};
      store_.put("studies", id, *s);
    }
    throw;
  }

  Json probs = Json::object();
  for (int c = 0; c < clf::kNumDiagnoses; ++c)
    probs[std::string(clf::to_string(static_cast<clf::Diagnosis>(c)))] = r.diagnosis.probabilities[c];
  Json feats = Json::object();
  for (int i = 0; i < features::kNumFeatures; ++i) feats[std::string(features::feature_names()[i])] = r.features.values[i];
  Json timings = Json::object();
  for (const auto& t : r.timings) timings[t.stage] = t.ms;
  Json overlays = Json::object();
  for (const char* phase : {"ed", "es"}) {
    Json urls = Json::array();
    for (int z = 0; z < r.segmentation.nz(); ++z)
      urls.push_back("/api/studies/" + id + "/overlay?phase=" + phase + "&slice=" + std::to_string(z));
    overlays[phase] = urls;
  }
  Json report = {{"id", id},
                 {"study_id", id},
                 {"final_label", std::string(clf::to_string(r.diagnosis.final_label))},
                 {"initial_label", std::string(clf::to_string(r.diagnosis.initial_label))},
                 {"probabilities", probs},
                 {"expert_used", r.diagnosis.expert_used},
                 {"expert_decision", r.diagnosis.expert_decision},
                 {"features", feats},
                 {"feature_vector", r.features.values},
                 {"warnings", r.features.warnings},
                 {"explanation", r.explanation},
                 {"ed_frame", r.ed_frame},
                 {"es_frame", r.es_frame},
                 {"lv_center", {r.plan.cx, r.plan.cy}},
                 {"slices", r.segmentation.nz()},
                 {"overlays", overlays},
                 {"wall_time_ms", r.wall_ms},
                 {"stage_ms", timings},
                 {"created", now_seconds()}};

  std::lock_guard g(mu_);
  auto s = store_.get("studies", id);
  if (!s) throw Error(ErrorCode::NoSuchStudy, "study deleted during analysis");
  store_.put_blob("segmentations", id, nifti::gzip(nifti::write(r.segmentation)));
  store_.put("reports", id, report);
  (*s)["status"] = "analyzed";
  store_.put("studies", id, *s);  // commit point
  return report;
}

Json Service::comments_for(const std::string& report_id) const {
  Json out = Json::array();
  for (const auto& cid : store_.list("comments")) {
    const auto c = store_.get("comments", cid);
    if (c && (*c)["report_id"] == report_id) out.push_back(*c);
  }
  std::stable_sort(out.begin(), out.end(), [](const Json& a, const Json& b) {
    return std::tie(a["created"], a["seq"]) < std::tie(b["created"], b["seq"]);
  });
  return out;
}

Json Service::get_report(const User& u, const std::string& id) const {
  std::lock_guard g(mu_);
  const auto s = load_study(id);
  require_view(u, s);
  auto r = store_.get("reports", id);
  if (!r || s["status"] != "analyzed") throw Error(ErrorCode::NoSuchReport, "study " + id + " has no report");
  (*r)["comments"] = comments_for(id);
  return *r;
}

Json Service::share_study(const User& u, const std::string& id, const std::string& doctor_id) {
  std::lock_guard g(mu_);
  auto s = load_study(id);
  if (s["owner"] != u.id) throw Error(ErrorCode::Forbidden, "only the owner shares a study");
  const auto d = store_.get("users", doctor_id);
  if (!d || (*d)["role"] != "doctor") throw Error(ErrorCode::NoSuchDoctor, "no doctor " + doctor_id);
  if (!contains(s["shared_with"], doctor_id)) s["shared_with"].push_back(doctor_id);
  store_.put("studies", id, s);
  return study_summary(s);
}

Json Service::revoke_share(const User& u, const std::string& id, const std::string& doctor_id) {
  std::lock_guard g(mu_);
  auto s = load_study(id);
  if (s["owner"] != u.id) throw Error(ErrorCode::Forbidden, "only the owner revokes access");
  const auto d = store_.get("users", doctor_id);
  if (!d || (*d)["role"] != "doctor") throw Error(ErrorCode::NoSuchDoctor, "no doctor " + doctor_id);
  Json kept = Json::array();
  for (const auto& x : s["shared_with"])
    if (x != doctor_id) kept.push_back(x);
  s["shared_with"] = kept;
  store_.put("studies", id, s);
  return study_summary(s);
}

void Service::delete_study(const User& u, const std::string& id) {
  const auto lock = study_lock(id);
  std::lock_guard study_guard(*lock);
  std::lock_guard g(mu_);
  const auto s = load_study(id);
  if (s["owner"] != u.id) throw Error(ErrorCode::Forbidden, "only the owner deletes a study");
  store_.remove("studies", id);  // commit point
  store_.remove("reports", id);
  for (const auto& cid : store_.list("comments")) {
    const auto c = store_.get("comments", cid);
    if (c && (*c)["report_id"] == id) store_.remove("comments", cid);
  }
  store_.remove_blob("segmentations", id);
  store_.remove_blob("volumes", id);
}

Json Service::add_comment(const User& u, const std::string& report_id, const std::string& body, const std::string& kind) {
  if (!u.is_doctor()) throw Error(ErrorCode::Forbidden, "only doctors comment on reports");
  if (kind != "recommendation" && kind != "model_feedback")
    throw Error(ErrorCode::InvalidArgument, "kind must be recommendation or model_feedback");
  if (body.empty() || body.size() > 20000) throw Error(ErrorCode::InvalidArgument, "comment body must have 1 to 20000 characters");
  std::lock_guard g(mu_);
  const auto s = store_.get("studies", report_id);
  if (!s || (*s)["status"] != "analyzed" || !store_.get("reports", report_id))
    throw Error(ErrorCode::NoSuchReport, "no report " + report_id);
  if (!contains((*s)["shared_with"], u.id)) throw Error(ErrorCode::Forbidden, "report not shared with this doctor");
  // Strictly increasing microsecond stamp, ordering comments created in the same second.
  static std::atomic<std::int64_t> last{0};
  const auto us = std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::system_clock::now().time_since_epoch()).count();
  auto prev = last.load();
  std::int64_t seq;
  do {
    seq = std::max(prev + 1, static_cast<std::int64_t>(us));
  } while (!last.compare_exchange_weak(prev, seq));
  const std::string id = random_hex(8);
  Json c = {{"id", id},
            {"report_id", report_id},
            {"author_id", u.id},
            {"author_name", u.display_name},
            {"body", body},
            {"kind", kind},
            {"created", now_seconds()},
            {"seq", seq},
            {"edited", nullptr},
            {"unread", true}};
  store_.put("comments", id, c);
  return c;
}

Json Service::edit_comment(const User& u, const std::string& comment_id, const std::string& body) {
  if (body.empty() || body.size() > 20000) throw Error(ErrorCode::InvalidArgument, "comment body must have 1 to 20000 characters");
  std::lock_guard g(mu_);
  auto c = store_.get("comments", comment_id);
  if (!c) throw Error(ErrorCode::NoSuchReport, "no comment " + comment_id);
  if ((*c)["author_id"] != u.id) throw Error(ErrorCode::Forbidden, "only the author edits a comment");
  const auto s = store_.get("studies", (*c)["report_id"].get<std::string>());
  if (!s || !contains((*s)["shared_with"], u.id)) throw Error(ErrorCode::Forbidden, "report no longer shared");
  (*c)["body"] = body;
  (*c)["edited"] = now_seconds();
  (*c)["unread"] = true;
  store_.put("comments", comment_id, *c);
  return *c;
}

Json Service::notifications(const User& u) {
  std::lock_guard g(mu_);
  Json out = Json::array();
  if (!u.is_patient()) return out;
  for (const auto& cid : store_.list("comments")) {
    auto c = store_.get("comments", cid);
    if (!c || !(*c)["unread"].get<bool>()) continue;
    const auto s = store_.get("studies", (*c)["report_id"].get<std::string>());
    if (!s || (*s)["owner"] != u.id) continue;
    (*c)["unread"] = false;
    store_.put("comments", cid, *c);
    out.push_back(*c);
  }
  std::stable_sort(out.begin(), out.end(), [](const Json& a, const Json& b) {
    return std::tie(a["created"], a["seq"]) < std::tie(b["created"], b["seq"]);
  });
  return out;
}

std::vector<std::uint8_t> Service::overlay_png(const User& u, const std::string& id, const std::string& phase, int z) const {
  if (phase != "ed" && phase != "es") throw Error(ErrorCode::InvalidArgument, "phase must be ed or es");
  std::optional<std::vector<std::uint8_t>> seg_bytes, vol_bytes;
  Json report;
  {
    std::lock_guard g(mu_);
    const auto s = load_study(id);
    require_view(u, s);
    const auto r = store_.get("reports", id);
    if (!r || s["status"] != "analyzed") throw Error(ErrorCode::NoSuchReport, "study " + id + " has no report");
    report = *r;
    seg_bytes = store_.get_blob("segmentations", id);
    vol_bytes = store_.get_blob("volumes", id);
  }
  if (!seg_bytes || !vol_bytes) throw Error(ErrorCode::StorageFailure, "segmentation or volume bytes missing");
  const auto seg = nifti::read_labels(*seg_bytes);
  const auto img = nifti::read(*vol_bytes);
  if (z < 0 || z >= seg.nz()) throw Error(ErrorCode::IndexOutOfRange, "slice index");
  const int t = phase == "ed" ? 0 : 1;
  const int frame = report[phase == "ed" ? "ed_frame" : "es_frame"].get<int>();
  return overlay::render_png(img, frame, seg.extract_frame(t), z);
}

}  // namespace cardiac::platform

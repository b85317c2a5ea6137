#pragma once

// Patient/doctor workflow over the document store: accounts, sessions, studies,
// analysis, sharing, comments and notifications.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "cardiac/pipeline.hpp"
#include "cardiac/platform/store.hpp"

namespace cardiac::platform {

struct ServiceConfig {
  std::filesystem::path data_dir = "cardiac-data";
  int port = 8080;
  std::size_t upload_cap = 256u << 20;
  std::chrono::seconds session_ttl{24 * 3600};
  std::optional<std::filesystem::path> seg_model;
  std::optional<std::filesystem::path> clf_model;
  // Password hashing cost (argon2id); the defaults are libsodium's interactive limits.
  unsigned long long pw_opslimit = 0;
  std::size_t pw_memlimit = 0;

  /// CARDIAC_DATA_DIR, CARDIAC_PORT, CARDIAC_SEG_MODEL, CARDIAC_CLF_MODEL, CARDIAC_UPLOAD_CAP,
  /// CARDIAC_PW_OPSLIMIT, CARDIAC_PW_MEMLIMIT.
  static ServiceConfig from_env();
};

struct User {
  std::string id;
  std::string name;
  std::string role;  // "patient" | "doctor"
  std::string display_name;
  std::string profile_link;

  bool is_doctor() const { return role == "doctor"; }
  bool is_patient() const { return role == "patient"; }
};

class Service {
 public:
  Service(ServiceConfig cfg, std::shared_ptr<SegmentationModel> seg, std::shared_ptr<const clf::ModelBundle> bundle);
  /// Loads models from the configured paths when present.
  explicit Service(ServiceConfig cfg);

  const ServiceConfig& config() const { return cfg_; }

  Json register_user(const std::string& name, const std::string& password, const std::string& role,
                     const std::string& display_name = {}, const std::string& profile_link = {});
  Json login(const std::string& name, const std::string& password);
  User authenticate(const std::string& token);
  void logout(const std::string& token);

  Json me(const User& u) const;
  Json update_me(const User& u, const Json& patch);
  Json doctors() const;

  Json upload_study(const User& u, std::span<const std::uint8_t> volume_bytes, const Json& meta);
  Json list_studies(const User& u) const;
  Json get_study(const User& u, const std::string& id) const;
  Json analyze_study(const User& u, const std::string& id);
  Json get_report(const User& u, const std::string& id) const;
  Json share_study(const User& u, const std::string& id, const std::string& doctor_id);
  Json revoke_share(const User& u, const std::string& id, const std::string& doctor_id);
  void delete_study(const User& u, const std::string& id);

  Json add_comment(const User& u, const std::string& report_id, const std::string& body, const std::string& kind);
  Json edit_comment(const User& u, const std::string& comment_id, const std::string& body);
  Json notifications(const User& u);

  /// Overlay PNG for slice z of the ED ("ed") or ES ("es") segmentation.
  std::vector<std::uint8_t> overlay_png(const User& u, const std::string& id, const std::string& phase, int z) const;

 private:
  Json load_study(const std::string& id) const;
  void require_view(const User& u, const Json& study) const;
  Json user_public(const Json& rec) const;
  Json comments_for(const std::string& report_id) const;
  std::shared_ptr<std::mutex> study_lock(const std::string& id);

  ServiceConfig cfg_;
  DocumentStore store_;
  std::shared_ptr<SegmentationModel> seg_;
  std::shared_ptr<const clf::ModelBundle> bundle_;
  std::unique_ptr<Analyzer> analyzer_;

  mutable std::mutex mu_;           // record read-modify-write sequences
  std::mutex analyzer_mu_;          // single-flight inference
  std::mutex locks_mu_;
  std::map<std::string, std::weak_ptr<std::mutex>> study_locks_;
};

/// HTTP status for an error code.
int http_status(ErrorCode code);

}  // namespace cardiac::platform

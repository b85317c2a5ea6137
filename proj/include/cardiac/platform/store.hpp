#pragma once

// Single-directory document store: one file per record, replaced by atomic rename.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace cardiac::platform {

using Json = nlohmann::json;

class DocumentStore {
 public:
  explicit DocumentStore(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }

  void put(std::string_view kind, std::string_view id, const Json& doc);
  /// Fails (returns false) when the record already exists.
  bool create(std::string_view kind, std::string_view id, const Json& doc);
  std::optional<Json> get(std::string_view kind, std::string_view id) const;
  bool remove(std::string_view kind, std::string_view id);
  std::vector<std::string> list(std::string_view kind) const;

  void put_blob(std::string_view kind, std::string_view id, std::span<const std::uint8_t> bytes);
  std::optional<std::vector<std::uint8_t>> get_blob(std::string_view kind, std::string_view id) const;
  bool remove_blob(std::string_view kind, std::string_view id);

  static bool valid_id(std::string_view id);

 private:
  std::filesystem::path path_for(std::string_view kind, std::string_view id, const char* ext) const;
  std::filesystem::path temp_for(const std::filesystem::path& final_path) const;

  std::filesystem::path root_;
};

}  // namespace cardiac::platform

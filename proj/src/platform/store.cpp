#include "cardiac/platform/store.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <random>

#include "cardiac/error.hpp"

namespace cardiac::platform {

namespace fs = std::filesystem;

namespace {

[[noreturn]] void io_fail(const std::string& what) {
  throw Error(ErrorCode::StorageFailure, what + ": " + std::strerror(errno));
}

void fsync_dir(const fs::path& dir) {
  const int fd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY);
  if (fd < 0) io_fail("open " + dir.string());
  ::fsync(fd);
  ::close(fd);
}

void write_synced(const fs::path& path, std::span<const std::uint8_t> bytes) {
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_EXCL | O_CLOEXEC, 0600);
  if (fd < 0) io_fail("create " + path.string());
  std::size_t done = 0;
  while (done < bytes.size()) {
    const auto n = ::write(fd, bytes.data() + done, bytes.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      ::close(fd);
      ::unlink(path.c_str());
      io_fail("write " + path.string());
    }
    done += static_cast<std::size_t>(n);
  }
  if (::fsync(fd) != 0) {
    ::close(fd);
    ::unlink(path.c_str());
    io_fail("fsync " + path.string());
  }
  ::close(fd);
}

std::optional<std::vector<std::uint8_t>> read_all(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

std::span<const std::uint8_t> as_bytes(const std::string& s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

}  // namespace

DocumentStore::DocumentStore(fs::path root) : root_(std::move(root)) {
  std::error_code ec;
  fs::create_directories(root_, ec);
  if (ec) throw Error(ErrorCode::StorageFailure, "cannot create " + root_.string() + ": " + ec.message());
  // Temp files left by an interrupted write never became records.
  for (const auto& kind : fs::directory_iterator(root_)) {
    if (!kind.is_directory()) continue;
    for (const auto& f : fs::directory_iterator(kind.path()))
      if (f.path().filename().string().starts_with(".tmp-")) fs::remove(f.path(), ec);
  }
}

bool DocumentStore::valid_id(std::string_view id) {
  if (id.empty() || id.size() > 128) return false;
  for (char c : id)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_')) return false;
  return true;
}

fs::path DocumentStore::path_for(std::string_view kind, std::string_view id, const char* ext) const {
  if (!valid_id(kind) || !valid_id(id)) throw Error(ErrorCode::InvalidArgument, "invalid record id");
  return root_ / std::string(kind) / (std::string(id) + ext);
}

fs::path DocumentStore::temp_for(const fs::path& final_path) const {
  static std::atomic<std::uint64_t> counter{0};
  thread_local std::mt19937_64 rng{std::random_device{}()};
  return final_path.parent_path() /
         (".tmp-" + std::to_string(::getpid()) + "-" + std::to_string(counter++) + "-" + std::to_string(rng()));
}

void DocumentStore::put(std::string_view kind, std::string_view id, const Json& doc) {
  const auto path = path_for(kind, id, ".json");
  fs::create_directories(path.parent_path());
  const auto tmp = temp_for(path);
  write_synced(tmp, as_bytes(doc.dump()));
  if (::rename(tmp.c_str(), path.c_str()) != 0) {
    ::unlink(tmp.c_str());
    io_fail("rename " + path.string());
  }
  fsync_dir(path.parent_path());
}

bool DocumentStore::create(std::string_view kind, std::string_view id, const Json& doc) {
  const auto path = path_for(kind, id, ".json");
  fs::create_directories(path.parent_path());
  const auto tmp = temp_for(path);
  write_synced(tmp, as_bytes(doc.dump()));
  const int rc = ::link(tmp.c_str(), path.c_str());
  const int err = errno;
  ::unlink(tmp.c_str());
  if (rc != 0) {
    if (err == EEXIST) return false;
    errno = err;
    io_fail("link " + path.string());
  }
  fsync_dir(path.parent_path());
  return true;
}

std::optional<Json> DocumentStore::get(std::string_view kind, std::string_view id) const {
  if (!valid_id(id)) return std::nullopt;
  const auto bytes = read_all(path_for(kind, id, ".json"));
  if (!bytes) return std::nullopt;
  auto j = Json::parse(bytes->begin(), bytes->end(), nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::StorageFailure, "corrupt record " + std::string(kind) + "/" + std::string(id));
  return j;
}

bool DocumentStore::remove(std::string_view kind, std::string_view id) {
  if (!valid_id(id)) return false;
  const auto path = path_for(kind, id, ".json");
  std::error_code ec;
  const bool removed = fs::remove(path, ec);
  if (removed) fsync_dir(path.parent_path());
  return removed;
}

std::vector<std::string> DocumentStore::list(std::string_view kind) const {
  std::vector<std::string> out;
  const auto dir = root_ / std::string(kind);
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) return out;
  for (const auto& f : fs::directory_iterator(dir)) {
    const auto name = f.path().filename().string();
    if (name.starts_with(".") || f.path().extension() != ".json") continue;
    out.push_back(f.path().stem().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

void DocumentStore::put_blob(std::string_view kind, std::string_view id, std::span<const std::uint8_t> bytes) {
  const auto path = path_for(kind, id, ".bin");
  fs::create_directories(path.parent_path());
  const auto tmp = temp_for(path);
  write_synced(tmp, bytes);
  if (::rename(tmp.c_str(), path.c_str()) != 0) {
    ::unlink(tmp.c_str());
    io_fail("rename " + path.string());
  }
  fsync_dir(path.parent_path());
}

std::optional<std::vector<std::uint8_t>> DocumentStore::get_blob(std::string_view kind, std::string_view id) const {
  if (!valid_id(id)) return std::nullopt;
  return read_all(path_for(kind, id, ".bin"));
}

bool DocumentStore::remove_blob(std::string_view kind, std::string_view id) {
  if (!valid_id(id)) return false;
  std::error_code ec;
  return fs::remove(path_for(kind, id, ".bin"), ec);
}

}  // namespace cardiac::platform

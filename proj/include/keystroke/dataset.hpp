#pragma once

#include <fcntl.h>
#include <openssl/evp.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "keystroke/error.hpp"
#include "keystroke/events.hpp"

namespace keystroke {

enum class StepKind { Imposed, Chosen, Impostor };

constexpr std::string_view to_string(StepKind s) noexcept {
  switch (s) {
    case StepKind::Imposed: return "imposed";
    case StepKind::Chosen: return "chosen";
    case StepKind::Impostor: return "impostor";
  }
  return "?";
}

struct Step {
  StepKind kind = StepKind::Chosen;
  std::string impostor_of;  // target user, only for StepKind::Impostor

  static Step imposed() { return {StepKind::Imposed, {}}; }
  static Step chosen() { return {StepKind::Chosen, {}}; }
  static Step impostor_of_user(std::string target) { return {StepKind::Impostor, std::move(target)}; }

  friend bool operator==(const Step&, const Step&) = default;
};

/// One typing of a (login, password) pair with its capture metadata.
struct SampleRecord {
  std::string user;
  int session = 1;
  Step step;
  std::string target_login;
  std::string target_password;
  std::map<std::string, std::string> env;
  std::int64_t captured_at = 0;  // epoch milliseconds
  EventStream login_events{Field::Login, {}};
  EventStream password_events{Field::Password, {}};

  friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

/// Shifts a stream so that its first event is at t = 0.
inline EventStream rebase(EventStream s) {
  if (s.events.empty()) return s;
  const Millis origin = s.events.front().timestamp;
  for (auto& e : s.events) e.timestamp -= origin;
  return s;
}

namespace detail {

using ordered_json = nlohmann::ordered_json;

inline ordered_json events_to_json(const EventStream& s) {
  auto arr = ordered_json::array();
  for (const auto& e : s.events)
    arr.push_back(ordered_json::array(
        {e.kind == EventKind::Press ? "P" : "R", e.keycode, e.timestamp}));
  return arr;
}

inline EventStream events_from_json(const nlohmann::json& j, Field field) {
  if (!j.is_array()) throw Error(Errc::FormatError, "events must be an array");
  EventStream s{field, {}};
  s.events.reserve(j.size());
  for (const auto& item : j) {
    if (!item.is_array() || item.size() != 3 || !item[0].is_string() ||
        !item[1].is_number_integer() || !item[2].is_number_integer())
      throw Error(Errc::FormatError, "event must be [kind, keycode, timestamp]");
    const auto kind = item[0].get<std::string>();
    if (kind != "P" && kind != "R") throw Error(Errc::FormatError, "event kind must be P or R");
    s.events.push_back({item[1].get<std::int32_t>(),
                        kind == "P" ? EventKind::Press : EventKind::Release,
                        item[2].get<Millis>()});
  }
  return s;
}

}  // namespace detail

inline std::string to_json_line(const SampleRecord& r) {
  detail::ordered_json j;
  j["user"] = r.user;
  j["session"] = r.session;
  j["step"] = std::string(to_string(r.step.kind));
  j["impostor_of"] = r.step.kind == StepKind::Impostor ? detail::ordered_json(r.step.impostor_of)
                                                       : detail::ordered_json(nullptr);
  j["target_login"] = r.target_login;
  j["target_password"] = r.target_password;
  j["env"] = detail::ordered_json::object();
  for (const auto& [k, v] : r.env) j["env"][k] = v;
  j["captured_at"] = r.captured_at;
  j["login_events"] = detail::events_to_json(r.login_events);
  j["password_events"] = detail::events_to_json(r.password_events);
  return j.dump();
}

/// Parses one canonical record line. Throws Errc::FormatError on schema
/// violations; stream-level checks are left to validate_record.
inline SampleRecord from_json_line(std::string_view line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::FormatError, e.what());
  }
  try {
    SampleRecord r;
    r.user = j.at("user").get<std::string>();
    r.session = j.at("session").get<int>();
    const auto step = j.at("step").get<std::string>();
    if (step == "imposed") {
      r.step = Step::imposed();
    } else if (step == "chosen") {
      r.step = Step::chosen();
    } else if (step == "impostor") {
      r.step = Step::impostor_of_user(j.at("impostor_of").get<std::string>());
    } else {
      throw Error(Errc::FormatError, "unknown step '" + step + "'");
    }
    r.target_login = j.at("target_login").get<std::string>();
    r.target_password = j.at("target_password").get<std::string>();
    r.env = j.at("env").get<std::map<std::string, std::string>>();
    r.captured_at = j.at("captured_at").get<std::int64_t>();
    r.login_events = detail::events_from_json(j.at("login_events"), Field::Login);
    r.password_events = detail::events_from_json(j.at("password_events"), Field::Password);
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::FormatError, e.what());
  }
}

/// Throws (MalformedStream, UnmatchedEvent or InvalidInput) when the record
/// cannot be used for evaluation.
inline void validate_record(const SampleRecord& r) {
  if (r.user.empty()) throw Error(Errc::InvalidInput, "empty user id");
  if (r.session < 1) throw Error(Errc::InvalidInput, "session must be >= 1");
  if (r.target_login.empty() || r.target_password.empty())
    throw Error(Errc::InvalidInput, "empty target string");
  if (r.step.kind == StepKind::Impostor && (r.step.impostor_of.empty() || r.step.impostor_of == r.user))
    throw Error(Errc::InvalidInput, "impostor record must target another user");
  for (const EventStream* s : {&r.login_events, &r.password_events}) {
    if (s->events.empty()) throw Error(Errc::MalformedStream, "empty event stream");
    for (const auto& e : s->events)
      if (!keycodes::is_tracked(e.keycode))
        throw Error(Errc::MalformedStream, "untracked keycode " + std::to_string(e.keycode));
    validate_stream(*s);
  }
}

inline std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error(Errc::IoError, "sha256 failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xF]);
  }
  return out;
}

struct Quarantined {
  std::size_t line = 0;  // 1-based line in the source file, 0 if not from a file
  std::string reason;
  std::string raw;
};

inline bool canonical_less(const SampleRecord& a, const SampleRecord& b) {
  if (a.user != b.user) return a.user < b.user;
  if (a.session != b.session) return a.session < b.session;
  return a.step.kind < b.step.kind;
}

/// Immutable, canonically ordered collection of valid records.
class DatasetHandle {
 public:
  DatasetHandle() = default;

  explicit DatasetHandle(std::vector<SampleRecord> records,
                         std::vector<Quarantined> quarantined = {})
      : records_(std::move(records)), quarantined_(std::move(quarantined)) {
    // Stable: capture order is the last sort key.
    std::stable_sort(records_.begin(), records_.end(), canonical_less);
    for (std::size_t i = 0; i < records_.size(); ++i) {
      const auto& r = records_[i];
      by_user_[r.user].push_back(i);
      if (r.step.kind == StepKind::Impostor) against_[r.step.impostor_of].push_back(i);
    }
  }

  const std::vector<SampleRecord>& records() const noexcept { return records_; }
  const std::vector<Quarantined>& quarantined() const noexcept { return quarantined_; }
  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }

  std::vector<std::string> users() const {
    std::vector<std::string> out;
    out.reserve(by_user_.size());
    for (const auto& [u, _] : by_user_) out.push_back(u);
    return out;
  }

  /// Records typed by `user` in the given step, in canonical order.
  std::vector<const SampleRecord*> typed_by(const std::string& user, StepKind step) const {
    std::vector<const SampleRecord*> out;
    auto it = by_user_.find(user);
    if (it == by_user_.end()) return out;
    for (auto i : it->second)
      if (records_[i].step.kind == step) out.push_back(&records_[i]);
    return out;
  }

  /// Impostor attempts made by other users on `user`'s chosen pair.
  std::vector<const SampleRecord*> impostor_attempts_on(const std::string& user) const {
    std::vector<const SampleRecord*> out;
    auto it = against_.find(user);
    if (it == against_.end()) return out;
    for (auto i : it->second) out.push_back(&records_[i]);
    return out;
  }

  std::string serialize() const {
    std::string out;
    for (const auto& r : records_) {
      out += to_json_line(r);
      out += '\n';
    }
    return out;
  }

  std::string checksum() const { return sha256_hex(serialize()); }

  bool is_synthetic() const {
    return !records_.empty() && std::all_of(records_.begin(), records_.end(), [](const auto& r) {
             auto it = r.env.find("source");
             return it != r.env.end() && it->second == "synthetic";
           });
  }

  friend bool operator==(const DatasetHandle& a, const DatasetHandle& b) {
    return a.records_ == b.records_;
  }

 private:
  std::vector<SampleRecord> records_;
  std::vector<Quarantined> quarantined_;
  std::map<std::string, std::vector<std::size_t>> by_user_;
  std::map<std::string, std::vector<std::size_t>> against_;
};

struct PartitionView {
  std::vector<const SampleRecord*> genuine;   // chosen step
  std::vector<const SampleRecord*> impostor;  // impostor step
  std::vector<const SampleRecord*> imposed;   // imposed step
};

inline PartitionView partition(const DatasetHandle& handle) {
  PartitionView p;
  for (const auto& r : handle.records()) {
    switch (r.step.kind) {
      case StepKind::Chosen: p.genuine.push_back(&r); break;
      case StepKind::Impostor: p.impostor.push_back(&r); break;
      case StepKind::Imposed: p.imposed.push_back(&r); break;
    }
  }
  return p;
}

/// "genuine + impostor / imposed", the way dataset sizes are usually quoted.
inline std::string format_counts(const PartitionView& p) {
  return std::to_string(p.genuine.size()) + " + " + std::to_string(p.impostor.size()) + " / " +
         std::to_string(p.imposed.size());
}

struct Manifest {
  std::size_t records = 0;
  std::size_t genuine = 0;
  std::size_t impostor = 0;
  std::size_t imposed = 0;
  std::string sha256;

  friend bool operator==(const Manifest&, const Manifest&) = default;
};

inline Manifest make_manifest(const DatasetHandle& handle) {
  auto p = partition(handle);
  return {handle.size(), p.genuine.size(), p.impostor.size(), p.imposed.size(),
          handle.checksum()};
}

inline std::string manifest_to_json(const Manifest& m) {
  detail::ordered_json j;
  j["records"] = m.records;
  j["genuine"] = m.genuine;
  j["impostor"] = m.impostor;
  j["imposed"] = m.imposed;
  j["sha256"] = m.sha256;
  return j.dump(2) + "\n";
}

inline Manifest manifest_from_json(std::string_view text) {
  try {
    auto j = nlohmann::json::parse(text);
    return {j.at("records").get<std::size_t>(), j.at("genuine").get<std::size_t>(),
            j.at("impostor").get<std::size_t>(), j.at("imposed").get<std::size_t>(),
            j.at("sha256").get<std::string>()};
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::FormatError, std::string("manifest: ") + e.what());
  }
}

inline std::filesystem::path manifest_path(const std::filesystem::path& data) {
  return data.string() + ".manifest.json";
}

// Maps one line of a foreign dataset onto a record; nullopt skips the line.
using RecordAdapter = std::function<std::optional<SampleRecord>(std::string_view line)>;

inline std::optional<SampleRecord> canonical_adapter(std::string_view line) {
  return from_json_line(line);
}

struct LoadOptions {
  bool strict = false;  // throw FormatError on the first bad line instead of quarantining
  bool verify_manifest = true;
  RecordAdapter adapter = canonical_adapter;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Parses records from text. Lines that fail to parse or validate are
/// quarantined with their reason; parsing never stops on a bad record
/// unless `strict` is set.
inline DatasetHandle parse_dataset(std::string_view text, const LoadOptions& options = {}) {
  std::vector<SampleRecord> records;
  std::vector<Quarantined> quarantined;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
    try {
      auto record = options.adapter(line);
      if (!record) continue;
      record->login_events.field = Field::Login;
      record->password_events.field = Field::Password;
      validate_record(*record);
      records.push_back(std::move(*record));
    } catch (const Error& e) {
      if (options.strict)
        throw Error(Errc::FormatError, "line " + std::to_string(line_no) + ": " + e.what());
      quarantined.push_back({line_no, e.what(), std::string(line)});
    }
  }
  return DatasetHandle(std::move(records), std::move(quarantined));
}

/// Loads a dataset file. A manifest next to the file, when present, must
/// match the checksum of the valid records.
inline DatasetHandle load(const std::filesystem::path& path, const LoadOptions& options = {}) {
  auto handle = parse_dataset(read_file(path), options);
  const auto mpath = manifest_path(path);
  if (options.verify_manifest && std::filesystem::exists(mpath)) {
    const auto manifest = manifest_from_json(read_file(mpath));
    const auto actual = handle.checksum();
    if (manifest.sha256 != actual)
      throw Error(Errc::ChecksumMismatch, path.string() + ": manifest says " + manifest.sha256 +
                                              ", data hashes to " + actual);
  }
  return handle;
}

namespace detail {

class FileDescriptor {
 public:
  explicit FileDescriptor(int fd) : fd_(fd) {}
  FileDescriptor(const FileDescriptor&) = delete;
  FileDescriptor& operator=(const FileDescriptor&) = delete;
  FileDescriptor(FileDescriptor&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  ~FileDescriptor() {
    if (fd_ >= 0) ::close(fd_);
  }
  int get() const noexcept { return fd_; }
  explicit operator bool() const noexcept { return fd_ >= 0; }

 private:
  int fd_;
};

inline Error io_error(const std::string& what, const std::filesystem::path& path) {
  return Error(Errc::IoError, what + " " + path.string() + ": " + std::strerror(errno));
}

inline void write_all(int fd, std::string_view data, const std::filesystem::path& path) {
  while (!data.empty()) {
    const auto n = ::write(fd, data.data(), data.size());
    if (n < 0) {
      if (errno == EINTR) continue;
      throw io_error("write", path);
    }
    data.remove_prefix(static_cast<std::size_t>(n));
  }
}

// Exclusive advisory lock held for the lifetime of the object.
class FileLock {
 public:
  explicit FileLock(const std::filesystem::path& path)
      : fd_(::open(path.c_str(), O_CREAT | O_RDWR | O_CLOEXEC, 0644)) {
    if (!fd_) throw io_error("cannot open lock", path);
    while (::flock(fd_.get(), LOCK_EX) != 0) {
      if (errno != EINTR) throw io_error("cannot lock", path);
    }
  }
  ~FileLock() { ::flock(fd_.get(), LOCK_UN); }

 private:
  FileDescriptor fd_;
};

// Writes `data` to a temporary sibling, syncs it and renames it over `path`.
inline void atomic_write(const std::filesystem::path& path, std::string_view data,
                         const std::function<void()>& before_rename = {}) {
  static std::atomic<unsigned> counter{0};
  const std::filesystem::path tmp = path.string() + ".tmp." + std::to_string(::getpid()) + "." +
                                    std::to_string(counter.fetch_add(1));
  {
    FileDescriptor fd(::open(tmp.c_str(), O_CREAT | O_TRUNC | O_WRONLY | O_CLOEXEC, 0644));
    if (!fd) throw io_error("cannot create", tmp);
    try {
      write_all(fd.get(), data, tmp);
      if (::fsync(fd.get()) != 0) throw io_error("fsync", tmp);
    } catch (...) {
      std::filesystem::remove(tmp);
      throw;
    }
  }
  try {
    if (before_rename) before_rename();
  } catch (...) {
    std::filesystem::remove(tmp);
    throw;
  }
  if (::rename(tmp.c_str(), path.c_str()) != 0) {
    auto err = io_error("cannot rename onto", path);
    std::filesystem::remove(tmp);
    throw err;
  }
}

}  // namespace detail

struct StoreOptions {
  bool write_manifest = true;
  // Runs after the data is on disk but before it replaces the target; a
  // throw here leaves the previous file untouched. Used for crash tests.
  std::function<void()> before_rename;
};

/// Canonical, atomic store. Concurrent stores to the same path serialize on
/// an advisory lock; readers only ever observe a complete file.
inline void store(const DatasetHandle& handle, const std::filesystem::path& path,
                  const StoreOptions& options = {}) {
  detail::FileLock lock(path.string() + ".lock");
  const auto data = handle.serialize();
  detail::atomic_write(path, data, options.before_rename);
  if (options.write_manifest)
    detail::atomic_write(manifest_path(path), manifest_to_json(make_manifest(handle)));
}

/// Single serialized appender used by the capture service. Each append is
/// on disk (fsync) before it returns.
class DatasetWriter {
 public:
  explicit DatasetWriter(std::filesystem::path path)
      : path_(std::move(path)),
        fd_(::open(path_.c_str(), O_CREAT | O_APPEND | O_WRONLY | O_CLOEXEC, 0644)) {
    if (!fd_) throw detail::io_error("cannot open", path_);
    // Appends invalidate any stored manifest.
    std::error_code ec;
    std::filesystem::remove(manifest_path(path_), ec);
  }

  void append(const SampleRecord& record) {
    validate_record(record);
    const auto line = to_json_line(record) + "\n";
    std::lock_guard lock(mutex_);
    detail::write_all(fd_.get(), line, path_);
    if (::fsync(fd_.get()) != 0) throw detail::io_error("fsync", path_);
  }

  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
  detail::FileDescriptor fd_;
  std::mutex mutex_;
};

struct SessionSummary {
  std::string user;
  int session = 0;
  std::size_t imposed = 0;
  std::size_t chosen = 0;
  std::size_t impostor = 0;
  bool complete = false;
};

/// Per (user, session) step counts; sessions below the expected counts are
/// flagged incomplete (abandoned mid-step).
inline std::vector<SessionSummary> summarize_sessions(const DatasetHandle& handle,
                                                      std::size_t per_step = 10,
                                                      std::size_t impostor_total = 10) {
  std::map<std::pair<std::string, int>, SessionSummary> acc;
  for (const auto& r : handle.records()) {
    auto& s = acc[{r.user, r.session}];
    s.user = r.user;
    s.session = r.session;
    switch (r.step.kind) {
      case StepKind::Imposed: ++s.imposed; break;
      case StepKind::Chosen: ++s.chosen; break;
      case StepKind::Impostor: ++s.impostor; break;
    }
  }
  std::vector<SessionSummary> out;
  for (auto& [_, s] : acc) {
    s.complete = s.imposed >= per_step && s.chosen >= per_step && s.impostor >= impostor_total;
    out.push_back(s);
  }
  return out;
}

}  // namespace keystroke

#pragma once

#include <openssl/crypto.h>
#include <openssl/evp.h>
#include <openssl/hmac.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "keystroke/dataset.hpp"
#include "keystroke/error.hpp"
#include "keystroke/events.hpp"

namespace keystroke::capture {

enum class CaptureStep { Step1Imposed, Step2Chosen, Step3a, Step3b, Done };

constexpr std::string_view to_string(CaptureStep s) noexcept {
  switch (s) {
    case CaptureStep::Step1Imposed: return "step1";
    case CaptureStep::Step2Chosen: return "step2";
    case CaptureStep::Step3a: return "step3a";
    case CaptureStep::Step3b: return "step3b";
    case CaptureStep::Done: return "done";
  }
  return "?";
}

struct CaptureConfig {
  std::string imposed_login;
  std::string imposed_password;
  std::string token_secret;
  std::size_t per_step = 10;            // steps 1 and 2
  std::size_t impostor_per_target = 5;  // each half of step 3
  std::filesystem::path registry_path;  // empty: registrations and assignments live in memory only
  std::function<std::int64_t()> clock;  // epoch ms; defaults to system clock
};

struct TextPair {
  std::string login;
  std::string password;
};

struct Progress {
  CaptureStep step = CaptureStep::Step1Imposed;
  std::size_t remaining = 0;  // inputs left in the current step
  std::size_t total = 0;      // inputs in a full session
  std::size_t completed = 0;
};

struct SessionView {
  std::string id;
  std::string user;
  int session_no = 0;
  Progress progress;
  std::optional<TextPair> targets;  // nullopt while step 3 waits for impostor targets
  std::vector<std::string> impostor_targets;
};

struct SampleSubmission {
  std::string login_text;
  std::string password_text;
  EventStream login_events{Field::Login, {}};
  EventStream password_events{Field::Password, {}};
  std::map<std::string, std::string> env;
};

struct SubmitOutcome {
  bool accepted = false;
  std::optional<Errc> reason;  // set when rejected
  std::string message;
  bool advanced = false;  // the accepted sample finished its step
  SessionView session;
};

/// HMAC-SHA256(secret, user) in hex; used as the participant bearer token.
inline std::string issue_token(const std::string& secret, const std::string& user) {
  unsigned char mac[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!HMAC(EVP_sha256(), secret.data(), static_cast<int>(secret.size()),
            reinterpret_cast<const unsigned char*>(user.data()), user.size(), mac, &len))
    throw Error(Errc::IoError, "HMAC failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[mac[i] >> 4]);
    out.push_back(hex[mac[i] & 0xF]);
  }
  return out;
}

inline bool same_token(const std::string& a, const std::string& b) {
  return a.size() == b.size() && CRYPTO_memcmp(a.data(), b.data(), a.size()) == 0;
}

/// Acquisition protocol: each session is step 1 (imposed pair), step 2 (the
/// participant's own pair), then two halves of step 3 typing other
/// participants' pairs. Accepted samples are durably appended before the
/// call returns.
class CaptureService {
 public:
  CaptureService(CaptureConfig config, std::shared_ptr<DatasetWriter> writer)
      : config_(std::move(config)), writer_(std::move(writer)) {
    if (config_.imposed_login.empty() || config_.imposed_password.empty())
      throw Error(Errc::InvalidInput, "the imposed login and password must be configured");
    if (config_.token_secret.empty()) throw Error(Errc::InvalidInput, "token secret must be set");
    if (!config_.clock) {
      config_.clock = [] {
        return std::chrono::duration_cast<std::chrono::milliseconds>(
                   std::chrono::system_clock::now().time_since_epoch())
            .count();
      };
    }
    restore();
  }

  const CaptureConfig& config() const noexcept { return config_; }

  std::size_t session_total() const noexcept {
    return 2 * config_.per_step + 2 * config_.impostor_per_target;
  }

  /// Registers a participant with the pair they will type in step 2.
  std::string register_user(const std::string& user, const std::string& login,
                            const std::string& password) {
    if (user.empty() || login.empty() || password.empty())
      throw Error(Errc::InvalidInput, "user, login and password must be non-empty");
    std::lock_guard lock(mutex_);
    if (users_.count(user)) throw Error(Errc::AlreadyRegistered, user);
    nlohmann::ordered_json j;
    j["user"] = user;
    j["login"] = login;
    j["password"] = password;
    append_registry_locked(j);
    users_.emplace(user, Participant{{login, password}, 0, 0});
    return issue_token(config_.token_secret, user);
  }

  std::string token_for(const std::string& user) const {
    return issue_token(config_.token_secret, user);
  }

  SessionView start_session(const std::string& user, const std::string& token) {
    std::lock_guard lock(mutex_);
    auto it = users_.find(user);
    if (it == users_.end()) throw Error(Errc::UnknownUser, user);
    authorize(user, token);
    auto session = std::make_shared<Session>();
    session->id = "s" + std::to_string(++session_counter_);
    session->user = user;
    session->session_no = ++it->second.sessions;
    session->step = CaptureStep::Step1Imposed;
    session->remaining = config_.per_step;
    nlohmann::ordered_json j;
    j["event"] = "session";
    j["user"] = user;
    j["session"] = session->session_no;
    append_registry_locked(j);
    assign_targets_locked(*session);
    sessions_.emplace(session->id, session);
    return view_locked(*session);
  }

  SubmitOutcome submit_sample(const std::string& session_id, const std::string& token,
                              const SampleSubmission& sample) {
    auto session = find(session_id, token);
    std::lock_guard session_lock(session->mutex);

    SubmitOutcome out;
    auto reject = [&](Errc reason, std::string message) {
      out.accepted = false;
      out.reason = reason;
      out.message = std::move(message);
      std::lock_guard lock(mutex_);
      out.session = view_locked(*session);
      return out;
    };

    if (session->step == CaptureStep::Done)
      return reject(Errc::SessionComplete, "session " + session_id + " is complete");

    std::optional<TextPair> targets;
    {
      std::lock_guard lock(mutex_);
      if (is_step3(session->step)) assign_targets_locked(*session);
      targets = targets_locked(*session);
    }
    if (!targets)
      return reject(Errc::NoImpostorTargets, "fewer than two other participants registered");
    if (sample.login_text != targets->login || sample.password_text != targets->password)
      return reject(Errc::TextMismatch, "typed text differs from the requested pair");

    SampleRecord record;
    try {
      record.login_events = prepare(sample.login_events, Field::Login);
      record.password_events = prepare(sample.password_events, Field::Password);
    } catch (const Error& e) {
      return reject(Errc::MalformedStream, e.what());
    }
    record.user = session->user;
    record.session = session->session_no;
    record.step = record_step(*session);
    record.target_login = targets->login;
    record.target_password = targets->password;
    record.env = sample.env;
    record.captured_at = config_.clock();

    // Durable before acknowledged.
    writer_->append(record);

    {
      std::lock_guard lock(mutex_);
      ++session->completed;
      if (--session->remaining == 0) {
        advance_locked(*session);
        out.advanced = true;
      }
      out.accepted = true;
      out.session = view_locked(*session);
    }
    return out;
  }

  Progress progress(const std::string& session_id, const std::string& token) {
    auto session = find(session_id, token);
    std::lock_guard lock(mutex_);
    return progress_locked(*session);
  }

  SessionView session(const std::string& session_id, const std::string& token) {
    auto session = find(session_id, token);
    std::lock_guard lock(mutex_);
    if (is_step3(session->step)) assign_targets_locked(*session);
    return view_locked(*session);
  }

  /// Times each participant has been handed out as an impostor target.
  std::map<std::string, std::size_t> coverage() const {
    std::lock_guard lock(mutex_);
    std::map<std::string, std::size_t> out;
    for (const auto& [u, p] : users_) out[u] = p.coverage;
    return out;
  }

  std::string export_canonical() const {
    LoadOptions options;
    options.verify_manifest = false;
    std::lock_guard lock(mutex_);
    if (!std::filesystem::exists(writer_->path())) return {};
    return parse_dataset(read_file(writer_->path()), options).serialize();
  }

 private:
  struct Participant {
    TextPair chosen;
    int sessions = 0;
    std::size_t coverage = 0;
  };

  struct Session {
    std::mutex mutex;
    std::string id;
    std::string user;
    int session_no = 0;
    CaptureStep step = CaptureStep::Step1Imposed;
    std::size_t remaining = 0;
    std::size_t completed = 0;
    std::vector<std::string> impostor_targets;
  };

  static bool is_step3(CaptureStep s) {
    return s == CaptureStep::Step3a || s == CaptureStep::Step3b;
  }

  void authorize(const std::string& user, const std::string& token) const {
    if (!same_token(token, issue_token(config_.token_secret, user)))
      throw Error(Errc::Unauthorized, "bad token for " + user);
  }

  std::shared_ptr<Session> find(const std::string& id, const std::string& token) {
    std::lock_guard lock(mutex_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw Error(Errc::UnknownSession, id);
    authorize(it->second->user, token);
    return it->second;
  }

  static EventStream prepare(const EventStream& raw, Field field) {
    auto filtered = filter_tracked_events(EventStream{field, raw.events});
    if (filtered.events.empty()) throw Error(Errc::MalformedStream, "no tracked key events");
    validate_stream(filtered);
    return rebase(std::move(filtered));
  }

  // The registry sidecar holds registrations, session starts and target
  // assignments, none of which reach the dataset before a sample does.
  void append_registry_locked(const nlohmann::ordered_json& j) {
    if (config_.registry_path.empty()) return;
    std::ofstream out(config_.registry_path, std::ios::app);
    out << j.dump() << '\n';
    out.flush();
    if (!out) throw Error(Errc::IoError, "cannot append to " + config_.registry_path.string());
  }

  // Least covered participants first, ties by id; never the session owner.
  void assign_targets_locked(Session& s) {
    if (!s.impostor_targets.empty()) return;
    std::vector<std::pair<std::size_t, std::string>> candidates;
    for (const auto& [u, p] : users_)
      if (u != s.user) candidates.emplace_back(p.coverage, u);
    if (candidates.size() < 2) return;
    std::sort(candidates.begin(), candidates.end());
    for (std::size_t i = 0; i < 2; ++i) {
      s.impostor_targets.push_back(candidates[i].second);
      ++users_.at(candidates[i].second).coverage;
    }
    nlohmann::ordered_json j;
    j["event"] = "targets";
    j["user"] = s.user;
    j["session"] = s.session_no;
    j["targets"] = s.impostor_targets;
    append_registry_locked(j);
  }

  std::optional<TextPair> targets_locked(const Session& s) const {
    switch (s.step) {
      case CaptureStep::Step1Imposed:
        return TextPair{config_.imposed_login, config_.imposed_password};
      case CaptureStep::Step2Chosen: return users_.at(s.user).chosen;
      case CaptureStep::Step3a:
      case CaptureStep::Step3b: {
        const std::size_t k = s.step == CaptureStep::Step3a ? 0 : 1;
        if (s.impostor_targets.size() < 2) return std::nullopt;
        return users_.at(s.impostor_targets[k]).chosen;
      }
      case CaptureStep::Done: return std::nullopt;
    }
    return std::nullopt;
  }

  Step record_step(const Session& s) const {
    switch (s.step) {
      case CaptureStep::Step1Imposed: return Step::imposed();
      case CaptureStep::Step2Chosen: return Step::chosen();
      case CaptureStep::Step3a: return Step::impostor_of_user(s.impostor_targets.at(0));
      case CaptureStep::Step3b: return Step::impostor_of_user(s.impostor_targets.at(1));
      case CaptureStep::Done: break;
    }
    throw Error(Errc::SessionComplete, s.id);
  }

  void advance_locked(Session& s) {
    switch (s.step) {
      case CaptureStep::Step1Imposed:
        s.step = CaptureStep::Step2Chosen;
        s.remaining = config_.per_step;
        break;
      case CaptureStep::Step2Chosen:
        s.step = CaptureStep::Step3a;
        s.remaining = config_.impostor_per_target;
        assign_targets_locked(s);
        break;
      case CaptureStep::Step3a:
        s.step = CaptureStep::Step3b;
        s.remaining = config_.impostor_per_target;
        break;
      case CaptureStep::Step3b:
      case CaptureStep::Done:
        s.step = CaptureStep::Done;
        s.remaining = 0;
        break;
    }
  }

  Progress progress_locked(const Session& s) const {
    return {s.step, s.remaining, session_total(), s.completed};
  }

  SessionView view_locked(const Session& s) const {
    return {s.id, s.user, s.session_no, progress_locked(s), targets_locked(s), s.impostor_targets};
  }

  // Rebuilds registrations, session counters and target coverage after a
  // restart from the registry file and the dataset itself.
  void restore() {
    std::set<std::tuple<std::string, int, std::string>> assignments;
    std::map<std::string, int> started;
    if (!config_.registry_path.empty() && std::filesystem::exists(config_.registry_path)) {
      std::ifstream in(config_.registry_path);
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
          auto j = nlohmann::json::parse(line);
          const auto user = j.at("user").get<std::string>();
          const auto event = j.value("event", std::string("register"));
          if (event == "register") {
            users_.emplace(user, Participant{{j.at("login").get<std::string>(),
                                              j.at("password").get<std::string>()},
                                             0, 0});
          } else if (event == "session") {
            started[user] = std::max(started[user], j.at("session").get<int>());
          } else if (event == "targets") {
            for (const auto& t : j.at("targets"))
              assignments.emplace(user, j.at("session").get<int>(), t.get<std::string>());
          }
        } catch (const nlohmann::json::exception&) {
          // A torn last line from a crash mid-append.
        }
      }
    }
    for (const auto& [user, n] : started)
      if (auto it = users_.find(user); it != users_.end()) it->second.sessions = n;

    if (std::filesystem::exists(writer_->path())) {
      LoadOptions options;
      options.verify_manifest = false;
      const auto handle = parse_dataset(read_file(writer_->path()), options);
      for (const auto& r : handle.records()) {
        auto it = users_.find(r.user);
        if (it == users_.end()) {
          if (r.step.kind != StepKind::Chosen) continue;
          it = users_.emplace(r.user, Participant{{r.target_login, r.target_password}, 0, 0}).first;
        }
        it->second.sessions = std::max(it->second.sessions, r.session);
        if (r.step.kind == StepKind::Impostor)
          assignments.emplace(r.user, r.session, r.step.impostor_of);
      }
    }
    // Fresh ids after a restart must not reuse ones handed out before it.
    for (const auto& [u, p] : users_) session_counter_ += static_cast<std::size_t>(p.sessions);
    for (const auto& [_, __, target] : assignments) {
      auto it = users_.find(target);
      if (it != users_.end()) ++it->second.coverage;
    }
  }

  CaptureConfig config_;
  std::shared_ptr<DatasetWriter> writer_;
  mutable std::mutex mutex_;
  std::map<std::string, Participant> users_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::size_t session_counter_ = 0;
};

}  // namespace keystroke::capture

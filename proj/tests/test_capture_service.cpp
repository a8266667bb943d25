#include <gtest/gtest.h>

#include <cctype>
#include <filesystem>

#include "keystroke/capture_service.hpp"

using namespace keystroke;
using namespace keystroke::capture;
namespace fs = std::filesystem;

namespace {

EventStream type(const std::string& text, Field field, Millis start = 1'700'000'000'000) {
  EventStream s{field, {}};
  Millis t = start;
  for (char c : text) {
    const auto code = static_cast<std::int32_t>(std::toupper(static_cast<unsigned char>(c)));
    s.events.push_back({code, EventKind::Press, t});
    s.events.push_back({code, EventKind::Release, t + 70});
    t += 160;
  }
  return s;
}

LoadOptions unverified() {
  LoadOptions o;
  o.verify_manifest = false;
  return o;
}

SampleSubmission typing(const TextPair& p) {
  SampleSubmission s;
  s.login_text = p.login;
  s.password_text = p.password;
  s.login_events = type(p.login, Field::Login);
  s.password_events = type(p.password, Field::Password, 1'700'000'005'000);
  s.env = {{"browser", "test"}};
  return s;
}

class CaptureTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("keystroke_capture_" + std::to_string(::getpid()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    service_ = make();
  }
  void TearDown() override {
    service_.reset();
    fs::remove_all(dir_);
  }

  std::unique_ptr<CaptureService> make() {
    CaptureConfig c;
    c.imposed_login = "imposed";
    c.imposed_password = "pass";
    c.token_secret = "secret";
    c.registry_path = dir_ / "registry.ndjson";
    c.clock = [this] { return ++clock_; };
    return std::make_unique<CaptureService>(c, std::make_shared<DatasetWriter>(data()));
  }

  fs::path data() const { return dir_ / "data.ndjson"; }

  // Types whatever the session currently asks for.
  SubmitOutcome submit_next(const SessionView& view, const std::string& token) {
    auto current = service_->session(view.id, token);
    if (!current.targets) return service_->submit_sample(view.id, token, typing({"x", "y"}));
    return service_->submit_sample(view.id, token, typing(*current.targets));
  }

  fs::path dir_;
  std::int64_t clock_ = 1000;
  std::unique_ptr<CaptureService> service_;
};

}  // namespace

TEST_F(CaptureTest, FreshSessionProgress) {
  const auto tok = service_->register_user("alice", "alice", "secretpw");
  const auto view = service_->start_session("alice", tok);
  EXPECT_EQ(view.progress.step, CaptureStep::Step1Imposed);
  EXPECT_EQ(view.progress.remaining, 10u);
  EXPECT_EQ(view.progress.total, 30u);
  EXPECT_EQ(view.targets->login, "imposed");
  EXPECT_EQ(to_string(view.progress.step), "step1");

  const auto out = submit_next(view, tok);
  EXPECT_TRUE(out.accepted);
  EXPECT_EQ(out.session.progress.remaining, 9u);
  EXPECT_EQ(out.session.progress.completed, 1u);
}

TEST_F(CaptureTest, TextMismatchDoesNotCount) {
  const auto tok = service_->register_user("alice", "alice", "secretpw");
  const auto view = service_->start_session("alice", tok);
  auto wrong = typing({"imposed", "pasz"});
  const auto out = service_->submit_sample(view.id, tok, wrong);
  EXPECT_FALSE(out.accepted);
  EXPECT_EQ(out.reason, Errc::TextMismatch);
  EXPECT_EQ(out.session.progress.remaining, 10u);
  EXPECT_FALSE(fs::exists(data()) && fs::file_size(data()) > 0);
}

TEST_F(CaptureTest, MalformedStreamIsRejected) {
  const auto tok = service_->register_user("alice", "alice", "secretpw");
  const auto view = service_->start_session("alice", tok);
  auto s = typing({"imposed", "pass"});
  s.login_events.events.erase(s.login_events.events.begin());  // release without press
  const auto out = service_->submit_sample(view.id, tok, s);
  EXPECT_FALSE(out.accepted);
  EXPECT_EQ(out.reason, Errc::MalformedStream);
  EXPECT_EQ(out.session.progress.remaining, 10u);
}

TEST_F(CaptureTest, UntrackedKeysAreFilteredAndTimesRebased) {
  const auto tok = service_->register_user("alice", "alice", "secretpw");
  const auto view = service_->start_session("alice", tok);
  auto s = typing({"imposed", "pass"});
  s.login_events.events.push_back({112, EventKind::Press, 1'700'000'009'000});  // F1
  s.login_events.events.push_back({112, EventKind::Release, 1'700'000'009'050});
  ASSERT_TRUE(service_->submit_sample(view.id, tok, s).accepted);
  const auto h = load(data(), unverified());
  ASSERT_EQ(h.size(), 1u);
  const auto& r = h.records()[0];
  EXPECT_EQ(r.login_events.events.size(), 14u);
  EXPECT_EQ(r.login_events.events.front().timestamp, 0);
  EXPECT_EQ(r.step.kind, StepKind::Imposed);
  EXPECT_EQ(r.env.at("browser"), "test");
}

TEST_F(CaptureTest, FullSessionWalkthrough) {
  std::map<std::string, std::string> tokens;
  for (const std::string u : {"alice", "bob", "carol"})
    tokens[u] = service_->register_user(u, u + "log", u + "pw");

  auto view = service_->start_session("alice", tokens["alice"]);
  // Three participants: alice gets the two others.
  EXPECT_EQ(view.impostor_targets, (std::vector<std::string>{"bob", "carol"}));

  std::vector<CaptureStep> steps;
  for (int i = 0; i < 30; ++i) {
    const auto out = submit_next(view, tokens["alice"]);
    ASSERT_TRUE(out.accepted) << i << " " << out.message;
    EXPECT_EQ(out.advanced, i == 9 || i == 19 || i == 24 || i == 29);
    steps.push_back(out.session.progress.step);
    if (i == 24) {
      EXPECT_EQ(out.session.progress.step, CaptureStep::Step3b);
      EXPECT_EQ(out.session.progress.remaining, 5u);
      EXPECT_EQ(out.session.progress.total, 30u);
      EXPECT_EQ(out.session.targets->login, "carollog");
    }
    if (i == 19) {
      EXPECT_EQ(out.session.targets->login, "boblog");
    }
  }
  EXPECT_EQ(steps[8], CaptureStep::Step1Imposed);
  EXPECT_EQ(steps[9], CaptureStep::Step2Chosen);
  EXPECT_EQ(steps[19], CaptureStep::Step3a);
  EXPECT_EQ(steps.back(), CaptureStep::Done);

  const auto after = submit_next(view, tokens["alice"]);
  EXPECT_FALSE(after.accepted);
  EXPECT_EQ(after.reason, Errc::SessionComplete);

  const auto h = load(data(), unverified());
  const auto p = partition(h);
  EXPECT_EQ(p.imposed.size(), 10u);
  EXPECT_EQ(p.genuine.size(), 10u);
  EXPECT_EQ(h.impostor_attempts_on("bob").size(), 5u);
  EXPECT_EQ(h.impostor_attempts_on("carol").size(), 5u);
  EXPECT_EQ(h.typed_by("alice", StepKind::Chosen).front()->target_password, "alicepw");
}

TEST_F(CaptureTest, LoneParticipantWaitsForTargets) {
  const auto tok = service_->register_user("alice", "alice", "secretpw");
  const auto view = service_->start_session("alice", tok);
  EXPECT_TRUE(view.impostor_targets.empty());
  for (int i = 0; i < 20; ++i) ASSERT_TRUE(submit_next(view, tok).accepted);
  auto blocked = submit_next(view, tok);
  EXPECT_FALSE(blocked.accepted);
  EXPECT_EQ(blocked.reason, Errc::NoImpostorTargets);
  EXPECT_FALSE(blocked.session.targets);
  EXPECT_EQ(blocked.session.progress.remaining, 5u);

  service_->register_user("bob", "b", "bp");
  service_->register_user("carol", "c", "cp");
  const auto resumed = submit_next(view, tok);
  EXPECT_TRUE(resumed.accepted);
  EXPECT_EQ(resumed.session.impostor_targets.size(), 2u);
}

TEST_F(CaptureTest, RestartLosesNothing) {
  std::map<std::string, std::string> tokens;
  for (const std::string u : {"alice", "bob", "carol"})
    tokens[u] = service_->register_user(u, u + "log", u + "pw");
  const auto view = service_->start_session("alice", tokens["alice"]);
  for (int i = 0; i < 23; ++i) ASSERT_TRUE(submit_next(view, tokens["alice"]).accepted);
  const auto before = service_->export_canonical();
  const auto coverage = service_->coverage();

  service_ = make();
  EXPECT_EQ(service_->export_canonical(), before);
  EXPECT_EQ(load(data(), unverified()).size(), 23u);
  EXPECT_EQ(service_->coverage(), coverage);
  EXPECT_THROW(service_->register_user("bob", "x", "y"), Error);

  // The old session is gone; the next one is number 2 with a fresh id.
  EXPECT_THROW(service_->progress(view.id, tokens["alice"]), Error);
  const auto next = service_->start_session("alice", tokens["alice"]);
  EXPECT_EQ(next.session_no, 2);
  EXPECT_NE(next.id, view.id);
}

TEST_F(CaptureTest, TargetsGoToLeastCovered) {
  std::map<std::string, std::string> tokens;
  const std::vector<std::string> users = {"u1", "u2", "u3", "u4", "u5", "u6"};
  for (const auto& u : users) tokens[u] = service_->register_user(u, u + "l", u + "p");
  for (int round = 0; round < 6; ++round) {
    for (const auto& u : users) {
      // Expected pick: the two smallest (coverage, id) among the others.
      std::vector<std::pair<std::size_t, std::string>> ranked;
      for (const auto& [v, c] : service_->coverage())
        if (v != u) ranked.emplace_back(c, v);
      std::sort(ranked.begin(), ranked.end());
      const auto view = service_->start_session(u, tokens[u]);
      EXPECT_EQ(view.impostor_targets,
                (std::vector<std::string>{ranked[0].second, ranked[1].second}));
    }
    // With everyone taking turns the spread stays small. A participant who
    // is the only one left at the minimum can lift one other target two
    // above it, so 1 is not reachable online.
    std::size_t lo = SIZE_MAX, hi = 0;
    for (const auto& [_, c] : service_->coverage()) lo = std::min(lo, c), hi = std::max(hi, c);
    EXPECT_LE(hi - lo, 2u) << "round " << round;
  }
}

TEST_F(CaptureTest, TokensAndErrors) {
  const auto tok = service_->register_user("alice", "alice", "secretpw");
  EXPECT_EQ(tok, issue_token("secret", "alice"));
  EXPECT_EQ(tok.size(), 64u);
  EXPECT_NE(tok, issue_token("secret", "bob"));
  EXPECT_TRUE(same_token(tok, service_->token_for("alice")));
  EXPECT_FALSE(same_token(tok, tok.substr(1)));

  auto code_of = [](auto&& f) {
    try {
      f();
    } catch (const Error& e) {
      return e.code();
    }
    return Errc::InvalidInput;
  };
  EXPECT_EQ(code_of([&] { service_->register_user("alice", "a", "b"); }), Errc::AlreadyRegistered);
  EXPECT_EQ(code_of([&] { service_->start_session("zed", tok); }), Errc::UnknownUser);
  EXPECT_EQ(code_of([&] { service_->start_session("alice", "nope"); }), Errc::Unauthorized);
  EXPECT_EQ(code_of([&] { service_->progress("s999", tok); }), Errc::UnknownSession);

  service_->register_user("bob", "b", "bp");
  const auto view = service_->start_session("alice", tok);
  EXPECT_EQ(code_of([&] { service_->progress(view.id, service_->token_for("bob")); }),
            Errc::Unauthorized);
}

TEST(CaptureConfigCheck, ImposedPairIsRequired) {
  const auto path = fs::temp_directory_path() / "keystroke_capture_cfg.ndjson";
  CaptureConfig c;
  c.token_secret = "s";
  EXPECT_THROW(CaptureService(c, std::make_shared<DatasetWriter>(path)), Error);
  fs::remove(path);
}

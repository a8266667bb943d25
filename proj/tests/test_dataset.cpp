#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <thread>

#include "keystroke/dataset.hpp"
#include "keystroke/synthetic.hpp"

using namespace keystroke;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() /
            ("keystroke_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter_++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  fs::path operator/(const std::string& name) const { return path_ / name; }
  const fs::path& path() const { return path_; }

 private:
  static inline int counter_ = 0;
  fs::path path_;
};

EventStream typed(Field f, std::initializer_list<std::int32_t> codes) {
  EventStream s{f, {}};
  Millis t = 0;
  for (auto c : codes) {
    s.events.push_back({c, EventKind::Press, t});
    s.events.push_back({c, EventKind::Release, t + 80});
    t += 150;
  }
  return s;
}

SampleRecord record(std::string user, int session, Step step) {
  SampleRecord r;
  r.user = std::move(user);
  r.session = session;
  r.step = std::move(step);
  r.target_login = "abc";
  r.target_password = "s3cret";
  r.env = {{"browser", "test"}};
  r.captured_at = 1000 + session;
  r.login_events = typed(Field::Login, {65, 66, 67});
  r.password_events = typed(Field::Password, {83, 51, 67, 82, 69, 84});
  return r;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

}  // namespace

TEST(Dataset, EmptyFileLoadsEmpty) {
  TempDir dir;
  write_text(dir / "empty.ndjson", "");
  auto h = load(dir / "empty.ndjson");
  EXPECT_EQ(h.size(), 0u);
  EXPECT_TRUE(h.quarantined().empty());
}

TEST(Dataset, MissingFileIsIoError) {
  TempDir dir;
  try {
    load(dir / "nope.ndjson");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::IoError);
  }
}

TEST(Dataset, LineFormat) {
  auto r = record("u1", 2, Step::impostor_of_user("u2"));
  r.login_events = typed(Field::Login, {65});
  r.password_events = typed(Field::Password, {66});
  r.env = {};
  EXPECT_EQ(to_json_line(r),
            R"({"user":"u1","session":2,"step":"impostor","impostor_of":"u2",)"
            R"("target_login":"abc","target_password":"s3cret","env":{},"captured_at":1002,)"
            R"("login_events":[["P",65,0],["R",65,80]],"password_events":[["P",66,0],["R",66,80]]})");
  EXPECT_EQ(from_json_line(to_json_line(r)), r);
}

TEST(Dataset, ReleaseWithoutPressIsQuarantined) {
  TempDir dir;
  auto r = record("u1", 1, Step::chosen());
  r.login_events.events.insert(r.login_events.events.begin(), {70, EventKind::Release, 0});
  write_text(dir / "bad.ndjson", to_json_line(r) + "\n");
  auto h = load(dir / "bad.ndjson");
  EXPECT_EQ(h.size(), 0u);
  ASSERT_EQ(h.quarantined().size(), 1u);
  EXPECT_EQ(h.quarantined()[0].line, 1u);
  EXPECT_NE(h.quarantined()[0].reason.find("UnmatchedEvent"), std::string::npos);
}

TEST(Dataset, LoadIsTotal) {
  TempDir dir;
  auto good = record("u1", 1, Step::chosen());
  auto self_impostor = record("u1", 1, Step::impostor_of_user("u1"));
  auto untracked = record("u2", 1, Step::chosen());
  untracked.login_events = typed(Field::Login, {65, 112});
  std::string text = to_json_line(good) + "\n{not json\n\n" + to_json_line(self_impostor) + "\n" +
                     R"({"user":"x"})" + "\n" + to_json_line(untracked) + "\n";
  write_text(dir / "mixed.ndjson", text);
  auto h = load(dir / "mixed.ndjson");
  EXPECT_EQ(h.size(), 1u);
  ASSERT_EQ(h.quarantined().size(), 4u);
  EXPECT_EQ(h.quarantined()[0].line, 2u);
  EXPECT_EQ(h.quarantined()[1].line, 4u);

  LoadOptions strict;
  strict.strict = true;
  try {
    load(dir / "mixed.ndjson", strict);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::FormatError);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
}

TEST(Dataset, CanonicalOrderAndPartition) {
  std::vector<SampleRecord> rs = {record("u2", 1, Step::chosen()), record("u1", 2, Step::imposed()),
                                  record("u1", 1, Step::impostor_of_user("u2")),
                                  record("u1", 1, Step::imposed())};
  rs[0].captured_at = 1;
  DatasetHandle h(rs);
  ASSERT_EQ(h.size(), 4u);
  EXPECT_EQ(h.records()[0].user, "u1");
  EXPECT_EQ(h.records()[0].step.kind, StepKind::Imposed);
  EXPECT_EQ(h.records()[1].step.kind, StepKind::Impostor);
  EXPECT_EQ(h.records()[2].session, 2);
  EXPECT_EQ(h.records()[3].user, "u2");

  auto p = partition(h);
  EXPECT_EQ(p.genuine.size(), 1u);
  EXPECT_EQ(p.impostor.size(), 1u);
  EXPECT_EQ(p.imposed.size(), 2u);
  EXPECT_EQ(format_counts(p), "1 + 1 / 2");
  EXPECT_EQ(h.impostor_attempts_on("u2").size(), 1u);
  EXPECT_EQ(h.typed_by("u1", StepKind::Imposed).size(), 2u);

  auto e = partition(DatasetHandle{});
  EXPECT_EQ(e.genuine.size() + e.impostor.size() + e.imposed.size(), 0u);
}

TEST(Dataset, CaptureOrderIsStableWithinStep) {
  std::vector<SampleRecord> rs;
  for (int i = 0; i < 5; ++i) {
    auto r = record("u1", 1, Step::chosen());
    r.captured_at = 100 - i;
    rs.push_back(r);
  }
  DatasetHandle h(rs);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(h.records()[i].captured_at, 100 - i);
}

TEST(Dataset, StoreLoadRoundTrip) {
  TempDir dir;
  synthetic::SyntheticSpec spec;
  spec.users = 4;
  spec.sessions = 4;
  spec.per_step = 3;
  spec.impostor_per_target = 2;
  const auto h = synthetic::generate(spec);
  store(h, dir / "a.ndjson");
  const auto loaded = load(dir / "a.ndjson");
  EXPECT_EQ(loaded, h);
  EXPECT_TRUE(loaded.quarantined().empty());

  // store(load(x)) is byte-identical.
  store(loaded, dir / "b.ndjson");
  EXPECT_EQ(read_file(dir / "a.ndjson"), read_file(dir / "b.ndjson"));
  // Two stores of one handle are identical too.
  store(h, dir / "c.ndjson");
  EXPECT_EQ(read_file(dir / "a.ndjson"), read_file(dir / "c.ndjson"));

  const auto m = manifest_from_json(read_file(manifest_path(dir / "a.ndjson")));
  EXPECT_EQ(m, make_manifest(h));
  EXPECT_EQ(m.records, h.size());
  EXPECT_EQ(m.genuine + m.impostor + m.imposed, m.records);
}

TEST(Dataset, StaleManifestIsDetected) {
  TempDir dir;
  DatasetHandle h({record("u1", 1, Step::chosen()), record("u2", 1, Step::chosen())});
  store(h, dir / "d.ndjson");
  auto text = read_file(dir / "d.ndjson");
  text += to_json_line(record("u3", 1, Step::chosen())) + "\n";
  write_text(dir / "d.ndjson", text);
  try {
    load(dir / "d.ndjson");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ChecksumMismatch);
  }
  LoadOptions skip;
  skip.verify_manifest = false;
  EXPECT_EQ(load(dir / "d.ndjson", skip).size(), 3u);
}

TEST(Dataset, CrashBeforeRenameLeavesOldFile) {
  TempDir dir;
  DatasetHandle before({record("u1", 1, Step::chosen())});
  DatasetHandle after({record("u1", 1, Step::chosen()), record("u2", 1, Step::chosen())});
  store(before, dir / "e.ndjson");
  StoreOptions crash;
  crash.before_rename = [] { throw std::runtime_error("simulated crash"); };
  EXPECT_THROW(store(after, dir / "e.ndjson", crash), std::runtime_error);
  EXPECT_EQ(load(dir / "e.ndjson"), before);
  for (const auto& entry : fs::directory_iterator(dir.path()))
    EXPECT_EQ(entry.path().string().find(".tmp."), std::string::npos) << entry.path();
}

TEST(Dataset, ConcurrentStoresHaveOneWinner) {
  TempDir dir;
  std::vector<DatasetHandle> handles;
  for (int k = 0; k < 6; ++k) {
    std::vector<SampleRecord> rs;
    for (int i = 0; i <= k * 20; ++i) rs.push_back(record("u" + std::to_string(k), 1 + i % 4, Step::chosen()));
    handles.emplace_back(rs);
  }
  for (int round = 0; round < 5; ++round) {
    std::vector<std::thread> threads;
    for (const auto& h : handles) threads.emplace_back([&] { store(h, dir / "f.ndjson"); });
    for (auto& t : threads) t.join();
    const auto loaded = load(dir / "f.ndjson");
    EXPECT_TRUE(std::any_of(handles.begin(), handles.end(),
                            [&](const DatasetHandle& h) { return h == loaded; }));
  }
}

TEST(Dataset, WriterAppendsDurablyAndDropsManifest) {
  TempDir dir;
  DatasetHandle h({record("u1", 1, Step::chosen())});
  store(h, dir / "g.ndjson");
  {
    DatasetWriter w(dir / "g.ndjson");
    EXPECT_FALSE(fs::exists(manifest_path(dir / "g.ndjson")));
    w.append(record("u2", 1, Step::chosen()));
    auto bad = record("u3", 1, Step::chosen());
    bad.target_login.clear();
    EXPECT_THROW(w.append(bad), Error);
  }
  EXPECT_EQ(load(dir / "g.ndjson").size(), 2u);
}

TEST(Dataset, AdapterHook) {
  // A foreign CSV-ish format: user;session;login keys as "code:press:release" pairs.
  LoadOptions opts;
  opts.adapter = [](std::string_view line) -> std::optional<SampleRecord> {
    if (line.rfind("#", 0) == 0) return std::nullopt;
    auto r = record(std::string(line.substr(0, line.find(';'))), 1, Step::chosen());
    return r;
  };
  auto h = parse_dataset("# header\nalice;1\nbob;1\n", opts);
  EXPECT_EQ(h.size(), 2u);
  EXPECT_EQ(h.users(), (std::vector<std::string>{"alice", "bob"}));
}

TEST(Dataset, SessionSummaryFlagsPartialSessions) {
  std::vector<SampleRecord> rs;
  for (int i = 0; i < 2; ++i) rs.push_back(record("u1", 1, Step::imposed()));
  for (int i = 0; i < 2; ++i) rs.push_back(record("u1", 1, Step::chosen()));
  for (int i = 0; i < 2; ++i) rs.push_back(record("u1", 1, Step::impostor_of_user("u2")));
  rs.push_back(record("u1", 2, Step::imposed()));
  auto sums = summarize_sessions(DatasetHandle(rs), 2, 2);
  ASSERT_EQ(sums.size(), 2u);
  EXPECT_TRUE(sums[0].complete);
  EXPECT_FALSE(sums[1].complete);
}

TEST(Dataset, RebaseShiftsToZero) {
  EventStream s{Field::Login, {{65, EventKind::Press, 500}, {65, EventKind::Release, 580}}};
  auto r = rebase(s);
  EXPECT_EQ(r.events[0].timestamp, 0);
  EXPECT_EQ(r.events[1].timestamp, 80);
}

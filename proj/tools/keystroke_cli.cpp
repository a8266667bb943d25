#include <pthread.h>
#include <signal.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "keystroke/capture_server.hpp"
#include "keystroke/keystroke.hpp"

namespace fs = std::filesystem;
using namespace keystroke;
using nlohmann::ordered_json;

namespace {

// Exit codes by error class.
enum Exit : int {
  kOk = 0,
  kUnexpected = 1,
  kUsage = 2,
  kInvalidInput = 3,
  kDataError = 4,
  kIoError = 5,
  kEvaluationFailed = 6,
  kServiceError = 7,
};

int exit_code(Errc code) {
  switch (code) {
    case Errc::InvalidInput: return kInvalidInput;
    case Errc::FormatError:
    case Errc::ChecksumMismatch:
    case Errc::MalformedStream:
    case Errc::UnmatchedEvent: return kDataError;
    case Errc::IoError: return kIoError;
    case Errc::NoEligibleUsers:
    case Errc::InsufficientSamples:
    case Errc::DimensionMismatch:
    case Errc::KindMismatch:
    case Errc::EmptyScores:
    case Errc::EmptyScoreList:
    case Errc::EmptySelection:
    case Errc::MissingTemplatePart:
    case Errc::TooFewKeys: return kEvaluationFailed;
    default: return kServiceError;
  }
}

std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

class RunManifest {
 public:
  explicit RunManifest(std::string command) {
    j_["command"] = std::move(command);
    j_["version"] = KEYSTROKE_VERSION;
    j_["config"] = ordered_json::object();
    j_["started_at"] = now_ms();
  }

  ordered_json& config() { return j_["config"]; }
  void set(const std::string& key, ordered_json value) { j_[key] = std::move(value); }
  void add_output(const fs::path& p) { j_["outputs"].push_back(p.string()); }

  void write(const fs::path& path) {
    j_["finished_at"] = now_ms();
    detail::atomic_write(path, j_.dump(2) + "\n");
  }

 private:
  ordered_json j_;
};

void write_output(const fs::path& path, const std::string& text, RunManifest& manifest) {
  detail::atomic_write(path, text);
  manifest.add_output(path);
}

DatasetHandle load_dataset(const std::string& path, bool strict) {
  LoadOptions options;
  options.strict = strict;
  auto h = load(path, options);
  for (const auto& q : h.quarantined())
    std::cerr << "quarantined " << path << ":" << q.line << ": " << q.reason << "\n";
  return h;
}

// ---------------------------------------------------------------- generate

struct GenerateArgs {
  synthetic::SyntheticSpec spec;
  std::string out;
};

int cmd_generate(const GenerateArgs& a) {
  RunManifest manifest("generate");
  auto& c = manifest.config();
  c["users"] = a.spec.users;
  c["sessions"] = a.spec.sessions;
  c["per_step"] = a.spec.per_step;
  c["impostor_per_target"] = a.spec.impostor_per_target;
  c["login_keys"] = a.spec.login_keys;
  c["password_keys"] = a.spec.password_keys;
  c["password_keys_max"] = a.spec.password_keys_max;
  c["separation"] = a.spec.separation;
  c["noise_heterogeneity"] = a.spec.noise_heterogeneity;
  manifest.set("seed", a.spec.seed);

  const auto handle = synthetic::generate(a.spec);
  store(handle, a.out);
  manifest.set("dataset_checksum", handle.checksum());
  manifest.add_output(a.out);
  manifest.add_output(manifest_path(a.out));
  manifest.write(a.out + ".run.json");
  std::cout << "wrote " << a.out << ": " << handle.users().size() << " users, "
            << format_counts(partition(handle)) << " (genuine + impostor / imposed)\n";
  return kOk;
}

// -------------------------------------------------------------------- eval

struct EvalArgs {
  std::string data;
  std::string imposed_data;
  std::string out_dir = "results";
  std::size_t train = 20;
  std::size_t min_test = 20;
  double sigma_floor = kDefaultSigmaFloor;
  unsigned threads = 0;
  bool strict = false;
  std::string dataset_kind = "chosen";
  std::size_t size_threshold = password::kSizeThreshold;
  double entropy_threshold = password::kEntropyThreshold;
  // eval run
  std::string field = "both";
  std::vector<std::string> features = {"pr", "rp", "rr", "pp"};
};

GridSettings settings_of(const EvalArgs& a) {
  GridSettings s;
  s.train_count = a.train;
  s.min_test = a.min_test;
  s.sigma_floor = a.sigma_floor;
  s.eval.threads = a.threads;
  return s;
}

RunManifest eval_manifest(const std::string& what, const EvalArgs& a, const DatasetHandle& data) {
  RunManifest m("eval " + what);
  auto& c = m.config();
  c["data"] = a.data;
  if (!a.imposed_data.empty()) c["imposed_data"] = a.imposed_data;
  c["train_count"] = a.train;
  c["min_test"] = a.min_test;
  c["sigma_floor"] = a.sigma_floor;
  m.set("dataset_checksum", data.checksum());
  return m;
}

int worst_cell(const std::vector<const GridCell*>& cells) {
  int code = kOk;
  for (const auto* cell : cells)
    if (!cell->ok()) code = std::max(code, exit_code(cell->error_code.value_or(Errc::InvalidInput)));
  return code;
}

int cmd_simple_grid(const EvalArgs& a) {
  const auto chosen = load_dataset(a.data, a.strict);
  std::optional<DatasetHandle> imposed;
  if (!a.imposed_data.empty()) imposed = load_dataset(a.imposed_data, a.strict);
  auto manifest = eval_manifest("simple-grid", a, chosen);
  if (imposed) manifest.set("imposed_dataset_checksum", imposed->checksum());

  const auto grid = run_simple_grid(chosen, imposed ? *imposed : chosen, settings_of(a));
  const bool synthetic = chosen.is_synthetic() || (imposed && imposed->is_synthetic());
  std::cout << report::simple_grid_text(grid, synthetic);

  fs::create_directories(a.out_dir);
  write_output(fs::path(a.out_dir) / "simple_grid.csv", report::simple_grid_csv(grid), manifest);
  manifest.write(fs::path(a.out_dir) / "simple_grid.manifest.json");

  std::vector<const GridCell*> cells;
  for (const auto& row : grid.rows)
    for (const auto& cell : row) cells.push_back(&cell);
  return worst_cell(cells);
}

DatasetKind parse_dataset_kind(const std::string& s) {
  if (s == "chosen") return DatasetKind::Chosen;
  if (s == "imposed") return DatasetKind::Imposed;
  throw Error(Errc::InvalidInput, "dataset must be chosen or imposed, got " + s);
}

int cmd_fusion_grid(const EvalArgs& a) {
  const auto data = load_dataset(a.data, a.strict);
  auto manifest = eval_manifest("fusion-grid", a, data);
  manifest.config()["dataset"] = a.dataset_kind;

  const auto grid = run_fusion_grid(data, settings_of(a), parse_dataset_kind(a.dataset_kind));
  std::cout << report::fusion_grid_text(grid, data.is_synthetic());

  fs::create_directories(a.out_dir);
  write_output(fs::path(a.out_dir) / "fusion_grid.csv", report::fusion_grid_csv(grid), manifest);
  manifest.write(fs::path(a.out_dir) / "fusion_grid.manifest.json");

  std::vector<const GridCell*> cells;
  for (const auto& row : grid.rows) cells.push_back(&row.cell);
  return worst_cell(cells);
}

int cmd_correlation(const EvalArgs& a) {
  const auto data = load_dataset(a.data, a.strict);
  auto manifest = eval_manifest("correlation", a, data);
  manifest.config()["size_threshold"] = a.size_threshold;
  manifest.config()["entropy_threshold"] = a.entropy_threshold;

  const auto r = correlation_study(data, settings_of(a), a.size_threshold, a.entropy_threshold);
  std::cout << report::correlation_text(r, data.is_synthetic());

  std::string users = "user,password_size,password_entropy,password_complexity,eer\n";
  for (const auto& u : r.users)
    users += u.user + "," + std::to_string(u.metrics.size) + "," +
             report::csv_number(u.metrics.entropy) + "," +
             report::csv_number(u.metrics.complexity) + "," + report::csv_number(u.eer) + "\n";

  fs::create_directories(a.out_dir);
  write_output(fs::path(a.out_dir) / "correlation.csv", report::correlation_csv(r), manifest);
  write_output(fs::path(a.out_dir) / "correlation_users.csv", users, manifest);
  manifest.write(fs::path(a.out_dir) / "correlation.manifest.json");
  return kOk;
}

int cmd_run(const EvalArgs& a) {
  const auto data = load_dataset(a.data, a.strict);
  ExperimentConfig c;
  c.dataset = parse_dataset_kind(a.dataset_kind);
  if (a.field == "login") c.field = FieldSelection::Login;
  else if (a.field == "password") c.field = FieldSelection::Password;
  else if (a.field == "both") c.field = FieldSelection::Both;
  else throw Error(Errc::InvalidInput, "field must be login, password or both");
  c.features.clear();
  for (const auto& f : a.features) {
    const auto k = parse_feature_kind(f);
    if (!k) throw Error(Errc::InvalidInput, "unknown feature kind " + f);
    c.features.insert(*k);
  }
  c.train_count = a.train;
  c.min_test = a.min_test;
  c.sigma_floor = a.sigma_floor;

  auto manifest = eval_manifest("run", a, data);
  manifest.config()["dataset"] = a.dataset_kind;
  manifest.config()["field"] = a.field;
  manifest.config()["features"] = features_label(c.features);

  GridCell cell{c, std::nullopt, {}, std::nullopt};
  try {
    cell.result = evaluate(c, data, EvalOptions{a.threads});
  } catch (const Error& e) {
    cell.error = e.what();
    cell.error_code = e.code();
  }
  if (cell.ok()) {
    std::cout << "EERi " << report::percent(cell.result->eer_i) << "  EERg "
              << report::percent(cell.result->eer_g) << "  (" << cell.result->per_user.size()
              << " users, " << cell.result->excluded.size() << " excluded)\n";
    for (const auto& e : cell.result->excluded)
      std::cout << "  excluded " << e.user << ": " << e.reason << "\n";
    if (data.is_synthetic()) std::cout << report::kSyntheticFooter << "\n";
  } else {
    std::cerr << "error: " << cell.error << "\n";
  }
  fs::create_directories(a.out_dir);
  write_output(fs::path(a.out_dir) / "run.csv", report::kCsvHeader + "\n" + report::csv_row(cell) + "\n",
               manifest);
  manifest.write(fs::path(a.out_dir) / "run.manifest.json");
  return worst_cell({&cell});
}

// ------------------------------------------------------------------- stats

int cmd_stats(const std::string& data, bool strict) {
  const auto h = load_dataset(data, strict);
  const auto p = partition(h);
  std::cout << "records     " << h.size() << "\n"
            << "users       " << h.users().size() << "\n"
            << "genuine     " << p.genuine.size() << "\n"
            << "impostor    " << p.impostor.size() << "\n"
            << "imposed     " << p.imposed.size() << "\n"
            << "quarantined " << h.quarantined().size() << "\n"
            << "summary     " << format_counts(p) << "\n"
            << "checksum    " << h.checksum() << "\n";
  std::size_t partial = 0;
  for (const auto& s : summarize_sessions(h))
    if (!s.complete) {
      ++partial;
      std::cout << "partial session: " << s.user << " #" << s.session << " (" << s.imposed << "/"
                << s.chosen << "/" << s.impostor << ")\n";
    }
  std::cout << "partial     " << partial << "\n";
  return kOk;
}

// ------------------------------------------------------------------- serve

struct ServeArgs {
  std::string data;
  std::string registry;
  std::string imposed_login;
  std::string imposed_password;
  std::string token_secret;
  std::string operator_token;
  std::string host = "127.0.0.1";
  int port = 8080;
};

int cmd_serve(const ServeArgs& a) {
  if (a.imposed_login.empty() || a.imposed_password.empty())
    throw Error(Errc::InvalidInput, "--imposed-login and --imposed-password are required");

  // Signals are taken synchronously by one thread so shutdown goes through
  // the server's own stop path.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  RunManifest manifest("serve");
  manifest.config()["data"] = a.data;
  manifest.config()["host"] = a.host;
  manifest.config()["port"] = a.port;

  capture::CaptureConfig config;
  config.imposed_login = a.imposed_login;
  config.imposed_password = a.imposed_password;
  config.token_secret = a.token_secret;
  config.registry_path = a.registry.empty() ? a.data + ".registry.ndjson" : a.registry;
  capture::CaptureService service(config, std::make_shared<DatasetWriter>(a.data));
  capture::CaptureServer server(service, a.operator_token);

  int port = a.port;
  if (port == 0) {
    port = server.bind_to_any_port(a.host);
    if (port < 0) throw Error(Errc::IoError, "cannot bind " + a.host);
  } else if (!server.bind(a.host, port)) {
    throw Error(Errc::IoError, "cannot bind " + a.host + ":" + std::to_string(port));
  }
  std::cout << "listening on " << a.host << ":" << port << std::endl;

  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    server.stop();
  });
  server.listen_after_bind();
  if (waiter.joinable()) {
    // listen returned on its own: wake the waiter.
    pthread_kill(waiter.native_handle(), SIGTERM);
    waiter.join();
  }
  manifest.set("dataset_checksum", sha256_hex(fs::exists(a.data) ? read_file(a.data) : ""));
  manifest.write(a.data + ".serve.run.json");
  std::cout << "stopped" << std::endl;
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Keystroke dynamics toolkit"};
  app.set_version_flag("--version", std::string(KEYSTROKE_VERSION));
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "write a seeded synthetic dataset");
  generate->add_option("--users", gen.spec.users, "participants (>= 2)")->capture_default_str();
  generate->add_option("--sessions", gen.spec.sessions, "sessions per participant (>= 4)")
      ->capture_default_str();
  generate->add_option("--per-step", gen.spec.per_step, "imposed and chosen inputs per session")
      ->capture_default_str();
  generate->add_option("--impostor-per-target", gen.spec.impostor_per_target)->capture_default_str();
  generate->add_option("--login-keys", gen.spec.login_keys)->capture_default_str();
  generate->add_option("--password-keys", gen.spec.password_keys)->capture_default_str();
  generate->add_option("--password-keys-max", gen.spec.password_keys_max,
                       "draw password lengths up to this size");
  generate->add_option("--separation", gen.spec.separation, "user spread in noise sigmas")
      ->capture_default_str();
  generate->add_option("--noise-heterogeneity", gen.spec.noise_heterogeneity)->capture_default_str();
  generate->add_option("--seed", gen.spec.seed)->envname("KEYSTROKE_SEED")->capture_default_str();
  generate->add_option("--out", gen.out, "output dataset")->required()->envname("KEYSTROKE_DATA");

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "run verification experiments");
  eval->require_subcommand(1);
  auto common = [&](CLI::App* sub) {
    sub->add_option("--data", ev.data, "dataset file")->required()->envname("KEYSTROKE_DATA");
    sub->add_option("--out-dir", ev.out_dir, "CSV and manifest directory")->capture_default_str();
    sub->add_option("--train", ev.train, "enrollment samples")->capture_default_str();
    sub->add_option("--min-test", ev.min_test, "minimum test samples")->capture_default_str();
    sub->add_option("--sigma-floor", ev.sigma_floor, "ms")->capture_default_str();
    sub->add_option("--threads", ev.threads, "0 = all cores")->capture_default_str();
    sub->add_flag("--strict", ev.strict, "fail on the first bad record");
  };
  auto* simple = eval->add_subcommand("simple-grid", "single feature kinds, 16 cells");
  common(simple);
  simple->add_option("--imposed-data", ev.imposed_data, "separate dataset for the imposed column");
  auto* fusion = eval->add_subcommand("fusion-grid", "feature fusion, 13 selections");
  common(fusion);
  fusion->add_option("--dataset", ev.dataset_kind, "chosen or imposed")->capture_default_str();
  auto* corr = eval->add_subcommand("correlation", "EER against password size/entropy/complexity");
  common(corr);
  corr->add_option("--size-threshold", ev.size_threshold)->capture_default_str();
  corr->add_option("--entropy-threshold", ev.entropy_threshold)->capture_default_str();
  auto* run = eval->add_subcommand("run", "one experiment");
  common(run);
  run->add_option("--dataset", ev.dataset_kind, "chosen or imposed")->capture_default_str();
  run->add_option("--field", ev.field, "login, password or both")->capture_default_str();
  run->add_option("--features", ev.features, "pr rp rr pp")->delimiter(',');

  std::string stats_data;
  bool stats_strict = false;
  auto* stats = app.add_subcommand("stats", "dataset counts");
  stats->add_option("--data", stats_data)->required()->envname("KEYSTROKE_DATA");
  stats->add_flag("--strict", stats_strict);

  ServeArgs sv;
  auto* serve = app.add_subcommand("serve", "run the capture service");
  serve->add_option("--data", sv.data, "dataset to append to")->required()->envname("KEYSTROKE_DATA");
  serve->add_option("--registry", sv.registry, "participant registry (default <data>.registry.ndjson)");
  serve->add_option("--imposed-login", sv.imposed_login);
  serve->add_option("--imposed-password", sv.imposed_password);
  serve->add_option("--token-secret", sv.token_secret)
      ->required()
      ->envname("KEYSTROKE_TOKEN_SECRET");
  serve->add_option("--operator-token", sv.operator_token, "enables GET /export")
      ->envname("KEYSTROKE_OPERATOR_TOKEN");
  serve->add_option("--host", sv.host)->capture_default_str();
  serve->add_option("--port", sv.port, "0 picks a free port")->capture_default_str();

  auto* keycodes = app.add_subcommand("keycodes", "print the key filter table as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (generate->parsed()) return cmd_generate(gen);
    if (simple->parsed()) return cmd_simple_grid(ev);
    if (fusion->parsed()) return cmd_fusion_grid(ev);
    if (corr->parsed()) return cmd_correlation(ev);
    if (run->parsed()) return cmd_run(ev);
    if (stats->parsed()) return cmd_stats(stats_data, stats_strict);
    if (serve->parsed()) return cmd_serve(sv);
    if (keycodes->parsed()) {
      std::cout << capture::keycode_table().dump(2) << "\n";
      return kOk;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUnexpected;
  }
  return kUsage;
}

#pragma once

#include <algorithm>
#include <array>
#include <functional>
#include <future>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "keystroke/dataset.hpp"
#include "keystroke/eer.hpp"
#include "keystroke/error.hpp"
#include "keystroke/kruskal_wallis.hpp"
#include "keystroke/password_metrics.hpp"
#include "keystroke/verifier.hpp"

namespace keystroke {

enum class DatasetKind { Chosen, Imposed };
enum class FieldSelection { Login, Password, Both };

constexpr std::string_view to_string(DatasetKind d) noexcept {
  return d == DatasetKind::Chosen ? "chosen" : "imposed";
}

constexpr std::string_view to_string(FieldSelection f) noexcept {
  switch (f) {
    case FieldSelection::Login: return "login";
    case FieldSelection::Password: return "password";
    case FieldSelection::Both: return "both";
  }
  return "?";
}

inline std::vector<Field> fields_of(FieldSelection f) {
  switch (f) {
    case FieldSelection::Login: return {Field::Login};
    case FieldSelection::Password: return {Field::Password};
    case FieldSelection::Both: return {Field::Login, Field::Password};
  }
  return {};
}

struct ExperimentConfig {
  DatasetKind dataset = DatasetKind::Chosen;
  FieldSelection field = FieldSelection::Both;
  std::set<FeatureKind> features = {FeatureKind::PR, FeatureKind::RP, FeatureKind::RR,
                                    FeatureKind::PP};
  std::size_t train_count = 20;
  std::size_t min_test = 20;
  double sigma_floor = kDefaultSigmaFloor;

  Selection selection() const {
    std::vector<FeatureKind> kinds(features.begin(), features.end());
    auto fields = fields_of(field);
    return make_selection(kinds, fields);
  }

  void validate() const {
    if (features.empty()) throw Error(Errc::InvalidInput, "experiment needs at least one feature");
    if (train_count < 2) throw Error(Errc::InvalidInput, "train_count must be >= 2");
  }
};

inline std::string features_label(const std::set<FeatureKind>& features) {
  std::string out;
  for (auto k : features) {
    if (!out.empty()) out += '+';
    out += to_string(k);
  }
  return out;
}

struct Exclusion {
  std::string user;
  std::string reason;
};

struct EERResult {
  double eer_i = 0.0;  // mean of per-user EERs
  double eer_g = 0.0;  // single threshold over pooled scores
  double threshold_g = 0.0;
  std::map<std::string, double> per_user;
  std::map<std::string, double> per_user_threshold;
  std::vector<Exclusion> excluded;
  std::size_t genuine_scores = 0;
  std::size_t impostor_scores = 0;
};

/// Feature parts of every record of a dataset, extracted once.
class FeatureTable {
 public:
  explicit FeatureTable(const DatasetHandle& handle) : base_(handle.records().data()) {
    parts_.reserve(handle.size());
    for (const auto& r : handle.records())
      parts_.push_back(extract_parts(r.login_events, r.password_events));
  }

  const SampleParts& of(const SampleRecord* record) const {
    return parts_.at(static_cast<std::size_t>(record - base_));
  }

 private:
  const SampleRecord* base_;
  std::vector<SampleParts> parts_;
};

/// Builds the templates for one user. Enrollment vectors whose size differs
/// from the most common size of that part are left out; a part with fewer
/// than two usable vectors cannot be built and yields nullopt.
inline std::optional<CompositeTemplate> enroll(const std::string& user,
                                               const std::vector<const SampleParts*>& samples,
                                               const Selection& selection, double sigma_floor,
                                               std::string* why = nullptr) {
  CompositeTemplate tmpl{user, {}};
  for (const auto& part : selection) {
    std::map<std::size_t, std::size_t> size_counts;
    for (const auto* s : samples) {
      auto it = s->find(part);
      if (it != s->end()) ++size_counts[it->second.size()];
    }
    // Most frequent size, smaller size on ties.
    std::size_t best_size = 0, best_count = 0;
    for (const auto& [size, count] : size_counts)
      if (count > best_count) best_size = size, best_count = count;
    if (best_count < 2) {
      if (why) *why = "cannot build " + to_string(part) + " template";
      return std::nullopt;
    }
    std::vector<FeatureVector> vectors;
    for (const auto* s : samples) {
      auto it = s->find(part);
      if (it != s->end() && it->second.size() == best_size) vectors.push_back(it->second);
    }
    tmpl.parts.emplace(part, build_template(vectors, sigma_floor));
  }
  return tmpl;
}

struct EvalOptions {
  unsigned threads = 1;  // 0 = hardware concurrency
};

namespace detail {

struct UserScores {
  std::optional<Exclusion> excluded;
  ScoreSet scores;
};

inline UserScores score_user(const std::string& user, const ExperimentConfig& config,
                             const Selection& selection, const DatasetHandle& dataset,
                             const FeatureTable& table,
                             const std::vector<std::string>& all_users) {
  UserScores out;
  out.scores.unit = user;
  auto exclude = [&](std::string reason) {
    out.excluded = Exclusion{user, std::move(reason)};
    return out;
  };

  const auto step = config.dataset == DatasetKind::Chosen ? StepKind::Chosen : StepKind::Imposed;
  const auto genuine = dataset.typed_by(user, step);
  if (genuine.size() < config.train_count + config.min_test)
    return exclude(std::to_string(genuine.size()) + " genuine samples, need " +
                   std::to_string(config.train_count) + " training + " +
                   std::to_string(config.min_test) + " test");

  std::vector<const SampleRecord*> impostors;
  if (config.dataset == DatasetKind::Chosen) {
    impostors = dataset.impostor_attempts_on(user);
  } else {
    // Everyone typed the imposed pair: other users' inputs are the attacks.
    for (const auto& other : all_users) {
      if (other == user) continue;
      auto theirs = dataset.typed_by(other, StepKind::Imposed);
      impostors.insert(impostors.end(), theirs.begin(), theirs.end());
    }
  }
  if (impostors.empty()) return exclude("no impostor samples");

  std::vector<const SampleParts*> enrollment;
  for (std::size_t i = 0; i < config.train_count; ++i) enrollment.push_back(&table.of(genuine[i]));
  std::string why;
  auto tmpl = enroll(user, enrollment, selection, config.sigma_floor, &why);
  if (!tmpl) return exclude(why);

  for (std::size_t i = config.train_count; i < genuine.size(); ++i)
    out.scores.genuine.push_back(composite_score(table.of(genuine[i]), *tmpl, selection));
  for (const auto* r : impostors)
    out.scores.impostor.push_back(composite_score(table.of(r), *tmpl, selection));
  return out;
}

}  // namespace detail

/// Runs one experiment: per-user enrollment on the first train_count
/// samples, single-attempt scoring of the rest and of the impostor
/// attempts, per-user and pooled EER.
inline EERResult evaluate(const ExperimentConfig& config, const DatasetHandle& dataset,
                          const FeatureTable& table, const EvalOptions& options = {}) {
  config.validate();
  const auto selection = config.selection();
  const auto users = dataset.users();

  std::vector<detail::UserScores> per_user(users.size());
  unsigned threads = options.threads == 0 ? std::max(1u, std::thread::hardware_concurrency())
                                          : options.threads;
  threads = std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(1, users.size())));
  if (threads <= 1) {
    for (std::size_t i = 0; i < users.size(); ++i)
      per_user[i] = detail::score_user(users[i], config, selection, dataset, table, users);
  } else {
    std::vector<std::future<void>> workers;
    for (unsigned w = 0; w < threads; ++w) {
      workers.push_back(std::async(std::launch::async, [&, w] {
        for (std::size_t i = w; i < users.size(); i += threads)
          per_user[i] = detail::score_user(users[i], config, selection, dataset, table, users);
      }));
    }
    for (auto& f : workers) f.get();
  }

  // Aggregation in canonical user order.
  EERResult result;
  std::vector<double> pooled_genuine, pooled_impostor;
  double sum = 0.0;
  for (auto& u : per_user) {
    if (u.excluded) {
      result.excluded.push_back(*u.excluded);
      continue;
    }
    const auto point = compute_eer(u.scores);
    result.per_user[u.scores.unit] = point.eer;
    result.per_user_threshold[u.scores.unit] = point.threshold;
    sum += point.eer;
    for (auto s : u.scores.genuine) pooled_genuine.push_back(s.value());
    for (auto s : u.scores.impostor) pooled_impostor.push_back(s.value());
  }
  if (result.per_user.empty())
    throw Error(Errc::NoEligibleUsers, "no user passes the sample-count filter (" +
                                           std::to_string(result.excluded.size()) + " excluded)");
  result.eer_i = sum / static_cast<double>(result.per_user.size());
  const auto global = compute_eer(pooled_genuine, pooled_impostor);
  result.eer_g = global.eer;
  result.threshold_g = global.threshold;
  result.genuine_scores = pooled_genuine.size();
  result.impostor_scores = pooled_impostor.size();
  return result;
}

inline EERResult evaluate(const ExperimentConfig& config, const DatasetHandle& dataset,
                          const EvalOptions& options = {}) {
  FeatureTable table(dataset);
  return evaluate(config, dataset, table, options);
}

struct GridCell {
  ExperimentConfig config;
  std::optional<EERResult> result;
  std::string error;  // set when the experiment failed
  std::optional<Errc> error_code;

  bool ok() const noexcept { return result.has_value(); }
};

namespace detail {

inline GridCell run_cell(const ExperimentConfig& config, const DatasetHandle& dataset,
                         const FeatureTable& table, const EvalOptions& options) {
  GridCell cell{config, std::nullopt, {}, std::nullopt};
  try {
    cell.result = evaluate(config, dataset, table, options);
  } catch (const Error& e) {
    cell.error = e.what();
    cell.error_code = e.code();
  }
  return cell;
}

}  // namespace detail

struct GridSettings {
  std::size_t train_count = 20;
  std::size_t min_test = 20;
  double sigma_floor = kDefaultSigmaFloor;
  EvalOptions eval;
};

// Single feature kind per field and dataset.
struct SimpleGrid {
  // Row r = field * 4 + kind (pr, rp, rr, pp; login then password);
  // column 0 = chosen, 1 = imposed.
  std::vector<std::array<GridCell, 2>> rows;

  std::size_t cell_count() const noexcept { return rows.size() * 2; }
};

/// Every (kind, field, dataset) experiment, 4 x 2 x 2 cells. A failing cell
/// records its error and the grid carries on.
inline SimpleGrid run_simple_grid(const DatasetHandle& chosen, const DatasetHandle& imposed,
                                  const GridSettings& settings = {}) {
  FeatureTable chosen_table(chosen);
  std::optional<FeatureTable> imposed_storage;
  const FeatureTable* imposed_table = &chosen_table;
  if (&chosen != &imposed) imposed_table = &imposed_storage.emplace(imposed);

  SimpleGrid grid;
  for (auto field : kAllFields) {
    for (auto kind : kAllKinds) {
      std::array<GridCell, 2> row;
      for (auto d : {DatasetKind::Chosen, DatasetKind::Imposed}) {
        ExperimentConfig c;
        c.dataset = d;
        c.field = field == Field::Login ? FieldSelection::Login : FieldSelection::Password;
        c.features = {kind};
        c.train_count = settings.train_count;
        c.min_test = settings.min_test;
        c.sigma_floor = settings.sigma_floor;
        const bool is_chosen = d == DatasetKind::Chosen;
        row[is_chosen ? 0 : 1] =
            detail::run_cell(c, is_chosen ? chosen : imposed,
                             is_chosen ? chosen_table : *imposed_table, settings.eval);
      }
      grid.rows.push_back(std::move(row));
    }
  }
  return grid;
}

inline SimpleGrid run_simple_grid(const DatasetHandle& dataset, const GridSettings& settings = {}) {
  return run_simple_grid(dataset, dataset, settings);
}

struct FusionRow {
  std::string group;  // "Login only", "Password only", "Login and password"
  FieldSelection field = FieldSelection::Both;
  std::set<FeatureKind> features;
  GridCell cell;
};

struct FusionGrid {
  std::vector<FusionRow> rows;
  std::optional<double> mean_eer_i;
  std::optional<double> mean_eer_g;
};

/// The thirteen fusion selections over pr, rr and pp, in report order.
inline std::vector<FusionRow> fusion_selections() {
  using K = FeatureKind;
  std::vector<FusionRow> rows;
  const std::vector<std::set<K>> single_field = {{K::PR, K::PP}, {K::PR, K::RR, K::PP}, {K::RR, K::PP}};
  const std::vector<std::set<K>> both_fields = {{K::PR},         {K::RR},         {K::PP},
                                                {K::PR, K::RR},  {K::PR, K::PP},  {K::RR, K::PP},
                                                {K::PR, K::RR, K::PP}};
  for (const auto& f : single_field) rows.push_back({"Login only", FieldSelection::Login, f, {}});
  for (const auto& f : single_field)
    rows.push_back({"Password only", FieldSelection::Password, f, {}});
  for (const auto& f : both_fields)
    rows.push_back({"Login and password", FieldSelection::Both, f, {}});
  return rows;
}

inline FusionGrid run_fusion_grid(const DatasetHandle& dataset, const GridSettings& settings = {},
                                  DatasetKind kind = DatasetKind::Chosen) {
  FeatureTable table(dataset);
  FusionGrid grid;
  grid.rows = fusion_selections();
  double sum_i = 0.0, sum_g = 0.0;
  std::size_t ok = 0;
  for (auto& row : grid.rows) {
    ExperimentConfig c;
    c.dataset = kind;
    c.field = row.field;
    c.features = row.features;
    c.train_count = settings.train_count;
    c.min_test = settings.min_test;
    c.sigma_floor = settings.sigma_floor;
    row.cell = detail::run_cell(c, dataset, table, settings.eval);
    if (row.cell.ok()) {
      sum_i += row.cell.result->eer_i;
      sum_g += row.cell.result->eer_g;
      ++ok;
    }
  }
  if (ok > 0) {
    grid.mean_eer_i = sum_i / static_cast<double>(ok);
    grid.mean_eer_g = sum_g / static_cast<double>(ok);
  }
  return grid;
}

struct PartitionTest {
  std::string name;  // size, entropy, complexity
  double threshold = 0.0;
  std::size_t n_above = 0;
  std::size_t n_below = 0;
  std::optional<double> mean_above;
  std::optional<double> mean_below;
  std::optional<stats::KWResult> kw;  // nullopt: fewer than two non-empty groups
};

struct UserPasswordEer {
  std::string user;
  std::string password;
  password::Metrics metrics;
  double eer = 0.0;
};

struct CorrelationReport {
  std::vector<UserPasswordEer> users;
  std::vector<PartitionTest> partitions;
  std::vector<Exclusion> excluded;
};

namespace detail {

inline PartitionTest split_test(std::string name, double threshold,
                                const std::vector<UserPasswordEer>& users,
                                const std::function<double(const UserPasswordEer&)>& value) {
  PartitionTest t;
  t.name = std::move(name);
  t.threshold = threshold;
  std::vector<double> above, below;
  for (const auto& u : users) (value(u) > threshold ? above : below).push_back(u.eer);
  t.n_above = above.size();
  t.n_below = below.size();
  auto mean = [](const std::vector<double>& v) -> std::optional<double> {
    if (v.empty()) return std::nullopt;
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  t.mean_above = mean(above);
  t.mean_below = mean(below);
  if (!above.empty() && !below.empty() && above.size() + below.size() >= 3) {
    std::vector<std::vector<double>> groups = {above, below};
    t.kw = stats::kruskal_wallis(groups);
  }
  return t;
}

}  // namespace detail

/// Does verification performance depend on the password? Per-user EERs of
/// the fused password features are split by size (> 8 characters), entropy
/// (> 2.7 bits) and complexity (> population mean) and each split goes
/// through a Kruskal-Wallis test.
inline CorrelationReport correlation_study(const DatasetHandle& dataset,
                                           const GridSettings& settings = {},
                                           std::size_t size_threshold = password::kSizeThreshold,
                                           double entropy_threshold = password::kEntropyThreshold) {
  ExperimentConfig c;
  c.dataset = DatasetKind::Chosen;
  c.field = FieldSelection::Password;
  c.train_count = settings.train_count;
  c.min_test = settings.min_test;
  c.sigma_floor = settings.sigma_floor;
  const auto result = evaluate(c, dataset, settings.eval);

  CorrelationReport report;
  report.excluded = result.excluded;
  for (const auto& [user, eer] : result.per_user) {
    const auto own = dataset.typed_by(user, StepKind::Chosen);
    const auto& pw = own.front()->target_password;
    report.users.push_back({user, pw, password::measure(pw), eer});
  }

  double mean_complexity = 0.0;
  for (const auto& u : report.users) mean_complexity += u.metrics.complexity;
  mean_complexity /= static_cast<double>(report.users.size());

  report.partitions.push_back(detail::split_test(
      "size", static_cast<double>(size_threshold), report.users,
      [](const UserPasswordEer& u) { return static_cast<double>(u.metrics.size); }));
  report.partitions.push_back(detail::split_test(
      "entropy", entropy_threshold, report.users,
      [](const UserPasswordEer& u) { return u.metrics.entropy; }));
  report.partitions.push_back(detail::split_test(
      "complexity", mean_complexity, report.users,
      [](const UserPasswordEer& u) { return u.metrics.complexity; }));
  return report;
}

}  // namespace keystroke

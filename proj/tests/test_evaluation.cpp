#include <gtest/gtest.h>

#include "keystroke/evaluation.hpp"
#include "keystroke/synthetic.hpp"
#include "oracles.hpp"

using namespace keystroke;

namespace {

DatasetHandle population(std::size_t users, double separation, std::uint64_t seed = 3) {
  synthetic::SyntheticSpec spec;
  spec.users = users;
  spec.separation = separation;
  spec.seed = seed;
  return synthetic::generate(spec);
}

// Scores one user's attempts straight from the verifier primitives.
std::pair<std::vector<double>, std::vector<double>> reference_scores(
    const DatasetHandle& h, const std::string& user, const Selection& sel, std::size_t train) {
  const auto genuine = h.typed_by(user, StepKind::Chosen);
  std::map<Part, std::vector<FeatureVector>> enroll;
  for (std::size_t i = 0; i < train; ++i) {
    auto parts = extract_parts(genuine[i]->login_events, genuine[i]->password_events);
    for (const auto& p : sel) enroll[p].push_back(parts.at(p));
  }
  std::map<Part, Template> tmpl;
  for (auto& [p, v] : enroll) tmpl.emplace(p, build_template(v));
  auto score = [&](const SampleRecord* r) {
    auto parts = extract_parts(r->login_events, r->password_events);
    double sum = 0;
    for (const auto& p : sel) sum += distance(parts.at(p), tmpl.at(p)).value();
    return sum / static_cast<double>(sel.size());
  };
  std::vector<double> g, i;
  for (std::size_t k = train; k < genuine.size(); ++k) g.push_back(score(genuine[k]));
  for (const auto* r : h.impostor_attempts_on(user)) i.push_back(score(r));
  return {g, i};
}

}  // namespace

TEST(Evaluate, MatchesDirectComputation) {
  const auto h = population(6, 2.0);
  ExperimentConfig c;
  c.features = {FeatureKind::PP, FeatureKind::RR};
  const auto r = evaluate(c, h);
  ASSERT_TRUE(r.excluded.empty());
  ASSERT_EQ(r.per_user.size(), 6u);

  double sum = 0;
  std::vector<double> all_g, all_i;
  for (const auto& u : h.users()) {
    auto [g, i] = reference_scores(h, u, c.selection(), c.train_count);
    const double eer = oracle::eer_sweep(g, i);
    EXPECT_NEAR(r.per_user.at(u), eer, 1e-9) << u;
    sum += eer;
    all_g.insert(all_g.end(), g.begin(), g.end());
    all_i.insert(all_i.end(), i.begin(), i.end());
  }
  EXPECT_NEAR(r.eer_i, sum / 6.0, 1e-9);
  EXPECT_NEAR(r.eer_g, oracle::eer_sweep(all_g, all_i), 1e-9);
  EXPECT_EQ(r.genuine_scores, all_g.size());
  EXPECT_EQ(r.impostor_scores, all_i.size());
}

TEST(Evaluate, ThreadCountDoesNotChangeResults) {
  const auto h = population(9, 1.5);
  ExperimentConfig c;
  EvalOptions one{1}, many{4}, hw{0};
  const auto a = evaluate(c, h, one);
  const auto b = evaluate(c, h, many);
  const auto d = evaluate(c, h, hw);
  EXPECT_EQ(a.eer_i, b.eer_i);
  EXPECT_EQ(a.eer_g, b.eer_g);
  EXPECT_EQ(a.per_user, b.per_user);
  EXPECT_EQ(a.eer_g, d.eer_g);
  EXPECT_EQ(evaluate(c, h, one).eer_g, a.eer_g);
}

TEST(Evaluate, SampleCountFilter) {
  auto records = population(4, 2.0).records();
  // Drop user u001 to 39 chosen samples.
  std::vector<SampleRecord> kept;
  std::size_t seen = 0;
  for (const auto& r : records) {
    if (r.user == "u001" && r.step.kind == StepKind::Chosen && ++seen > 39) continue;
    kept.push_back(r);
  }
  DatasetHandle h(kept);
  const auto r = evaluate(ExperimentConfig{}, h);
  ASSERT_EQ(r.excluded.size(), 1u);
  EXPECT_EQ(r.excluded[0].user, "u001");
  EXPECT_NE(r.excluded[0].reason.find("39"), std::string::npos);
  EXPECT_EQ(r.per_user.size(), 3u);
  EXPECT_FALSE(r.per_user.count("u001"));

  ExperimentConfig strict;
  strict.min_test = 1000;
  try {
    evaluate(strict, h);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::NoEligibleUsers);
  }
}

TEST(Evaluate, UserWithoutImpostorsIsExcluded) {
  auto records = population(3, 2.0).records();
  std::vector<SampleRecord> kept;
  for (const auto& r : records)
    if (!(r.step.kind == StepKind::Impostor && r.step.impostor_of == "u002")) kept.push_back(r);
  const auto r = evaluate(ExperimentConfig{}, DatasetHandle(kept));
  ASSERT_EQ(r.excluded.size(), 1u);
  EXPECT_EQ(r.excluded[0].user, "u002");
}

TEST(Evaluate, ImposedDatasetAttacksWithOtherUsers) {
  const auto h = population(4, 2.0);
  ExperimentConfig c;
  c.dataset = DatasetKind::Imposed;
  c.features = {FeatureKind::PP};
  const auto r = evaluate(c, h);
  EXPECT_EQ(r.per_user.size(), 4u);
  // 30 test inputs each; the other three users' 50 imposed inputs each.
  EXPECT_EQ(r.genuine_scores, 4u * 30u);
  EXPECT_EQ(r.impostor_scores, 4u * 150u);
}

TEST(Evaluate, ConfigValidation) {
  const auto h = population(3, 2.0);
  ExperimentConfig c;
  c.features.clear();
  EXPECT_THROW(evaluate(c, h), Error);
  c = {};
  c.train_count = 1;
  EXPECT_THROW(evaluate(c, h), Error);
  EXPECT_EQ(features_label({FeatureKind::RR, FeatureKind::PR}), "pr+rr");
}

TEST(Evaluate, SeparationDrivesError) {
  const auto none = evaluate(ExperimentConfig{}, population(12, 0.0));
  const auto wide = evaluate(ExperimentConfig{}, population(12, 6.0));
  EXPECT_GT(none.eer_g, 0.35);
  EXPECT_LT(wide.eer_i, 0.05);
  EXPECT_LT(wide.eer_g, 0.10);
}

TEST(Enroll, OffSizeVectorsAreDropped) {
  const Part p{Field::Login, FeatureKind::PP};
  SampleParts a{{p, {FeatureKind::PP, Field::Login, {100, 110}}}};
  SampleParts b{{p, {FeatureKind::PP, Field::Login, {120, 130}}}};
  SampleParts odd{{p, {FeatureKind::PP, Field::Login, {500}}}};
  auto t = enroll("u", {&a, &odd, &b}, {p}, kDefaultSigmaFloor);
  ASSERT_TRUE(t);
  EXPECT_EQ(t->parts.at(p).mu, (std::vector<double>{110, 120}));
  EXPECT_EQ(t->parts.at(p).enroll_count, 2u);

  std::string why;
  EXPECT_FALSE(enroll("u", {&a, &odd}, {p}, kDefaultSigmaFloor, &why));
  EXPECT_FALSE(why.empty());
}

TEST(Grids, SimpleGridShape) {
  const auto h = population(4, 2.0);
  const auto g = run_simple_grid(h);
  ASSERT_EQ(g.rows.size(), 8u);
  EXPECT_EQ(g.cell_count(), 16u);
  for (std::size_t r = 0; r < 8; ++r) {
    for (std::size_t c = 0; c < 2; ++c) {
      const auto& cell = g.rows[r][c];
      EXPECT_TRUE(cell.ok()) << cell.error;
      EXPECT_EQ(cell.config.features.size(), 1u);
      EXPECT_EQ(*cell.config.features.begin(), kAllKinds[r % 4]);
      EXPECT_EQ(cell.config.field, r < 4 ? FieldSelection::Login : FieldSelection::Password);
      EXPECT_EQ(cell.config.dataset, c == 0 ? DatasetKind::Chosen : DatasetKind::Imposed);
    }
  }
}

TEST(Grids, FailingCellsDoNotAbortGrid) {
  const auto h = population(3, 2.0);
  GridSettings s;
  s.min_test = 1000;
  const auto g = run_simple_grid(h, s);
  EXPECT_EQ(g.cell_count(), 16u);
  for (const auto& row : g.rows)
    for (const auto& cell : row) {
      EXPECT_FALSE(cell.ok());
      EXPECT_NE(cell.error.find("NoEligibleUsers"), std::string::npos);
    }
  const auto f = run_fusion_grid(h, s);
  EXPECT_EQ(f.rows.size(), 13u);
  EXPECT_FALSE(f.mean_eer_i);
}

TEST(Grids, FusionGridShapeAndMean) {
  const auto h = population(5, 2.0);
  const auto f = run_fusion_grid(h);
  ASSERT_EQ(f.rows.size(), 13u);
  EXPECT_EQ(f.rows[0].group, "Login only");
  EXPECT_EQ(f.rows[3].group, "Password only");
  EXPECT_EQ(f.rows[6].group, "Login and password");
  double sum = 0;
  for (const auto& r : f.rows) {
    ASSERT_TRUE(r.cell.ok());
    EXPECT_FALSE(r.features.count(FeatureKind::RP));
    sum += r.cell.result->eer_i;
  }
  ASSERT_TRUE(f.mean_eer_i);
  EXPECT_NEAR(*f.mean_eer_i, sum / 13.0, 1e-12);
}

TEST(Correlation, SharedPasswordLeavesNothingToSplit) {
  auto records = population(5, 2.0).records();
  for (auto& r : records)
    if (r.step.kind != StepKind::Imposed) r.target_password = "same";
  const auto report = correlation_study(DatasetHandle(records));
  ASSERT_EQ(report.partitions.size(), 3u);
  for (const auto& p : report.partitions) {
    EXPECT_FALSE(p.kw) << p.name;
    EXPECT_EQ(p.n_above + p.n_below, 5u);
  }
}

TEST(Correlation, LongPasswordsWithSteadierTypingAreDetected) {
  synthetic::SyntheticSpec spec;
  spec.users = 30;
  spec.password_keys = 4;
  spec.password_keys_max = 14;
  spec.separation = 1.5;
  spec.seed = 11;
  spec.noise_scale = [](std::size_t, std::string_view pw) { return pw.size() > 8 ? 0.3 : 3.0; };
  const auto report = correlation_study(synthetic::generate(spec));
  const auto& size = report.partitions[0];
  EXPECT_EQ(size.name, "size");
  ASSERT_TRUE(size.kw);
  EXPECT_GT(size.n_above, 0u);
  EXPECT_GT(size.n_below, 0u);
  EXPECT_EQ(size.kw->decision, stats::Decision::RejectH0);
  EXPECT_LT(*size.mean_above, *size.mean_below);

  for (const auto& u : report.users) EXPECT_EQ(u.metrics, password::measure(u.password));
}

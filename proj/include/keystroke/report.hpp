#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "keystroke/evaluation.hpp"

namespace keystroke::report {

inline constexpr std::string_view kSyntheticFooter =
    "Synthetic data: values are not comparable to published results obtained on a real "
    "capture campaign.";

/// EER as a percentage with two decimals, zero padded ("08.87%").
inline std::string percent(double eer) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05.2f%%", eer * 100.0);
  return buf;
}

inline std::string csv_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

namespace detail {

inline std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

// Marks: '*' best of the line, '_' best of the column.
inline std::string mark(const std::string& value, bool row_best, bool col_best) {
  std::string out = value;
  out += row_best ? "*" : " ";
  out += col_best ? "_" : " ";
  return out;
}

inline std::string excluded_users(const EERResult& r) {
  std::string out;
  for (const auto& e : r.excluded) {
    if (!out.empty()) out += ';';
    out += e.user;
  }
  return out;
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline bool nearly_equal(double a, double b) { return std::abs(a - b) < 1e-12; }

}  // namespace detail

inline const std::string kCsvHeader =
    "dataset,field,features,train_count,min_test,eer_i,eer_g,eligible_users,excluded_users,error";

inline std::string csv_row(const GridCell& cell) {
  const auto& c = cell.config;
  std::ostringstream out;
  out << to_string(c.dataset) << ',' << to_string(c.field) << ',' << features_label(c.features)
      << ',' << c.train_count << ',' << c.min_test << ',';
  if (cell.ok()) {
    const auto& r = *cell.result;
    out << csv_number(r.eer_i) << ',' << csv_number(r.eer_g) << ',' << r.per_user.size() << ','
        << detail::csv_escape(detail::excluded_users(r)) << ',';
  } else {
    out << ",,,," << detail::csv_escape(cell.error);
  }
  return out.str();
}

inline std::string simple_grid_csv(const SimpleGrid& grid) {
  std::string out = kCsvHeader + "\n";
  for (const auto& row : grid.rows)
    for (const auto& cell : row) out += csv_row(cell) + "\n";
  return out;
}

/// Text table: one line per (kind, field), EERi/EERg for the chosen then
/// the imposed dataset, and a mean line.
inline std::string simple_grid_text(const SimpleGrid& grid, bool synthetic) {
  constexpr std::size_t w = 11;
  std::ostringstream out;
  out << "Authentication results for single extracted features\n";
  out << detail::pad("", 6) << detail::pad("", 10) << detail::pad("Chosen dataset", 2 * w)
      << "Imposed dataset\n";
  out << detail::pad("Type", 6) << detail::pad("Field", 10) << detail::pad("EERi", w)
      << detail::pad("EERg", w) << detail::pad("EERi", w) << "EERg\n";

  // Column bests over the four value columns.
  std::array<std::optional<double>, 4> col_best;
  auto value = [](const GridCell& c, int which) -> std::optional<double> {
    if (!c.ok()) return std::nullopt;
    return which == 0 ? c.result->eer_i : c.result->eer_g;
  };
  for (const auto& row : grid.rows)
    for (int col = 0; col < 4; ++col)
      if (auto v = value(row[col / 2], col % 2); v && (!col_best[col] || *v < *col_best[col]))
        col_best[col] = v;

  std::array<double, 4> sums{};
  std::array<std::size_t, 4> counts{};
  for (std::size_t r = 0; r < grid.rows.size(); ++r) {
    const auto& row = grid.rows[r];
    if (r == 4) out << std::string(6 + 10 + 4 * w, '-') << "\n";
    const auto& cfg = row[0].config;
    out << detail::pad(std::string(to_string(*cfg.features.begin())), 6)
        << detail::pad(cfg.field == FieldSelection::Login ? "login" : "pwd", 10);
    std::optional<double> row_best;
    for (int col = 0; col < 4; ++col)
      if (auto v = value(row[col / 2], col % 2); v && (!row_best || *v < *row_best)) row_best = v;
    for (int col = 0; col < 4; ++col) {
      auto v = value(row[col / 2], col % 2);
      if (!v) {
        out << detail::pad("n/a", w);
        continue;
      }
      sums[col] += *v;
      ++counts[col];
      out << detail::pad(detail::mark(percent(*v), detail::nearly_equal(*v, *row_best),
                                      detail::nearly_equal(*v, *col_best[col])),
                         w);
    }
    out << "\n";
  }
  out << detail::pad("", 6) << detail::pad("Mean", 10);
  for (int col = 0; col < 4; ++col)
    out << detail::pad(counts[col] ? percent(sums[col] / static_cast<double>(counts[col])) : "n/a",
                       w);
  out << "\n";
  out << "* best of the line, _ best of the column\n";
  for (const auto& row : grid.rows)
    for (const auto& cell : row)
      if (!cell.ok()) out << "error: " << cell.error << "\n";
  if (synthetic) out << kSyntheticFooter << "\n";
  return out.str();
}

inline std::string fusion_grid_csv(const FusionGrid& grid) {
  std::string out = "group," + kCsvHeader + "\n";
  for (const auto& row : grid.rows) out += detail::csv_escape(row.group) + "," + csv_row(row.cell) + "\n";
  if (grid.mean_eer_i)
    out += "mean,,,,,," + csv_number(*grid.mean_eer_i) + "," + csv_number(*grid.mean_eer_g) +
           ",,,\n";
  return out;
}

/// Text table with one check column per (field, kind) over pr, rr, pp.
inline std::string fusion_grid_text(const FusionGrid& grid, bool synthetic) {
  constexpr std::size_t w = 11;
  std::ostringstream out;
  out << "Authentication results for feature fusion\n";
  out << detail::pad("Login", 12) << detail::pad("Password", 12) << "\n";
  out << "pr  rr  pp  pr  rr  pp  " << detail::pad("EERi", w) << "EERg\n";

  std::optional<double> best_i, best_g;
  for (const auto& row : grid.rows) {
    if (!row.cell.ok()) continue;
    if (!best_i || row.cell.result->eer_i < *best_i) best_i = row.cell.result->eer_i;
    if (!best_g || row.cell.result->eer_g < *best_g) best_g = row.cell.result->eer_g;
  }

  std::string group;
  for (const auto& row : grid.rows) {
    if (row.group != group) {
      group = row.group;
      out << "[" << group << "]\n";
    }
    for (auto field : kAllFields) {
      const bool field_on = row.field == FieldSelection::Both ||
                            (row.field == FieldSelection::Login) == (field == Field::Login);
      for (auto kind : {FeatureKind::PR, FeatureKind::RR, FeatureKind::PP})
        out << (field_on && row.features.count(kind) ? "x   " : ".   ");
    }
    if (!row.cell.ok()) {
      out << "error: " << row.cell.error << "\n";
      continue;
    }
    const auto& r = *row.cell.result;
    const double line_best = std::min(r.eer_i, r.eer_g);
    out << detail::pad(detail::mark(percent(r.eer_i), detail::nearly_equal(r.eer_i, line_best),
                                    detail::nearly_equal(r.eer_i, *best_i)),
                       w)
        << detail::mark(percent(r.eer_g), detail::nearly_equal(r.eer_g, line_best),
                        detail::nearly_equal(r.eer_g, *best_g))
        << "\n";
  }
  out << detail::pad("", 16) << detail::pad("Mean", 8)
      << detail::pad(grid.mean_eer_i ? percent(*grid.mean_eer_i) : "n/a", w)
      << (grid.mean_eer_g ? percent(*grid.mean_eer_g) : "n/a") << "\n";
  out << "* best of the line, _ best overall\n";
  if (synthetic) out << kSyntheticFooter << "\n";
  return out.str();
}

inline std::string_view method_label(stats::PValueMethod m) {
  switch (m) {
    case stats::PValueMethod::ExactPermutation: return "exact";
    case stats::PValueMethod::ChiSquare: return "chi-square";
    case stats::PValueMethod::Degenerate: return "degenerate";
  }
  return "?";
}

inline std::string correlation_csv(const CorrelationReport& report) {
  std::ostringstream out;
  out << "partition,threshold,n_above,n_below,mean_eer_above,mean_eer_below,H,dof,p_value,"
         "p_chi_square,method,decision\n";
  for (const auto& p : report.partitions) {
    out << p.name << ',' << csv_number(p.threshold) << ',' << p.n_above << ',' << p.n_below << ','
        << (p.mean_above ? csv_number(*p.mean_above) : "") << ','
        << (p.mean_below ? csv_number(*p.mean_below) : "") << ',';
    if (p.kw) {
      out << csv_number(p.kw->h) << ',' << p.kw->dof << ',' << csv_number(p.kw->p_value) << ','
          << csv_number(p.kw->p_chi_square) << ',' << method_label(p.kw->method) << ','
          << (p.kw->decision == stats::Decision::AcceptH0 ? "accept_h0" : "reject_h0");
    } else {
      out << ",,,,,not_applicable";
    }
    out << '\n';
  }
  return out.str();
}

inline std::string correlation_text(const CorrelationReport& report, bool synthetic) {
  std::ostringstream out;
  out << "Performance against password size, entropy and complexity (" << report.users.size()
      << " users, fused password features)\n";
  for (const auto& p : report.partitions) {
    char thr[32];
    std::snprintf(thr, sizeof thr, "%g", p.threshold);
    out << "  " << detail::pad(p.name, 11) << "threshold " << detail::pad(thr, 9) << "above: "
        << detail::pad(p.mean_above ? percent(*p.mean_above) : "n/a", 8) << "(" << p.n_above
        << " users)  at or below: "
        << detail::pad(p.mean_below ? percent(*p.mean_below) : "n/a", 8) << "(" << p.n_below
        << " users)  ";
    if (p.kw) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "p-value=%.4g (%s) -> %s", p.kw->p_value,
                    std::string(method_label(p.kw->method)).c_str(),
                    p.kw->decision == stats::Decision::AcceptH0 ? "no significant impact"
                                                                : "significant impact");
      out << buf;
    } else {
      out << "not applicable (one group is empty)";
    }
    out << "\n";
  }
  if (synthetic) out << kSyntheticFooter << "\n";
  return out.str();
}

}  // namespace keystroke::report

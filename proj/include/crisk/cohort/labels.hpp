#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "crisk/cohort/cohort.hpp"

namespace crisk::cohort {

using Date = std::chrono::sys_days;

/// Events on or before imaging + this many days exclude the subject.
inline constexpr int kExclusionDays = 92;
inline constexpr double kDaysPerYear = 365.25;

/// Parses a strict ISO-8601 calendar date (YYYY-MM-DD).
inline std::optional<Date> parse_date(const std::string& s) {
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') return std::nullopt;
  for (std::size_t i : {0u, 1u, 2u, 3u, 5u, 6u, 8u, 9u})
    if (s[i] < '0' || s[i] > '9') return std::nullopt;
  const int y = std::stoi(s.substr(0, 4));
  const unsigned m = static_cast<unsigned>(std::stoi(s.substr(5, 2)));
  const unsigned d = static_cast<unsigned>(std::stoi(s.substr(8, 2)));
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m},
                                        std::chrono::day{d}};
  if (!ymd.ok()) return std::nullopt;
  return Date(ymd);
}

inline std::string format_date(Date d) {
  const std::chrono::year_month_day ymd(d);
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return buf;
}

inline double years_between(Date from, Date to) {
  return static_cast<double>((to - from).count()) / kDaysPerYear;
}

struct DiagnosisRecord {
  std::string subject;
  std::string code;
  Date date;
};

struct ImagingVisit {
  std::string subject;
  Date date;
};

/// Ordered map risk name -> inclusion codes. Risk r (1-based) is the r-th entry.
using CodeSets = std::vector<std::pair<std::string, std::vector<std::string>>>;

struct LabelReport {
  std::size_t excluded_prior_or_window = 0;  // any event before imaging + 92 days
  std::size_t excluded_ambiguous = 0;        // first events of two risks on one day
  std::size_t skipped_no_imaging = 0;        // record subjects absent from the imaging table
  std::size_t ignored_records = 0;           // codes outside every code set
  std::size_t censored = 0;
  std::vector<std::size_t> events_per_risk;
};

struct LabelResult {
  Cohort cohort;
  LabelReport report;
};

/// Assigns each imaged subject to the risk of its first recorded event, or
/// to the censored group when it has none. Subjects with any event before or
/// within the exclusion window after imaging are dropped.
inline LabelResult build_labels(const std::vector<DiagnosisRecord>& records,
                                const std::vector<ImagingVisit>& imaging, const CodeSets& code_sets,
                                Date censor_date) {
  std::map<std::string, int> code_risk;
  for (std::size_t r = 0; r < code_sets.size(); ++r) {
    for (auto& code : code_sets[r].second) {
      auto [it, inserted] = code_risk.emplace(code, static_cast<int>(r) + 1);
      if (!inserted && it->second != static_cast<int>(r) + 1) {
        throw ConfigError("code '" + code + "' appears in both " +
                          code_sets[static_cast<std::size_t>(it->second - 1)].first + " and " +
                          code_sets[r].first);
      }
    }
  }

  LabelResult out;
  out.report.events_per_risk.assign(code_sets.size(), 0);
  std::map<std::string, std::size_t> visit_index;
  for (std::size_t i = 0; i < imaging.size(); ++i) {
    if (!visit_index.emplace(imaging[i].subject, i).second) {
      throw DataError("duplicate imaging date for subject " + imaging[i].subject);
    }
  }

  // Earliest event date per subject, with the set of risks seen on that day.
  struct First {
    Date date;
    std::vector<int> risks;
  };
  std::map<std::string, First> first;
  std::map<std::string, bool> skipped;
  for (auto& rec : records) {
    auto cr = code_risk.find(rec.code);
    if (cr == code_risk.end()) {
      ++out.report.ignored_records;
      continue;
    }
    if (rec.date > censor_date) {
      throw DataError("event for subject " + rec.subject + " on " + format_date(rec.date) +
                      " is after the censoring date " + format_date(censor_date));
    }
    if (!visit_index.count(rec.subject)) {
      skipped[rec.subject] = true;
      continue;
    }
    auto [it, inserted] = first.try_emplace(rec.subject, First{rec.date, {cr->second}});
    if (inserted) continue;
    if (rec.date < it->second.date) {
      it->second = First{rec.date, {cr->second}};
    } else if (rec.date == it->second.date) {
      it->second.risks.push_back(cr->second);
    }
  }
  out.report.skipped_no_imaging = skipped.size();

  std::vector<std::string> names;
  for (auto& [n, _] : code_sets) names.push_back(n);
  out.cohort.risk_names = names;

  for (auto& visit : imaging) {
    Subject s;
    s.id = visit.subject;
    auto f = first.find(visit.subject);
    if (f == first.end()) {
      s.event = 0;
      s.time = years_between(visit.date, censor_date);
      if (s.time < 0.0) {
        throw DataError("subject " + s.id + " imaged after the censoring date");
      }
      ++out.report.censored;
      out.cohort.subjects.push_back(std::move(s));
      continue;
    }
    if (f->second.date <= visit.date + std::chrono::days{kExclusionDays}) {
      ++out.report.excluded_prior_or_window;
      continue;
    }
    auto& rs = f->second.risks;
    bool ambiguous = false;
    for (int r : rs) ambiguous = ambiguous || r != rs.front();
    if (ambiguous) {
      ++out.report.excluded_ambiguous;
      continue;
    }
    s.event = rs.front();
    s.time = years_between(visit.date, f->second.date);
    ++out.report.events_per_risk[static_cast<std::size_t>(s.event - 1)];
    out.cohort.subjects.push_back(std::move(s));
  }
  out.cohort.validate();
  return out;
}

// ---------------------------------------------------------------------------
// File readers
// ---------------------------------------------------------------------------

inline Date require_date(const std::string& s, const std::string& where) {
  auto d = parse_date(s);
  if (!d) throw DataError(where + ": bad date '" + s + "', expected YYYY-MM-DD");
  return *d;
}

/// `id,code,date`
inline std::vector<DiagnosisRecord> read_records_csv(const std::filesystem::path& path) {
  auto t = io::read_csv(path);
  if (t.header != std::vector<std::string>{"id", "code", "date"}) {
    throw DataError(path.string() + ": header must be id,code,date");
  }
  std::vector<DiagnosisRecord> out;
  for (auto& row : t.rows) {
    const std::string where = path.string() + ":" + std::to_string(row.line);
    out.push_back({row.fields[0], row.fields[1], require_date(row.fields[2], where)});
  }
  return out;
}

/// `id,date`
inline std::vector<ImagingVisit> read_imaging_csv(const std::filesystem::path& path) {
  auto t = io::read_csv(path);
  if (t.header != std::vector<std::string>{"id", "date"}) {
    throw DataError(path.string() + ": header must be id,date");
  }
  std::vector<ImagingVisit> out;
  for (auto& row : t.rows) {
    const std::string where = path.string() + ":" + std::to_string(row.line);
    out.push_back({row.fields[0], require_date(row.fields[1], where)});
  }
  return out;
}

/// JSON object risk-name -> list of code strings; file order defines risk numbering.
inline CodeSets parse_code_sets(const std::string& text) {
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("code-set file: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("code-set file must be a JSON object");
  CodeSets out;
  for (auto& [name, codes] : j.items()) {
    if (!codes.is_array()) throw ConfigError("code set '" + name + "' must be a list");
    std::vector<std::string> list;
    for (auto& c : codes) {
      if (!c.is_string()) throw ConfigError("code set '" + name + "' holds a non-string code");
      list.push_back(c.get<std::string>());
    }
    out.emplace_back(name, std::move(list));
  }
  return out;
}

inline CodeSets read_code_sets(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return parse_code_sets(text);
}

}  // namespace crisk::cohort

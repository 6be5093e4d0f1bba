#pragma once

#include <algorithm>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "crisk/cohort/cohort.hpp"

namespace crisk::pipeline {

/// Records which subject ids every parameter-fitting call saw, per outer
/// fold, and counts how many of them belong to that fold's test set.
class LeakageAudit {
 public:
  struct Record {
    std::size_t fold = 0;
    std::string stage;
    std::vector<std::string> ids;  ///< sorted
  };

  void register_test(std::size_t fold, std::vector<std::string> ids) {
    std::lock_guard lock(mu_);
    test_[fold] = std::set<std::string>(ids.begin(), ids.end());
  }

  void record(std::size_t fold, const std::string& stage, const cohort::Cohort& c) { record(fold, stage, c.ids()); }

  void record(std::size_t fold, const std::string& stage, std::vector<std::string> ids) {
    std::sort(ids.begin(), ids.end());
    std::lock_guard lock(mu_);
    records_.push_back({fold, stage, std::move(ids)});
  }

  /// Sorted by (fold, stage, ids) so the order does not depend on scheduling.
  std::vector<Record> records() const {
    std::lock_guard lock(mu_);
    auto out = records_;
    std::sort(out.begin(), out.end(), [](const Record& a, const Record& b) {
      return std::tie(a.fold, a.stage, a.ids) < std::tie(b.fold, b.stage, b.ids);
    });
    return out;
  }

  /// Total number of (record, test id) hits across all fits.
  std::size_t test_id_occurrences() const {
    std::lock_guard lock(mu_);
    std::size_t hits = 0;
    for (auto& r : records_) {
      auto it = test_.find(r.fold);
      if (it == test_.end()) continue;
      for (auto& id : r.ids) hits += it->second.count(id);
    }
    return hits;
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return records_.size();
  }

  nlohmann::json summary() const {
    nlohmann::json stages = nlohmann::json::object();
    for (auto& r : records()) {
      auto key = std::to_string(r.fold) + "/" + r.stage;
      stages[key] = stages.value(key, 0) + 1;
    }
    return {{"fits", size()}, {"test_id_occurrences", test_id_occurrences()}, {"stages", stages}};
  }

 private:
  mutable std::mutex mu_;
  std::map<std::size_t, std::set<std::string>> test_;
  std::vector<Record> records_;
};

}  // namespace crisk::pipeline

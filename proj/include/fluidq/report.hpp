#pragma once

#include <cmath>
#include <cstdint>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace fluidq {

struct MetricStats {
  double mean = 0.0;
  double std_error = 0.0;
  int count = 0;
};

inline MetricStats summarize(const std::vector<double>& xs) {
  MetricStats s;
  s.count = static_cast<int>(xs.size());
  if (xs.empty()) return s;
  double acc = 0.0;
  for (double x : xs) acc += x;
  s.mean = acc / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double var = 0.0;
    for (double x : xs) var += (x - s.mean) * (x - s.mean);
    s.std_error = std::sqrt(var / static_cast<double>(xs.size() - 1) /
                            static_cast<double>(xs.size()));
  }
  return s;
}

// Machine-readable experiment outcome: per-group metric statistics,
// named verdicts, and plot-ready series. Serialization is fully
// deterministic for a fixed (spec, master seed) pair.
struct ErrorReport {
  struct Group {
    std::string label;  // e.g. "N=25" or "t=10"
    std::vector<std::pair<std::string, MetricStats>> metrics;
  };
  struct Series {
    std::string name;
    std::vector<std::pair<double, double>> points;  // (t, value)
  };

  std::string experiment;
  nlohmann::ordered_json params;
  std::vector<Group> groups;
  std::vector<std::pair<std::string, bool>> verdicts;
  std::vector<std::string> notes;
  std::uint64_t master_seed = 0;
  long runtime_ms = 0;
  std::vector<Series> series;

  bool all_pass() const {
    for (const auto& [name, ok] : verdicts)
      if (!ok) return false;
    return true;
  }

  const MetricStats* find(const std::string& group_label,
                          const std::string& metric) const {
    for (const auto& g : groups) {
      if (g.label != group_label) continue;
      for (const auto& [name, stats] : g.metrics)
        if (name == metric) return &stats;
    }
    return nullptr;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["experiment"] = experiment;
    j["params"] = params;
    j["master_seed"] = master_seed;
    nlohmann::ordered_json groups_json = nlohmann::ordered_json::array();
    for (const auto& g : groups) {
      nlohmann::ordered_json gj;
      gj["label"] = g.label;
      nlohmann::ordered_json metrics;
      for (const auto& [name, stats] : g.metrics) {
        metrics[name] = {{"mean", stats.mean},
                         {"std_error", stats.std_error},
                         {"count", stats.count}};
      }
      gj["metrics"] = metrics;
      groups_json.push_back(gj);
    }
    j["groups"] = groups_json;
    nlohmann::ordered_json verdicts_json;
    for (const auto& [name, ok] : verdicts) verdicts_json[name] = ok;
    j["verdicts"] = verdicts_json;
    j["all_pass"] = all_pass();
    j["notes"] = notes;
    j["runtime_ms"] = runtime_ms;
    return j;
  }

  void write_json(std::ostream& os) const { os << to_json().dump(2) << "\n"; }

  void write_csv_summary(std::ostream& os) const {
    os << "experiment,group,metric,mean,std_error,count\n";
    char buf[256];
    for (const auto& g : groups) {
      for (const auto& [name, stats] : g.metrics) {
        std::snprintf(buf, sizeof buf, "%s,%s,%s,%.12g,%.12g,%d\n",
                      experiment.c_str(), g.label.c_str(), name.c_str(),
                      stats.mean, stats.std_error, stats.count);
        os << buf;
      }
    }
    for (const auto& [name, ok] : verdicts) {
      std::snprintf(buf, sizeof buf, "%s,verdict,%s,%d,,\n", experiment.c_str(),
                    name.c_str(), ok ? 1 : 0);
      os << buf;
    }
  }

  void write_long_csv(std::ostream& os) const {
    os << "series,t,value\n";
    char buf[160];
    for (const auto& s : series) {
      for (const auto& [t, v] : s.points) {
        std::snprintf(buf, sizeof buf, "%s,%.12g,%.12g\n", s.name.c_str(), t, v);
        os << buf;
      }
    }
  }
};

}  // namespace fluidq

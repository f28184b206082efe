#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <optional>
#include <ostream>
#include <queue>
#include <string>
#include <vector>

#include "fluidq/arrivals.hpp"
#include "fluidq/distribution.hpp"
#include "fluidq/errors.hpp"
#include "fluidq/rng.hpp"

namespace fluidq {

struct SimConfig {
  int num_servers = 1;
  ArrivalModel arrival = ArrivalModel::deterministic(0.0);
  ServiceDistribution service = ServiceDistribution::exponential();
  long initial_count = 0;            // X(0), in service plus queued
  std::vector<double> initial_ages;  // one per initially-in-service customer
  double horizon = 1.0;              // T
  std::uint64_t seed = 0;

  // Residual law for the initial cohort; defaults to the age-conditioned
  // law of the service distribution itself.
  std::optional<ServiceDistribution> initial_residual_law;

  // Test hook: values consumed in draw order instead of sampling. For the
  // initial in-service cohort the value is the residual requirement; for
  // everyone else it is the total requirement.
  std::vector<double> scripted_services;

  long initially_in_service() const {
    return std::min<long>(initial_count, num_servers);
  }

  void validate() const {
    if (num_servers < 1) throw ConfigError("sim: N must be >= 1");
    if (initial_count < 0) throw ConfigError("sim: x0 must be >= 0");
    if (!(horizon > 0.0) || !std::isfinite(horizon))
      throw ConfigError("sim: horizon T must be positive and finite");
    if (static_cast<long>(initial_ages.size()) != initially_in_service())
      throw ConfigError("sim: initial_ages must have length min(x0, N)");
    const ServiceDistribution& law =
        initial_residual_law ? *initial_residual_law : service;
    for (double a : initial_ages) {
      if (!(a >= 0.0)) throw ConfigError("sim: initial ages must be >= 0");
      if (a >= law.support_end())
        throw ConfigError("sim: initial age at or beyond the service support");
    }
  }
};

enum class EventKind { Arrival, Departure };

struct SimEvent {
  double time = 0.0;
  EventKind kind = EventKind::Arrival;
  long customer = 0;
  // System counters immediately after the event.
  long entered_system = 0;  // E
  long in_system = 0;       // X
  long departed = 0;        // D
  long entered_service = 0; // K
  long idle = 0;            // I
};

struct CustomerRecord {
  double arrival_time = 0.0;
  double initial_age = 0.0;  // nonzero only for the initial in-service cohort
  double entry_time = std::numeric_limits<double>::quiet_NaN();
  double departure_time = std::numeric_limits<double>::quiet_NaN();
  double requirement = 0.0;
  bool initial = false;

  bool entered() const { return !std::isnan(entry_time); }
  bool departed() const { return !std::isnan(departure_time); }
  bool in_service_at(double t) const {
    return entered() && entry_time <= t && (!departed() || departure_time > t);
  }
  bool queued_at(double t) const {
    return arrival_time <= t && (!entered() || entry_time > t);
  }
  // Valid while in service; entry_time already encodes the initial age
  // (initial customers entered at -initial_age).
  double age_at(double t) const { return t - entry_time; }
};

// Point measure of in-service ages at a fixed time.
struct AgeMeasure {
  std::vector<std::pair<long, double>> points;  // (customer id, age), sorted by age

  std::size_t size() const { return points.size(); }

  // Number of ages <= a.
  long count_leq(double a) const {
    auto it = std::upper_bound(points.begin(), points.end(), a,
                               [](double v, const auto& p) { return v < p.second; });
    return static_cast<long>(it - points.begin());
  }
};

struct WaitRecord {
  long customer = 0;
  double arrival_time = 0.0;
  double waiting = std::numeric_limits<double>::quiet_NaN();
  double sojourn = std::numeric_limits<double>::quiet_NaN();
  bool entered = false;   // false => waiting censored at the horizon
  bool departed = false;  // false => sojourn censored at the horizon
};

class SimulationPath {
 public:
  SimulationPath(SimConfig cfg, std::vector<SimEvent> events,
                 std::vector<CustomerRecord> customers)
      : cfg_(std::move(cfg)),
        events_(std::move(events)),
        customers_(std::move(customers)) {}

  const SimConfig& config() const { return cfg_; }
  const std::vector<SimEvent>& events() const { return events_; }
  const std::vector<CustomerRecord>& customers() const { return customers_; }
  int num_servers() const { return cfg_.num_servers; }
  double horizon() const { return cfg_.horizon; }

  struct Counters {
    long entered_system, in_system, departed, entered_service, idle;
  };

  // State at time t (right-continuous step evaluation).
  Counters at(double t) const {
    require_in_horizon(t);
    auto it = std::upper_bound(events_.begin(), events_.end(), t,
                               [](double v, const SimEvent& e) { return v < e.time; });
    if (it == events_.begin()) {
      const long m0 = cfg_.initially_in_service();
      return Counters{0, cfg_.initial_count, 0, 0, cfg_.num_servers - m0};
    }
    const SimEvent& e = *(it - 1);
    return Counters{e.entered_system, e.in_system, e.departed, e.entered_service,
                    e.idle};
  }

  AgeMeasure age_measure_at(double t) const {
    require_in_horizon(t);
    AgeMeasure m;
    for (std::size_t j = 0; j < customers_.size(); ++j) {
      const CustomerRecord& c = customers_[j];
      if (c.in_service_at(t))
        m.points.emplace_back(static_cast<long>(j), c.age_at(t));
    }
    std::sort(m.points.begin(), m.points.end(),
              [](const auto& a, const auto& b) {
                return a.second < b.second ||
                       (a.second == b.second && a.first < b.first);
              });
    return m;
  }

  struct ScaledPath {
    std::vector<double> times;
    std::vector<double> arrivals;     // E/N
    std::vector<double> in_system;    // X/N
    std::vector<double> departures;   // D/N
    std::vector<double> entries;      // K/N
    std::vector<double> idle;         // I/N
  };

  ScaledPath scaled(const std::vector<double>& grid) const {
    ScaledPath p;
    const double n = static_cast<double>(cfg_.num_servers);
    p.times = grid;
    p.arrivals.reserve(grid.size());
    for (double t : grid) {
      const Counters c = at(t);
      p.arrivals.push_back(static_cast<double>(c.entered_system) / n);
      p.in_system.push_back(static_cast<double>(c.in_system) / n);
      p.departures.push_back(static_cast<double>(c.departed) / n);
      p.entries.push_back(static_cast<double>(c.entered_service) / n);
      p.idle.push_back(static_cast<double>(c.idle) / n);
    }
    return p;
  }

  // Waiting and sojourn times of customers that arrived after time 0.
  std::vector<WaitRecord> customer_waits() const {
    std::vector<WaitRecord> out;
    for (std::size_t j = 0; j < customers_.size(); ++j) {
      const CustomerRecord& c = customers_[j];
      if (c.initial) continue;
      WaitRecord w;
      w.customer = static_cast<long>(j);
      w.arrival_time = c.arrival_time;
      w.entered = c.entered();
      w.departed = c.departed();
      if (w.entered) w.waiting = c.entry_time - c.arrival_time;
      if (w.departed) w.sojourn = c.departure_time - c.arrival_time;
      out.push_back(w);
    }
    return out;
  }

  // Scaled compensator of the departure process at the grid times:
  // (1/N) sum_j of the cumulative hazard accrued by customer j in service
  // up to t. Each per-customer integral of h is evaluated with the
  // closed-form log-survival identity.
  std::vector<double> compensator_path(const std::vector<double>& grid) const {
    const ServiceDistribution& base = cfg_.service;
    const ServiceDistribution& initial_law =
        cfg_.initial_residual_law ? *cfg_.initial_residual_law : cfg_.service;
    std::vector<double> out(grid.size(), 0.0);
    for (const CustomerRecord& c : customers_) {
      if (!c.entered()) continue;
      const ServiceDistribution& law = c.initial ? initial_law : base;
      const double start_log = law.log_survival(c.initial_age);
      for (std::size_t i = 0; i < grid.size(); ++i) {
        const double t = grid[i];
        if (t < c.entry_time) continue;
        const double cut = c.departed() ? std::min(t, c.departure_time) : t;
        out[i] += start_log - law.log_survival(c.age_at(cut));
      }
    }
    const double n = static_cast<double>(cfg_.num_servers);
    for (double& v : out) v /= n;
    return out;
  }

  // Scaled workload U(t)/N: residual work in service plus total work queued.
  double workload_at(double t) const {
    require_in_horizon(t);
    double acc = 0.0;
    for (const CustomerRecord& c : customers_) {
      if (c.in_service_at(t)) {
        acc += c.requirement - c.age_at(t);
      } else if (c.queued_at(t)) {
        acc += c.requirement;
      }
    }
    return acc / static_cast<double>(cfg_.num_servers);
  }

  // Mass-balance, entry-balance, non-idling and FCFS identities at every
  // event time; all in exact integer arithmetic. Returns the first
  // violation description, or an empty string.
  std::string check_invariants() const {
    const long n = cfg_.num_servers;
    const long m0 = cfg_.initially_in_service();
    for (const SimEvent& e : events_) {
      if (e.departed != cfg_.initial_count - e.in_system + e.entered_system)
        return describe(e, "mass balance D = X(0) - X + E");
      const long in_service = n - e.idle;
      if (e.entered_service != in_service - m0 + e.departed)
        return describe(e, "entry balance K = <1,nu> - <1,nu0> + D");
      if (e.idle != std::max<long>(n - e.in_system, 0))
        return describe(e, "non-idling I = [N - X]+");
      if (e.idle < 0 || in_service < 0 || in_service > n)
        return describe(e, "server count bounds");
    }
    // FCFS over customers indexed after the initial in-service cohort:
    // entry times nondecreasing, and nobody enters while an earlier
    // customer still waits.
    double last_entry = -std::numeric_limits<double>::infinity();
    bool saw_unentered = false;
    long post0_entries = 0;
    for (std::size_t j = static_cast<std::size_t>(m0); j < customers_.size(); ++j) {
      const CustomerRecord& c = customers_[j];
      if (c.entered()) {
        if (saw_unentered) return "FCFS violation: entry out of arrival order";
        if (c.entry_time < last_entry)
          return "FCFS violation: entry times decrease in arrival order";
        last_entry = c.entry_time;
        ++post0_entries;
      } else {
        saw_unentered = true;
      }
    }
    // K(T) is exactly the number of post-0 entries into service.
    if (!events_.empty() && events_.back().entered_service != post0_entries)
      return "K does not equal the count of post-0 service entries";
    return {};
  }

  void export_events_csv(std::ostream& os) const {
    os << "time,kind,customer_id,X,D,K,I\n";
    char buf[192];
    for (const SimEvent& e : events_) {
      std::snprintf(buf, sizeof buf, "%.12g,%s,%ld,%ld,%ld,%ld,%ld\n", e.time,
                    e.kind == EventKind::Arrival ? "arrival" : "departure",
                    e.customer, e.in_system, e.departed, e.entered_service,
                    e.idle);
      os << buf;
    }
  }

  void export_scaled_csv(std::ostream& os, const std::vector<double>& grid) const {
    const ScaledPath p = scaled(grid);
    os << "t,E,X,D,K,I\n";
    char buf[224];
    for (std::size_t i = 0; i < grid.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.12g,%.12g,%.12g,%.12g,%.12g,%.12g\n",
                    p.times[i], p.arrivals[i], p.in_system[i], p.departures[i],
                    p.entries[i], p.idle[i]);
      os << buf;
    }
  }

 private:
  void require_in_horizon(double t) const {
    if (!(t >= 0.0) || t > cfg_.horizon)
      throw std::domain_error("path query outside [0, T]");
  }

  static std::string describe(const SimEvent& e, const char* what) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s violated at t=%.12g (customer %ld)", what,
                  e.time, e.customer);
    return buf;
  }

  SimConfig cfg_;
  std::vector<SimEvent> events_;
  std::vector<CustomerRecord> customers_;
};

// Event-driven FCFS simulation of the N-server system. The next event time
// is the minimum of the pending arrival and the earliest in-service
// completion; completions are kept in a priority queue ordered by
// (time, customer id), so simultaneous departures resolve to the lower id
// and departures are processed before arrivals at equal timestamps.
inline SimulationPath simulate(const SimConfig& cfg) {
  cfg.validate();
  RandomStream rng(cfg.seed);

  const int n = cfg.num_servers;
  const long m0 = cfg.initially_in_service();
  const ServiceDistribution& initial_law =
      cfg.initial_residual_law ? *cfg.initial_residual_law : cfg.service;

  std::vector<CustomerRecord> customers;
  customers.reserve(static_cast<std::size_t>(cfg.initial_count) + 64);

  std::size_t scripted_next = 0;
  auto next_scripted = [&](double fallback) {
    if (scripted_next < cfg.scripted_services.size())
      return cfg.scripted_services[scripted_next++];
    return fallback;
  };
  auto draw_residual = [&](double age) {
    const double sampled = initial_law.sample_residual(age, rng);
    const double v = next_scripted(sampled);
    return v;
  };
  auto draw_service = [&]() {
    const double sampled = cfg.service.sample(rng);
    return next_scripted(sampled);
  };

  using Completion = std::pair<double, long>;
  std::priority_queue<Completion, std::vector<Completion>, std::greater<>> busy;
  std::deque<long> waiting;

  // Initial in-service cohort: residuals conditioned on the given ages.
  for (long j = 0; j < m0; ++j) {
    CustomerRecord c;
    c.initial = true;
    c.initial_age = cfg.initial_ages[static_cast<std::size_t>(j)];
    c.entry_time = -c.initial_age;
    c.arrival_time = c.entry_time;
    const double residual = draw_residual(c.initial_age);
    c.requirement = c.initial_age + residual;
    busy.emplace(residual, j);
    customers.push_back(c);
  }
  // Initial queue (when X(0) > N): requirements drawn up front.
  for (long j = m0; j < cfg.initial_count; ++j) {
    CustomerRecord c;
    c.initial = true;
    c.arrival_time = 0.0;
    c.requirement = draw_service();
    waiting.push_back(j);
    customers.push_back(c);
  }

  long entered_system = 0;
  long in_system = cfg.initial_count;
  long departed = 0;
  long entered_service = 0;
  long in_service = m0;

  double next_arrival = cfg.arrival.next_arrival(n, 0.0, rng);

  std::vector<SimEvent> events;
  auto record = [&](double t, EventKind kind, long id) {
    SimEvent e;
    e.time = t;
    e.kind = kind;
    e.customer = id;
    e.entered_system = entered_system;
    e.in_system = in_system;
    e.departed = departed;
    e.entered_service = entered_service;
    e.idle = n - in_service;
    events.push_back(e);
  };
  auto start_service = [&](long id, double t) {
    CustomerRecord& c = customers[static_cast<std::size_t>(id)];
    c.entry_time = t;
    busy.emplace(t + c.requirement, id);
    ++in_service;
    ++entered_service;
  };

  for (;;) {
    const double completion =
        busy.empty() ? std::numeric_limits<double>::infinity() : busy.top().first;
    const bool is_departure = completion <= next_arrival;
    const double t = is_departure ? completion : next_arrival;
    if (!(t <= cfg.horizon)) break;

    if (is_departure) {
      const long id = busy.top().second;
      busy.pop();
      customers[static_cast<std::size_t>(id)].departure_time = t;
      --in_system;
      --in_service;
      ++departed;
      if (!waiting.empty()) {
        const long head = waiting.front();
        waiting.pop_front();
        start_service(head, t);
      }
      record(t, EventKind::Departure, id);
    } else {
      const long id = static_cast<long>(customers.size());
      CustomerRecord c;
      c.arrival_time = t;
      c.requirement = draw_service();
      customers.push_back(c);
      ++entered_system;
      ++in_system;
      if (in_service < n) {
        start_service(id, t);
      } else {
        waiting.push_back(id);
      }
      record(t, EventKind::Arrival, id);
      next_arrival = cfg.arrival.next_arrival(n, t, rng);
    }
  }

  return SimulationPath(cfg, std::move(events), std::move(customers));
}

}  // namespace fluidq

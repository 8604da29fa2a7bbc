#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace star {

// Per (scope, op kind) accounting of multiply-accumulates, wall time and
// invocation count. Counting never touches computed values.
struct OpProfile {
  std::string scope;
  std::string kind;
  std::uint64_t macs = 0;
  double seconds = 0.0;
  std::uint64_t calls = 0;
};

class Profiler {
 public:
  void record(std::string_view kind, std::uint64_t macs, double seconds);

  void push_scope(std::string_view name);
  void pop_scope();
  const std::string& scope() const { return scope_path_; }

  std::vector<OpProfile> records() const;
  // Aggregated over scopes, keyed by op kind.
  std::vector<OpProfile> by_kind() const;

  std::uint64_t total_macs() const;
  double total_seconds() const;
  std::uint64_t total_calls() const;

  // Sum of MACs over records whose scope path contains `scope_part` and
  // (when non-empty) whose kind equals `kind`.
  std::uint64_t macs_where(std::string_view scope_part, std::string_view kind = {}) const;

  void reset();

 private:
  std::map<std::pair<std::string, std::string>, OpProfile> records_;
  std::vector<std::size_t> scope_marks_;
  std::string scope_path_;
};

namespace profiling {

Profiler* active();

// Installs a profiler for the current thread for the guard's lifetime.
class Session {
 public:
  explicit Session(Profiler& profiler);
  ~Session();
  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

 private:
  Profiler* previous_;
};

// Named region; nests with '/'. No-op when no profiler is active.
class Scope {
 public:
  explicit Scope(std::string_view name);
  ~Scope();
  Scope(const Scope&) = delete;
  Scope& operator=(const Scope&) = delete;

 private:
  Profiler* profiler_;
};

// Times one op invocation and records it on destruction.
class OpTimer {
 public:
  OpTimer(std::string_view kind, std::uint64_t macs);
  ~OpTimer();
  OpTimer(const OpTimer&) = delete;
  OpTimer& operator=(const OpTimer&) = delete;

 private:
  Profiler* profiler_;
  std::string_view kind_;
  std::uint64_t macs_;
  std::chrono::steady_clock::time_point start_;
};

// Records MACs/time for work done outside the op set (oracles, kernels).
void record(std::string_view kind, std::uint64_t macs, double seconds);

}  // namespace profiling
}  // namespace star

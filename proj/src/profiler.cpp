#include "star/profiler.hpp"

#include <algorithm>

namespace star {

void Profiler::record(std::string_view kind, std::uint64_t macs, double seconds) {
  auto key = std::make_pair(scope_path_, std::string(kind));
  auto it = records_.find(key);
  if (it == records_.end()) {
    OpProfile rec;
    rec.scope = scope_path_;
    rec.kind = std::string(kind);
    it = records_.emplace(std::move(key), std::move(rec)).first;
  }
  it->second.macs += macs;
  it->second.seconds += seconds;
  it->second.calls += 1;
}

void Profiler::push_scope(std::string_view name) {
  scope_marks_.push_back(scope_path_.size());
  if (!scope_path_.empty()) scope_path_ += '/';
  scope_path_ += name;
}

void Profiler::pop_scope() {
  if (scope_marks_.empty()) return;
  scope_path_.resize(scope_marks_.back());
  scope_marks_.pop_back();
}

std::vector<OpProfile> Profiler::records() const {
  std::vector<OpProfile> out;
  out.reserve(records_.size());
  for (const auto& [key, rec] : records_) out.push_back(rec);
  return out;
}

std::vector<OpProfile> Profiler::by_kind() const {
  std::map<std::string, OpProfile> agg;
  for (const auto& [key, rec] : records_) {
    OpProfile& a = agg[rec.kind];
    a.kind = rec.kind;
    a.macs += rec.macs;
    a.seconds += rec.seconds;
    a.calls += rec.calls;
  }
  std::vector<OpProfile> out;
  for (auto& [kind, rec] : agg) out.push_back(std::move(rec));
  std::stable_sort(out.begin(), out.end(), [](const OpProfile& a, const OpProfile& b) {
    return a.macs > b.macs;
  });
  return out;
}

std::uint64_t Profiler::total_macs() const {
  std::uint64_t total = 0;
  for (const auto& [key, rec] : records_) total += rec.macs;
  return total;
}

double Profiler::total_seconds() const {
  double total = 0.0;
  for (const auto& [key, rec] : records_) total += rec.seconds;
  return total;
}

std::uint64_t Profiler::total_calls() const {
  std::uint64_t total = 0;
  for (const auto& [key, rec] : records_) total += rec.calls;
  return total;
}

std::uint64_t Profiler::macs_where(std::string_view scope_part, std::string_view kind) const {
  std::uint64_t total = 0;
  for (const auto& [key, rec] : records_) {
    if (rec.scope.find(scope_part) == std::string::npos) continue;
    if (!kind.empty() && rec.kind != kind) continue;
    total += rec.macs;
  }
  return total;
}

void Profiler::reset() {
  records_.clear();
  scope_marks_.clear();
  scope_path_.clear();
}

namespace profiling {

namespace {
thread_local Profiler* g_active = nullptr;
}

Profiler* active() { return g_active; }

Session::Session(Profiler& profiler) : previous_(g_active) { g_active = &profiler; }
Session::~Session() { g_active = previous_; }

Scope::Scope(std::string_view name) : profiler_(g_active) {
  if (profiler_) profiler_->push_scope(name);
}
Scope::~Scope() {
  if (profiler_) profiler_->pop_scope();
}

OpTimer::OpTimer(std::string_view kind, std::uint64_t macs)
    : profiler_(g_active), kind_(kind), macs_(macs) {
  if (profiler_) start_ = std::chrono::steady_clock::now();
}

OpTimer::~OpTimer() {
  if (!profiler_) return;
  std::chrono::duration<double> dt = std::chrono::steady_clock::now() - start_;
  profiler_->record(kind_, macs_, dt.count());
}

void record(std::string_view kind, std::uint64_t macs, double seconds) {
  if (g_active) g_active->record(kind, macs, seconds);
}

}  // namespace profiling
}  // namespace star

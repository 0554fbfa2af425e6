#include "seqrl/alloc.hpp"

#include <vector>

namespace seqrl {
namespace runtime_checks {
bool strict_finite = false;
}  // namespace runtime_checks
}  // namespace seqrl

namespace seqrl::alloc {

namespace {

struct ScopeState {
  std::size_t peak_total = 0;
  std::size_t peak_act = 0;
};

struct Counters {
  std::size_t live_total = 0;
  std::size_t live_act = 0;
  std::size_t peak_total = 0;
  std::size_t peak_act = 0;
  std::vector<ScopeState> scopes;
};

Counters& state() {
  static Counters c;
  return c;
}

void bump_peaks() {
  Counters& c = state();
  if (c.live_total > c.peak_total) c.peak_total = c.live_total;
  if (c.live_act > c.peak_act) c.peak_act = c.live_act;
  for (ScopeState& s : c.scopes) {
    if (c.live_total > s.peak_total) s.peak_total = c.live_total;
    if (c.live_act > s.peak_act) s.peak_act = c.live_act;
  }
}

}  // namespace

void on_alloc(std::size_t bytes, bool activation) {
  Counters& c = state();
  c.live_total += bytes;
  if (activation) c.live_act += bytes;
  bump_peaks();
}

void on_free(std::size_t bytes, bool activation) {
  Counters& c = state();
  c.live_total -= bytes;
  if (activation) c.live_act -= bytes;
}

std::size_t live_bytes() { return state().live_total; }
std::size_t live_activation_bytes() { return state().live_act; }
std::size_t peak_bytes() { return state().peak_total; }
std::size_t peak_activation_bytes() { return state().peak_act; }

void reset_peaks() {
  Counters& c = state();
  c.peak_total = c.live_total;
  c.peak_act = c.live_act;
}

Scope::Scope(std::string label) : label_(std::move(label)) {
  Counters& c = state();
  index_ = static_cast<int>(c.scopes.size());
  c.scopes.push_back(ScopeState{c.live_total, c.live_act});
}

Scope::~Scope() {
  Counters& c = state();
  // Scopes are destroyed in reverse construction order within a thread.
  c.scopes.resize(static_cast<std::size_t>(index_));
}

std::size_t Scope::peak_bytes() const {
  return state().scopes[static_cast<std::size_t>(index_)].peak_total;
}

std::size_t Scope::peak_activation_bytes() const {
  return state().scopes[static_cast<std::size_t>(index_)].peak_act;
}

}  // namespace seqrl::alloc

#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <string>

namespace seqrl::alloc {

// Global live-byte accounting for tensor buffers. "activation" bytes are the
// subset belonging to op outputs recorded on a compute graph (plus their grad
// buffers); parameters and plain leaves count only toward the total.
void on_alloc(std::size_t bytes, bool activation);
void on_free(std::size_t bytes, bool activation);

std::size_t live_bytes();
std::size_t live_activation_bytes();
std::size_t peak_bytes();             // global high-water
std::size_t peak_activation_bytes();  // global high-water
void reset_peaks();                   // reset high-waters to current live

// RAII scope that tracks the high-water marks reached while it is open.
// Scopes may nest; an inner scope's traffic is visible to outer scopes.
class Scope {
 public:
  explicit Scope(std::string label);
  ~Scope();
  Scope(const Scope&) = delete;
  Scope& operator=(const Scope&) = delete;

  std::size_t peak_bytes() const;
  std::size_t peak_activation_bytes() const;
  const std::string& label() const { return label_; }

 private:
  std::string label_;
  int index_;
};

// Wall-clock timer.
class Timer {
 public:
  Timer() : start_(clock::now()) {}
  double elapsed_ms() const {
    return std::chrono::duration<double, std::milli>(clock::now() - start_).count();
  }
  void reset() { start_ = clock::now(); }

 private:
  using clock = std::chrono::steady_clock;
  clock::time_point start_;
};

}  // namespace seqrl::alloc

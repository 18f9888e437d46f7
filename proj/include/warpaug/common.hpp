// Copyright (c) 2026 the warpaug authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

/// @file common.hpp
/// @brief Error type, content hashing, seeded RNG derivation, small helpers.

#ifndef WARPAUG_COMMON_HPP
#define WARPAUG_COMMON_HPP

#include <atomic>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <mutex>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace warpaug {

enum class ErrorKind {
  format,              // malformed file contents
  unsupported_format,  // recognized but unhandled variant
  dimension,           // wrong rank / grid shape
  parameter,           // bad argument value
  shape,               // mismatched grids or vector lengths
  invariant,           // a type invariant would be violated
  io,                  // filesystem failure
  extraction,          // brain extraction cannot proceed
  undefined_metric,    // metric has no defined value for these inputs
  registration,        // registration failed to produce a valid transform
  augmentation,        // augmentation step failed
  preprocessing,       // preprocessing stage failed
  design,              // degenerate GLM design
  numeric,             // solver non-convergence or non-finite values
  training,            // model training diverged
  insufficient_candidates,  // target selection ran out of matches
  lookup,              // unknown id
  leakage,             // protocol leakage audit failure
  dependency,          // missing upstream pipeline artifact
  config,              // invalid run configuration
};

/// Single exception type for the whole library; `kind` maps to CLI exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

inline const char* errorKindName(ErrorKind k) {
  switch (k) {
    case ErrorKind::format: return "format";
    case ErrorKind::unsupported_format: return "unsupported_format";
    case ErrorKind::dimension: return "dimension";
    case ErrorKind::parameter: return "parameter";
    case ErrorKind::shape: return "shape";
    case ErrorKind::invariant: return "invariant";
    case ErrorKind::io: return "io";
    case ErrorKind::extraction: return "extraction";
    case ErrorKind::undefined_metric: return "undefined_metric";
    case ErrorKind::registration: return "registration";
    case ErrorKind::augmentation: return "augmentation";
    case ErrorKind::preprocessing: return "preprocessing";
    case ErrorKind::design: return "design";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::training: return "training";
    case ErrorKind::insufficient_candidates: return "insufficient_candidates";
    case ErrorKind::lookup: return "lookup";
    case ErrorKind::leakage: return "leakage";
    case ErrorKind::dependency: return "dependency";
    case ErrorKind::config: return "config";
  }
  return "unknown";
}

// --- content hashing -------------------------------------------------------

/// FNV-1a 64-bit, used for content-addressed caching and audit hashes.
class Hasher {
 public:
  Hasher& bytes(const void* data, size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
      h_ ^= p[i];
      h_ *= 0x100000001b3ULL;
    }
    return *this;
  }
  Hasher& str(const std::string& s) { return bytes(s.data(), s.size()); }
  template <typename T>
  Hasher& pod(const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    return bytes(&v, sizeof(v));
  }
  template <typename T>
  Hasher& vec(const std::vector<T>& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    pod(v.size());
    return bytes(v.data(), v.size() * sizeof(T));
  }
  uint64_t value() const { return h_; }
  std::string hex() const {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(h_));
    return buf;
  }

 private:
  uint64_t h_ = 0xcbf29ce484222325ULL;
};

/// Stable seed derivation: mixes a base seed with string context so that
/// per-job seeds are independent of scheduling order.
inline uint64_t deriveSeed(uint64_t base, const std::string& context) {
  Hasher h;
  h.pod(base).str(context);
  // splitmix64 finalizer for avalanche
  uint64_t z = h.value() + 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline uint64_t deriveSeed(uint64_t base, uint64_t index) {
  return deriveSeed(base, "#" + std::to_string(index));
}

using Rng = std::mt19937_64;

// --- small helpers ---------------------------------------------------------

template <typename... Args>
std::string strCat(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}

/// Runs `fn(i)` for i in [0, n) on up to `jobs` worker threads. Jobs must be
/// independent; determinism of results is the caller's responsibility (use
/// per-index derived seeds, write only to slot i).
inline void parallelFor(size_t n, const std::function<void(size_t)>& fn,
                        unsigned jobs = 0) {
  if (jobs == 0) jobs = std::max(1u, std::thread::hardware_concurrency());
  if (n == 0) return;
  if (jobs == 1 || n == 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr err;
  std::mutex err_mu;
  unsigned nthreads = static_cast<unsigned>(std::min<size_t>(jobs, n));
  for (unsigned t = 0; t < nthreads; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        size_t i = next.fetch_add(1);
        if (i >= n) break;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lk(err_mu);
          if (!err) err = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

}  // namespace warpaug

#endif  // WARPAUG_COMMON_HPP

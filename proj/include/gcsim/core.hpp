#pragma once

// Shared vocabulary for the simulator: indices, time, GPU quantities, errors.

#include <cstddef>
#include <cstdint>
#include <limits>
#include <stdexcept>

namespace gcsim {

/// Simulated time in whole seconds.
using SimTime = std::int64_t;
inline constexpr SimTime kNever = std::numeric_limits<SimTime>::max();

/// GPU quantities are tracked in milli-GPU units so fractional pods are exact.
using Milli = std::int64_t;
inline constexpr Milli kMilliPerGpu = 1000;

constexpr Milli gpus_to_milli(std::int64_t gpus) { return gpus * kMilliPerGpu; }

inline Milli gpus_to_milli(double gpus) {
  return static_cast<Milli>(gpus * static_cast<double>(kMilliPerGpu) + (gpus >= 0 ? 0.5 : -0.5));
}

constexpr double milli_to_gpus(Milli m) {
  return static_cast<double>(m) / static_cast<double>(kMilliPerGpu);
}

using NodeIdx = std::uint32_t;
using GroupIdx = std::uint32_t;
using GpuTypeIdx = std::uint32_t;
using TenantIdx = std::uint32_t;
using JobIdx = std::uint32_t;

inline constexpr std::uint32_t kNoIndex = std::numeric_limits<std::uint32_t>::max();

/// A pod is addressed by its job and its position in the job's flattened pod list.
struct PodRef {
  JobIdx job = kNoIndex;
  std::uint32_t pod = 0;

  friend constexpr auto operator<=>(const PodRef&, const PodRef&) = default;
};

/// Malformed or inconsistent input (config files, traces, CLI values).
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A request that is structurally valid but violates a state precondition,
/// e.g. releasing a device that is not allocated.
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace gcsim

#pragma once

#include "gcsim/core.hpp"
#include "gcsim/devices.hpp"
#include "gcsim/engine.hpp"
#include "gcsim/metrics.hpp"
#include "gcsim/presets.hpp"
#include "gcsim/qsch.hpp"
#include "gcsim/quota.hpp"
#include "gcsim/rsch.hpp"
#include "gcsim/snapshot.hpp"
#include "gcsim/topology.hpp"
#include "gcsim/workload.hpp"

namespace gcsim {
inline constexpr const char* kVersion = "0.1.0";
}  // namespace gcsim

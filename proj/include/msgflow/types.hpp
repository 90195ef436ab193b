#pragma once
// Core identifiers shared by every stage of the toolkit.

#include <compare>
#include <cstdint>
#include <string>

namespace msgflow {

using i64 = std::int64_t;
using u64 = std::uint64_t;

// Nanoseconds in some clock. Which clock is contextual: host-local before
// synchronization, reference clock after.
using TimeNs = i64;

// Opaque host token, stable across all events of one host's trace.
using HostId = std::string;

// (host, pid, handle): unique for one runtime object across the whole
// distributed trace. Handles are within-process addresses, so they only
// become unique once qualified by pid and host.
struct ObjectKey {
  HostId host;
  i64 pid = 0;
  i64 handle = 0;

  friend auto operator<=>(const ObjectKey&, const ObjectKey&) = default;
};

}  // namespace msgflow

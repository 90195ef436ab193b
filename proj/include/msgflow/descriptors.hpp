#pragma once
// Canonical descriptor strings naming instances and links. These are the
// wire identities used in analysis documents, ground truth files and flow
// exports, so the analysis side and the simulator must format them
// identically.
//
//   publication:    pub:<host>:<pid>:<publisher_handle>@<source_timestamp>
//   callback:       cb:<host>:<pid>:<s|t>:<owner_handle>#<ordinal>
//   transport pair: tr:<pub>-><cb>
//   take:           take:<cb>
//   indirect link:  pa:<cb>-><pub>   (periodic asynchronous)
//                   ps:<cb>-><pub>   (partial synchronous)
//
// Callback ordinals count one owner's instances in start-time order.

#include <string>

#include "msgflow/trace_model.hpp"
#include "msgflow/types.hpp"

namespace msgflow::desc {

inline std::string publication(const HostId& host, i64 pid, i64 publisher_handle,
                               i64 source_timestamp) {
  return "pub:" + host + ":" + std::to_string(pid) + ":" +
         std::to_string(publisher_handle) + "@" + std::to_string(source_timestamp);
}

inline std::string callback(const HostId& host, i64 pid, bool is_timer,
                            i64 owner_handle, i64 ordinal) {
  return std::string("cb:") + host + ":" + std::to_string(pid) + ":" +
         (is_timer ? "t" : "s") + ":" + std::to_string(owner_handle) + "#" +
         std::to_string(ordinal);
}

inline std::string transport_pair(const std::string& pub, const std::string& cb) {
  return "tr:" + pub + "->" + cb;
}

inline std::string take(const std::string& cb) { return "take:" + cb; }

inline std::string indirect(LinkType t, const std::string& input_cb,
                            const std::string& pub) {
  return std::string(t == LinkType::periodic_async ? "pa:" : "ps:") + input_cb +
         "->" + pub;
}

}  // namespace msgflow::desc

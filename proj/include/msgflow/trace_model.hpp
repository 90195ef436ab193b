#pragma once
// Trace event vocabulary and the on-disk trace format.
//
// One trace file holds the events of one host: UTF-8, one JSON object per
// line. Events split into two groups: one-time initialization events that
// describe objects (nodes, publishers, subscriptions, timers, link
// annotations) and runtime events that describe instances (publications,
// takes, callbacks, executor states). Publishers are initialized across
// three layers (rcl, rmw, dds) whose events are correlated later by handle
// and writer gid.

#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "msgflow/result.hpp"
#include "msgflow/types.hpp"

namespace msgflow {

// ---- payloads, one struct per event kind -------------------------------

struct NodeInit {
  i64 node_handle = 0;
  std::string node_name;
  std::string node_namespace;
  friend bool operator==(const NodeInit&, const NodeInit&) = default;
};

struct PubInitRcl {
  i64 publisher_handle = 0;
  i64 node_handle = 0;
  i64 rmw_publisher_handle = 0;
  std::string topic_name;
  friend bool operator==(const PubInitRcl&, const PubInitRcl&) = default;
};

struct PubInitRmw {
  i64 rmw_publisher_handle = 0;
  std::string gid;  // hex-encoded, 1..24 bytes
  friend bool operator==(const PubInitRmw&, const PubInitRmw&) = default;
};

struct PubInitDds {
  i64 writer_handle = 0;
  std::string gid;
  std::string topic_name;
  friend bool operator==(const PubInitDds&, const PubInitDds&) = default;
};

struct SubInitRcl {
  i64 subscription_handle = 0;
  i64 node_handle = 0;
  i64 rmw_subscription_handle = 0;
  std::string topic_name;
  friend bool operator==(const SubInitRcl&, const SubInitRcl&) = default;
};

struct SubInitRmw {
  i64 rmw_subscription_handle = 0;
  std::string gid;
  friend bool operator==(const SubInitRmw&, const SubInitRmw&) = default;
};

struct CallbackRegister {
  i64 callback_ref = 0;
  i64 owner_handle = 0;  // subscription_handle or timer_handle
  friend bool operator==(const CallbackRegister&, const CallbackRegister&) = default;
};

struct TimerInit {
  i64 timer_handle = 0;
  i64 period_ns = 0;
  friend bool operator==(const TimerInit&, const TimerInit&) = default;
};

struct TimerNodeLink {
  i64 timer_handle = 0;
  i64 node_handle = 0;
  friend bool operator==(const TimerNodeLink&, const TimerNodeLink&) = default;
};

enum class LinkType { periodic_async, partial_sync };

std::string_view link_type_name(LinkType t);

// User-level annotation connecting N input subscriptions to M output
// publishers within one process.
struct MessageLinkAnnotation {
  LinkType link_type = LinkType::periodic_async;
  std::vector<i64> subscription_handles;  // non-empty
  std::vector<i64> publisher_handles;     // non-empty
  friend bool operator==(const MessageLinkAnnotation&,
                         const MessageLinkAnnotation&) = default;
};

struct PublishRclcpp {
  i64 publisher_handle = 0;
  i64 message_ref = 0;
  friend bool operator==(const PublishRclcpp&, const PublishRclcpp&) = default;
};

struct PublishRcl {
  i64 publisher_handle = 0;
  i64 message_ref = 0;
  friend bool operator==(const PublishRcl&, const PublishRcl&) = default;
};

struct PublishRmw {
  i64 rmw_publisher_handle = 0;
  i64 message_ref = 0;
  friend bool operator==(const PublishRmw&, const PublishRmw&) = default;
};

struct DdsWrite {
  i64 writer_handle = 0;
  i64 message_ref = 0;
  i64 source_timestamp = 0;  // stamped at write, travels with the message
  friend bool operator==(const DdsWrite&, const DdsWrite&) = default;
};

struct RmwTake {
  i64 rmw_subscription_handle = 0;
  i64 message_ref = 0;
  i64 source_timestamp = 0;  // sender's stamp, as carried by the message
  bool taken = false;
  friend bool operator==(const RmwTake&, const RmwTake&) = default;
};

struct CallbackStart {
  i64 callback_ref = 0;
  friend bool operator==(const CallbackStart&, const CallbackStart&) = default;
};

struct CallbackEnd {
  i64 callback_ref = 0;
  friend bool operator==(const CallbackEnd&, const CallbackEnd&) = default;
};

struct ExecutorWaitBegin {
  friend bool operator==(const ExecutorWaitBegin&, const ExecutorWaitBegin&) = default;
};

struct ExecutorWaitEnd {
  friend bool operator==(const ExecutorWaitEnd&, const ExecutorWaitEnd&) = default;
};

struct ExecutorExecuteBegin {
  i64 target_handle = 0;  // subscription_handle or timer_handle
  friend bool operator==(const ExecutorExecuteBegin&, const ExecutorExecuteBegin&) = default;
};

struct ExecutorExecuteEnd {
  friend bool operator==(const ExecutorExecuteEnd&, const ExecutorExecuteEnd&) = default;
};

using EventPayload =
    std::variant<NodeInit, PubInitRcl, PubInitRmw, PubInitDds, SubInitRcl,
                 SubInitRmw, CallbackRegister, TimerInit, TimerNodeLink,
                 MessageLinkAnnotation, PublishRclcpp, PublishRcl, PublishRmw,
                 DdsWrite, RmwTake, CallbackStart, CallbackEnd,
                 ExecutorWaitBegin, ExecutorWaitEnd, ExecutorExecuteBegin,
                 ExecutorExecuteEnd>;

// Order matches EventPayload alternatives.
enum class EventKind {
  node_init,
  pub_init_rcl,
  pub_init_rmw,
  pub_init_dds,
  sub_init_rcl,
  sub_init_rmw,
  callback_register,
  timer_init,
  timer_node_link,
  message_link_annotation,
  publish_rclcpp,
  publish_rcl,
  publish_rmw,
  dds_write,
  rmw_take,
  callback_start,
  callback_end,
  executor_wait_begin,
  executor_wait_end,
  executor_execute_begin,
  executor_execute_end,
};

constexpr int kEventKindCount = 21;

std::string_view event_kind_name(EventKind k);
std::optional<EventKind> event_kind_from_name(std::string_view name);

// ---- events and bundles -------------------------------------------------

struct TraceEvent {
  TimeNs timestamp = 0;  // host-local clock, >= 0
  HostId host;
  i64 pid = 0;
  i64 tid = 0;
  EventPayload payload;

  EventKind kind() const { return static_cast<EventKind>(payload.index()); }
  bool is_init() const {
    return payload.index() <= static_cast<size_t>(EventKind::message_link_annotation);
  }
  friend bool operator==(const TraceEvent&, const TraceEvent&) = default;
};

// One host's event sequence, sorted by timestamp (stable: ties keep file order).
struct Trace {
  HostId host;
  std::vector<TraceEvent> events;
};

struct TraceBundle {
  std::vector<Trace> traces;  // sorted by host id

  const Trace* find(const HostId& host) const;
  size_t total_events() const;
};

// ---- parsing / serialization --------------------------------------------

struct ParseError {
  enum class Code { MalformedRecord, UnknownKind, SchemaViolation, DuplicateHost, Io };
  Code code = Code::MalformedRecord;
  std::string message;
  std::string file;  // set by load_bundle
  i64 line = 0;      // 1-based, set by load_bundle

  std::string to_string() const;
};

// Parses one line of the trace format into a fully validated event.
// Unknown kinds, schema mismatches (missing/extra/wrong-typed payload
// fields) and invariant violations (negative timestamp, empty annotation
// arrays, bad gid) are errors, never crashes.
Result<TraceEvent, ParseError> parse_event(std::string_view line);

// Canonical one-line serialization; parse_event(serialize_event(e)) == e.
std::string serialize_event(const TraceEvent& e);

// Loads one trace file per host. Per-host sequences are stably sorted by
// timestamp (input order breaks ties). A file's host is declared by its
// events; an empty file yields an empty trace whose host is the file stem.
Result<TraceBundle, ParseError> load_bundle(const std::vector<std::string>& paths);

// Same, from in-memory text (one host per entry); used by tests.
Result<TraceBundle, ParseError> load_bundle_from_strings(
    const std::vector<std::pair<std::string, std::string>>& name_and_text);

}  // namespace msgflow

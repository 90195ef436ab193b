#pragma once
// Intermediate execution representation: multi-layer init events correlated
// into unified objects, runtime events folded into instances. Everything
// downstream (clock sync, link inference, flow graphs, timelines) queries
// this database instead of raw events.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "msgflow/descriptors.hpp"
#include "msgflow/result.hpp"
#include "msgflow/trace_model.hpp"
#include "msgflow/types.hpp"

namespace msgflow {

constexpr int kIrVersion = 1;

struct NodeRec {
  ObjectKey key;  // node_handle based
  std::string name;
  std::string ns;
};

struct PublisherRec {
  ObjectKey key;  // rcl publisher_handle based
  int node = -1;  // index into nodes, -1 when unresolved
  std::string topic;
  std::string gid;  // empty when the rmw layer never reported
  i64 rmw_handle = 0;
  bool has_rmw = false;
  i64 dds_writer_handle = 0;
  bool has_dds = false;
  bool complete = false;  // all three init layers correlated
};

struct SubscriptionRec {
  ObjectKey key;  // subscription_handle based
  int node = -1;
  std::string topic;
  std::string gid;  // reader gid, carried only
  i64 rmw_handle = 0;
  i64 callback_ref = 0;
  bool has_callback = false;
};

struct TimerRec {
  ObjectKey key;  // timer_handle based
  int node = -1;  // optional linkage; -1 means process-owned
  i64 period_ns = 0;
  i64 callback_ref = 0;
  bool has_callback = false;
};

// One message send, folded from the per-layer publish events down to the
// middleware write. Layer timestamps are non-decreasing in rclcpp, rcl,
// rmw, dds order; only dds is mandatory.
struct PublicationInstance {
  int publisher = -1;
  i64 tid = 0;
  std::optional<TimeNs> rclcpp_ts;
  std::optional<TimeNs> rcl_ts;
  std::optional<TimeNs> rmw_ts;
  TimeNs dds_ts = 0;
  i64 source_timestamp = 0;  // message data: never shifted by clock sync

  // Earliest available layer timestamp; the user-level call time.
  TimeNs pub_ts() const {
    if (rclcpp_ts) return *rclcpp_ts;
    if (rcl_ts) return *rcl_ts;
    if (rmw_ts) return *rmw_ts;
    return dds_ts;
  }
};

enum class OwnerKind { subscription, timer };

struct CallbackInstance {
  OwnerKind owner_kind = OwnerKind::subscription;
  int owner = -1;  // index into subscriptions or timers
  i64 tid = 0;
  TimeNs start = 0;
  TimeNs end = 0;
  bool has_take = false;            // subscriptions only
  TimeNs take_ts = 0;               // timestamp of the matched rmw_take
  i64 taken_source_timestamp = 0;   // message data: never shifted
  i64 ordinal = 0;  // k-th instance of this owner, by start time
};

enum class ExecState { waiting, overhead, executing };

std::string_view exec_state_name(ExecState s);

struct ExecutorStateInterval {
  HostId host;
  i64 pid = 0;
  i64 tid = 0;
  ExecState state = ExecState::waiting;
  TimeNs start = 0;
  TimeNs end = 0;
  bool has_target = false;  // executing intervals may name their callback owner
  OwnerKind target_kind = OwnerKind::subscription;
  int target = -1;
};

// Resolved message_link_annotation: N input subscriptions feeding M output
// publishers within one process.
struct LinkAnnotation {
  LinkType link_type = LinkType::periodic_async;
  HostId host;
  i64 pid = 0;
  std::vector<int> inputs;   // subscription indices
  std::vector<int> outputs;  // publisher indices
};

// Correlation failures degrade to diagnostics; nothing is dropped silently.
// event_count is the number of runtime events absorbed by the diagnostic
// (zero for init-time or informational entries), so that
//   folded_runtime_events + sum(event_count) == runtime events in bundle.
struct Diagnostic {
  std::string code;
  std::string detail;
  i64 event_count = 0;
};

struct IrDatabase {
  std::vector<HostId> hosts;
  std::vector<NodeRec> nodes;
  std::vector<PublisherRec> publishers;
  std::vector<SubscriptionRec> subscriptions;
  std::vector<TimerRec> timers;
  std::vector<PublicationInstance> publications;
  std::vector<CallbackInstance> callbacks;
  std::vector<ExecutorStateInterval> executor_intervals;
  std::vector<LinkAnnotation> annotations;
  std::vector<Diagnostic> diagnostics;
  i64 folded_runtime_events = 0;

  // Derived lookups; rebuilt by build_indexes(), not serialized.
  std::map<std::pair<std::string, i64>, std::vector<int>> pubs_by_topic_ts;
  std::map<std::string, std::vector<int>> pubs_by_topic;
  std::vector<std::vector<int>> callbacks_of_subscription;
  std::vector<std::vector<int>> callbacks_of_timer;
  std::vector<std::vector<int>> publications_of_publisher;

  void build_indexes();

  // All publication instances whose publisher topic and source timestamp
  // match; collisions surface as multi-element results.
  std::vector<int> query_publication(const std::string& topic, i64 source_ts) const;

  std::string publication_desc(int idx) const;
  std::string callback_desc(int idx) const;

  const HostId& callback_host(int idx) const;
  i64 callback_pid(int idx) const;
  int callback_node(int idx) const;
  const std::string* subscription_topic_of_callback(int idx) const;
};

// Correlates a validated bundle into the IR database. Deterministic: the
// same bundle yields a byte-identical serialized database. Never fails;
// uncorrelatable events become diagnostics.
IrDatabase build_ir(const TraceBundle& bundle);

nlohmann::ordered_json ir_to_json(const IrDatabase& db);
Result<IrDatabase, std::string> ir_from_json(const nlohmann::json& j);

}  // namespace msgflow

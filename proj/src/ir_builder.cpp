#include "msgflow/ir.hpp"

#include <algorithm>
#include <deque>

namespace msgflow {

std::string_view exec_state_name(ExecState s) {
  switch (s) {
    case ExecState::waiting: return "waiting";
    case ExecState::overhead: return "overhead";
    case ExecState::executing: return "executing";
  }
  return "?";
}

namespace {

// Publish layers in architectural order; a window may start at any layer
// but never moves backward.
enum Layer { kRclcpp = 0, kRcl = 1, kRmw = 2, kDds = 3 };

struct OpenPublication {
  i64 message_ref = 0;
  int publisher = -1;
  int max_layer = -1;
  TimeNs last_ts = 0;
  std::optional<TimeNs> ts[3];  // rclcpp, rcl, rmw
  i64 events = 0;
};

struct PendingTake {
  int sub = -1;
  TimeNs take_ts = 0;
  i64 source_timestamp = 0;
};

struct OpenCallback {
  OwnerKind kind = OwnerKind::subscription;
  int owner = -1;
  TimeNs start = 0;
  bool has_take = false;
  TimeNs take_ts = 0;
  i64 taken_source_timestamp = 0;
  i64 events = 0;
};

enum class ExecPhase { idle, waiting, after_wait, executing };

struct ExecutorThreadState {
  ExecPhase phase = ExecPhase::idle;
  TimeNs mark = 0;  // start of the current phase
  bool has_target = false;
  OwnerKind target_kind = OwnerKind::subscription;
  int target = -1;
};

struct ThreadKey {
  i64 pid;
  i64 tid;
  friend auto operator<=>(const ThreadKey&, const ThreadKey&) = default;
};

// Per-host working state while folding runtime events.
struct HostFold {
  std::map<ThreadKey, OpenPublication> open_pubs;
  std::map<ThreadKey, std::deque<PendingTake>> pending_takes;
  std::map<ThreadKey, OpenCallback> open_callbacks;
  std::map<ThreadKey, ExecutorThreadState> executors;
  // high-volume codes aggregated per thread
  std::map<std::pair<ThreadKey, std::string>, i64> tallies;
};

struct Builder {
  IrDatabase db;

  // per (host-local) object lookups, keyed within the current host
  std::map<std::pair<i64, i64>, int> node_by_handle;      // (pid, node_handle)
  std::map<std::pair<i64, i64>, int> pub_by_rcl;          // (pid, publisher_handle)
  std::map<std::pair<i64, i64>, int> pub_by_rmw;          // (pid, rmw_handle)
  std::map<std::pair<i64, i64>, int> pub_by_writer;       // (pid, dds writer)
  std::map<std::pair<i64, std::string>, int> pub_by_gid;  // (pid, gid)
  std::map<std::pair<i64, i64>, int> sub_by_rcl;
  std::map<std::pair<i64, i64>, int> sub_by_rmw;
  std::map<std::pair<i64, i64>, int> timer_by_handle;
  // (pid, callback_ref) -> owner
  std::map<std::pair<i64, i64>, std::pair<OwnerKind, int>> cb_owner;

  void diag(std::string code, std::string detail, i64 events = 0) {
    db.diagnostics.push_back({std::move(code), std::move(detail), events});
  }

  void reset_host_maps() {
    node_by_handle.clear();
    pub_by_rcl.clear();
    pub_by_rmw.clear();
    pub_by_writer.clear();
    pub_by_gid.clear();
    sub_by_rcl.clear();
    sub_by_rmw.clear();
    timer_by_handle.clear();
    cb_owner.clear();
  }

  // ---- pass 1: objects --------------------------------------------------

  void collect_objects(const Trace& trace);
  // ---- pass 2: instances ------------------------------------------------
  void fold_runtime(const Trace& trace);

  void close_publication_window(const ThreadKey& k, OpenPublication& w, bool emit_instance,
                                std::optional<TimeNs> dds_ts, i64 source_ts);
  void handle_publish_layer(const TraceEvent& ev, Layer layer, int pub_idx,
                            i64 message_ref, HostFold& hf);
  void close_executor_phase(const HostId& host, const ThreadKey& k, ExecutorThreadState& st,
                            TimeNs end_ts, bool truncated);
};

void Builder::collect_objects(const Trace& trace) {
  const HostId& host = trace.host;
  const size_t first_publisher = db.publishers.size();

  struct RawAnnotation {
    i64 pid;
    MessageLinkAnnotation payload;
  };
  std::vector<std::pair<i64, PubInitRmw>> loose_pub_rmw;
  std::vector<std::pair<i64, PubInitDds>> loose_pub_dds;
  std::vector<std::pair<i64, SubInitRmw>> loose_sub_rmw;
  std::vector<std::pair<i64, CallbackRegister>> registers;
  std::vector<std::pair<i64, TimerNodeLink>> timer_links;
  std::vector<RawAnnotation> raw_annotations;

  for (const TraceEvent& ev : trace.events) {
    if (!ev.is_init()) continue;
    switch (ev.kind()) {
      case EventKind::node_init: {
        const auto& p = std::get<NodeInit>(ev.payload);
        auto key = std::make_pair(ev.pid, p.node_handle);
        if (node_by_handle.count(key)) {
          diag("DuplicateObject", "node_init repeats handle " + std::to_string(p.node_handle));
          break;
        }
        node_by_handle[key] = static_cast<int>(db.nodes.size());
        db.nodes.push_back({{host, ev.pid, p.node_handle}, p.node_name, p.node_namespace});
        break;
      }
      case EventKind::pub_init_rcl: {
        const auto& p = std::get<PubInitRcl>(ev.payload);
        auto key = std::make_pair(ev.pid, p.publisher_handle);
        if (pub_by_rcl.count(key)) {
          diag("DuplicateObject", "pub_init_rcl repeats handle " + std::to_string(p.publisher_handle));
          break;
        }
        PublisherRec rec;
        rec.key = {host, ev.pid, p.publisher_handle};
        rec.topic = p.topic_name;
        rec.rmw_handle = p.rmw_publisher_handle;
        auto node_it = node_by_handle.find({ev.pid, p.node_handle});
        if (node_it != node_by_handle.end()) {
          rec.node = node_it->second;
        } else {
          diag("UnknownNode", "publisher on " + p.topic_name + " references unknown node");
        }
        int idx = static_cast<int>(db.publishers.size());
        pub_by_rcl[key] = idx;
        pub_by_rmw[{ev.pid, p.rmw_publisher_handle}] = idx;
        db.publishers.push_back(std::move(rec));
        break;
      }
      case EventKind::pub_init_rmw:
        loose_pub_rmw.push_back({ev.pid, std::get<PubInitRmw>(ev.payload)});
        break;
      case EventKind::pub_init_dds:
        loose_pub_dds.push_back({ev.pid, std::get<PubInitDds>(ev.payload)});
        break;
      case EventKind::sub_init_rcl: {
        const auto& p = std::get<SubInitRcl>(ev.payload);
        auto key = std::make_pair(ev.pid, p.subscription_handle);
        if (sub_by_rcl.count(key)) {
          diag("DuplicateObject", "sub_init_rcl repeats handle " + std::to_string(p.subscription_handle));
          break;
        }
        SubscriptionRec rec;
        rec.key = {host, ev.pid, p.subscription_handle};
        rec.topic = p.topic_name;
        rec.rmw_handle = p.rmw_subscription_handle;
        auto node_it = node_by_handle.find({ev.pid, p.node_handle});
        if (node_it != node_by_handle.end()) {
          rec.node = node_it->second;
        } else {
          diag("UnknownNode", "subscription on " + p.topic_name + " references unknown node");
        }
        int idx = static_cast<int>(db.subscriptions.size());
        sub_by_rcl[key] = idx;
        sub_by_rmw[{ev.pid, p.rmw_subscription_handle}] = idx;
        db.subscriptions.push_back(std::move(rec));
        break;
      }
      case EventKind::sub_init_rmw:
        loose_sub_rmw.push_back({ev.pid, std::get<SubInitRmw>(ev.payload)});
        break;
      case EventKind::callback_register:
        registers.push_back({ev.pid, std::get<CallbackRegister>(ev.payload)});
        break;
      case EventKind::timer_init: {
        const auto& p = std::get<TimerInit>(ev.payload);
        auto key = std::make_pair(ev.pid, p.timer_handle);
        if (timer_by_handle.count(key)) {
          diag("DuplicateObject", "timer_init repeats handle " + std::to_string(p.timer_handle));
          break;
        }
        if (p.period_ns <= 0) {
          diag("InvalidTimerPeriod", "timer " + std::to_string(p.timer_handle) +
                                         " period " + std::to_string(p.period_ns));
        }
        TimerRec rec;
        rec.key = {host, ev.pid, p.timer_handle};
        rec.period_ns = p.period_ns;
        timer_by_handle[key] = static_cast<int>(db.timers.size());
        db.timers.push_back(std::move(rec));
        break;
      }
      case EventKind::timer_node_link:
        timer_links.push_back({ev.pid, std::get<TimerNodeLink>(ev.payload)});
        break;
      case EventKind::message_link_annotation:
        raw_annotations.push_back({ev.pid, std::get<MessageLinkAnnotation>(ev.payload)});
        break;
      default:
        break;
    }
  }

  // Attach the rmw layer (gid) to publishers by rmw handle.
  for (const auto& [pid, p] : loose_pub_rmw) {
    auto it = pub_by_rmw.find({pid, p.rmw_publisher_handle});
    if (it == pub_by_rmw.end()) {
      diag("UnmatchedPubInitRmw", "no rcl publisher for rmw handle " +
                                      std::to_string(p.rmw_publisher_handle));
      continue;
    }
    PublisherRec& rec = db.publishers[it->second];
    rec.gid = p.gid;
    rec.has_rmw = true;
    pub_by_gid[{pid, p.gid}] = it->second;
  }
  // Attach the dds layer by writer gid.
  for (const auto& [pid, p] : loose_pub_dds) {
    auto it = pub_by_gid.find({pid, p.gid});
    if (it == pub_by_gid.end()) {
      diag("UnmatchedPubInitDds", "no rmw publisher for gid " + p.gid);
      continue;
    }
    PublisherRec& rec = db.publishers[it->second];
    if (rec.has_dds) {
      diag("DuplicateObject", "pub_init_dds repeats gid " + p.gid);
      continue;
    }
    if (rec.topic != p.topic_name) {
      diag("TopicMismatch", "dds writer topic " + p.topic_name + " vs rcl topic " + rec.topic);
    }
    rec.dds_writer_handle = p.writer_handle;
    rec.has_dds = true;
    pub_by_writer[{pid, p.writer_handle}] = it->second;
  }
  for (size_t i = first_publisher; i < db.publishers.size(); ++i) {
    PublisherRec& rec = db.publishers[i];
    rec.complete = rec.has_rmw && rec.has_dds;
    if (!rec.complete) {
      diag("IncompletePublisher",
           "publisher on " + rec.topic + " missing " + (rec.has_rmw ? "dds" : "rmw") + " init layer");
    }
  }
  // Reader gids are carried for completeness but drive no matching.
  for (const auto& [pid, p] : loose_sub_rmw) {
    auto it = sub_by_rmw.find({pid, p.rmw_subscription_handle});
    if (it == sub_by_rmw.end()) {
      diag("UnmatchedSubInitRmw", "no rcl subscription for rmw handle " +
                                      std::to_string(p.rmw_subscription_handle));
      continue;
    }
    db.subscriptions[it->second].gid = p.gid;
  }
  for (const auto& [pid, p] : timer_links) {
    auto t = timer_by_handle.find({pid, p.timer_handle});
    if (t == timer_by_handle.end()) {
      diag("OrphanInitEvent", "timer_node_link for unknown timer " + std::to_string(p.timer_handle));
      continue;
    }
    auto n = node_by_handle.find({pid, p.node_handle});
    if (n == node_by_handle.end()) {
      diag("UnknownNode", "timer_node_link references unknown node");
      continue;
    }
    db.timers[t->second].node = n->second;
  }
  for (const auto& [pid, p] : registers) {
    auto s = sub_by_rcl.find({pid, p.owner_handle});
    if (s != sub_by_rcl.end()) {
      SubscriptionRec& rec = db.subscriptions[s->second];
      if (rec.has_callback) {
        diag("DuplicateObject", "callback_register repeats for subscription on " + rec.topic);
        continue;
      }
      rec.callback_ref = p.callback_ref;
      rec.has_callback = true;
      cb_owner[{pid, p.callback_ref}] = {OwnerKind::subscription, s->second};
      continue;
    }
    auto t = timer_by_handle.find({pid, p.owner_handle});
    if (t != timer_by_handle.end()) {
      TimerRec& rec = db.timers[t->second];
      if (rec.has_callback) {
        diag("DuplicateObject", "callback_register repeats for timer");
        continue;
      }
      rec.callback_ref = p.callback_ref;
      rec.has_callback = true;
      cb_owner[{pid, p.callback_ref}] = {OwnerKind::timer, t->second};
      continue;
    }
    diag("UnresolvedCallbackRegister",
         "owner handle " + std::to_string(p.owner_handle) + " matches no subscription or timer");
  }
  for (const auto& raw : raw_annotations) {
    LinkAnnotation ann;
    ann.link_type = raw.payload.link_type;
    ann.host = host;
    ann.pid = raw.pid;
    bool ok = true;
    for (i64 h : raw.payload.subscription_handles) {
      auto it = sub_by_rcl.find({raw.pid, h});
      if (it == sub_by_rcl.end()) {
        ok = false;
        break;
      }
      ann.inputs.push_back(it->second);
    }
    for (i64 h : raw.payload.publisher_handles) {
      if (!ok) break;
      auto it = pub_by_rcl.find({raw.pid, h});
      if (it == pub_by_rcl.end()) {
        ok = false;
        break;
      }
      ann.outputs.push_back(it->second);
    }
    if (!ok) {
      diag("UnresolvedAnnotation", std::string(link_type_name(raw.payload.link_type)) +
                                       " annotation references unknown handles");
      continue;
    }
    db.annotations.push_back(std::move(ann));
  }
}

void Builder::close_publication_window(const ThreadKey& k, OpenPublication& w,
                                        bool emit_instance, std::optional<TimeNs> dds_ts,
                                        i64 source_ts) {
  if (emit_instance) {
    PublicationInstance inst;
    inst.publisher = w.publisher;
    inst.tid = k.tid;
    inst.rclcpp_ts = w.ts[kRclcpp];
    inst.rcl_ts = w.ts[kRcl];
    inst.rmw_ts = w.ts[kRmw];
    inst.dds_ts = *dds_ts;
    inst.source_timestamp = source_ts;
    db.publications.push_back(inst);
    db.folded_runtime_events += w.events;
  } else {
    diag("IncompletePublication",
         "publication window for message_ref " + std::to_string(w.message_ref) +
             " closed without dds_write",
         w.events);
  }
}

void Builder::handle_publish_layer(const TraceEvent& ev, Layer layer, int pub_idx,
                                   i64 message_ref, HostFold& hf) {
  ThreadKey k{ev.pid, ev.tid};
  auto it = hf.open_pubs.find(k);

  if (it != hf.open_pubs.end()) {
    OpenPublication& w = it->second;
    bool same_ref = w.message_ref == message_ref;
    bool advances = static_cast<int>(layer) > w.max_layer;
    bool same_pub = w.publisher == pub_idx;
    if (same_ref && advances && same_pub) {
      if (ev.timestamp < w.last_ts) {
        // Keeps the non-decreasing layer invariant; the stale event is dropped.
        diag("LayerOrderViolation",
             "publish layer timestamp regressed for message_ref " + std::to_string(message_ref), 1);
        return;
      }
      w.max_layer = layer;
      w.last_ts = ev.timestamp;
      ++w.events;
      if (layer == kDds) {
        const auto& p = std::get<DdsWrite>(ev.payload);
        close_publication_window(k, w, true, ev.timestamp, p.source_timestamp, hf);
        hf.open_pubs.erase(it);
      } else {
        w.ts[layer] = ev.timestamp;
      }
      return;
    }
    // Message refs are reused: a conflicting publish event means the open
    // window never completed.
    if (same_ref && !advances) {
      diag("LayerOrderViolation",
           "publish layer order regressed for message_ref " + std::to_string(message_ref), 0);
    }
    close_publication_window(k, w, false, std::nullopt, 0, hf);
    hf.open_pubs.erase(it);
  }

  if (layer == kDds) {
    // Publication made below the client layers: dds_write alone is a
    // complete single-layer instance.
    const auto& p = std::get<DdsWrite>(ev.payload);
    OpenPublication w;
    w.message_ref = message_ref;
    w.publisher = pub_idx;
    w.events = 1;
    close_publication_window(ThreadKey{ev.pid, ev.tid}, w, true, ev.timestamp,
                             p.source_timestamp, hf);
    return;
  }
  OpenPublication w;
  w.message_ref = message_ref;
  w.publisher = pub_idx;
  w.max_layer = layer;
  w.last_ts = ev.timestamp;
  w.ts[layer] = ev.timestamp;
  w.events = 1;
  hf.open_pubs[k] = w;
}

void Builder::close_executor_phase(const HostId& host, const ThreadKey& k,
                                   ExecutorThreadState& st, TimeNs end_ts, bool truncated) {
  if (st.phase == ExecPhase::idle) return;
  ExecutorStateInterval iv;
  iv.host = host;
  iv.pid = k.pid;
  iv.tid = k.tid;
  iv.start = st.mark;
  iv.end = std::max(st.mark, end_ts);
  switch (st.phase) {
    case ExecPhase::waiting: iv.state = ExecState::waiting; break;
    case ExecPhase::after_wait: iv.state = ExecState::overhead; break;
    case ExecPhase::executing:
      iv.state = ExecState::executing;
      iv.has_target = st.has_target;
      iv.target_kind = st.target_kind;
      iv.target = st.target;
      break;
    case ExecPhase::idle: break;
  }
  db.executor_intervals.push_back(iv);
  if (truncated) {
    diag("UnclosedExecutorInterval",
         std::string(exec_state_name(iv.state)) + " interval on tid " + std::to_string(k.tid) +
             " closed at last seen event");
  }
  st.phase = ExecPhase::idle;
  st.has_target = false;
}

void Builder::fold_runtime(const Trace& trace) {
  const HostId& host = trace.host;
  HostFold hf;
  TimeNs last_ts = trace.events.empty() ? 0 : trace.events.back().timestamp;

  auto tally = [&](const ThreadKey& k, const char* code) {
    ++hf.tallies[{k, code}];
  };

  for (const TraceEvent& ev : trace.events) {
    if (ev.is_init()) continue;
    ThreadKey k{ev.pid, ev.tid};
    switch (ev.kind()) {
      case EventKind::publish_rclcpp: {
        const auto& p = std::get<PublishRclcpp>(ev.payload);
        auto it = pub_by_rcl.find({ev.pid, p.publisher_handle});
        if (it == pub_by_rcl.end()) {
          diag("OrphanRuntimeEvent", "publish_rclcpp with unknown publisher handle", 1);
          break;
        }
        handle_publish_layer(trace, ev, kRclcpp, it->second, p.message_ref, hf);
        break;
      }
      case EventKind::publish_rcl: {
        const auto& p = std::get<PublishRcl>(ev.payload);
        auto it = pub_by_rcl.find({ev.pid, p.publisher_handle});
        if (it == pub_by_rcl.end()) {
          diag("OrphanRuntimeEvent", "publish_rcl with unknown publisher handle", 1);
          break;
        }
        handle_publish_layer(trace, ev, kRcl, it->second, p.message_ref, hf);
        break;
      }
      case EventKind::publish_rmw: {
        const auto& p = std::get<PublishRmw>(ev.payload);
        auto it = pub_by_rmw.find({ev.pid, p.rmw_publisher_handle});
        if (it == pub_by_rmw.end()) {
          diag("OrphanRuntimeEvent", "publish_rmw with unknown rmw handle", 1);
          break;
        }
        handle_publish_layer(trace, ev, kRmw, it->second, p.message_ref, hf);
        break;
      }
      case EventKind::dds_write: {
        const auto& p = std::get<DdsWrite>(ev.payload);
        auto it = pub_by_writer.find({ev.pid, p.writer_handle});
        if (it == pub_by_writer.end()) {
          diag("OrphanRuntimeEvent", "dds_write with unknown writer handle", 1);
          break;
        }
        handle_publish_layer(trace, ev, kDds, it->second, p.message_ref, hf);
        break;
      }
      case EventKind::rmw_take: {
        const auto& p = std::get<RmwTake>(ev.payload);
        if (!p.taken) {
          tally(k, "UntakenTake");
          break;
        }
        auto it = sub_by_rmw.find({ev.pid, p.rmw_subscription_handle});
        if (it == sub_by_rmw.end()) {
          diag("OrphanRuntimeEvent", "rmw_take with unknown rmw subscription handle", 1);
          break;
        }
        hf.pending_takes[k].push_back({it->second, ev.timestamp, p.source_timestamp});
        break;
      }
      case EventKind::callback_start: {
        const auto& p = std::get<CallbackStart>(ev.payload);
        auto owner = cb_owner.find({ev.pid, p.callback_ref});
        if (owner == cb_owner.end()) {
          diag("OrphanRuntimeEvent",
               "callback_start with unregistered callback_ref " + std::to_string(p.callback_ref), 1);
          break;
        }
        auto open = hf.open_callbacks.find(k);
        if (open != hf.open_callbacks.end()) {
          diag("UnclosedCallback", "callback_start while another callback is open on tid " +
                                       std::to_string(ev.tid),
               open->second.events);
          hf.open_callbacks.erase(open);
        }
        OpenCallback cb;
        cb.kind = owner->second.first;
        cb.owner = owner->second.second;
        cb.start = ev.timestamp;
        cb.events = 1;
        if (cb.kind == OwnerKind::subscription) {
          // The take immediately preceding this callback on the same thread
          // carries the message the callback processes.
          auto& q = hf.pending_takes[k];
          auto take_it = std::find_if(q.begin(), q.end(), [&](const PendingTake& t) {
            return t.sub == cb.owner;
          });
          if (take_it != q.end()) {
            cb.has_take = true;
            cb.take_ts = take_it->take_ts;
            cb.taken_source_timestamp = take_it->source_timestamp;
            cb.events += 1;
            q.erase(take_it);
          } else {
            diag("MissingTake", "subscription callback started without a matched take");
          }
        }
        hf.open_callbacks[k] = cb;
        break;
      }
      case EventKind::callback_end: {
        const auto& p = std::get<CallbackEnd>(ev.payload);
        auto open = hf.open_callbacks.find(k);
        if (open == hf.open_callbacks.end()) {
          diag("CallbackMismatch", "callback_end without open callback", 1);
          break;
        }
        auto owner = cb_owner.find({ev.pid, p.callback_ref});
        if (owner == cb_owner.end() || owner->second != std::make_pair(open->second.kind, open->second.owner)) {
          diag("CallbackMismatch", "callback_end does not match the open callback",
               open->second.events + 1);
          hf.open_callbacks.erase(open);
          break;
        }
        CallbackInstance inst;
        inst.owner_kind = open->second.kind;
        inst.owner = open->second.owner;
        inst.tid = ev.tid;
        inst.start = open->second.start;
        inst.end = ev.timestamp;
        inst.has_take = open->second.has_take;
        inst.take_ts = open->second.take_ts;
        inst.taken_source_timestamp = open->second.taken_source_timestamp;
        db.callbacks.push_back(inst);
        db.folded_runtime_events += open->second.events + 1;
        hf.open_callbacks.erase(open);
        break;
      }
      case EventKind::executor_wait_begin: {
        auto& st = hf.executors[k];
        switch (st.phase) {
          case ExecPhase::idle: break;
          case ExecPhase::after_wait:
            // Woke up and found nothing runnable: the span is overhead.
            close_executor_phase(host, k, st, ev.timestamp, false);
            break;
          case ExecPhase::waiting:
            diag("ExecutorStateViolation", "wait_begin while already waiting");
            close_executor_phase(host, k, st, ev.timestamp, false);
            break;
          case ExecPhase::executing:
            diag("ExecutorStateViolation", "wait_begin while executing");
            close_executor_phase(host, k, st, ev.timestamp, false);
            break;
        }
        st.phase = ExecPhase::waiting;
        st.mark = ev.timestamp;
        db.folded_runtime_events += 1;
        break;
      }
      case EventKind::executor_wait_end: {
        auto& st = hf.executors[k];
        if (st.phase != ExecPhase::waiting) {
          diag("ExecutorStateViolation", "wait_end without wait_begin", 1);
          break;
        }
        close_executor_phase(host, k, st, ev.timestamp, false);
        st.phase = ExecPhase::after_wait;
        st.mark = ev.timestamp;
        db.folded_runtime_events += 1;
        break;
      }
      case EventKind::executor_execute_begin: {
        const auto& p = std::get<ExecutorExecuteBegin>(ev.payload);
        auto& st = hf.executors[k];
        switch (st.phase) {
          case ExecPhase::after_wait:
            close_executor_phase(host, k, st, ev.timestamp, false);  // overhead
            break;
          case ExecPhase::idle:
            break;
          case ExecPhase::waiting:
            diag("ExecutorStateViolation", "execute_begin while waiting");
            close_executor_phase(host, k, st, ev.timestamp, false);
            break;
          case ExecPhase::executing:
            diag("ExecutorStateViolation", "execute_begin while executing");
            close_executor_phase(host, k, st, ev.timestamp, false);
            break;
        }
        st.phase = ExecPhase::executing;
        st.mark = ev.timestamp;
        st.has_target = false;
        if (auto s = sub_by_rcl.find({ev.pid, p.target_handle}); s != sub_by_rcl.end()) {
          st.has_target = true;
          st.target_kind = OwnerKind::subscription;
          st.target = s->second;
        } else if (auto t = timer_by_handle.find({ev.pid, p.target_handle}); t != timer_by_handle.end()) {
          st.has_target = true;
          st.target_kind = OwnerKind::timer;
          st.target = t->second;
        }
        db.folded_runtime_events += 1;
        break;
      }
      case EventKind::executor_execute_end: {
        auto& st = hf.executors[k];
        if (st.phase != ExecPhase::executing) {
          diag("ExecutorStateViolation", "execute_end without execute_begin", 1);
          break;
        }
        close_executor_phase(host, k, st, ev.timestamp, false);
        db.folded_runtime_events += 1;
        break;
      }
      default:
        break;
    }
  }

  // Trace end: close whatever is still open at the last seen timestamp.
  for (auto& [k, w] : hf.open_pubs) {
    close_publication_window(k, w, false, std::nullopt, 0, hf);
  }
  for (auto& [k, cb] : hf.open_callbacks) {
    diag("UnclosedCallback",
         "callback still open at trace end on tid " + std::to_string(k.tid), cb.events);
  }
  for (auto& [k, st] : hf.executors) {
    close_executor_phase(host, k, st, last_ts, true);
  }
  for (auto& [k, q] : hf.pending_takes) {
    if (!q.empty()) {
      diag("UnconsumedTake",
           std::to_string(q.size()) + " takes never matched a callback on tid " +
               std::to_string(k.tid),
           static_cast<i64>(q.size()));
    }
  }
  for (auto& [key, count] : hf.tallies) {
    diag(key.second, "on tid " + std::to_string(key.first.tid), count);
  }
}

}  // namespace

IrDatabase build_ir(const TraceBundle& bundle) {
  Builder b;
  for (const Trace& trace : bundle.traces) {
    b.db.hosts.push_back(trace.host);
    b.reset_host_maps();
    b.collect_objects(trace);
    b.fold_runtime(trace);
  }
  std::sort(b.db.executor_intervals.begin(), b.db.executor_intervals.end(),
            [](const ExecutorStateInterval& a, const ExecutorStateInterval& x) {
              return std::tie(a.host, a.pid, a.tid, a.start) <
                     std::tie(x.host, x.pid, x.tid, x.start);
            });
  b.db.build_indexes();
  return std::move(b.db);
}

void IrDatabase::build_indexes() {
  pubs_by_topic_ts.clear();
  pubs_by_topic.clear();
  callbacks_of_subscription.assign(subscriptions.size(), {});
  callbacks_of_timer.assign(timers.size(), {});
  publications_of_publisher.assign(publishers.size(), {});

  for (size_t i = 0; i < publications.size(); ++i) {
    const auto& inst = publications[i];
    if (inst.publisher < 0) continue;
    const std::string& topic = publishers[inst.publisher].topic;
    pubs_by_topic_ts[{topic, inst.source_timestamp}].push_back(static_cast<int>(i));
    pubs_by_topic[topic].push_back(static_cast<int>(i));
    publications_of_publisher[inst.publisher].push_back(static_cast<int>(i));
  }
  for (size_t i = 0; i < callbacks.size(); ++i) {
    const auto& cb = callbacks[i];
    if (cb.owner < 0) continue;
    if (cb.owner_kind == OwnerKind::subscription) {
      callbacks_of_subscription[cb.owner].push_back(static_cast<int>(i));
    } else {
      callbacks_of_timer[cb.owner].push_back(static_cast<int>(i));
    }
  }
  // Ordinals: per-owner instance number in start-time order.
  auto assign_ordinals = [&](std::vector<std::vector<int>>& per_owner) {
    for (auto& list : per_owner) {
      std::stable_sort(list.begin(), list.end(), [&](int a, int x) {
        return callbacks[a].start < callbacks[x].start;
      });
      for (size_t k = 0; k < list.size(); ++k) callbacks[list[k]].ordinal = static_cast<i64>(k);
    }
  };
  assign_ordinals(callbacks_of_subscription);
  assign_ordinals(callbacks_of_timer);
}

std::vector<int> IrDatabase::query_publication(const std::string& topic, i64 source_ts) const {
  auto it = pubs_by_topic_ts.find({topic, source_ts});
  if (it == pubs_by_topic_ts.end()) return {};
  return it->second;
}

std::string IrDatabase::publication_desc(int idx) const {
  const auto& inst = publications[idx];
  const auto& key = publishers[inst.publisher].key;
  return desc::publication(key.host, key.pid, key.handle, inst.source_timestamp);
}

std::string IrDatabase::callback_desc(int idx) const {
  const auto& cb = callbacks[idx];
  const ObjectKey& key = cb.owner_kind == OwnerKind::subscription
                             ? subscriptions[cb.owner].key
                             : timers[cb.owner].key;
  return desc::callback(key.host, key.pid, cb.owner_kind == OwnerKind::timer, key.handle,
                        cb.ordinal);
}

const HostId& IrDatabase::callback_host(int idx) const {
  const auto& cb = callbacks[idx];
  return cb.owner_kind == OwnerKind::subscription ? subscriptions[cb.owner].key.host
                                                  : timers[cb.owner].key.host;
}

i64 IrDatabase::callback_pid(int idx) const {
  const auto& cb = callbacks[idx];
  return cb.owner_kind == OwnerKind::subscription ? subscriptions[cb.owner].key.pid
                                                  : timers[cb.owner].key.pid;
}

int IrDatabase::callback_node(int idx) const {
  const auto& cb = callbacks[idx];
  return cb.owner_kind == OwnerKind::subscription ? subscriptions[cb.owner].node
                                                  : timers[cb.owner].node;
}

const std::string* IrDatabase::subscription_topic_of_callback(int idx) const {
  const auto& cb = callbacks[idx];
  if (cb.owner_kind != OwnerKind::subscription) return nullptr;
  return &subscriptions[cb.owner].topic;
}

// ---- serialization --------------------------------------------------------

namespace {

using ojson = nlohmann::ordered_json;

ojson key_to_json(const ObjectKey& k) {
  return ojson{{"host", k.host}, {"pid", k.pid}, {"handle", k.handle}};
}

ObjectKey key_from_json(const nlohmann::json& j) {
  return ObjectKey{j.at("host").get<std::string>(), j.at("pid").get<i64>(),
                   j.at("handle").get<i64>()};
}

}  // namespace

nlohmann::ordered_json ir_to_json(const IrDatabase& db) {
  ojson j;
  j["ir_version"] = kIrVersion;
  j["hosts"] = db.hosts;
  auto& nodes = j["nodes"] = ojson::array();
  for (const auto& n : db.nodes) {
    ojson o = key_to_json(n.key);
    o["name"] = n.name;
    o["namespace"] = n.ns;
    nodes.push_back(std::move(o));
  }
  auto& pubs = j["publishers"] = ojson::array();
  for (const auto& p : db.publishers) {
    ojson o = key_to_json(p.key);
    o["node"] = p.node;
    o["topic"] = p.topic;
    o["gid"] = p.gid;
    o["rmw_handle"] = p.rmw_handle;
    o["has_rmw"] = p.has_rmw;
    o["dds_writer_handle"] = p.dds_writer_handle;
    o["has_dds"] = p.has_dds;
    o["complete"] = p.complete;
    pubs.push_back(std::move(o));
  }
  auto& subs = j["subscriptions"] = ojson::array();
  for (const auto& s : db.subscriptions) {
    ojson o = key_to_json(s.key);
    o["node"] = s.node;
    o["topic"] = s.topic;
    o["gid"] = s.gid;
    o["rmw_handle"] = s.rmw_handle;
    o["callback_ref"] = s.callback_ref;
    o["has_callback"] = s.has_callback;
    subs.push_back(std::move(o));
  }
  auto& timers = j["timers"] = ojson::array();
  for (const auto& t : db.timers) {
    ojson o = key_to_json(t.key);
    o["node"] = t.node;
    o["period_ns"] = t.period_ns;
    o["callback_ref"] = t.callback_ref;
    o["has_callback"] = t.has_callback;
    timers.push_back(std::move(o));
  }
  auto& pi = j["publications"] = ojson::array();
  for (const auto& p : db.publications) {
    ojson o;
    o["publisher"] = p.publisher;
    o["tid"] = p.tid;
    if (p.rclcpp_ts) o["rclcpp_ts"] = *p.rclcpp_ts;
    if (p.rcl_ts) o["rcl_ts"] = *p.rcl_ts;
    if (p.rmw_ts) o["rmw_ts"] = *p.rmw_ts;
    o["dds_ts"] = p.dds_ts;
    o["source_timestamp"] = p.source_timestamp;
    pi.push_back(std::move(o));
  }
  auto& ci = j["callbacks"] = ojson::array();
  for (const auto& c : db.callbacks) {
    ojson o;
    o["owner_kind"] = c.owner_kind == OwnerKind::subscription ? "subscription" : "timer";
    o["owner"] = c.owner;
    o["tid"] = c.tid;
    o["start"] = c.start;
    o["end"] = c.end;
    if (c.has_take) {
      o["take_ts"] = c.take_ts;
      o["taken_source_timestamp"] = c.taken_source_timestamp;
    }
    o["ordinal"] = c.ordinal;
    ci.push_back(std::move(o));
  }
  auto& xi = j["executor_intervals"] = ojson::array();
  for (const auto& x : db.executor_intervals) {
    ojson o;
    o["host"] = x.host;
    o["pid"] = x.pid;
    o["tid"] = x.tid;
    o["state"] = std::string(exec_state_name(x.state));
    o["start"] = x.start;
    o["end"] = x.end;
    if (x.has_target) {
      o["target_kind"] = x.target_kind == OwnerKind::subscription ? "subscription" : "timer";
      o["target"] = x.target;
    }
    xi.push_back(std::move(o));
  }
  auto& an = j["annotations"] = ojson::array();
  for (const auto& a : db.annotations) {
    ojson o;
    o["link_type"] = std::string(link_type_name(a.link_type));
    o["host"] = a.host;
    o["pid"] = a.pid;
    o["inputs"] = a.inputs;
    o["outputs"] = a.outputs;
    an.push_back(std::move(o));
  }
  auto& di = j["diagnostics"] = ojson::array();
  for (const auto& d : db.diagnostics) {
    di.push_back(ojson{{"code", d.code}, {"detail", d.detail}, {"event_count", d.event_count}});
  }
  j["folded_runtime_events"] = db.folded_runtime_events;
  return j;
}

Result<IrDatabase, std::string> ir_from_json(const nlohmann::json& j) {
  try {
    if (!j.contains("ir_version") || j.at("ir_version").get<int>() != kIrVersion) {
      return std::string("unsupported ir_version");
    }
    IrDatabase db;
    db.hosts = j.at("hosts").get<std::vector<HostId>>();
    for (const auto& o : j.at("nodes")) {
      db.nodes.push_back({key_from_json(o), o.at("name").get<std::string>(),
                          o.at("namespace").get<std::string>()});
    }
    for (const auto& o : j.at("publishers")) {
      PublisherRec p;
      p.key = key_from_json(o);
      p.node = o.at("node").get<int>();
      p.topic = o.at("topic").get<std::string>();
      p.gid = o.at("gid").get<std::string>();
      p.rmw_handle = o.at("rmw_handle").get<i64>();
      p.has_rmw = o.at("has_rmw").get<bool>();
      p.dds_writer_handle = o.at("dds_writer_handle").get<i64>();
      p.has_dds = o.at("has_dds").get<bool>();
      p.complete = o.at("complete").get<bool>();
      db.publishers.push_back(std::move(p));
    }
    for (const auto& o : j.at("subscriptions")) {
      SubscriptionRec s;
      s.key = key_from_json(o);
      s.node = o.at("node").get<int>();
      s.topic = o.at("topic").get<std::string>();
      s.gid = o.at("gid").get<std::string>();
      s.rmw_handle = o.at("rmw_handle").get<i64>();
      s.callback_ref = o.at("callback_ref").get<i64>();
      s.has_callback = o.at("has_callback").get<bool>();
      db.subscriptions.push_back(std::move(s));
    }
    for (const auto& o : j.at("timers")) {
      TimerRec t;
      t.key = key_from_json(o);
      t.node = o.at("node").get<int>();
      t.period_ns = o.at("period_ns").get<i64>();
      t.callback_ref = o.at("callback_ref").get<i64>();
      t.has_callback = o.at("has_callback").get<bool>();
      db.timers.push_back(std::move(t));
    }
    for (const auto& o : j.at("publications")) {
      PublicationInstance p;
      p.publisher = o.at("publisher").get<int>();
      p.tid = o.at("tid").get<i64>();
      if (o.contains("rclcpp_ts")) p.rclcpp_ts = o.at("rclcpp_ts").get<i64>();
      if (o.contains("rcl_ts")) p.rcl_ts = o.at("rcl_ts").get<i64>();
      if (o.contains("rmw_ts")) p.rmw_ts = o.at("rmw_ts").get<i64>();
      p.dds_ts = o.at("dds_ts").get<i64>();
      p.source_timestamp = o.at("source_timestamp").get<i64>();
      db.publications.push_back(p);
    }
    for (const auto& o : j.at("callbacks")) {
      CallbackInstance c;
      c.owner_kind = o.at("owner_kind").get<std::string>() == "timer" ? OwnerKind::timer
                                                                      : OwnerKind::subscription;
      c.owner = o.at("owner").get<int>();
      c.tid = o.at("tid").get<i64>();
      c.start = o.at("start").get<i64>();
      c.end = o.at("end").get<i64>();
      if (o.contains("take_ts")) {
        c.has_take = true;
        c.take_ts = o.at("take_ts").get<i64>();
        c.taken_source_timestamp = o.at("taken_source_timestamp").get<i64>();
      }
      c.ordinal = o.at("ordinal").get<i64>();
      db.callbacks.push_back(c);
    }
    for (const auto& o : j.at("executor_intervals")) {
      ExecutorStateInterval x;
      x.host = o.at("host").get<std::string>();
      x.pid = o.at("pid").get<i64>();
      x.tid = o.at("tid").get<i64>();
      std::string s = o.at("state").get<std::string>();
      x.state = s == "waiting" ? ExecState::waiting
                               : (s == "overhead" ? ExecState::overhead : ExecState::executing);
      x.start = o.at("start").get<i64>();
      x.end = o.at("end").get<i64>();
      if (o.contains("target")) {
        x.has_target = true;
        x.target_kind = o.at("target_kind").get<std::string>() == "timer"
                            ? OwnerKind::timer
                            : OwnerKind::subscription;
        x.target = o.at("target").get<int>();
      }
      db.executor_intervals.push_back(std::move(x));
    }
    for (const auto& o : j.at("annotations")) {
      LinkAnnotation a;
      a.link_type = o.at("link_type").get<std::string>() == "partial_sync"
                        ? LinkType::partial_sync
                        : LinkType::periodic_async;
      a.host = o.at("host").get<std::string>();
      a.pid = o.at("pid").get<i64>();
      a.inputs = o.at("inputs").get<std::vector<int>>();
      a.outputs = o.at("outputs").get<std::vector<int>>();
      db.annotations.push_back(std::move(a));
    }
    for (const auto& o : j.at("diagnostics")) {
      db.diagnostics.push_back({o.at("code").get<std::string>(),
                                o.at("detail").get<std::string>(),
                                o.at("event_count").get<i64>()});
    }
    db.folded_runtime_events = j.at("folded_runtime_events").get<i64>();
    db.build_indexes();
    return db;
  } catch (const nlohmann::json::exception& e) {
    return std::string("malformed ir document: ") + e.what();
  }
}

}  // namespace msgflow

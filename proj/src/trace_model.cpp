#include "msgflow/trace_model.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

namespace msgflow {

using nlohmann::json;

std::string_view link_type_name(LinkType t) {
  switch (t) {
    case LinkType::periodic_async: return "periodic_async";
    case LinkType::partial_sync: return "partial_sync";
  }
  return "?";
}

namespace {

constexpr std::string_view kKindNames[kEventKindCount] = {
    "node_init",
    "pub_init_rcl",
    "pub_init_rmw",
    "pub_init_dds",
    "sub_init_rcl",
    "sub_init_rmw",
    "callback_register",
    "timer_init",
    "timer_node_link",
    "message_link_annotation",
    "publish_rclcpp",
    "publish_rcl",
    "publish_rmw",
    "dds_write",
    "rmw_take",
    "callback_start",
    "callback_end",
    "executor_wait_begin",
    "executor_wait_end",
    "executor_execute_begin",
    "executor_execute_end",
};

using PE = ParseError;

PE schema_err(std::string msg) {
  return PE{PE::Code::SchemaViolation, std::move(msg), {}, 0};
}

bool valid_gid(const std::string& s) {
  if (s.size() < 2 || s.size() > 48 || s.size() % 2 != 0) return false;
  return std::all_of(s.begin(), s.end(), [](unsigned char c) {
    return std::isxdigit(c) != 0;
  });
}

// Pulls typed fields out of one record and tracks how many keys were
// consumed, so leftover (unexpected) fields can be rejected.
class FieldReader {
 public:
  explicit FieldReader(const json& obj) : obj_(obj) {}

  Result<i64, PE> take_int(const char* name) {
    auto it = obj_.find(name);
    if (it == obj_.end()) return schema_err(std::string("missing field: ") + name);
    if (!it->is_number_integer())
      return schema_err(std::string("field not an integer: ") + name);
    ++consumed_;
    return it->get<i64>();
  }

  Result<std::string, PE> take_str(const char* name) {
    auto it = obj_.find(name);
    if (it == obj_.end()) return schema_err(std::string("missing field: ") + name);
    if (!it->is_string())
      return schema_err(std::string("field not a string: ") + name);
    ++consumed_;
    return it->get<std::string>();
  }

  Result<bool, PE> take_bool(const char* name) {
    auto it = obj_.find(name);
    if (it == obj_.end()) return schema_err(std::string("missing field: ") + name);
    if (!it->is_boolean())
      return schema_err(std::string("field not a boolean: ") + name);
    ++consumed_;
    return it->get<bool>();
  }

  Result<std::vector<i64>, PE> take_int_array(const char* name) {
    auto it = obj_.find(name);
    if (it == obj_.end()) return schema_err(std::string("missing field: ") + name);
    if (!it->is_array())
      return schema_err(std::string("field not an array: ") + name);
    std::vector<i64> out;
    for (const auto& v : *it) {
      if (!v.is_number_integer())
        return schema_err(std::string("array element not an integer: ") + name);
      out.push_back(v.get<i64>());
    }
    ++consumed_;
    return out;
  }

  bool has(const char* name) const { return obj_.contains(name); }
  void mark_consumed() { ++consumed_; }

  // Rejects records with payload fields that are not part of the schema.
  std::optional<PE> finish() const {
    if (static_cast<size_t>(consumed_) != obj_.size()) {
      for (auto it = obj_.begin(); it != obj_.end(); ++it) {
        if (!known_.count(it.key()))
          return schema_err("unexpected field: " + it.key());
      }
      return schema_err("unexpected extra field");
    }
    return std::nullopt;
  }

  void note_known(std::initializer_list<const char*> names) {
    known_.insert({"ts", "host", "pid", "tid", "kind"});
    for (const char* n : names) known_.insert(n);
  }

 private:
  const json& obj_;
  int consumed_ = 0;  // base fields count too; parse_event takes them first
  std::set<std::string> known_;
};

#define TAKE_INT(dst, name)            \
  do {                                 \
    auto r = f.take_int(name);         \
    if (!r.ok()) return r.error();     \
    (dst) = r.value();                 \
  } while (0)

#define TAKE_STR(dst, name)            \
  do {                                 \
    auto r = f.take_str(name);         \
    if (!r.ok()) return r.error();     \
    (dst) = std::move(r.value());      \
  } while (0)

Result<EventPayload, PE> parse_payload(EventKind kind, FieldReader& f) {
  switch (kind) {
    case EventKind::node_init: {
      NodeInit p;
      f.note_known({"node_handle", "node_name", "node_namespace"});
      TAKE_INT(p.node_handle, "node_handle");
      TAKE_STR(p.node_name, "node_name");
      TAKE_STR(p.node_namespace, "node_namespace");
      return EventPayload{p};
    }
    case EventKind::pub_init_rcl: {
      PubInitRcl p;
      f.note_known({"publisher_handle", "node_handle", "rmw_publisher_handle", "topic_name"});
      TAKE_INT(p.publisher_handle, "publisher_handle");
      TAKE_INT(p.node_handle, "node_handle");
      TAKE_INT(p.rmw_publisher_handle, "rmw_publisher_handle");
      TAKE_STR(p.topic_name, "topic_name");
      return EventPayload{p};
    }
    case EventKind::pub_init_rmw: {
      PubInitRmw p;
      f.note_known({"rmw_publisher_handle", "gid"});
      TAKE_INT(p.rmw_publisher_handle, "rmw_publisher_handle");
      TAKE_STR(p.gid, "gid");
      if (!valid_gid(p.gid)) return schema_err("invalid gid: " + p.gid);
      return EventPayload{p};
    }
    case EventKind::pub_init_dds: {
      PubInitDds p;
      f.note_known({"writer_handle", "gid", "topic_name"});
      TAKE_INT(p.writer_handle, "writer_handle");
      TAKE_STR(p.gid, "gid");
      TAKE_STR(p.topic_name, "topic_name");
      if (!valid_gid(p.gid)) return schema_err("invalid gid: " + p.gid);
      return EventPayload{p};
    }
    case EventKind::sub_init_rcl: {
      SubInitRcl p;
      f.note_known({"subscription_handle", "node_handle", "rmw_subscription_handle", "topic_name"});
      TAKE_INT(p.subscription_handle, "subscription_handle");
      TAKE_INT(p.node_handle, "node_handle");
      TAKE_INT(p.rmw_subscription_handle, "rmw_subscription_handle");
      TAKE_STR(p.topic_name, "topic_name");
      return EventPayload{p};
    }
    case EventKind::sub_init_rmw: {
      SubInitRmw p;
      f.note_known({"rmw_subscription_handle", "gid"});
      TAKE_INT(p.rmw_subscription_handle, "rmw_subscription_handle");
      TAKE_STR(p.gid, "gid");
      if (!valid_gid(p.gid)) return schema_err("invalid gid: " + p.gid);
      return EventPayload{p};
    }
    case EventKind::callback_register: {
      CallbackRegister p;
      f.note_known({"callback_ref", "owner_handle"});
      TAKE_INT(p.callback_ref, "callback_ref");
      TAKE_INT(p.owner_handle, "owner_handle");
      return EventPayload{p};
    }
    case EventKind::timer_init: {
      TimerInit p;
      f.note_known({"timer_handle", "period_ns"});
      TAKE_INT(p.timer_handle, "timer_handle");
      TAKE_INT(p.period_ns, "period_ns");
      return EventPayload{p};
    }
    case EventKind::timer_node_link: {
      TimerNodeLink p;
      f.note_known({"timer_handle", "node_handle"});
      TAKE_INT(p.timer_handle, "timer_handle");
      TAKE_INT(p.node_handle, "node_handle");
      return EventPayload{p};
    }
    case EventKind::message_link_annotation: {
      MessageLinkAnnotation p;
      f.note_known({"link_type", "subscription_handles", "publisher_handles"});
      std::string type_name;
      TAKE_STR(type_name, "link_type");
      if (type_name == "periodic_async") {
        p.link_type = LinkType::periodic_async;
      } else if (type_name == "partial_sync") {
        p.link_type = LinkType::partial_sync;
      } else {
        return schema_err("unknown link_type: " + type_name);
      }
      {
        auto r = f.take_int_array("subscription_handles");
        if (!r.ok()) return r.error();
        p.subscription_handles = std::move(r.value());
      }
      {
        auto r = f.take_int_array("publisher_handles");
        if (!r.ok()) return r.error();
        p.publisher_handles = std::move(r.value());
      }
      if (p.subscription_handles.empty() || p.publisher_handles.empty())
        return schema_err("annotation handle arrays must be non-empty");
      return EventPayload{p};
    }
    case EventKind::publish_rclcpp: {
      PublishRclcpp p;
      f.note_known({"publisher_handle", "message_ref"});
      TAKE_INT(p.publisher_handle, "publisher_handle");
      TAKE_INT(p.message_ref, "message_ref");
      return EventPayload{p};
    }
    case EventKind::publish_rcl: {
      PublishRcl p;
      f.note_known({"publisher_handle", "message_ref"});
      TAKE_INT(p.publisher_handle, "publisher_handle");
      TAKE_INT(p.message_ref, "message_ref");
      return EventPayload{p};
    }
    case EventKind::publish_rmw: {
      PublishRmw p;
      f.note_known({"rmw_publisher_handle", "message_ref"});
      TAKE_INT(p.rmw_publisher_handle, "rmw_publisher_handle");
      TAKE_INT(p.message_ref, "message_ref");
      return EventPayload{p};
    }
    case EventKind::dds_write: {
      DdsWrite p;
      f.note_known({"writer_handle", "message_ref", "source_timestamp"});
      TAKE_INT(p.writer_handle, "writer_handle");
      TAKE_INT(p.message_ref, "message_ref");
      TAKE_INT(p.source_timestamp, "source_timestamp");
      return EventPayload{p};
    }
    case EventKind::rmw_take: {
      RmwTake p;
      f.note_known({"rmw_subscription_handle", "message_ref", "source_timestamp", "taken"});
      TAKE_INT(p.rmw_subscription_handle, "rmw_subscription_handle");
      TAKE_INT(p.message_ref, "message_ref");
      {
        auto r = f.take_bool("taken");
        if (!r.ok()) return r.error();
        p.taken = r.value();
      }
      // An untaken take may legitimately lack a source timestamp.
      if (f.has("source_timestamp")) {
        TAKE_INT(p.source_timestamp, "source_timestamp");
      } else if (p.taken) {
        return schema_err("missing field: source_timestamp");
      }
      return EventPayload{p};
    }
    case EventKind::callback_start: {
      CallbackStart p;
      f.note_known({"callback_ref"});
      TAKE_INT(p.callback_ref, "callback_ref");
      return EventPayload{p};
    }
    case EventKind::callback_end: {
      CallbackEnd p;
      f.note_known({"callback_ref"});
      TAKE_INT(p.callback_ref, "callback_ref");
      return EventPayload{p};
    }
    case EventKind::executor_wait_begin:
      f.note_known({});
      return EventPayload{ExecutorWaitBegin{}};
    case EventKind::executor_wait_end:
      f.note_known({});
      return EventPayload{ExecutorWaitEnd{}};
    case EventKind::executor_execute_begin: {
      ExecutorExecuteBegin p;
      f.note_known({"target_handle"});
      TAKE_INT(p.target_handle, "target_handle");
      return EventPayload{p};
    }
    case EventKind::executor_execute_end:
      f.note_known({});
      return EventPayload{ExecutorExecuteEnd{}};
  }
  return schema_err("unhandled kind");
}

#undef TAKE_INT
#undef TAKE_STR

void append_escaped(std::string& out, const std::string& s) {
  out += '"';
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      default:
        if (static_cast<unsigned char>(c) < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof(buf), "\\u%04x", c);
          out += buf;
        } else {
          out += c;
        }
    }
  }
  out += '"';
}

void append_field(std::string& out, const char* name, i64 v) {
  out += ",\"";
  out += name;
  out += "\":";
  out += std::to_string(v);
}

void append_field(std::string& out, const char* name, const std::string& v) {
  out += ",\"";
  out += name;
  out += "\":";
  append_escaped(out, v);
}

void append_field(std::string& out, const char* name, bool v) {
  out += ",\"";
  out += name;
  out += "\":";
  out += v ? "true" : "false";
}

void append_field(std::string& out, const char* name, const std::vector<i64>& v) {
  out += ",\"";
  out += name;
  out += "\":[";
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  out += ']';
}

struct PayloadSerializer {
  std::string& out;

  void operator()(const NodeInit& p) {
    append_field(out, "node_handle", p.node_handle);
    append_field(out, "node_name", p.node_name);
    append_field(out, "node_namespace", p.node_namespace);
  }
  void operator()(const PubInitRcl& p) {
    append_field(out, "publisher_handle", p.publisher_handle);
    append_field(out, "node_handle", p.node_handle);
    append_field(out, "rmw_publisher_handle", p.rmw_publisher_handle);
    append_field(out, "topic_name", p.topic_name);
  }
  void operator()(const PubInitRmw& p) {
    append_field(out, "rmw_publisher_handle", p.rmw_publisher_handle);
    append_field(out, "gid", p.gid);
  }
  void operator()(const PubInitDds& p) {
    append_field(out, "writer_handle", p.writer_handle);
    append_field(out, "gid", p.gid);
    append_field(out, "topic_name", p.topic_name);
  }
  void operator()(const SubInitRcl& p) {
    append_field(out, "subscription_handle", p.subscription_handle);
    append_field(out, "node_handle", p.node_handle);
    append_field(out, "rmw_subscription_handle", p.rmw_subscription_handle);
    append_field(out, "topic_name", p.topic_name);
  }
  void operator()(const SubInitRmw& p) {
    append_field(out, "rmw_subscription_handle", p.rmw_subscription_handle);
    append_field(out, "gid", p.gid);
  }
  void operator()(const CallbackRegister& p) {
    append_field(out, "callback_ref", p.callback_ref);
    append_field(out, "owner_handle", p.owner_handle);
  }
  void operator()(const TimerInit& p) {
    append_field(out, "timer_handle", p.timer_handle);
    append_field(out, "period_ns", p.period_ns);
  }
  void operator()(const TimerNodeLink& p) {
    append_field(out, "timer_handle", p.timer_handle);
    append_field(out, "node_handle", p.node_handle);
  }
  void operator()(const MessageLinkAnnotation& p) {
    append_field(out, "link_type", std::string(link_type_name(p.link_type)));
    append_field(out, "subscription_handles", p.subscription_handles);
    append_field(out, "publisher_handles", p.publisher_handles);
  }
  void operator()(const PublishRclcpp& p) {
    append_field(out, "publisher_handle", p.publisher_handle);
    append_field(out, "message_ref", p.message_ref);
  }
  void operator()(const PublishRcl& p) {
    append_field(out, "publisher_handle", p.publisher_handle);
    append_field(out, "message_ref", p.message_ref);
  }
  void operator()(const PublishRmw& p) {
    append_field(out, "rmw_publisher_handle", p.rmw_publisher_handle);
    append_field(out, "message_ref", p.message_ref);
  }
  void operator()(const DdsWrite& p) {
    append_field(out, "writer_handle", p.writer_handle);
    append_field(out, "message_ref", p.message_ref);
    append_field(out, "source_timestamp", p.source_timestamp);
  }
  void operator()(const RmwTake& p) {
    append_field(out, "rmw_subscription_handle", p.rmw_subscription_handle);
    append_field(out, "message_ref", p.message_ref);
    append_field(out, "source_timestamp", p.source_timestamp);
    append_field(out, "taken", p.taken);
  }
  void operator()(const CallbackStart& p) { append_field(out, "callback_ref", p.callback_ref); }
  void operator()(const CallbackEnd& p) { append_field(out, "callback_ref", p.callback_ref); }
  void operator()(const ExecutorWaitBegin&) {}
  void operator()(const ExecutorWaitEnd&) {}
  void operator()(const ExecutorExecuteBegin& p) { append_field(out, "target_handle", p.target_handle); }
  void operator()(const ExecutorExecuteEnd&) {}
};

Result<Trace, ParseError> parse_trace_text(const std::string& name, const std::string& text) {
  Trace trace;
  std::istringstream in(text);
  std::string line;
  i64 line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto r = parse_event(line);
    if (!r.ok()) {
      ParseError e = r.error();
      e.file = name;
      e.line = line_no;
      return e;
    }
    TraceEvent ev = std::move(r.value());
    if (trace.events.empty()) {
      trace.host = ev.host;
    } else if (ev.host != trace.host) {
      return ParseError{ParseError::Code::SchemaViolation,
                        "host mismatch within file: '" + ev.host + "' vs '" + trace.host + "'",
                        name, line_no};
    }
    trace.events.push_back(std::move(ev));
  }
  if (trace.events.empty()) {
    // Empty trace: host falls back to the file stem.
    trace.host = std::filesystem::path(name).stem().string();
  }
  std::stable_sort(trace.events.begin(), trace.events.end(),
                   [](const TraceEvent& a, const TraceEvent& b) {
                     return a.timestamp < b.timestamp;
                   });
  return trace;
}

Result<TraceBundle, ParseError> assemble_bundle(std::vector<Result<Trace, ParseError>> results) {
  TraceBundle bundle;
  std::map<HostId, std::string> seen;  // host -> declaring file
  for (auto& r : results) {
    if (!r.ok()) return r.error();
    Trace& t = r.value();
    auto [it, inserted] = seen.emplace(t.host, t.host);
    if (!inserted) {
      return ParseError{ParseError::Code::DuplicateHost,
                        "duplicate host id: '" + t.host + "'", {}, 0};
    }
    bundle.traces.push_back(std::move(t));
  }
  std::sort(bundle.traces.begin(), bundle.traces.end(),
            [](const Trace& a, const Trace& b) { return a.host < b.host; });
  return bundle;
}

}  // namespace

std::string_view event_kind_name(EventKind k) {
  return kKindNames[static_cast<int>(k)];
}

std::optional<EventKind> event_kind_from_name(std::string_view name) {
  for (int i = 0; i < kEventKindCount; ++i) {
    if (kKindNames[i] == name) return static_cast<EventKind>(i);
  }
  return std::nullopt;
}

std::string ParseError::to_string() const {
  std::string out;
  switch (code) {
    case Code::MalformedRecord: out = "MalformedRecord"; break;
    case Code::UnknownKind: out = "UnknownKind"; break;
    case Code::SchemaViolation: out = "SchemaViolation"; break;
    case Code::DuplicateHost: out = "DuplicateHost"; break;
    case Code::Io: out = "IoError"; break;
  }
  if (!file.empty()) {
    out += " at " + file;
    if (line > 0) out += ":" + std::to_string(line);
  }
  out += ": " + message;
  return out;
}

Result<TraceEvent, ParseError> parse_event(std::string_view line) {
  json obj;
  try {
    obj = json::parse(line);
  } catch (const json::exception& e) {
    return ParseError{ParseError::Code::MalformedRecord, e.what(), {}, 0};
  }
  if (!obj.is_object())
    return ParseError{ParseError::Code::MalformedRecord, "record is not an object", {}, 0};

  FieldReader f(obj);
  TraceEvent ev;
  {
    auto r = f.take_int("ts");
    if (!r.ok()) return r.error();
    ev.timestamp = r.value();
    if (ev.timestamp < 0) return schema_err("negative timestamp");
  }
  {
    auto r = f.take_str("host");
    if (!r.ok()) return r.error();
    ev.host = std::move(r.value());
    if (ev.host.empty()) return schema_err("empty host id");
  }
  {
    auto r = f.take_int("pid");
    if (!r.ok()) return r.error();
    ev.pid = r.value();
  }
  {
    auto r = f.take_int("tid");
    if (!r.ok()) return r.error();
    ev.tid = r.value();
  }
  std::string kind_name;
  {
    auto r = f.take_str("kind");
    if (!r.ok()) return r.error();
    kind_name = std::move(r.value());
  }
  auto kind = event_kind_from_name(kind_name);
  if (!kind)
    return ParseError{ParseError::Code::UnknownKind, "unknown kind: " + kind_name, {}, 0};

  auto payload = parse_payload(*kind, f);
  if (!payload.ok()) return payload.error();
  ev.payload = std::move(payload.value());
  if (auto extra = f.finish()) return *extra;
  return ev;
}

std::string serialize_event(const TraceEvent& e) {
  std::string out;
  out.reserve(160);
  out += "{\"ts\":";
  out += std::to_string(e.timestamp);
  out += ",\"host\":";
  append_escaped(out, e.host);
  append_field(out, "pid", e.pid);
  append_field(out, "tid", e.tid);
  append_field(out, "kind", std::string(event_kind_name(e.kind())));
  std::visit(PayloadSerializer{out}, e.payload);
  out += '}';
  return out;
}

const Trace* TraceBundle::find(const HostId& host) const {
  for (const auto& t : traces) {
    if (t.host == host) return &t;
  }
  return nullptr;
}

size_t TraceBundle::total_events() const {
  size_t n = 0;
  for (const auto& t : traces) n += t.events.size();
  return n;
}

Result<TraceBundle, ParseError> load_bundle(const std::vector<std::string>& paths) {
  // Distinct files are independent; parse them concurrently.
  std::vector<std::future<Result<Trace, ParseError>>> futures;
  futures.reserve(paths.size());
  for (const auto& path : paths) {
    futures.push_back(std::async(std::launch::async, [path]() -> Result<Trace, ParseError> {
      std::ifstream in(path, std::ios::binary);
      if (!in) {
        return ParseError{ParseError::Code::Io, "cannot open file", path, 0};
      }
      std::ostringstream buf;
      buf << in.rdbuf();
      return parse_trace_text(path, buf.str());
    }));
  }
  std::vector<Result<Trace, ParseError>> results;
  results.reserve(futures.size());
  for (auto& fut : futures) results.push_back(fut.get());
  return assemble_bundle(std::move(results));
}

Result<TraceBundle, ParseError> load_bundle_from_strings(
    const std::vector<std::pair<std::string, std::string>>& name_and_text) {
  std::vector<Result<Trace, ParseError>> results;
  for (const auto& [name, text] : name_and_text) {
    results.push_back(parse_trace_text(name, text));
  }
  return assemble_bundle(std::move(results));
}

}  // namespace msgflow

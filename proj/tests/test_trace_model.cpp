#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "msgflow/trace_model.hpp"

using namespace msgflow;

TEST_CASE("parse_event maps fields directly") {
  auto r = parse_event(
      R"({"ts":1000,"host":"A","pid":42,"tid":42,"kind":"timer_init","timer_handle":7,"period_ns":5000000})");
  REQUIRE(r.ok());
  const TraceEvent& e = r.value();
  CHECK(e.timestamp == 1000);
  CHECK(e.host == "A");
  CHECK(e.pid == 42);
  CHECK(e.tid == 42);
  CHECK(e.kind() == EventKind::timer_init);
  const auto& p = std::get<TimerInit>(e.payload);
  CHECK(p.timer_handle == 7);
  CHECK(p.period_ns == 5000000);
}

TEST_CASE("parse_event rejects negative timestamps") {
  auto r = parse_event(
      R"({"ts":-5,"host":"A","pid":1,"tid":1,"kind":"callback_start","callback_ref":3})");
  REQUIRE(!r.ok());
  CHECK(r.error().code == ParseError::Code::SchemaViolation);
}

TEST_CASE("parse_event rejects dds_write without source_timestamp") {
  auto r = parse_event(
      R"({"ts":10,"host":"A","pid":1,"tid":1,"kind":"dds_write","writer_handle":5,"message_ref":9})");
  REQUIRE(!r.ok());
  CHECK(r.error().code == ParseError::Code::SchemaViolation);
}

TEST_CASE("parse_event error taxonomy") {
  CHECK(parse_event("not json").error().code == ParseError::Code::MalformedRecord);
  CHECK(parse_event("[]").error().code == ParseError::Code::MalformedRecord);
  CHECK(parse_event(R"({"ts":1,"host":"A","pid":1,"tid":1,"kind":"nope"})").error().code ==
        ParseError::Code::UnknownKind);
  // extra payload field
  CHECK(parse_event(
            R"({"ts":1,"host":"A","pid":1,"tid":1,"kind":"callback_start","callback_ref":3,"bogus":1})")
            .error()
            .code == ParseError::Code::SchemaViolation);
  // wrong type
  CHECK(parse_event(
            R"({"ts":1,"host":"A","pid":1,"tid":1,"kind":"callback_start","callback_ref":"x"})")
            .error()
            .code == ParseError::Code::SchemaViolation);
  // empty host
  CHECK(parse_event(R"({"ts":1,"host":"","pid":1,"tid":1,"kind":"executor_wait_begin"})")
            .error()
            .code == ParseError::Code::SchemaViolation);
  // bad gid (odd length)
  CHECK(parse_event(
            R"({"ts":1,"host":"A","pid":1,"tid":1,"kind":"pub_init_rmw","rmw_publisher_handle":2,"gid":"abc"})")
            .error()
            .code == ParseError::Code::SchemaViolation);
  // empty annotation array
  CHECK(parse_event(
            R"({"ts":1,"host":"A","pid":1,"tid":1,"kind":"message_link_annotation","link_type":"partial_sync","subscription_handles":[],"publisher_handles":[4]})")
            .error()
            .code == ParseError::Code::SchemaViolation);
  // unknown link type
  CHECK(parse_event(
            R"({"ts":1,"host":"A","pid":1,"tid":1,"kind":"message_link_annotation","link_type":"magic","subscription_handles":[1],"publisher_handles":[4]})")
            .error()
            .code == ParseError::Code::SchemaViolation);
}

TEST_CASE("rmw_take accepts untaken records without source_timestamp") {
  auto r = parse_event(
      R"({"ts":1,"host":"A","pid":1,"tid":1,"kind":"rmw_take","rmw_subscription_handle":2,"message_ref":9,"taken":false})");
  REQUIRE(r.ok());
  CHECK(std::get<RmwTake>(r.value().payload).taken == false);
  // ...but a taken record must carry one.
  auto r2 = parse_event(
      R"({"ts":1,"host":"A","pid":1,"tid":1,"kind":"rmw_take","rmw_subscription_handle":2,"message_ref":9,"taken":true})");
  CHECK(!r2.ok());
}

namespace {

std::vector<TraceEvent> sample_events() {
  std::vector<TraceEvent> out;
  auto ev = [&](TimeNs ts, EventPayload p) {
    TraceEvent e;
    e.timestamp = ts;
    e.host = "hostA";
    e.pid = 11;
    e.tid = 12;
    e.payload = std::move(p);
    out.push_back(std::move(e));
  };
  ev(0, NodeInit{100, "source", "/"});
  ev(1, PubInitRcl{200, 100, 201, "/topic_a"});
  ev(2, PubInitRmw{201, "0a0b0c0d0e0f"});
  ev(3, PubInitDds{202, "0a0b0c0d0e0f", "/topic_a"});
  ev(4, SubInitRcl{300, 100, 301, "/topic_b"});
  ev(5, SubInitRmw{301, "ff00"});
  ev(6, CallbackRegister{400, 300});
  ev(7, TimerInit{500, 5000000});
  ev(8, TimerNodeLink{500, 100});
  ev(9, MessageLinkAnnotation{LinkType::partial_sync, {300}, {200}});
  ev(10, PublishRclcpp{200, 77});
  ev(11, PublishRcl{200, 77});
  ev(12, PublishRmw{201, 77});
  ev(13, DdsWrite{202, 77, 13});
  ev(14, RmwTake{301, 88, 13, true});
  ev(15, CallbackStart{400});
  ev(16, CallbackEnd{400});
  ev(17, ExecutorWaitBegin{});
  ev(18, ExecutorWaitEnd{});
  ev(19, ExecutorExecuteBegin{300});
  ev(20, ExecutorExecuteEnd{});
  return out;
}

}  // namespace

TEST_CASE("serialize/parse round-trip over every kind") {
  for (const TraceEvent& e : sample_events()) {
    std::string line = serialize_event(e);
    auto r = parse_event(line);
    REQUIRE_MESSAGE(r.ok(), line);
    CHECK(r.value() == e);
    CHECK(serialize_event(r.value()) == line);
  }
}

TEST_CASE("round-trip preserves escaped strings") {
  TraceEvent e;
  e.timestamp = 5;
  e.host = "h\"x\\y";
  e.pid = 1;
  e.tid = 2;
  e.payload = NodeInit{1, "na\tme\n", "/ns"};
  auto r = parse_event(serialize_event(e));
  REQUIRE(r.ok());
  CHECK(r.value() == e);
}

TEST_CASE("fuzzed records produce errors, not crashes") {
  std::mt19937_64 rng(1234);
  std::vector<std::string> seeds;
  for (const TraceEvent& e : sample_events()) seeds.push_back(serialize_event(e));
  for (int i = 0; i < 2000; ++i) {
    std::string s = seeds[rng() % seeds.size()];
    int mutations = 1 + static_cast<int>(rng() % 4);
    for (int m = 0; m < mutations; ++m) {
      switch (rng() % 3) {
        case 0:  // flip a char
          if (!s.empty()) s[rng() % s.size()] = static_cast<char>(rng() % 128);
          break;
        case 1:  // truncate
          if (!s.empty()) s.resize(rng() % s.size());
          break;
        case 2:  // duplicate a chunk
          s += s.substr(rng() % (s.size() + 1));
          break;
      }
    }
    auto r = parse_event(s);  // must not throw or crash
    if (r.ok()) {
      // mutation may still be valid JSON; re-serialization must agree
      CHECK(parse_event(serialize_event(r.value())).ok());
    }
  }
}

TEST_CASE("load_bundle splits per host and sorts stably") {
  std::string a_text =
      R"({"ts":50,"host":"A","pid":1,"tid":1,"kind":"callback_start","callback_ref":1})"
      "\n"
      R"({"ts":10,"host":"A","pid":1,"tid":1,"kind":"callback_start","callback_ref":2})"
      "\n"
      R"({"ts":10,"host":"A","pid":1,"tid":1,"kind":"callback_start","callback_ref":3})"
      "\n";
  std::string b_text =
      R"({"ts":7,"host":"B","pid":1,"tid":1,"kind":"executor_wait_begin"})"
      "\n";
  auto r = load_bundle_from_strings({{"a.jsonl", a_text}, {"b.jsonl", b_text}});
  REQUIRE(r.ok());
  const TraceBundle& bundle = r.value();
  REQUIRE(bundle.traces.size() == 2);
  CHECK(bundle.traces[0].host == "A");
  CHECK(bundle.traces[1].host == "B");
  const auto& a = bundle.traces[0].events;
  REQUIRE(a.size() == 3);
  // sorted by ts; equal timestamps keep input order
  CHECK(a[0].timestamp == 10);
  CHECK(std::get<CallbackStart>(a[0].payload).callback_ref == 2);
  CHECK(std::get<CallbackStart>(a[1].payload).callback_ref == 3);
  CHECK(a[2].timestamp == 50);
}

TEST_CASE("load_bundle accepts empty files") {
  auto r = load_bundle_from_strings({{"lonely.jsonl", ""}});
  REQUIRE(r.ok());
  REQUIRE(r.value().traces.size() == 1);
  CHECK(r.value().traces[0].host == "lonely");
  CHECK(r.value().traces[0].events.empty());
}

TEST_CASE("load_bundle rejects duplicate hosts") {
  std::string text =
      R"({"ts":1,"host":"A","pid":1,"tid":1,"kind":"executor_wait_begin"})"
      "\n";
  auto r = load_bundle_from_strings({{"a1.jsonl", text}, {"a2.jsonl", text}});
  REQUIRE(!r.ok());
  CHECK(r.error().code == ParseError::Code::DuplicateHost);
}

TEST_CASE("load_bundle reports file and line of parse errors") {
  std::string text =
      R"({"ts":1,"host":"A","pid":1,"tid":1,"kind":"executor_wait_begin"})"
      "\n"
      "garbage\n";
  auto r = load_bundle_from_strings({{"a.jsonl", text}});
  REQUIRE(!r.ok());
  CHECK(r.error().file == "a.jsonl");
  CHECK(r.error().line == 2);
}

TEST_CASE("load_bundle rejects host mixing within one file") {
  std::string text =
      R"({"ts":1,"host":"A","pid":1,"tid":1,"kind":"executor_wait_begin"})"
      "\n"
      R"({"ts":2,"host":"B","pid":1,"tid":1,"kind":"executor_wait_begin"})"
      "\n";
  auto r = load_bundle_from_strings({{"a.jsonl", text}});
  REQUIRE(!r.ok());
  CHECK(r.error().code == ParseError::Code::SchemaViolation);
}

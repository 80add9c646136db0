#include <gtest/gtest.h>

#include <filesystem>
#include <json.hpp>
#include <sstream>

#include "cxlmem/error.hpp"
#include "cxlmem/profile_io.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using namespace cxlmem;
using nlohmann::json;

namespace {

Profile sample_profile() {
  Profile p;
  p.pids = {101, 102};
  p.command = {"./app", "--flag", "with space"};
  p.rank = 0;
  p.mode = SamplingMode::Interrupt;
  p.period_s = 0.5;
  p.start_monotonic_ns = 123456789;
  for (int i = 0; i < 3; ++i) {
    Sample s;
    s.snapshot.timestamp_ns = i * 1000;
    s.snapshot.rss_kib = 100u + i;
    s.snapshot.pss_kib = 50u + i;
    s.snapshot.referenced_kib = 10u * i;
    s.snapshot.swap_kib = 1;
    s.snapshot.node_pages = {{0, 7u + i}, {3, 2}};
    s.trigger = i == 0 ? SampleTrigger::Start : SampleTrigger::Stop;
    s.cleared = i == 1;
    p.samples.push_back(s);
  }
  Sample exit;
  exit.snapshot.timestamp_ns = 5000;
  exit.trigger = SampleTrigger::Exit;
  exit.has_address_space = false;
  p.samples.push_back(exit);
  p.phase_marks = {{1000, PhaseLabel::InitEnd}, {2000, PhaseLabel::ComputeEnd}};
  p.wall_time_s = 0.005;
  p.exit_status = 0;
  p.warnings = {"something odd"};
  return p;
}


Error read_error(const std::string& text) {
  std::istringstream in(text);
  try {
    read_profile(in);
  } catch (const Error& e) {
    return e;
  }
  ADD_FAILURE() << "no error for: " << text;
  return Error(Errc::Io, "");
}

}  // namespace

TEST(ProfileIo, RoundTripPreservesEverything) {
  Profile p = sample_profile();
  Topology topo = test::fake_topology(2);
  std::ostringstream out;
  write_profile(out, p, &topo);
  std::istringstream in(out.str());
  EXPECT_EQ(read_profile(in), p);
}

TEST(ProfileIo, RecordsAreTimeOrderedJsonLines) {
  std::ostringstream out;
  write_profile(out, sample_profile());
  std::istringstream lines(out.str());
  std::string line;
  std::vector<json> records;
  while (std::getline(lines, line)) records.push_back(json::parse(line));
  ASSERT_GE(records.size(), 3u);
  EXPECT_EQ(records.front()["format"], "cxlmem.profile");
  EXPECT_EQ(records.front()["version"], 1);
  EXPECT_EQ(records.back()["record"], "footer");
  std::int64_t last = -1;
  for (std::size_t i = 1; i + 1 < records.size(); ++i) {
    std::int64_t t = records[i]["t_ns"];
    EXPECT_GE(t, last);
    last = t;
  }
}

TEST(ProfileIo, MalformedInputNamesTheLine) {
  std::ostringstream out;
  write_profile(out, sample_profile());
  std::string good = out.str();

  Error e = read_error("");
  EXPECT_EQ(e.code(), Errc::ParseError);

  std::string broken = good;
  broken.insert(broken.find('\n') + 1, "{not json\n");
  e = read_error(broken);
  EXPECT_EQ(e.code(), Errc::ParseError);
  EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();

  std::string wrong_format = good;
  wrong_format.replace(wrong_format.find("cxlmem.profile"), 14, "other.profile!");
  EXPECT_EQ(read_error(wrong_format).code(), Errc::ParseError);

  std::string truncated = good.substr(0, good.rfind("{"));
  EXPECT_EQ(read_error(truncated).code(), Errc::ParseError);
}

TEST(ProfileIo, SaveRefusesToOverwrite) {
  fs::path dir = fs::temp_directory_path() / ("cxlmem-io-" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::path file = dir / "nested" / "p.jsonl";
  Profile p = sample_profile();
  save_profile(file, p, nullptr, false);
  EXPECT_EQ(load_profile(file), p);
  try {
    save_profile(file, p, nullptr, false);
    ADD_FAILURE() << "overwrote";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::InvalidArgument);
  }
  EXPECT_NO_THROW(save_profile(file, p, nullptr, true));
  fs::remove_all(dir);
}

TEST(CompositionJson, RoundTripAndValidation) {
  for (const Composition& c :
       {local_only(0), remote_only(0, 2), capacity_split(1, 3, 0.25, 4 * kGiB),
        bandwidth_interleave(0, {1, 2}, false)}) {
    EXPECT_EQ(composition_from_json(composition_to_json(c)), c);
  }
  EXPECT_THROW(composition_from_json("{"), Error);
  EXPECT_THROW(composition_from_json(R"({"kind":"capacity_split","local_node":0,"pool_nodes":[0]})"),
               Error);
}

TEST(TopologyJson, ListsEveryNode) {
  json j = json::parse(topology_to_json(test::fake_topology(3)));
  EXPECT_EQ(j["nodes"].size(), 3u);
}

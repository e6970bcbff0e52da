#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "ndoflow/config.hpp"
#include "ndoflow/trajectory_io.hpp"

using namespace ndoflow;
namespace fs = std::filesystem;

namespace {

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() / ("ndoflow_io_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }
  void write(const std::string& name, const std::string& text) { std::ofstream(dir / name) << text; }

  fs::path dir;
};

}  // namespace

using Csv = TempDir;
using Config = TempDir;

TEST_F(Csv, RoundTripIsExact) {
  const ode::Trajectory traj({0.0, 0.1, 0.30000000000000004}, {1.0 / 3.0, -2e-300, 5.0, 1e10, -0.0, 7.25}, 2);
  io::save_csv(traj, dir / "a.csv");
  const auto back = io::load_csv_trajectory(dir / "a.csv");
  EXPECT_EQ(back.times(), traj.times());
  EXPECT_EQ(back.values(), traj.values());
  std::ifstream in(dir / "a.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "t,x1,x2");
}

TEST_F(Csv, CustomColumnNames) {
  const ode::Trajectory traj({0.0, 1.0}, {1.0, 2.0}, 1);
  io::save_csv(traj, dir / "b.csv", {"pos"});
  std::ifstream in(dir / "b.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "t,pos");
  EXPECT_THROW(io::save_csv(traj, dir / "c.csv", {"a", "b"}), Error);
}

TEST_F(Csv, DuplicateTimestampReportsLine) {
  write("dup.csv", "t,x\n0,1\n0.5,2\n0.5,3\n");
  try {
    io::load_csv_trajectory(dir / "dup.csv");
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find(":4:"), std::string::npos) << e.what();
  }
}

TEST_F(Csv, MalformedInputsRejected) {
  write("nohdr.csv", "0,1\n1,2\n");
  EXPECT_THROW(io::load_csv_trajectory(dir / "nohdr.csv"), Error);
  write("ragged.csv", "t,x,y\n0,1,2\n1,2\n");
  EXPECT_THROW(io::load_csv_trajectory(dir / "ragged.csv"), Error);
  write("text.csv", "t,x\n0,abc\n");
  EXPECT_THROW(io::load_csv_trajectory(dir / "text.csv"), Error);
  write("nan.csv", "t,x\n0,nan\n");
  EXPECT_THROW(io::load_csv_trajectory(dir / "nan.csv"), Error);
  EXPECT_THROW(io::load_csv_trajectory(dir / "missing.csv"), Error);
}

TEST_F(Csv, AtomicWriteReplaces) {
  io::write_file_atomic(dir / "f.txt", "one");
  io::write_file_atomic(dir / "f.txt", "two");
  std::ifstream in(dir / "f.txt");
  std::string s;
  in >> s;
  EXPECT_EQ(s, "two");
  EXPECT_EQ(std::distance(fs::directory_iterator(dir), fs::directory_iterator{}), 1);
}

TEST(Format, ShortestRoundTrip) {
  EXPECT_EQ(io::format_double(0.1), "0.1");
  EXPECT_EQ(io::format_double(1e-300), "1e-300");
  EXPECT_EQ(std::stod(io::format_double(1.0 / 3.0)), 1.0 / 3.0);
}

TEST(Merge, ObjectsRecurseOthersReplace) {
  nlohmann::json base = {{"a", {{"x", 1}, {"y", 2}}}, {"b", {1, 2, 3}}, {"c", 5}};
  config::merge(base, {{"a", {{"y", 3}}}, {"b", {9}}, {"d", true}});
  EXPECT_EQ(base, (nlohmann::json{{"a", {{"x", 1}, {"y", 3}}}, {"b", {9}}, {"c", 5}, {"d", true}}));
}

TEST_F(Config, ExtendsChainAndComments) {
  write("base.json", R"({"train": {"iterations": 100, "lr": 0.1}, "name": "base"})");
  fs::create_directories(dir / "sub");
  write("sub/mid.json", R"({"extends": "../base.json", "train": {"lr": 0.01}})");
  write("sub/top.json", "// comment\n{\"extends\": [\"mid.json\"], \"name\": \"top\"}");
  const auto doc = config::load(dir / "sub/top.json");
  EXPECT_EQ(doc["name"], "top");
  EXPECT_EQ(doc["train"]["iterations"], 100);
  EXPECT_EQ(doc["train"]["lr"], 0.01);
  EXPECT_FALSE(doc.contains("extends"));
}

TEST_F(Config, CyclesRejected) {
  write("a.json", R"({"extends": "b.json"})");
  write("b.json", R"({"extends": "a.json"})");
  EXPECT_THROW(config::load(dir / "a.json"), Error);
  write("bad.json", "{ not json");
  EXPECT_THROW(config::load(dir / "bad.json"), Error);
}

TEST(Profile, AppliesNamedOverride) {
  const nlohmann::json doc = {{"iterations", 10}, {"profiles", {{"paper", {{"iterations", 2000}}}}}};
  EXPECT_EQ(config::apply_profile(doc, "paper"), (nlohmann::json{{"iterations", 2000}}));
  EXPECT_THROW(config::apply_profile(doc, "laptop"), Error);
  EXPECT_EQ(config::apply_profile({{"a", 1}}, "desk"), (nlohmann::json{{"a", 1}}));
}

TEST(Fingerprint, StableAndSensitive) {
  const nlohmann::json a = {{"x", 1}, {"y", {1, 2}}};
  EXPECT_EQ(config::fingerprint(a), config::fingerprint(nlohmann::json::parse(a.dump())));
  EXPECT_NE(config::fingerprint(a), config::fingerprint({{"x", 2}, {"y", {1, 2}}}));
  EXPECT_EQ(config::fingerprint(a).size(), 16u);
  EXPECT_EQ(config::fingerprint(nlohmann::json("")), "07cc7607b4949e25");
}

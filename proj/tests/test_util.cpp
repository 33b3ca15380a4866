#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "odsel/csv.hpp"
#include "odsel/frame.hpp"
#include "odsel/rng.hpp"
#include "odsel/toml.hpp"

namespace {

std::filesystem::path tmpdir() {
  std::filesystem::path p(ODSEL_TEST_TMPDIR);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("rng is deterministic and splits independently") {
  odsel::Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) REQUIRE(a.next() == b.next());

  // sub-seeding: distinct indices give distinct streams, same index the same
  REQUIRE(odsel::sub_seed(7, 0) != odsel::sub_seed(7, 1));
  REQUIRE(odsel::sub_seed(7, 3) == odsel::sub_seed(7, 3));
  odsel::Rng c(odsel::sub_seed(7, 0)), d(odsel::sub_seed(7, 1));
  bool all_equal = true;
  for (int i = 0; i < 16; ++i) all_equal &= (c.next() == d.next());
  REQUIRE_FALSE(all_equal);
}

TEST_CASE("rng below is in range and uniform-ish") {
  odsel::Rng r(1);
  std::vector<int> hits(10, 0);
  for (int i = 0; i < 10000; ++i) {
    auto v = r.below(10);
    REQUIRE(v < 10);
    ++hits[std::size_t(v)];
  }
  for (int h : hits) REQUIRE(h > 800);
  REQUIRE_THROWS(r.below(0));
}

TEST_CASE("rng shuffle permutes") {
  odsel::Rng r(5);
  std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7};
  auto orig = v;
  r.shuffle(v);
  auto sorted = v;
  std::sort(sorted.begin(), sorted.end());
  REQUIRE(sorted == orig);
}

TEST_CASE("csv round trip with quoting and comments") {
  auto p = tmpdir() / "round.csv";
  odsel::CsvTable t;
  t.header = {"name", "note"};
  t.rows = {{"a", "plain"}, {"b", "has,comma"}, {"c", "has\"quote"}};
  t.comments = {"first comment", "second"};
  odsel::write_csv(p.string(), t);

  odsel::CsvTable u = odsel::read_csv(p.string());
  REQUIRE(u.header == t.header);
  REQUIRE(u.rows == t.rows);
  REQUIRE(u.comments == t.comments);
}

TEST_CASE("csv rejects ragged rows and missing files") {
  auto p = tmpdir() / "ragged.csv";
  std::ofstream(p) << "a,b\n1,2,3\n";
  REQUIRE_THROWS(odsel::read_csv(p.string()));
  REQUIRE_THROWS(odsel::read_csv((tmpdir() / "nope.csv").string()));
}

TEST_CASE("toml parses sections, arrays, numbers, strings, booleans") {
  auto doc = odsel::parse_toml(
      "top = 1\n"
      "[search]\n"
      "maxit = 25\n"
      "stop_at = 1.5\n"
      "mode = \"tabu_rw\"\n"
      "flag = true\n"
      "names = [\"a\", \"b\"]\n"
      "nums = [1, 2, 3]\n"
      "# comment\n"
      "[stage3.step1]\n"
      "binary = [\"name:run\"]\n");
  REQUIRE(doc.at("").at("top").as_int() == 1);
  REQUIRE(doc.at("search").at("maxit").as_int() == 25);
  REQUIRE(doc.at("search").at("stop_at").as_number() == Catch::Approx(1.5));
  REQUIRE(doc.at("search").at("mode").as_string() == "tabu_rw");
  REQUIRE(doc.at("search").at("flag").as_bool());
  REQUIRE(doc.at("search").at("names").as_strings() ==
          std::vector<std::string>{"a", "b"});
  REQUIRE(doc.at("search").at("nums").as_numbers() ==
          std::vector<double>{1, 2, 3});
  REQUIRE(doc.at("stage3.step1").at("binary").as_strings() ==
          std::vector<std::string>{"name:run"});
}

TEST_CASE("toml rejects malformed input") {
  REQUIRE_THROWS(odsel::parse_toml("no_equals\n"));
  REQUIRE_THROWS(odsel::parse_toml("[unclosed\nx = 1\n"));
  REQUIRE_THROWS(odsel::parse_toml("x = \"unterminated\n"));
}

TEST_CASE("frame codes are first-appearance ordered") {
  odsel::CsvTable t;
  t.header = {"block", "treat"};
  t.rows = {{"b2", "x"}, {"b1", "y"}, {"b2", "x"}, {"b3", "z"}};
  odsel::DesignFrame f(t);
  REQUIRE(f.n() == 4);
  REQUIRE(f.levels("block") == std::vector<std::string>{"b2", "b1", "b3"});
  auto [codes, levels] = f.codes("treat");
  REQUIRE(levels == std::vector<std::string>{"x", "y", "z"});
  REQUIRE(codes == std::vector<int>{0, 1, 0, 2});
  REQUIRE_THROWS(f.col("missing"));
  REQUIRE_THROWS(f.add_col("treat", {"a", "a", "a", "a"}));
}

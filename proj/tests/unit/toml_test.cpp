#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include "gecadapt/error.hpp"
#include "gecadapt/harness.hpp"

using namespace gecadapt;

TEST(Toml, ScalarsAndSections) {
  const auto j = parse_toml(R"(
top = 1
[model]
rnn_size = 1_000        # underscores are digit separators
dropout = 0.3
small = 1e-3
neg = -4
on = true
off = false
name = "brnn"
[a.b]
c = "x"
)");
  EXPECT_EQ(j["top"], 1);
  EXPECT_EQ(j["model"]["rnn_size"], 1000);
  EXPECT_TRUE(j["model"]["rnn_size"].is_number_integer());
  EXPECT_DOUBLE_EQ(j["model"]["dropout"].get<double>(), 0.3);
  EXPECT_DOUBLE_EQ(j["model"]["small"].get<double>(), 0.001);
  EXPECT_EQ(j["model"]["neg"], -4);
  EXPECT_EQ(j["model"]["on"], true);
  EXPECT_EQ(j["model"]["off"], false);
  EXPECT_EQ(j["model"]["name"], "brnn");
  EXPECT_EQ(j["a"]["b"]["c"], "x");
}

TEST(Toml, StringsAndArrays) {
  const auto j = parse_toml(R"(
s = "tab\there \"q\" # not a comment"
lit = 'C:\raw'
xs = [1, 2, 3]
ys = ["a", "b",]
empty = []
)");
  EXPECT_EQ(j["s"], "tab\there \"q\" # not a comment");
  EXPECT_EQ(j["lit"], "C:\\raw");
  EXPECT_EQ(j["xs"], nlohmann::json::array({1, 2, 3}));
  EXPECT_EQ(j["ys"], nlohmann::json::array({"a", "b"}));
  EXPECT_TRUE(j["empty"].is_array());
  EXPECT_TRUE(j["empty"].empty());
}

TEST(Toml, EmptyInputIsEmptyTable) {
  const auto j = parse_toml("# only a comment\n\n");
  EXPECT_TRUE(j.is_object());
  EXPECT_TRUE(j.empty());
}

TEST(Toml, ErrorsCarryLineNumbers) {
  const auto line_of = [](std::string_view text) {
    try {
      parse_toml(text);
    } catch (const ParseError& e) {
      return static_cast<long>(e.line());
    }
    return -1L;
  };
  EXPECT_EQ(line_of("a = 1\na = 2\n"), 2);
  EXPECT_EQ(line_of("[x]\n[x]\n"), 2);
  EXPECT_EQ(line_of("a = 1\n\nb = \n"), 3);
  EXPECT_EQ(line_of("a = \"open\n"), 1);
  EXPECT_EQ(line_of("a = [1, 2\n"), 1);
  EXPECT_EQ(line_of("bad key = 1\n"), 1);
  EXPECT_EQ(line_of("[sec\n"), 1);
  EXPECT_EQ(line_of("a = 1 2\n"), 1);
  EXPECT_EQ(line_of("a = 1\n[a]\n"), 2);
}

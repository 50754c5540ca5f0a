#include <doctest.h>

#include "hvla/config.hpp"

using namespace hvla;

TEST_CASE("toml: scalars, arrays, tables, comments") {
    const auto doc = toml::parse(R"(
# top comment
title = "demo # not a comment"
count = 42
ratio = 0.85
flag = true
values = [1, 2, 3]
names = ["a", "b"]

[section]
key = -7
[section.sub]
deep = 1.5e-3
)");
    CHECK(doc.at("title").as_string() == "demo # not a comment");
    CHECK(doc.at("count").as_int() == 42);
    CHECK(doc.at("ratio").as_double() == doctest::Approx(0.85));
    CHECK(doc.at("flag").as_bool());
    CHECK(doc.at("values").as_int_array() == std::vector<int64_t>{1, 2, 3});
    CHECK(doc.at("names").as_string_array() == std::vector<std::string>{"a", "b"});
    CHECK(doc.at("section.key").as_int() == -7);
    CHECK(doc.at("section.sub.deep").as_double() == doctest::Approx(1.5e-3));
    CHECK(doc.tables == std::vector<std::string>{"section", "section.sub"});
}

TEST_CASE("toml: diagnostics carry line numbers") {
    try {
        toml::parse("a = 1\nb = \nc = 2\n");
        FAIL("expected a parse error");
    } catch (const toml::ParseError& e) {
        CHECK(e.line == 2);
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
    CHECK_THROWS_AS(toml::parse("x = [1, 2"), toml::ParseError);
    CHECK_THROWS_AS(toml::parse("x = bare"), toml::ParseError);
    CHECK_THROWS_AS(toml::parse("x = 1\nx = 2"), toml::ParseError);
    CHECK_THROWS_AS(toml::parse("[unclosed\n"), toml::ParseError);
}

TEST_CASE("run config: defaults round trip through the canonical form") {
    RunConfig cfg;
    cfg.validate();
    const std::string text = cfg.to_toml();
    RunConfig parsed = RunConfig::from_toml(toml::parse(text));
    CHECK(parsed.to_toml() == text);
    CHECK(parsed.content_hash() == cfg.content_hash());
}

TEST_CASE("run config: unknown keys are rejected with their line") {
    try {
        RunConfig::from_toml(toml::parse("[train]\nbatch = 8\nbtach = 16\n"));
        FAIL("expected rejection");
    } catch (const toml::ParseError& e) {
        CHECK(std::string(e.what()).find("train.btach") != std::string::npos);
        CHECK(e.line == 3);
    }
}

TEST_CASE("run config: validation rules") {
    auto with = [](const char* body) {
        return RunConfig::from_toml(toml::parse(body));
    };
    CHECK_THROWS_WITH_AS(with("[train]\nbatch = 1\n"), doctest::Contains("batch"),
                         std::invalid_argument);
    CHECK_THROWS_WITH_AS(with("[data]\nk = 1\n"), doctest::Contains("k"),
                         std::invalid_argument);
    CHECK_THROWS_WITH_AS(with("[data]\nimage_size = 20\n"), doctest::Contains("image_size"),
                         std::invalid_argument);
    CHECK_THROWS_WITH_AS(with("[vision]\nwidths = [16, 16, 32, 64]\n"),
                         doctest::Contains("increase"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(with("[objective]\nkernel = \"cubic\"\n"),
                         doctest::Contains("kernel"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(with("[objective]\nlambda = 0.0\n"), doctest::Contains("lambda"),
                         std::invalid_argument);
    CHECK_THROWS_WITH_AS(with("[aggregator]\nheads = 3\n"), doctest::Contains("heads"),
                         std::invalid_argument);
    // d_out defaulting tracks the last stage width
    RunConfig narrow = with("[vision]\nwidths = [2, 3, 4, 9]\n[aggregator]\nd_out = 9\n");
    CHECK(narrow.aggregator.d_out == 9);
    RunConfig defaulted = with("[vision]\nwidths = [2, 3, 4, 9]\n");
    CHECK(defaulted.aggregator.d_out == 9);
    CHECK_THROWS_WITH_AS(with("[vision]\nwidths = [2, 3, 4, 9]\n[aggregator]\nd_out = 16\n"),
                         doctest::Contains("d_out"), std::invalid_argument);
}

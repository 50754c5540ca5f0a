#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace hvla::toml {

// Minimal TOML subset: [table] headers (dotted), key = value pairs with
// string / integer / float / boolean / single-line array values, and #
// comments. Enough for run configs; anything else is a diagnosed error.

struct ParseError : std::runtime_error {
    int line, col;
    ParseError(const std::string& msg, int line_, int col_)
        : std::runtime_error("line " + std::to_string(line_) + ", col " + std::to_string(col_) +
                             ": " + msg),
          line(line_),
          col(col_) {}
};

class Value {
public:
    enum class Kind { string, integer, floating, boolean, array };

    Kind kind = Kind::string;
    std::string str;
    int64_t integer = 0;
    double floating = 0.0;
    bool boolean = false;
    std::vector<Value> items;
    int line = 0;

    const std::string& as_string() const;
    int64_t as_int() const;
    double as_double() const;  // accepts integers
    bool as_bool() const;
    const std::vector<Value>& as_array() const;
    std::vector<double> as_double_array() const;
    std::vector<int64_t> as_int_array() const;
    std::vector<std::string> as_string_array() const;

private:
    [[noreturn]] void type_error(const char* want) const;
};

struct Document {
    // flattened "table.key" -> value
    std::map<std::string, Value> values;
    // table headers in declaration order (includes empty tables)
    std::vector<std::string> tables;

    bool contains(const std::string& key) const { return values.count(key) != 0; }
    const Value& at(const std::string& key) const;
};

Document parse(const std::string& text);
Document parse_file(const std::filesystem::path& path);

std::string escape_string(const std::string& s);

}  // namespace hvla::toml

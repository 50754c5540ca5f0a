#include "hvla/toml.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

namespace hvla::toml {

void Value::type_error(const char* want) const {
    throw ParseError(std::string("expected ") + want, line, 1);
}

const std::string& Value::as_string() const {
    if (kind != Kind::string) type_error("a string");
    return str;
}

int64_t Value::as_int() const {
    if (kind != Kind::integer) type_error("an integer");
    return integer;
}

double Value::as_double() const {
    if (kind == Kind::integer) return static_cast<double>(integer);
    if (kind != Kind::floating) type_error("a number");
    return floating;
}

bool Value::as_bool() const {
    if (kind != Kind::boolean) type_error("a boolean");
    return boolean;
}

const std::vector<Value>& Value::as_array() const {
    if (kind != Kind::array) type_error("an array");
    return items;
}

std::vector<double> Value::as_double_array() const {
    std::vector<double> out;
    for (const auto& v : as_array()) out.push_back(v.as_double());
    return out;
}

std::vector<int64_t> Value::as_int_array() const {
    std::vector<int64_t> out;
    for (const auto& v : as_array()) out.push_back(v.as_int());
    return out;
}

std::vector<std::string> Value::as_string_array() const {
    std::vector<std::string> out;
    for (const auto& v : as_array()) out.push_back(v.as_string());
    return out;
}

const Value& Document::at(const std::string& key) const {
    const auto it = values.find(key);
    if (it == values.end()) throw std::out_of_range("config key '" + key + "' is missing");
    return it->second;
}

namespace {

struct Cursor {
    const std::string& s;
    size_t pos = 0;
    int line;

    int col() const { return static_cast<int>(pos) + 1; }
    bool done() const { return pos >= s.size(); }
    char peek() const { return pos < s.size() ? s[pos] : '\0'; }
    char take() { return s[pos++]; }
    void skip_ws() {
        while (!done() && (peek() == ' ' || peek() == '\t')) ++pos;
    }
};

bool key_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
}

std::string parse_key(Cursor& c) {
    c.skip_ws();
    std::string key;
    while (!c.done() && key_char(c.peek())) key.push_back(c.take());
    if (key.empty()) throw ParseError("expected a key", c.line, c.col());
    return key;
}

Value parse_value(Cursor& c);

Value parse_scalar(Cursor& c) {
    Value v;
    v.line = c.line;
    c.skip_ws();
    if (c.done()) throw ParseError("expected a value", c.line, c.col());
    const char first = c.peek();
    if (first == '"') {
        c.take();
        v.kind = Value::Kind::string;
        while (true) {
            if (c.done()) throw ParseError("unterminated string", c.line, c.col());
            char ch = c.take();
            if (ch == '"') break;
            if (ch == '\\') {
                if (c.done()) throw ParseError("dangling escape", c.line, c.col());
                const char esc = c.take();
                switch (esc) {
                    case '"': v.str.push_back('"'); break;
                    case '\\': v.str.push_back('\\'); break;
                    case 'n': v.str.push_back('\n'); break;
                    case 't': v.str.push_back('\t'); break;
                    default:
                        throw ParseError(std::string("unsupported escape '\\") + esc + "'",
                                         c.line, c.col());
                }
            } else {
                v.str.push_back(ch);
            }
        }
        return v;
    }
    if (std::isalpha(static_cast<unsigned char>(first))) {
        std::string word;
        while (!c.done() && std::isalpha(static_cast<unsigned char>(c.peek()))) {
            word.push_back(c.take());
        }
        if (word == "true" || word == "false") {
            v.kind = Value::Kind::boolean;
            v.boolean = word == "true";
            return v;
        }
        throw ParseError("bare word '" + word + "' (strings need quotes)", c.line, c.col());
    }
    // number
    std::string num;
    bool is_float = false;
    while (!c.done()) {
        const char ch = c.peek();
        if (std::isdigit(static_cast<unsigned char>(ch)) || ch == '+' || ch == '-') {
            num.push_back(c.take());
        } else if (ch == '.' || ch == 'e' || ch == 'E') {
            is_float = true;
            num.push_back(c.take());
        } else if (ch == '_') {
            c.take();
        } else {
            break;
        }
    }
    if (num.empty()) throw ParseError("expected a value", c.line, c.col());
    if (is_float) {
        v.kind = Value::Kind::floating;
        const auto res = std::from_chars(num.data(), num.data() + num.size(), v.floating);
        if (res.ec != std::errc{} || res.ptr != num.data() + num.size()) {
            throw ParseError("malformed number '" + num + "'", c.line, c.col());
        }
    } else {
        v.kind = Value::Kind::integer;
        const auto res = std::from_chars(num.data(), num.data() + num.size(), v.integer);
        if (res.ec != std::errc{} || res.ptr != num.data() + num.size()) {
            throw ParseError("malformed integer '" + num + "'", c.line, c.col());
        }
    }
    return v;
}

Value parse_value(Cursor& c) {
    c.skip_ws();
    if (c.peek() == '[') {
        c.take();
        Value v;
        v.line = c.line;
        v.kind = Value::Kind::array;
        c.skip_ws();
        if (c.peek() == ']') {
            c.take();
            return v;
        }
        while (true) {
            v.items.push_back(parse_value(c));
            c.skip_ws();
            const char ch = c.done() ? '\0' : c.take();
            if (ch == ']') break;
            if (ch != ',') throw ParseError("expected ',' or ']' in array", c.line, c.col());
            c.skip_ws();
            if (c.peek() == ']') {  // trailing comma
                c.take();
                break;
            }
        }
        return v;
    }
    return parse_scalar(c);
}

// strip a comment that is outside any string
size_t comment_start(const std::string& line) {
    bool in_string = false;
    for (size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (in_string) {
            if (c == '\\') ++i;
            else if (c == '"') in_string = false;
        } else if (c == '"') {
            in_string = true;
        } else if (c == '#') {
            return i;
        }
    }
    return std::string::npos;
}

}  // namespace

Document parse(const std::string& text) {
    Document doc;
    std::istringstream in(text);
    std::string raw;
    std::string table;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        if (const size_t cut = comment_start(raw); cut != std::string::npos) {
            raw.resize(cut);
        }
        Cursor c{raw, 0, line_no};
        c.skip_ws();
        if (c.done()) continue;
        if (c.peek() == '[') {
            c.take();
            std::string name = parse_key(c);
            while (c.peek() == '.') {
                c.take();
                name += "." + parse_key(c);
            }
            c.skip_ws();
            if (c.peek() != ']') throw ParseError("expected ']'", line_no, c.col());
            c.take();
            c.skip_ws();
            if (!c.done()) throw ParseError("trailing characters after table header", line_no,
                                            c.col());
            table = name;
            doc.tables.push_back(name);
            continue;
        }
        std::string key = parse_key(c);
        c.skip_ws();
        if (c.peek() != '=') throw ParseError("expected '=' after key '" + key + "'", line_no,
                                              c.col());
        c.take();
        Value v = parse_value(c);
        v.line = line_no;
        c.skip_ws();
        if (!c.done()) throw ParseError("trailing characters after value", line_no, c.col());
        const std::string full = table.empty() ? key : table + "." + key;
        if (doc.values.count(full)) {
            throw ParseError("duplicate key '" + full + "'", line_no, 1);
        }
        doc.values.emplace(full, std::move(v));
    }
    return doc;
}

Document parse_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

std::string escape_string(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        switch (c) {
            case '"': out += "\\\""; break;
            case '\\': out += "\\\\"; break;
            case '\n': out += "\\n"; break;
            case '\t': out += "\\t"; break;
            default: out.push_back(c);
        }
    }
    out.push_back('"');
    return out;
}

}  // namespace hvla::toml

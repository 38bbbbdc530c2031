#include <cctype>
#include <cmath>
#include <limits>
#include <cstdlib>
#include <string>

#include "coached/config.hpp"
#include "coached/error.hpp"
#include "coached/text.hpp"

namespace coached {

namespace {

using nlohmann::json;

class TomlParser {
 public:
  explicit TomlParser(std::string_view src) : src_(src) {}

  json parse() {
    json root = json::object();
    json* table = &root;
    while (true) {
      skip_ws_comments_newlines();
      if (eof()) break;
      if (peek() == '[') {
        if (peek(1) == '[') fail("arrays of tables are not supported");
        ++pos_;
        skip_inline_ws();
        auto keys = parse_key_path();
        skip_inline_ws();
        expect(']');
        table = &root;
        for (const auto& k : keys) {
          json& next = (*table)[k];
          if (next.is_null()) next = json::object();
          if (!next.is_object()) fail("key '" + k + "' is not a table");
          table = &next;
        }
      } else {
        auto keys = parse_key_path();
        skip_inline_ws();
        expect('=');
        skip_inline_ws();
        json value = parse_value();
        assign(*table, keys, std::move(value));
      }
      skip_inline_ws();
      if (!eof() && peek() == '#') skip_comment();
      if (!eof() && peek() != '\n' && peek() != '\r') fail("expected end of line");
    }
    return root;
  }

 private:
  bool eof() const { return pos_ >= src_.size(); }
  char peek(std::size_t ahead = 0) const {
    return pos_ + ahead < src_.size() ? src_[pos_ + ahead] : '\0';
  }

  [[noreturn]] void fail(const std::string& what) const {
    std::size_t line = 1;
    for (std::size_t i = 0; i < pos_ && i < src_.size(); ++i) line += src_[i] == '\n';
    throw Error(ErrorKind::kConfigError, "TOML line " + std::to_string(line) + ": " + what);
  }

  void expect(char c) {
    if (peek() != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }

  void skip_inline_ws() {
    while (!eof() && (peek() == ' ' || peek() == '\t')) ++pos_;
  }
  void skip_comment() {
    while (!eof() && peek() != '\n') ++pos_;
  }
  void skip_ws_comments_newlines() {
    while (!eof()) {
      const char c = peek();
      if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
        ++pos_;
      } else if (c == '#') {
        skip_comment();
      } else {
        break;
      }
    }
  }

  static bool bare_key_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
  }

  std::vector<std::string> parse_key_path() {
    std::vector<std::string> keys;
    while (true) {
      skip_inline_ws();
      if (peek() == '"') {
        keys.push_back(parse_basic_string());
      } else if (peek() == '\'') {
        keys.push_back(parse_literal_string());
      } else {
        const std::size_t start = pos_;
        while (!eof() && bare_key_char(peek())) ++pos_;
        if (pos_ == start) fail("expected a key");
        keys.emplace_back(src_.substr(start, pos_ - start));
      }
      skip_inline_ws();
      if (peek() != '.') break;
      ++pos_;
    }
    return keys;
  }

  void assign(json& table, const std::vector<std::string>& keys, json value) {
    json* t = &table;
    for (std::size_t i = 0; i + 1 < keys.size(); ++i) {
      json& next = (*t)[keys[i]];
      if (next.is_null()) next = json::object();
      if (!next.is_object()) fail("key '" + keys[i] + "' is not a table");
      t = &next;
    }
    if (t->contains(keys.back())) fail("duplicate key '" + keys.back() + "'");
    (*t)[keys.back()] = std::move(value);
  }

  json parse_value() {
    const char c = peek();
    if (c == '"') {
      if (src_.substr(pos_, 3) == "\"\"\"") return parse_multiline_basic();
      return parse_basic_string();
    }
    if (c == '\'') {
      if (src_.substr(pos_, 3) == "'''") return parse_multiline_literal();
      return parse_literal_string();
    }
    if (c == '[') return parse_array();
    if (c == '{') return parse_inline_table();
    if (src_.substr(pos_, 4) == "true") {
      pos_ += 4;
      return true;
    }
    if (src_.substr(pos_, 5) == "false") {
      pos_ += 5;
      return false;
    }
    return parse_number();
  }

  void append_escape(std::string& out) {
    const char e = peek();
    ++pos_;
    switch (e) {
      case 'n': out.push_back('\n'); return;
      case 't': out.push_back('\t'); return;
      case 'r': out.push_back('\r'); return;
      case 'b': out.push_back('\b'); return;
      case 'f': out.push_back('\f'); return;
      case '"': out.push_back('"'); return;
      case '\\': out.push_back('\\'); return;
      case 'u':
      case 'U': {
        const std::size_t digits = e == 'u' ? 4 : 8;
        if (pos_ + digits > src_.size()) fail("truncated unicode escape");
        const std::string hex(src_.substr(pos_, digits));
        pos_ += digits;
        char* end = nullptr;
        const auto cp = std::strtoul(hex.c_str(), &end, 16);
        if (*end != '\0') fail("bad unicode escape");
        text::append_utf8(out, static_cast<char32_t>(cp));
        return;
      }
      default: fail(std::string("unknown escape \\") + e);
    }
  }

  std::string parse_basic_string() {
    expect('"');
    std::string out;
    while (true) {
      if (eof() || peek() == '\n') fail("unterminated string");
      const char c = peek();
      ++pos_;
      if (c == '"') break;
      if (c == '\\') {
        append_escape(out);
      } else {
        out.push_back(c);
      }
    }
    return out;
  }

  std::string parse_literal_string() {
    expect('\'');
    const std::size_t end = src_.find('\'', pos_);
    if (end == std::string_view::npos || src_.substr(pos_, end - pos_).find('\n') != std::string_view::npos) {
      fail("unterminated literal string");
    }
    std::string out(src_.substr(pos_, end - pos_));
    pos_ = end + 1;
    return out;
  }

  void skip_first_newline() {
    if (peek() == '\n') {
      ++pos_;
    } else if (peek() == '\r' && peek(1) == '\n') {
      pos_ += 2;
    }
  }

  std::string parse_multiline_basic() {
    pos_ += 3;
    skip_first_newline();
    std::string out;
    while (true) {
      if (eof()) fail("unterminated multi-line string");
      if (src_.substr(pos_, 3) == "\"\"\"") {
        pos_ += 3;
        break;
      }
      const char c = peek();
      ++pos_;
      if (c == '\\') {
        // line-ending backslash trims following whitespace
        std::size_t look = pos_;
        while (look < src_.size() && (src_[look] == ' ' || src_[look] == '\t')) ++look;
        if (look < src_.size() && (src_[look] == '\n' || src_[look] == '\r')) {
          pos_ = look;
          while (!eof() && (peek() == ' ' || peek() == '\t' || peek() == '\n' || peek() == '\r')) ++pos_;
        } else {
          append_escape(out);
        }
      } else {
        out.push_back(c);
      }
    }
    return out;
  }

  std::string parse_multiline_literal() {
    pos_ += 3;
    skip_first_newline();
    const std::size_t end = src_.find("'''", pos_);
    if (end == std::string_view::npos) fail("unterminated multi-line literal string");
    std::string out(src_.substr(pos_, end - pos_));
    pos_ = end + 3;
    return out;
  }

  json parse_array() {
    expect('[');
    json arr = json::array();
    while (true) {
      skip_ws_comments_newlines();
      if (peek() == ']') {
        ++pos_;
        break;
      }
      arr.push_back(parse_value());
      skip_ws_comments_newlines();
      if (peek() == ',') {
        ++pos_;
      } else if (peek() != ']') {
        fail("expected ',' or ']' in array");
      }
    }
    return arr;
  }

  json parse_inline_table() {
    expect('{');
    json table = json::object();
    skip_inline_ws();
    if (peek() == '}') {
      ++pos_;
      return table;
    }
    while (true) {
      auto keys = parse_key_path();
      skip_inline_ws();
      expect('=');
      skip_inline_ws();
      assign(table, keys, parse_value());
      skip_inline_ws();
      if (peek() == ',') {
        ++pos_;
        continue;
      }
      expect('}');
      break;
    }
    return table;
  }

  json parse_number() {
    const std::size_t start = pos_;
    while (!eof() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '+' ||
                      peek() == '-' || peek() == '.' || peek() == '_')) {
      ++pos_;
    }
    std::string token;
    for (char c : src_.substr(start, pos_ - start)) {
      if (c != '_') token.push_back(c);
    }
    if (token.empty()) fail("expected a value");
    if (token == "inf" || token == "+inf") return std::numeric_limits<double>::infinity();
    if (token == "-inf") return -std::numeric_limits<double>::infinity();
    const bool is_float = token.find_first_of(".eE") != std::string::npos &&
                          token.rfind("0x", 0) != 0;
    char* end = nullptr;
    if (is_float) {
      const double d = std::strtod(token.c_str(), &end);
      if (*end != '\0') fail("bad number '" + token + "'");
      return d;
    }
    const long long v = std::strtoll(token.c_str(), &end, 0);
    if (*end != '\0') fail("bad value '" + token + "'");
    return v;
  }

  std::string_view src_;
  std::size_t pos_ = 0;
};

}  // namespace

nlohmann::json parse_toml(std::string_view source) { return TomlParser(source).parse(); }

}  // namespace coached

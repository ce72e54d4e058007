#include <cctype>
#include <charconv>
#include <istream>
#include <set>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "gecadapt/error.hpp"
#include "gecadapt/harness.hpp"

namespace gecadapt {

namespace {

using nlohmann::json;

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

bool is_bare_key(std::string_view k) {
  if (k.empty()) return false;
  for (char c : k)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-') return false;
  return true;
}

// Drops a trailing comment, respecting basic and literal strings.
std::string_view strip_comment(std::string_view s) {
  char quote = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (quote == '"' && s[i] == '\\') {
      ++i;
    } else if (quote != 0) {
      if (s[i] == quote) quote = 0;
    } else if (s[i] == '"' || s[i] == '\'') {
      quote = s[i];
    } else if (s[i] == '#') {
      return s.substr(0, i);
    }
  }
  return s;
}

class ValueParser {
 public:
  ValueParser(std::string_view text, std::size_t line) : s_(text), line_(line) {}

  json parse_all() {
    json v = parse_value();
    skip_space();
    if (pos_ != s_.size()) fail("unexpected trailing characters");
    return v;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const { throw ParseError(what, line_); }

  void skip_space() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }

  json parse_value() {
    skip_space();
    if (pos_ >= s_.size()) fail("missing value");
    const char c = s_[pos_];
    if (c == '"') return parse_string();
    if (c == '\'') return parse_literal();
    if (c == '[') return parse_array();
    if (s_.substr(pos_, 4) == "true") {
      pos_ += 4;
      return true;
    }
    if (s_.substr(pos_, 5) == "false") {
      pos_ += 5;
      return false;
    }
    return parse_number();
  }

  json parse_string() {
    std::string out;
    for (++pos_; pos_ < s_.size(); ++pos_) {
      const char c = s_[pos_];
      if (c == '"') {
        ++pos_;
        return out;
      }
      if (c != '\\') {
        out += c;
        continue;
      }
      if (++pos_ >= s_.size()) break;
      switch (s_[pos_]) {
        case '"': out += '"'; break;
        case '\\': out += '\\'; break;
        case 'n': out += '\n'; break;
        case 't': out += '\t'; break;
        default: fail(std::string("unsupported escape \\") + s_[pos_]);
      }
    }
    fail("unterminated string");
  }

  // Single-quoted: no escapes.
  json parse_literal() {
    const auto close = s_.find('\'', pos_ + 1);
    if (close == std::string_view::npos) fail("unterminated string");
    std::string out(s_.substr(pos_ + 1, close - pos_ - 1));
    pos_ = close + 1;
    return out;
  }

  json parse_array() {
    json arr = json::array();
    ++pos_;
    for (;;) {
      skip_space();
      if (pos_ < s_.size() && s_[pos_] == ']') {
        ++pos_;
        return arr;
      }
      arr.push_back(parse_value());
      skip_space();
      if (pos_ < s_.size() && s_[pos_] == ',') {
        ++pos_;
      } else if (pos_ < s_.size() && s_[pos_] == ']') {
        ++pos_;
        return arr;
      } else {
        fail("expected ',' or ']' in array");
      }
    }
  }

  json parse_number() {
    const std::size_t start = pos_;
    while (pos_ < s_.size() && s_[pos_] != ',' && s_[pos_] != ']' &&
           !std::isspace(static_cast<unsigned char>(s_[pos_])))
      ++pos_;
    std::string tok;
    for (char c : s_.substr(start, pos_ - start))
      if (c != '_') tok += c;
    if (tok.empty()) fail("missing value");
    const bool is_float = tok.find_first_of(".eE") != std::string::npos;
    const char* b = tok.data() + (tok[0] == '+' ? 1 : 0);
    const char* e = tok.data() + tok.size();
    if (is_float) {
      double d = 0;
      const auto r = std::from_chars(b, e, d);
      if (r.ec != std::errc() || r.ptr != e) fail("invalid number '" + tok + "'");
      return d;
    }
    std::int64_t i = 0;
    const auto r = std::from_chars(b, e, i);
    if (r.ec != std::errc() || r.ptr != e) fail("invalid value '" + tok + "'");
    return i;
  }

  std::string_view s_;
  std::size_t line_;
  std::size_t pos_ = 0;
};

}  // namespace

json parse_toml(std::istream& in) {
  json root = json::object();
  json* table = &root;
  std::set<std::string> headers;
  std::string raw;
  for (std::size_t n = 1; std::getline(in, raw); ++n) {
    const std::string_view line = trim(strip_comment(raw));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) throw ParseError("malformed table header", n);
      const std::string name(trim(line.substr(1, line.size() - 2)));
      if (!headers.insert(name).second) throw ParseError("table [" + name + "] defined twice", n);
      table = &root;
      std::stringstream parts(name);
      std::string part;
      while (std::getline(parts, part, '.')) {
        const std::string key(trim(part));
        if (!is_bare_key(key)) throw ParseError("invalid table name '" + name + "'", n);
        json& next = (*table)[key];
        if (next.is_null()) next = json::object();
        if (!next.is_object()) throw ParseError("'" + key + "' is not a table", n);
        table = &next;
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError("expected 'key = value'", n);
    const std::string key(trim(line.substr(0, eq)));
    if (!is_bare_key(key)) throw ParseError("invalid key '" + key + "'", n);
    if (table->contains(key)) throw ParseError("duplicate key '" + key + "'", n);
    (*table)[key] = ValueParser(line.substr(eq + 1), n).parse_all();
  }
  return root;
}

json parse_toml(std::string_view text) {
  std::istringstream in{std::string(text)};
  return parse_toml(in);
}

}  // namespace gecadapt

#pragma once

// Reader for the TOML-compatible subset used by spec documents: [section]
// headers (dotted names allowed), `key = value` pairs with bare or quoted
// keys, and values that are strings, numbers, booleans, or (nested) arrays.
// `#` starts a comment. Arrays may span lines.

#include <cctype>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace odsel {

class TomlValue {
public:
  using Array = std::vector<TomlValue>;
  std::variant<bool, double, std::string, Array> v;

  bool is_bool() const { return std::holds_alternative<bool>(v); }
  bool is_number() const { return std::holds_alternative<double>(v); }
  bool is_string() const { return std::holds_alternative<std::string>(v); }
  bool is_array() const { return std::holds_alternative<Array>(v); }

  bool as_bool() const { return std::get<bool>(v); }
  double as_number() const { return std::get<double>(v); }
  long as_int() const { return long(std::get<double>(v)); }
  const std::string& as_string() const { return std::get<std::string>(v); }
  const Array& as_array() const { return std::get<Array>(v); }

  std::vector<double> as_numbers() const {
    std::vector<double> out;
    for (const auto& e : as_array()) out.push_back(e.as_number());
    return out;
  }
  std::vector<std::string> as_strings() const {
    std::vector<std::string> out;
    for (const auto& e : as_array()) out.push_back(e.as_string());
    return out;
  }
};

using TomlSection = std::map<std::string, TomlValue>;
using TomlDoc = std::map<std::string, TomlSection>;

namespace detail {

class TomlParser {
public:
  explicit TomlParser(const std::string& text) : s_(text) {}

  TomlDoc parse() {
    TomlDoc doc;
    std::string section;
    while (true) {
      skip_ws_comments(true);
      if (eof()) break;
      if (peek() == '[') {
        get();
        section = parse_section_name();
        expect(']');
      } else {
        std::string key = parse_key();
        skip_ws_comments(false);
        expect('=');
        skip_ws_comments(false);
        doc[section][key] = parse_value();
      }
      skip_to_eol();
    }
    return doc;
  }

private:
  const std::string& s_;
  std::size_t i_ = 0;

  bool eof() const { return i_ >= s_.size(); }
  char peek() const { return s_[i_]; }
  char get() { return s_[i_++]; }

  void expect(char c) {
    if (eof() || peek() != c)
      throw std::runtime_error(std::string("spec document: expected '") + c + "'");
    get();
  }

  void skip_ws_comments(bool newlines) {
    while (!eof()) {
      char c = peek();
      if (c == '#') { while (!eof() && get() != '\n') {} }
      else if (c == ' ' || c == '\t' || c == '\r') get();
      else if (newlines && c == '\n') get();
      else break;
    }
  }

  void skip_to_eol() {
    skip_ws_comments(false);
    if (!eof() && peek() == '\n') get();
    else if (!eof())
      throw std::runtime_error("spec document: trailing characters on line");
  }

  std::string parse_section_name() {
    std::string name;
    while (!eof() && peek() != ']') name += get();
    std::size_t a = name.find_first_not_of(" \t");
    std::size_t b = name.find_last_not_of(" \t");
    if (a == std::string::npos)
      throw std::runtime_error("spec document: empty section name");
    return name.substr(a, b - a + 1);
  }

  std::string parse_key() {
    if (peek() == '"' || peek() == '\'') return parse_string();
    std::string key;
    while (!eof()) {
      char c = peek();
      if (std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' ||
          c == '.')
        key += get();
      else break;
    }
    if (key.empty()) throw std::runtime_error("spec document: empty key");
    return key;
  }

  std::string parse_string() {
    char q = get();
    std::string out;
    while (!eof() && peek() != q) out += get();
    if (eof()) throw std::runtime_error("spec document: unterminated string");
    get();
    return out;
  }

  TomlValue parse_value() {
    skip_ws_comments(true);
    if (eof()) throw std::runtime_error("spec document: missing value");
    char c = peek();
    TomlValue v;
    if (c == '"' || c == '\'') {
      v.v = parse_string();
    } else if (c == '[') {
      get();
      TomlValue::Array arr;
      while (true) {
        skip_ws_comments(true);
        if (eof()) throw std::runtime_error("spec document: unterminated array");
        if (peek() == ']') { get(); break; }
        arr.push_back(parse_value());
        skip_ws_comments(true);
        if (!eof() && peek() == ',') get();
      }
      v.v = std::move(arr);
    } else if (std::isdigit(static_cast<unsigned char>(c)) || c == '-' ||
               c == '+' || c == '.') {
      std::string num;
      while (!eof()) {
        char d = peek();
        if (std::isdigit(static_cast<unsigned char>(d)) || d == '-' ||
            d == '+' || d == '.' || d == 'e' || d == 'E' || d == '_')
          num += get();
        else break;
      }
      std::string clean;
      for (char d : num) if (d != '_') clean += d;
      try {
        v.v = std::stod(clean);
      } catch (...) {
        throw std::runtime_error("spec document: bad number '" + num + "'");
      }
    } else {
      std::string word;
      while (!eof() && (std::isalnum(static_cast<unsigned char>(peek())) ||
                        peek() == '_'))
        word += get();
      if (word == "true") v.v = true;
      else if (word == "false") v.v = false;
      else
        throw std::runtime_error("spec document: bad value '" + word +
                                 "' (strings must be quoted)");
    }
    return v;
  }
};

}  // namespace detail

inline TomlDoc parse_toml(const std::string& text) {
  return detail::TomlParser(text).parse();
}

inline TomlDoc parse_toml_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open spec document: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_toml(ss.str());
}

}  // namespace odsel

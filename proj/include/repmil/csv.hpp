#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "repmil/error.hpp"

namespace repmil::csv {

// RFC-4180 reader: quoted fields, doubled quotes, embedded separators and
// newlines, CRLF or LF record endings. Returns records with the 1-based line
// each one started on.
struct Record {
  std::size_t line = 0;
  std::vector<std::string> fields;
};

inline std::vector<Record> parse(std::string_view text) {
  std::vector<Record> out;
  Record rec;
  std::string field;
  bool in_quotes = false;
  bool field_was_quoted = false;
  std::size_t line = 1;
  rec.line = 1;

  auto end_field = [&] {
    rec.fields.push_back(std::move(field));
    field.clear();
    field_was_quoted = false;
  };
  auto end_record = [&] {
    end_field();
    // Drop blank lines.
    if (!(rec.fields.size() == 1 && rec.fields[0].empty())) out.push_back(std::move(rec));
    rec = Record{};
    rec.line = line;
  };

  for (std::size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    if (in_quotes) {
      if (ch == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (ch == '\n') ++line;
        field.push_back(ch);
      }
      continue;
    }
    switch (ch) {
      case '"':
        if (!field.empty() || field_was_quoted) throw ParseError(line, "stray quote inside unquoted field");
        in_quotes = true;
        field_was_quoted = true;
        break;
      case ',':
        end_field();
        break;
      case '\r':
        if (i + 1 < text.size() && text[i + 1] == '\n') break;
        field.push_back(ch);
        break;
      case '\n':
        ++line;
        end_record();
        break;
      default:
        field.push_back(ch);
    }
  }
  if (in_quotes) throw ParseError(line, "unterminated quoted field");
  if (!field.empty() || !rec.fields.empty() || field_was_quoted) end_record();
  return out;
}

inline std::string escape(std::string_view v) {
  if (v.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(v);
  std::string s = "\"";
  for (char ch : v) {
    if (ch == '"') s.push_back('"');
    s.push_back(ch);
  }
  s.push_back('"');
  return s;
}

}  // namespace repmil::csv

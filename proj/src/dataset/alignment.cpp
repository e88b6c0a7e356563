#include <algorithm>
#include <charconv>
#include <sstream>

#include "speechflow/dataset.hpp"
#include "speechflow/error.hpp"

namespace speechflow {

namespace {

std::size_t parse_index(std::string_view field, std::size_t line) {
  std::size_t value = 0;
  const auto [end, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || end != field.data() + field.size())
    throw ParseError(line, "expected a non-negative integer, got '" + std::string(field) + "'");
  return value;
}

}  // namespace

std::string_view gender_name(Gender g) {
  switch (g) {
    case Gender::M: return "M";
    case Gender::F: return "F";
    case Gender::unknown: return "unknown";
  }
  return "unknown";
}

Gender parse_gender(std::string_view s) {
  if (s == "M" || s == "m") return Gender::M;
  if (s == "F" || s == "f") return Gender::F;
  return Gender::unknown;
}

std::vector<PhoneInterval> parse_phone_alignment(std::string_view text) {
  std::vector<PhoneInterval> out;
  std::istringstream in{std::string(text)};
  std::string row;
  std::size_t line = 0;
  while (std::getline(in, row)) {
    ++line;
    if (!row.empty() && row.back() == '\r') row.pop_back();
    std::istringstream fields(row);
    std::string begin, end, label, extra;
    if (!(fields >> begin)) continue;  // blank line
    if (!(fields >> end >> label)) throw ParseError(line, "expected 'begin end label'");
    if (fields >> extra) throw ParseError(line, "trailing field '" + extra + "'");
    PhoneInterval p{parse_index(begin, line), parse_index(end, line), label};
    if (p.begin >= p.end) throw ParseError(line, "begin must be smaller than end");
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<SegmentRecord> extract_segments(const std::vector<PhoneInterval>& alignment,
                                            const std::vector<Vowel>& vowel_set, const SegmentRecord& tmpl) {
  std::vector<SegmentRecord> out;
  for (const auto& p : alignment) {
    if (!is_vowel_label(p.label)) continue;
    const Vowel v = parse_vowel(p.label);
    if (std::find(vowel_set.begin(), vowel_set.end(), v) == vowel_set.end()) continue;
    SegmentRecord r = tmpl;
    r.vowel = v;
    r.start_sample = p.begin;
    r.end_sample = p.end;
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace speechflow

#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ifepanel/error.hpp"
#include "ifepanel/panel.hpp"

namespace ifepanel::io {

namespace detail {

inline std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  std::string out = s.substr(first, last - first + 1);
  if (out.size() >= 2 && out.front() == '"' && out.back() == '"') out = out.substr(1, out.size() - 2);
  return out;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_value(const std::string& s, std::size_t line_no) {
  double v = 0.0;
  if (s == "nan" || s == "NaN" || s == "inf" || s == "-inf" || s == "Inf" || s == "-Inf")
    throw Error(ErrorKind::NonFinite, "line " + std::to_string(line_no) + ": non-finite value '" + s + "'");
  if (!ifepanel::detail::parse_number(s, v))
    throw Error(ErrorKind::InvalidArgument, "line " + std::to_string(line_no) + ": cannot parse '" + s + "'");
  return v;
}

}  // namespace detail

/// Long-format panel: header `unit,period,y,x1,...,xK`, one row per observed cell.
inline PanelData read_long_csv(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!detail::trim(line).empty()) {
      header = detail::split_csv(line);
      break;
    }
  }
  if (header.size() < 4) throw Error(ErrorKind::Io, "header must be unit,period,y,x1[,...]");
  std::vector<std::string> names(header.begin() + 3, header.end());
  std::vector<LongRecord> records;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_csv(line);
    if (fields.size() != header.size())
      throw Error(ErrorKind::RaggedRow, "line " + std::to_string(line_no) + " has " + std::to_string(fields.size()) +
                                            " fields, expected " + std::to_string(header.size()));
    LongRecord r;
    r.unit = fields[0];
    r.period = fields[1];
    r.y = detail::parse_value(fields[2], line_no);
    for (std::size_t k = 3; k < fields.size(); ++k) r.x.push_back(detail::parse_value(fields[k], line_no));
    records.push_back(std::move(r));
  }
  return from_long_records(records, names);
}

inline PanelData read_long_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path + "'");
  return read_long_csv(in);
}

/// Writes the observed cells of a panel in the long format read above.
inline void write_long_csv(std::ostream& out, const PanelData& d) {
  out << "unit,period,y";
  for (const auto& name : d.regressor_names()) out << ',' << name;
  out << '\n';
  out.precision(17);
  for (const auto& c : d.observed()) {
    out << d.unit_keys()[static_cast<std::size_t>(c.unit)] << ',' << d.period_keys()[static_cast<std::size_t>(c.period)]
        << ',' << d.y()(c.unit, c.period);
    for (Index k = 0; k < d.n_regressors(); ++k) out << ',' << d.x(k)(c.unit, c.period);
    out << '\n';
  }
}

using KeyValues = std::map<std::string, std::string>;

/// Flat `key = value` file. Lines starting with # or ; are comments and
/// [section] headers are ignored.
inline KeyValues read_ini(std::istream& in) {
  KeyValues kv;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';' || t[0] == '[') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw Error(ErrorKind::Io, "line " + std::to_string(line_no) + ": expected key = value");
    kv[detail::trim(t.substr(0, eq))] = detail::trim(t.substr(eq + 1));
  }
  return kv;
}

inline KeyValues read_ini(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path + "'");
  return read_ini(in);
}

inline void write_ini(std::ostream& out, const KeyValues& kv) {
  for (const auto& [k, v] : kv) out << k << " = " << v << '\n';
}

}  // namespace ifepanel::io

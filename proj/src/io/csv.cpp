#include "deepwarp/io/csv.hpp"

#include "deepwarp/error.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace deepwarp::io {

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::optional<Eigen::Index> Table::find(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return static_cast<Eigen::Index>(i);
  }
  return std::nullopt;
}

Eigen::Index Table::column(std::string_view name) const {
  const auto i = find(name);
  if (!i) throw DataError("missing column '" + std::string(name) + "'");
  return *i;
}

Table parse_csv(const std::string& text, const std::string& source) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  std::size_t skip = 0;
  while (skip < lines.size() && !lines[skip].empty() && lines[skip][0] == '#') ++skip;
  lines.erase(lines.begin(), lines.begin() + static_cast<std::ptrdiff_t>(skip));
  if (lines.empty()) throw DataError(source + ": empty file");

  Table t;
  std::set<std::string> seen;
  for (const auto& h : split(lines[0])) {
    const std::string name = trim(h);
    if (name.empty()) throw DataError(source + ": empty column name in header");
    if (!seen.insert(name).second) throw DataError(source + ": duplicate column '" + name + "'");
    t.header.push_back(name);
  }
  const auto ncol = static_cast<Eigen::Index>(t.header.size());
  t.values.resize(static_cast<Eigen::Index>(lines.size()) - 1, ncol);
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const auto fields = split(lines[r]);
    if (static_cast<Eigen::Index>(fields.size()) != ncol) {
      throw DataError(source + ": line " + std::to_string(r + 1) + " has " + std::to_string(fields.size()) +
                      " fields, expected " + std::to_string(ncol));
    }
    for (Eigen::Index c = 0; c < ncol; ++c) {
      const std::string f = trim(fields[static_cast<std::size_t>(c)]);
      double v = 0.0;
      const char* end = f.data() + f.size();
      const auto [ptr, ec] = std::from_chars(f.data(), end, v);
      if (f.empty() || ec != std::errc() || ptr != end || !std::isfinite(v)) {
        throw DataError(source + ": line " + std::to_string(r + 1) + ", column '" + t.header[static_cast<std::size_t>(c)] +
                        "': not a finite number: '" + f + "'");
      }
      t.values(static_cast<Eigen::Index>(r) - 1, c) = v;
    }
  }
  return t;
}

std::string read_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path + "'");
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

Table read_csv(const std::string& path) { return parse_csv(read_text(path), path); }

void write_text_atomic(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write '" + tmp.string() + "'");
    f << content;
    f.flush();
    if (!f) throw DataError("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp);
    throw DataError("cannot move output into place at '" + path + "': " + ec.message());
  }
}

std::string format_double(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  if (ec != std::errc()) throw std::runtime_error("format_double failed");
  return std::string(buf, ptr);
}

std::string csv_row(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i > 0) out.push_back(',');
    out += fields[i];
  }
  out.push_back('\n');
  return out;
}

}  // namespace deepwarp::io

// Copyright 2026 The aoisched Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Output formatting, file digests, atomic writes and index-table
// serialization.

#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "aoisched/mdp_core.hpp"
#include "aoisched/single_source.hpp"
#include "aoisched/whittle.hpp"

namespace aoisched::io {

using nlohmann::json;

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kSignificantDigits = 9;

/// Decimal text with nine significant digits; non-finite values map to
/// "inf", "-inf" and "nan".
inline std::string format_number(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  if (x == 0.0) x = 0.0;  // drop the sign of -0
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.*g", kSignificantDigits, x);
  return buf;
}

/// Rounds to nine significant digits so JSON output carries the same
/// precision as the CSV files. Non-finite values become null.
inline json json_number(double x) {
  if (!std::isfinite(x)) return nullptr;
  return std::stod(format_number(x));
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::string file_digest(const std::filesystem::path& path) {
  return "fnv1a64:" + hex64(fnv1a64(read_file(path)));
}

/// Writes to a unique sibling temporary and renames it over `path`, so
/// readers see either the old file or the complete new one.
inline void atomic_write(const std::filesystem::path& path, std::string_view content) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::random_device rd;
  const auto tmp = fs::path(path.string() + ".tmp-" + hex64((std::uint64_t{rd()} << 32) ^ rd()));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw IoError("short write to " + tmp.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot rename into " + path.string());
  }
}

/// Minimal CSV builder; fields never contain separators or quotes here.
class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header) : columns_(header.size()) {
    row(header);
  }

  template <typename... Fields>
  void add(const Fields&... fields) {
    std::vector<std::string> cells;
    (cells.push_back(cell(fields)), ...);
    row(cells);
  }

  [[nodiscard]] const std::string& str() const { return text_; }

 private:
  static std::string cell(double x) { return format_number(x); }
  static std::string cell(const std::string& s) { return s; }
  static std::string cell(const char* s) { return s; }
  template <typename Int>
    requires std::is_integral_v<Int>
  static std::string cell(Int v) {
    return std::to_string(v);
  }

  void row(const std::vector<std::string>& cells) {
    if (cells.size() != columns_) throw IoError("csv row has the wrong number of fields");
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) text_ += ',';
      text_ += cells[i];
    }
    text_ += '\n';
  }

  std::size_t columns_;
  std::string text_;
};

inline std::string values_csv(const ValueTable& v) {
  CsvWriter w({"monitor_age", "bs_age", "value"});
  for (const AoiState s : reachable_states(v.trunc())) w.add(s.monitor_age, s.bs_age, v[s]);
  return w.str();
}

inline std::string policy_csv(const PolicyTable& policy) {
  CsvWriter w({"monitor_age", "bs_age", "action", "action_name"});
  for (const AoiState s : reachable_states(policy.trunc()))
    w.add(s.monitor_age, s.bs_age, to_int(policy[s]), action_name(policy[s]));
  return w.str();
}

/// Unbounded thresholds are written as A+1 with an explicit flag.
inline json thresholds_json(const std::vector<ThresholdRow>& rows, int trunc) {
  json out;
  out["trunc_A"] = trunc;
  out["unbounded_sentinel"] = trunc + 1;
  json arr = json::array();
  for (const auto& r : rows) {
    const bool inf1 = r.tau1 == ThresholdRow::kInfinite;
    const bool inf2 = r.tau2 == ThresholdRow::kInfinite;
    arr.push_back({{"bs_age", r.bs_age},
                   {"tau1", inf1 ? trunc + 1 : r.tau1},
                   {"tau1_unbounded", inf1},
                   {"tau2", inf2 ? trunc + 1 : r.tau2},
                   {"tau2_unbounded", inf2}});
  }
  out["rows"] = std::move(arr);
  return out;
}

inline json report_json(const VerificationReport& r) {
  json checks = json::array();
  for (const auto& c : r.checks) {
    json j{{"id", c.id},
           {"description", c.description},
           {"applicable", c.applicable},
           {"passed", c.passed()},
           {"margin", c.margin},
           {"interior_checked", c.interior_checked},
           {"interior_violations", c.interior_violations},
           {"boundary_checked", c.boundary_checked},
           {"boundary_violations", c.boundary_violations},
           {"worst_interior_excess", json_number(c.worst_interior_excess)}};
    if (!c.note.empty()) j["note"] = c.note;
    if (c.first_violation)
      j["first_violation"] = {c.first_violation->monitor_age, c.first_violation->bs_age};
    checks.push_back(std::move(j));
  }
  return {{"tolerance", json_number(r.tolerance)},
          {"boundary_margin", r.boundary_margin},
          {"sense_joint_condition", r.sense_joint_condition},
          {"all_passed", r.all_passed()},
          {"checks", std::move(checks)}};
}

/// One block of index.csv rows for a parameter class.
inline void append_index_rows(CsvWriter& w, const std::string& label, const IndexTable& t) {
  for (const AoiState s : reachable_states(t.trunc_A))
    w.add(label, s.monitor_age, s.bs_age, t.index[s], kind_name(t.kind),
          static_cast<int>(t.bisected[s]), t.interpolated[s], action_name(t.active_action[s]));
}

inline std::vector<std::string> index_csv_header() {
  return {"class", "monitor_age", "bs_age", "index", "kind", "bisected", "interpolated",
          "active_action"};
}

inline json index_meta_json(const IndexTable& t) {
  json failures = json::array();
  for (const auto& s : t.bracket_failures) failures.push_back({s.monitor_age, s.bs_age});
  return {{"kind", kind_name(t.kind)},
          {"trunc_A", t.trunc_A},
          {"indexable_sufficient", t.indexable},
          {"eps", json_number(t.eps)},
          {"k_max", t.k_max},
          {"max_iterations", t.max_iterations},
          {"max_expansions", t.max_expansions},
          {"dp_solves", t.dp_solves},
          {"update_fallbacks", t.update_fallbacks},
          {"bracket_failures", std::move(failures)},
          {"seconds", json_number(t.seconds)}};
}

/// Lossless form used by the on-disk cache.
inline json index_table_to_json(const IndexTable& t) {
  json j = index_meta_json(t);
  j["seconds"] = t.seconds;
  j["eps"] = t.eps;
  j["index"] = t.index.raw();
  j["interpolated"] = t.interpolated.raw();
  j["bisected"] = t.bisected.raw();
  std::vector<int> act;
  for (Action u : t.active_action.raw()) act.push_back(to_int(u));
  j["active_action"] = std::move(act);
  return j;
}

inline IndexTable index_table_from_json(const json& j) {
  IndexTable t;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind != kind_name(IndexKind::Exact) && kind != kind_name(IndexKind::Approximate))
    throw IoError("unknown index table kind '" + kind + "'");
  t.kind = kind == kind_name(IndexKind::Exact) ? IndexKind::Exact : IndexKind::Approximate;
  t.trunc_A = j.at("trunc_A").get<int>();
  const std::size_t n = triangle_size(t.trunc_A);
  auto load = [&](const char* key, auto& table) {
    auto raw = j.at(key).get<std::vector<typename std::decay_t<decltype(table.raw())>::value_type>>();
    if (raw.size() != n) throw IoError(std::string("index table field '") + key + "' has wrong size");
    table = std::decay_t<decltype(table)>(t.trunc_A);
    table.raw() = std::move(raw);
  };
  load("index", t.index);
  load("interpolated", t.interpolated);
  load("bisected", t.bisected);
  const auto act = j.at("active_action").get<std::vector<int>>();
  if (act.size() != n) throw IoError("index table field 'active_action' has wrong size");
  t.active_action = PolicyTable(t.trunc_A);
  for (std::size_t i = 0; i < n; ++i) t.active_action.raw()[i] = action_from_int(act[i]);
  for (const auto& f : j.at("bracket_failures")) t.bracket_failures.push_back({f.at(0), f.at(1)});
  t.update_fallbacks = j.at("update_fallbacks").get<long>();
  t.indexable = j.at("indexable_sufficient").get<bool>();
  t.eps = j.at("eps").get<double>();
  t.k_max = j.at("k_max").get<int>();
  t.max_iterations = j.at("max_iterations").get<int>();
  t.max_expansions = j.at("max_expansions").get<int>();
  t.dp_solves = j.at("dp_solves").get<long>();
  t.seconds = j.at("seconds").get<double>();
  return t;
}

}  // namespace aoisched::io

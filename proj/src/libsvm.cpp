#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <string>
#include <string_view>

#include "fpslab/data.hpp"
#include "fpslab/errors.hpp"

namespace fpslab {
namespace {

bool parse_double(std::string_view s, double& out) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

bool parse_index(std::string_view s, std::uint64_t& out) {
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

struct RawRow {
  double label;
  std::vector<Index> idx;
  std::vector<double> val;
};

Task infer_task(const std::vector<RawRow>& raw) {
  bool binary = true;
  bool integral = true;
  std::set<double> distinct;
  for (const auto& r : raw) {
    double y = r.label;
    if (y != -1.0 && y != 0.0 && y != 1.0) binary = false;
    if (y < 0.0 || y != std::floor(y)) integral = false;
    distinct.insert(y);
  }
  if (binary) return Task::kBinary;
  if (integral && distinct.size() > 2) return Task::kMulticlass;
  return Task::kRegression;
}

}  // namespace

Dataset parse_libsvm(std::istream& in, const LibsvmOptions& options) {
  std::vector<RawRow> raw;
  std::uint64_t max_index = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view rest(line);
    if (auto hash = rest.find('#'); hash != std::string_view::npos) {
      rest = rest.substr(0, hash);
    }
    auto next_token = [&rest]() -> std::string_view {
      std::size_t b = rest.find_first_not_of(" \t\r");
      if (b == std::string_view::npos) {
        rest = {};
        return {};
      }
      std::size_t e = rest.find_first_of(" \t\r", b);
      std::string_view tok = rest.substr(b, e == std::string_view::npos ? e : e - b);
      rest = e == std::string_view::npos ? std::string_view{} : rest.substr(e);
      return tok;
    };
    std::string_view tok = next_token();
    if (tok.empty()) continue;

    RawRow row;
    if (!parse_double(tok, row.label)) {
      throw ParseError("libsvm: bad label '" + std::string(tok) + "'", line_no);
    }
    std::uint64_t prev = 0;
    for (tok = next_token(); !tok.empty(); tok = next_token()) {
      auto colon = tok.find(':');
      std::uint64_t index = 0;
      double value = 0.0;
      if (colon == std::string_view::npos || !parse_index(tok.substr(0, colon), index) ||
          !parse_double(tok.substr(colon + 1), value)) {
        throw ParseError("libsvm: malformed feature '" + std::string(tok) + "'", line_no);
      }
      if (index == 0) throw ParseError("libsvm: feature indices are 1-based", line_no);
      if (index <= prev) {
        throw ParseError("libsvm: feature indices must be strictly ascending", line_no);
      }
      if (options.dim != 0 && index > options.dim) {
        throw ParseError("libsvm: feature index " + std::to_string(index) +
                             " exceeds declared dimension " + std::to_string(options.dim),
                         line_no);
      }
      prev = index;
      max_index = std::max(max_index, index);
      if (value == 0.0) continue;
      row.idx.push_back(static_cast<Index>(index - 1));
      row.val.push_back(value);
    }
    raw.push_back(std::move(row));
  }

  Dataset ds;
  ds.dim = options.dim != 0 ? options.dim : max_index;
  ds.task = options.task ? *options.task : infer_task(raw);
  ds.rows.reserve(raw.size());
  ds.labels.reserve(raw.size());
  for (auto& r : raw) {
    double y = r.label;
    if (ds.task == Task::kBinary) {
      if (y == -1.0 || y == 0.0) {
        y = 0.0;
      } else if (y == 1.0) {
        y = 1.0;
      } else {
        throw ParseError("libsvm: binary label must be -1, 0 or 1", 0);
      }
    }
    ds.rows.emplace_back(ds.dim, std::move(r.idx), std::move(r.val));
    ds.labels.push_back(y);
  }
  ds.validate();
  return ds;
}

Dataset parse_libsvm(const std::filesystem::path& path, const LibsvmOptions& options) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return parse_libsvm(in, options);
}

void write_libsvm(std::ostream& out, const Dataset& ds) {
  char buf[64];
  for (std::size_t r = 0; r < ds.size(); ++r) {
    std::snprintf(buf, sizeof buf, "%.17g", ds.labels[r]);
    out << buf;
    auto idx = ds.rows[r].indices();
    auto val = ds.rows[r].values();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      std::snprintf(buf, sizeof buf, " %u:%.17g", static_cast<unsigned>(idx[i] + 1), val[i]);
      out << buf;
    }
    out << '\n';
  }
}

}  // namespace fpslab

#pragma once

#include <cmath>
#include <cstddef>
#include <ostream>
#include <string>
#include <vector>

#include "csv.hpp"
#include "errors.hpp"

namespace vstab {

enum class IndexKind { ls_vsi, lti, cti, nli, dvsi, ld_vsi };

inline const char* to_string(IndexKind k) {
  switch (k) {
    case IndexKind::ls_vsi: return "ls_vsi";
    case IndexKind::lti: return "lti";
    case IndexKind::cti: return "cti";
    case IndexKind::nli: return "nli";
    case IndexKind::dvsi: return "dvsi";
    case IndexKind::ld_vsi: return "ld_vsi";
  }
  return "?";
}

struct IndexSeries {
  IndexKind kind = IndexKind::ls_vsi;
  std::vector<double> axis;
  std::vector<int> bus;
  std::vector<double> value;
  std::vector<char> carried;  // ld_vsi: value repeated because the denominator was flat

  std::size_t size() const { return axis.size(); }
  void push(double a, int b, double v, bool c = false) {
    axis.push_back(a);
    bus.push_back(b);
    value.push_back(v);
    carried.push_back(c ? 1 : 0);
  }
};

inline void write_index_header(std::ostream& os) { os << "axis,bus,kind,value\n"; }

inline void write_index_rows(std::ostream& os, const IndexSeries& s) {
  for (std::size_t i = 0; i < s.size(); ++i)
    os << csv::num(s.axis[i]) << ',' << s.bus[i] << ',' << to_string(s.kind) << ',' << csv::num(s.value[i]) << '\n';
}

struct FilterConfig {
  int window_samples = 10;
  double sample_period = 0.01;
  double epsilon_denominator = 1e-9;
};

// first input sample that carries an increment
inline std::size_t increment_offset(int window) { return static_cast<std::size_t>(2 * window - 1); }

// difference of two adjacent window means; output[j] belongs to input sample increment_offset(T) + j
template <class Series>
std::vector<double> filtered_increment(const Series& x, int window) {
  if (window < 1) throw DomainError("filter window must be at least 1");
  const std::size_t t = static_cast<std::size_t>(window);
  const std::size_t n = static_cast<std::size_t>(std::size(x));
  std::vector<double> out;
  if (n < 2 * t) return out;
  out.reserve(n - 2 * t + 1);
  const double w = static_cast<double>(t);
  for (std::size_t i = 2 * t - 1; i < n; ++i) {
    double recent = 0.0, older = 0.0;
    for (std::size_t k = 0; k < t; ++k) {
      older += x[i + 1 - 2 * t + k];
      recent += x[i + 1 - t + k];
    }
    out.push_back(recent / w - older / w);
  }
  return out;
}

}  // namespace vstab

#pragma once

#include <string>

#include <vstab/harness.hpp>

namespace fx {

inline std::string data(const std::string& f) { return std::string(VSTAB_DATA_DIR) + "/" + f; }

inline vstab::Case three_bus() { return vstab::parse_case(vstab::read_file(data("case3_zip.m"))); }
inline vstab::Case ieee30() { return vstab::parse_case(vstab::read_file(data("case_ieee30.m"))); }
inline vstab::Case ieee30_zip() {
  return vstab::parse_case(vstab::read_file(data("case_ieee30.m")) + "\n" + vstab::read_file(data("zip_ieee30_alpha90.m")));
}

// slack bus 1 feeding one load bus over a single line
inline std::string two_bus_text(double r, double x, double pd_mw, double qd_mvar, double base = 100.0,
                                const std::string& extra = {}) {
  return "function mpc = two_bus\nmpc.baseMVA = " + std::to_string(base) +
         ";\nmpc.bus = [\n 1 3 0 0 0 0 1 1 0 230 1 1.1 0.9;\n 2 1 " + std::to_string(pd_mw) + " " +
         std::to_string(qd_mvar) +
         " 0 0 1 1 0 230 1 1.1 0.9;\n];\nmpc.gen = [\n 1 0 0 9999 -9999 1 100 1;\n];\nmpc.branch = [\n 1 2 " +
         std::to_string(r) + " " + std::to_string(x) + " 0 0 0 0 0 0 1;\n];\n" + extra;
}

// three buses with an LTC between 2 (non-tap) and 3 (tap side)
inline std::string ltc_text(double tap) {
  return "function mpc = ltc3\nmpc.baseMVA = 100;\nmpc.bus = [\n 1 3 0 0 0 0 1 1 0 230 1 1.1 0.9;\n"
         " 2 1 20 5 0 0 1 1 0 230 1 1.1 0.9;\n 3 1 60 20 0 4 1 1 0 230 1 1.1 0.9;\n];\n"
         "mpc.gen = [\n 1 0 0 9999 -9999 1 100 1;\n];\nmpc.branch = [\n"
         " 1 2 0.01 0.06 0.03 0 0 0 0 0 1;\n"
         " 3 2 0.0 0.08 0 0 0 0 " + std::to_string(tap) + " 0 1;\n"
         " 1 3 0.02 0.09 0.02 0 0 0 0 0 1;\n];\n";
}

}  // namespace fx

#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "nwa/linalg.hpp"

namespace nwa::cli {

// Sample file: header row, comma separated, '.' decimals.
//   id   optional unit label
//   y    outcome, empty cell = nonrespondent
//   pi   first-order inclusion probability in (0, 1]
//   any other column is an auxiliary variable and must be complete.
struct Dataset {
  std::vector<std::string> ids;
  std::vector<std::string> aux_names;
  Matrix aux;
  std::vector<std::optional<double>> y;
  Vector pi;
};

// Throws SchemaError naming the 1-based data row.
Dataset parse_dataset(std::istream& in);

// Population file: header plus one row per population unit. Columns named
// id, y or pi are ignored; the rest are auxiliary values.
struct AuxTable {
  std::vector<std::string> names;
  Matrix values;
};
AuxTable parse_aux_table(std::istream& in);

// Totals file: header of auxiliary names and one data row of totals. An
// optional column N gives the population size.
struct Totals {
  std::vector<std::string> names;
  Vector values;
  std::optional<double> n_units;
};
Totals parse_totals(std::istream& in);

// Entry point of the command-line tool. Exit codes: 0 success, 2 usage error,
// 3 study failure rate above 1%, 1 any other error. Errors are reported as a
// single JSON line on `err` before anything is written to `out`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace nwa::cli

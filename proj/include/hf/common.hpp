#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace hf {

// Shape/dimension violations (mismatched operands, bad axes).
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Invalid argument values (probabilities, coefficients, off-simplex targets).
struct ValueError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Bad run configuration: unknown keys, toggle mismatches, missing splits.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed input files; messages carry file and line where known.
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite values encountered mid-run (aborts training).
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

// Shortest round-trip decimal form of a double, for deterministic text output.
std::string format_double(double v);

namespace threads {

// Caps internal parallelism. configure_from_env honors HARFORGE_THREADS.
void configure_from_env();
void set_count(int n);
int count();

}  // namespace threads

}  // namespace hf

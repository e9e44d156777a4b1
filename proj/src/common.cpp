#include "hf/common.hpp"

#include <charconv>
#include <cstdlib>
#include <system_error>
#include <thread>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace hf {

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  out += "]";
  return out;
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace threads {

namespace {
int g_threads = 0;  // 0 = library default
}

void set_count(int n) {
  if (n < 1) n = 1;
  g_threads = n;
#ifdef _OPENMP
  omp_set_num_threads(n);
#endif
}

void configure_from_env() {
  const char* env = std::getenv("HARFORGE_THREADS");
  if (!env || !*env) return;
  int n = 0;
  auto res = std::from_chars(env, env + std::string(env).size(), n);
  if (res.ec == std::errc() && n >= 1) set_count(n);
}

int count() {
  if (g_threads > 0) return g_threads;
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  unsigned hc = std::thread::hardware_concurrency();
  return hc ? static_cast<int>(hc) : 1;
#endif
}

}  // namespace threads

}  // namespace hf

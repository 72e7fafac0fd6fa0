#include "cteg/rng.hpp"

#include "cteg/errors.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace cteg {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

RngStream::RngStream(std::uint64_t seed) : seed_(seed), engine_(mix64(seed)) {}

std::uint64_t RngStream::next_u64() { return engine_(); }

double RngStream::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

std::uint64_t RngStream::below(std::uint64_t n) {
  if (n == 0) throw ContractError("RngStream::below: n must be positive");
  // Rejection keeps the result unbiased.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

double RngStream::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

Matrix RngStream::normal_matrix(Index rows, Index cols) {
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = normal();
  return m;
}

RngStream RngStream::split(std::uint64_t key) const { return RngStream(mix64(seed_ ^ mix64(key + 1))); }

std::string RngStream::state() const {
  std::ostringstream os;
  os.precision(17);
  os << seed_ << ' ' << (has_spare_ ? 1 : 0) << ' ' << std::hexfloat << spare_ << std::defaultfloat << ' '
     << engine_;
  return os.str();
}

void RngStream::set_state(const std::string& state) {
  std::istringstream is(state);
  int spare_flag = 0;
  std::string spare_text;
  is >> seed_ >> spare_flag >> spare_text >> engine_;
  if (!is) throw FormatError("RngStream: malformed state text");
  spare_ = std::strtod(spare_text.c_str(), nullptr);
  has_spare_ = spare_flag != 0;
}

}  // namespace cteg

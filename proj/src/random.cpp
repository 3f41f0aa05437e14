#include "demotune/random.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "demotune/error.hpp"

namespace demotune {

std::size_t Rng::index(std::size_t n) {
  if (n == 0) throw Error(ErrorKind::InvalidArgument, "Rng::index on empty range");
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t draw = engine_();
  while (draw >= limit) draw = engine_();
  return static_cast<std::size_t>(draw % bound);
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::UnbalancedBrace: return "UnbalancedBrace";
    case ErrorKind::UnknownSlot: return "UnknownSlot";
    case ErrorKind::MissingMask: return "MissingMask";
    case ErrorKind::MultipleMask: return "MultipleMask";
    case ErrorKind::OverLength: return "OverLength";
    case ErrorKind::UnknownLabel: return "UnknownLabel";
    case ErrorKind::NoMaskPosition: return "NoMaskPosition";
    case ErrorKind::DegenerateNorm: return "DegenerateNorm";
    case ErrorKind::EmptyClass: return "EmptyClass";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::InsufficientExamples: return "InsufficientExamples";
    case ErrorKind::EmptyTestSet: return "EmptyTestSet";
    case ErrorKind::DivergedLoss: return "DivergedLoss";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::CheckpointMismatch: return "CheckpointMismatch";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace demotune

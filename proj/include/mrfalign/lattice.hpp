#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "mrfalign/error.hpp"

namespace mrfalign {

// Alignment states. M matches template residue x with target residue y; It
// leaves template residue x unaligned; Is leaves target residue y unaligned.
enum class State : std::uint8_t { M = 0, It = 1, Is = 2 };
inline constexpr std::size_t kNumStates = 3;
inline constexpr std::array<State, kNumStates> kStates{State::M, State::It, State::Is};

constexpr std::size_t index(State s) { return static_cast<std::size_t>(s); }
constexpr std::size_t step_x(State s) { return s == State::Is ? 0 : 1; }
constexpr std::size_t step_y(State s) { return s == State::It ? 0 : 1; }
char state_char(State s);
State parse_state(char c);

// One alignment position: the lattice vertex reached after the move, so a
// match step at (x, y) pairs template residue x with target residue y (1-based).
struct AlignmentStep {
  std::size_t x = 0;
  std::size_t y = 0;
  State state = State::M;
  bool operator==(const AlignmentStep&) const = default;
};

// A monotone path from (0, 0) to (m, n). m is the template length, n the target length.
struct AlignmentPath {
  std::size_t m = 0;
  std::size_t n = 0;
  std::vector<AlignmentStep> steps;

  std::size_t length() const { return steps.size(); }
  std::size_t matches() const;
  bool operator==(const AlignmentPath&) const = default;
};

// Throws ArgumentError describing the first violation.
void validate_path(const AlignmentPath& path);
bool is_valid_path(const AlignmentPath& path);

// Builds a path from a state string such as "MMTS" written with one
// character per step ('M', 'T' for It, 'S' for Is).
AlignmentPath path_from_states(std::size_t m, std::size_t n, const std::string& states);
std::string path_states(const AlignmentPath& path);

inline constexpr std::size_t kMaxEnumeration = 7;

// Every valid path in a fixed order. Refuses m or n above kMaxEnumeration.
std::vector<AlignmentPath> enumerate_paths(std::size_t m, std::size_t n);

// Max-sum DP over the lattice. score(x, y, u, v) is the gain of entering vertex
// (x, y) in state v from state u at the predecessor vertex; the origin behaves
// as state M. Ties prefer the predecessor state in the order M, It, Is, and the
// final state in the same order.
template <class Score>
AlignmentPath viterbi(std::size_t m, std::size_t n, Score&& score) {
  if (m == 0 || n == 0) throw ArgumentError("viterbi: lattice dimensions must be positive");
  constexpr double kNone = -std::numeric_limits<double>::infinity();
  const std::size_t cells = (m + 1) * (n + 1);
  std::vector<double> best(cells * kNumStates, kNone);
  std::vector<std::uint8_t> from(cells * kNumStates, 0);
  auto at = [n](std::size_t x, std::size_t y, std::size_t s) { return (x * (n + 1) + y) * kNumStates + s; };
  best[at(0, 0, index(State::M))] = 0.0;
  for (std::size_t x = 0; x <= m; ++x) {
    for (std::size_t y = 0; y <= n; ++y) {
      if (x == 0 && y == 0) continue;
      for (State v : kStates) {
        if (x < step_x(v) || y < step_y(v)) continue;
        const std::size_t px = x - step_x(v), py = y - step_y(v);
        double top = kNone;
        std::uint8_t arg = 0;
        for (State u : kStates) {
          const double prev = best[at(px, py, index(u))];
          if (prev == kNone) continue;
          const double cand = prev + score(x, y, u, v);
          if (cand > top) {
            top = cand;
            arg = static_cast<std::uint8_t>(index(u));
          }
        }
        best[at(x, y, index(v))] = top;
        from[at(x, y, index(v))] = arg;
      }
    }
  }
  std::size_t state = 0;
  for (std::size_t s = 1; s < kNumStates; ++s) {
    if (best[at(m, n, s)] > best[at(m, n, state)]) state = s;
  }
  if (best[at(m, n, state)] == kNone) throw NumericalError("viterbi: no finite path score");
  AlignmentPath path{m, n, {}};
  std::size_t x = m, y = n;
  while (x > 0 || y > 0) {
    const auto v = static_cast<State>(state);
    path.steps.push_back({x, y, v});
    state = from[at(x, y, index(v))];
    x -= step_x(v);
    y -= step_y(v);
  }
  std::reverse(path.steps.begin(), path.steps.end());
  return path;
}

}  // namespace mrfalign

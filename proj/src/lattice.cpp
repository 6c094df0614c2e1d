#include "mrfalign/lattice.hpp"

#include <functional>

namespace mrfalign {

char state_char(State s) {
  switch (s) {
    case State::M: return 'M';
    case State::It: return 'T';
    case State::Is: return 'S';
  }
  return '?';
}

State parse_state(char c) {
  switch (c) {
    case 'M': return State::M;
    case 'T': return State::It;
    case 'S': return State::Is;
    default: throw FormatError(std::string("unknown alignment state '") + c + "'");
  }
}

std::size_t AlignmentPath::matches() const {
  std::size_t k = 0;
  for (const auto& s : steps) k += s.state == State::M;
  return k;
}

void validate_path(const AlignmentPath& path) {
  if (path.m == 0 || path.n == 0) throw ArgumentError("alignment path: lattice dimensions must be positive");
  std::size_t x = 0, y = 0;
  for (std::size_t k = 0; k < path.steps.size(); ++k) {
    const auto& s = path.steps[k];
    x += step_x(s.state);
    y += step_y(s.state);
    if (s.x != x || s.y != y) {
      throw ArgumentError("alignment path: step " + std::to_string(k + 1) + " at (" + std::to_string(s.x) + ", " +
                          std::to_string(s.y) + ") does not follow its predecessor");
    }
    if (x > path.m || y > path.n) throw ArgumentError("alignment path: step " + std::to_string(k + 1) + " leaves the lattice");
  }
  if (x != path.m || y != path.n) throw ArgumentError("alignment path: does not end at (m, n)");
}

bool is_valid_path(const AlignmentPath& path) {
  try {
    validate_path(path);
    return true;
  } catch (const ArgumentError&) {
    return false;
  }
}

AlignmentPath path_from_states(std::size_t m, std::size_t n, const std::string& states) {
  AlignmentPath path{m, n, {}};
  std::size_t x = 0, y = 0;
  for (char c : states) {
    const State s = parse_state(c);
    x += step_x(s);
    y += step_y(s);
    path.steps.push_back({x, y, s});
  }
  validate_path(path);
  return path;
}

std::string path_states(const AlignmentPath& path) {
  std::string out;
  out.reserve(path.steps.size());
  for (const auto& s : path.steps) out.push_back(state_char(s.state));
  return out;
}

std::vector<AlignmentPath> enumerate_paths(std::size_t m, std::size_t n) {
  if (m == 0 || n == 0) throw ArgumentError("enumerate_paths: lattice dimensions must be positive");
  if (m > kMaxEnumeration || n > kMaxEnumeration) {
    throw ArgumentError("enumerate_paths: lattice " + std::to_string(m) + "x" + std::to_string(n) +
                        " exceeds the enumeration guard");
  }
  std::vector<AlignmentPath> out;
  AlignmentPath cur{m, n, {}};
  std::function<void(std::size_t, std::size_t)> walk = [&](std::size_t x, std::size_t y) {
    if (x == m && y == n) {
      out.push_back(cur);
      return;
    }
    for (State s : kStates) {
      const std::size_t nx = x + step_x(s), ny = y + step_y(s);
      if (nx > m || ny > n) continue;
      cur.steps.push_back({nx, ny, s});
      walk(nx, ny);
      cur.steps.pop_back();
    }
  };
  walk(0, 0);
  return out;
}

}  // namespace mrfalign

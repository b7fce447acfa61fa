#include "dynmatch/estimation.hpp"
#include "dynmatch/model_io.hpp"

#include <algorithm>
#include <array>
#include <map>
#include <queue>
#include <string>

namespace dynmatch {

namespace {

using State = std::array<int, 3>;  // experience, recent technical years, recent general years

std::string state_label(const State& s) {
  return "e" + std::to_string(s[0]) + "t" + std::to_string(s[1]) + "g" + std::to_string(s[2]);
}

// Next state after a year in a job of the given kind (0 technical, 1 general).
// The oldest year of the other kind drops out once the window is full.
State advance(const State& s, int job, const EngineerParams& p) {
  if (s[0] >= p.max_experience) return {0, 0, 0};  // retirement, replaced by an entrant
  State n = s;
  n[0] += 1;
  const bool full = s[1] + s[2] >= p.window;
  const int own = job == 0 ? 1 : 2, other = job == 0 ? 2 : 1;
  n[own] = std::min(s[own] + 1, p.window);
  if (full) n[other] = std::max(s[other] - 1, 0);
  return n;
}

double technical_share_of(const State& s) {
  const int recent = s[1] + s[2];
  return recent > 0 ? static_cast<double>(s[1]) / recent : 0.5;
}

}  // namespace

BasisFile generate_engineer_spec(const EngineerParams& p) {
  if (p.max_experience < 1 || p.window < 1) throw Error(ErrorCode::Config, "experience and window bounds must be positive");
  if (!(p.technical_share > 0.0 && p.technical_share < 1.0))
    throw Error(ErrorCode::Config, "technical job share must lie in (0, 1)");
  if (!(p.beta > 0.0 && p.beta < 1.0) || !(p.scale > 0.0)) throw Error(ErrorCode::Config, "need 0 < beta < 1 and scale > 0");

  // states reachable from a fresh entrant
  std::map<State, int> index;
  std::vector<State> states;
  std::queue<State> todo;
  todo.push({0, 0, 0});
  index[{0, 0, 0}] = 0;
  states.push_back({0, 0, 0});
  while (!todo.empty()) {
    const State s = todo.front();
    todo.pop();
    for (int job = 0; job < 2; ++job) {
      const State n = advance(s, job, p);
      if (index.emplace(n, static_cast<int>(states.size())).second) {
        states.push_back(n);
        todo.push(n);
      }
    }
  }
  std::vector<int> order(states.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return states[a] < states[b]; });
  std::vector<State> sorted;
  std::vector<std::string> labels;
  for (int i : order) {
    sorted.push_back(states[i]);
    labels.push_back(state_label(states[i]));
  }
  index.clear();
  for (size_t i = 0; i < sorted.size(); ++i) index[sorted[i]] = static_cast<int>(i);

  BasisFile out;
  ModelSpec& spec = out.base;
  spec = empty_spec(labels, {"technical", "general"});
  spec.beta = p.beta;
  spec.shock = {ShockMode::Logit, p.scale};
  spec.allow_unmatched = false;
  spec.M = spec.N = 1.0;
  spec.fixed_n = Vec(2);
  spec.fixed_n << p.technical_share, 1.0 - p.technical_share;

  const int nx = spec.nx();
  Mat mismatch = Mat::Zero(nx + 1, 3), seniority = Mat::Zero(nx + 1, 3);
  for (int x = 0; x < nx; ++x) {
    const State& s = sorted[x];
    for (int job = 0; job < 2; ++job) {
      const double y = job;  // 1 = general
      spec.P(index.at(advance(s, job, p)), x + 1, job + 1) = 1.0;
      spec.Q(job, x + 1, job + 1) = 1.0;
      const double d = technical_share_of(s) - y;
      mismatch(x + 1, job + 1) = d * d;
      seniority(x + 1, job + 1) = static_cast<double>(s[0]) / p.max_experience * y;
    }
  }
  out.basis.names = {"occupation_mismatch", "experience_general"};
  out.basis.phi = {mismatch, seniority};
  out.basis.lambda = Vec(2);
  out.basis.lambda << p.a, p.b;
  spec = out.basis.apply(spec, out.basis.lambda);
  return out;
}

}  // namespace dynmatch

#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace mgrl {

enum class Algo {
  uvfa,
  her,
  delta_dqn,
  delta_td,
  delta_ac,
  deep_uvfa,
  deep_her,
  deep_delta_dqn,
};

inline const char* algo_name(Algo a) {
  switch (a) {
    case Algo::uvfa: return "uvfa";
    case Algo::her: return "her";
    case Algo::delta_dqn: return "delta_dqn";
    case Algo::delta_td: return "delta_td";
    case Algo::delta_ac: return "delta_ac";
    case Algo::deep_uvfa: return "deep_uvfa";
    case Algo::deep_her: return "deep_her";
    case Algo::deep_delta_dqn: return "deep_delta_dqn";
  }
  return "?";
}

inline Algo algo_from_name(const std::string& name) {
  for (Algo a : {Algo::uvfa, Algo::her, Algo::delta_dqn, Algo::delta_td,
                 Algo::delta_ac, Algo::deep_uvfa, Algo::deep_her,
                 Algo::deep_delta_dqn})
    if (name == algo_name(a)) return a;
  throw std::invalid_argument("unknown algo '" + name + "'");
}

inline bool algo_is_deep(Algo a) {
  return a == Algo::deep_uvfa || a == Algo::deep_her || a == Algo::deep_delta_dqn;
}

/// One logged observation of a training run.
struct MetricRow {
  long step = 0;
  long episode = 0;
  std::string metric;
  double value = 0.0;
  long seed = 0;
};

using MetricLog = std::vector<MetricRow>;

}  // namespace mgrl

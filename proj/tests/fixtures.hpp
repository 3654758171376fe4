#pragma once

#include <string>
#include <vector>

#include "nmg/model.hpp"

namespace nmg::test {

inline std::string config_path(const std::string& name) { return std::string(NMG_CONFIG_DIR) + "/" + name; }

// Table I parameters; DER 3 has half the droop gains and twice the rating.
inline std::vector<DerParams> table1_ders() {
  std::vector<DerParams> d(5);
  for (auto& p : d) p.q_rating = 5000.0;
  d[2].m = 5e-5;
  d[2].n = 1e-4;
  d[2].s_bar = 10000.0;
  d[2].q_rating = 10000.0;
  return d;
}

inline std::vector<std::pair<int, int>> ring5() { return {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 0}}; }

}  // namespace nmg::test

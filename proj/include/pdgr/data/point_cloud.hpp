#pragma once

#include <string>

#include "pdgr/agt/grid.hpp"

namespace pdgr {

struct PointCloud {
  Points coords;  // N x 3
  int label = 0;
  int domain_id = 0;
  std::string id;

  Eigen::Index size() const { return coords.rows(); }
};

}  // namespace pdgr

#pragma once

#include "oracles.hpp"

#include <metareg/model.hpp>

namespace testing_support {

inline metareg::Matrix to_eigen(const oracle::Mat &m) {
  metareg::Matrix out(static_cast<Eigen::Index>(m.size()),
                      static_cast<Eigen::Index>(m[0].size()));
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m[0].size(); ++j)
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = m[i][j];
  return out;
}

inline metareg::Vector to_eigen(const oracle::Vec &v) {
  metareg::Vector out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i)
    out[static_cast<Eigen::Index>(i)] = v[i];
  return out;
}

} // namespace testing_support

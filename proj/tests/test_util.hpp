#pragma once

#include <algorithm>

#include "dbrt/common.hpp"

namespace dbrt::testutil {

inline bool bits_equal(const Mat& a, const Mat& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::equal(a.data(), a.data() + a.size(), b.data());
}

inline bool bits_equal(const Vec& a, const Vec& b) {
  return a.size() == b.size() &&
         std::equal(a.data(), a.data() + a.size(), b.data());
}

inline bool refs_equal(std::vector<TensorRef> a, std::vector<TensorRef> b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i].size() != b[i].size()) return false;
    if (!std::equal(a[i].data, a[i].data + a[i].size(), b[i].data))
      return false;
  }
  return true;
}

}  // namespace dbrt::testutil

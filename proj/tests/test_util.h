#pragma once

#include <map>
#include <string>

#include "scmoe/nn.h"

namespace scmoe::testutil {

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("max_abs_diff: shape mismatch");
  double m = 0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

inline std::map<std::string, Tensor> param_map(const ParamList& params) {
  std::map<std::string, Tensor> out;
  for (const auto& p : params) out.emplace(p.name, p.tensor);
  return out;
}

// Copies src parameter values into dst for each (src_name, dst_name) pair.
inline void copy_params(const ParamList& src, const ParamList& dst,
                        const std::vector<std::pair<std::string, std::string>>& pairs) {
  auto s = param_map(src);
  auto d = param_map(dst);
  for (const auto& [from, to] : pairs) {
    if (!s.count(from)) throw std::invalid_argument("copy_params: no source param " + from);
    if (!d.count(to)) throw std::invalid_argument("copy_params: no dest param " + to);
    Tensor dst_tensor = d.at(to);
    dst_tensor.data() = s.at(from).data();
  }
}

inline Tensor find_param(const ParamList& params, const std::string& name) {
  for (const auto& p : params)
    if (p.name == name) return p.tensor;
  throw std::invalid_argument("find_param: no param named " + name);
}

}  // namespace scmoe::testutil

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "blora/error.hpp"
#include "blora/matrix.hpp"

namespace blora {

// Ordered collection of named parameter tensors. Iteration order is the
// registration order, which keeps optimizer traversal and checkpoint layout
// stable across runs.
class ParamStore {
 public:
  void add(const std::string& name, Matrix value) {
    if (values_.count(name)) throw UsageError("duplicate parameter: " + name);
    order_.push_back(name);
    values_.emplace(name, std::move(value));
  }

  bool has(const std::string& name) const { return values_.count(name) != 0; }

  Matrix& at(const std::string& name) {
    auto it = values_.find(name);
    if (it == values_.end()) throw UsageError("unknown parameter: " + name);
    return it->second;
  }

  const Matrix& at(const std::string& name) const {
    auto it = values_.find(name);
    if (it == values_.end()) throw UsageError("unknown parameter: " + name);
    return it->second;
  }

  const std::vector<std::string>& names() const { return order_; }

  long total_size() const {
    long n = 0;
    for (const auto& name : order_) n += static_cast<long>(values_.at(name).size());
    return n;
  }

 private:
  std::vector<std::string> order_;
  std::map<std::string, Matrix> values_;
};

}  // namespace blora

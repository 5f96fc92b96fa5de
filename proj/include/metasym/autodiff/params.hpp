#pragma once

#include <functional>
#include <map>
#include <string>

#include "metasym/autodiff/graph.hpp"
#include "metasym/autodiff/tensor.hpp"

namespace metasym::ad {

/// Named parameter tensors, iterated in name order so that reductions and
/// serialization are reproducible.
class ParamTable {
 public:
  using Map = std::map<std::string, Tensor>;

  void set(const std::string& name, Tensor value) { params_[name] = std::move(value); }
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  void erase(const std::string& name) { params_.erase(name); }

  std::size_t size() const { return params_.size(); }
  /// Total number of scalar entries.
  std::size_t count() const;

  const Map& entries() const { return params_; }
  Map::const_iterator begin() const { return params_.begin(); }
  Map::const_iterator end() const { return params_.end(); }

  /// Entries whose name starts with `prefix`, with the prefix kept.
  ParamTable with_prefix(const std::string& prefix) const;
  /// Inserts (overwrites) every entry of `other`.
  void merge(const ParamTable& other);

  friend bool operator==(const ParamTable&, const ParamTable&) = default;

 private:
  Map params_;
};

/// Parameters recorded as graph leaves.
class BoundParams {
 public:
  BoundParams(Graph& graph, const ParamTable& table, const std::function<bool(const std::string&)>& trainable);

  Var operator[](const std::string& name) const;
  const std::map<std::string, Var>& vars() const { return vars_; }

  /// Gradients for every trainable parameter.
  ParamTable gradients(const Gradients& grads) const;

 private:
  std::map<std::string, Var> vars_;
  std::map<std::string, bool> trainable_;
};

inline bool all_trainable(const std::string&) { return true; }

/// In-place `dst += s * src` over matching entries.
void axpy(ParamTable& dst, double s, const ParamTable& src);

}  // namespace metasym::ad

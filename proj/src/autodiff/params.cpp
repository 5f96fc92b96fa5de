#include "metasym/autodiff/params.hpp"

#include "metasym/error.hpp"

namespace metasym::ad {

const Tensor& ParamTable::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw Error("unknown parameter '" + name + "'");
  return it->second;
}

Tensor& ParamTable::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw Error("unknown parameter '" + name + "'");
  return it->second;
}

std::size_t ParamTable::count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += t.size();
  return n;
}

ParamTable ParamTable::with_prefix(const std::string& prefix) const {
  ParamTable out;
  for (const auto& [name, t] : params_) {
    if (name.rfind(prefix, 0) == 0) out.set(name, t);
  }
  return out;
}

void ParamTable::merge(const ParamTable& other) {
  for (const auto& [name, t] : other) params_[name] = t;
}

BoundParams::BoundParams(Graph& graph, const ParamTable& table,
                         const std::function<bool(const std::string&)>& trainable) {
  for (const auto& [name, t] : table) {
    const bool train = trainable(name);
    vars_.emplace(name, graph.input(t, train));
    trainable_.emplace(name, train);
  }
}

Var BoundParams::operator[](const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw Error("parameter '" + name + "' not bound");
  return it->second;
}

ParamTable BoundParams::gradients(const Gradients& grads) const {
  ParamTable out;
  for (const auto& [name, v] : vars_) {
    if (trainable_.at(name)) out.set(name, grads[v]);
  }
  return out;
}

void axpy(ParamTable& dst, double s, const ParamTable& src) {
  for (const auto& [name, t] : src) {
    if (!dst.contains(name)) {
      Tensor z = Tensor::zeros_like(t);
      dst.set(name, z);
    }
    Tensor& d = dst.get(name);
    if (!d.same_shape(t)) throw ShapeError("axpy: shape mismatch for '" + name + "'");
    for (std::size_t i = 0; i < t.size(); ++i) d[i] += s * t[i];
  }
}

}  // namespace metasym::ad

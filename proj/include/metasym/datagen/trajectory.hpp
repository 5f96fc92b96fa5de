#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "metasym/autodiff/tensor.hpp"
#include "metasym/sympnet/sympnet.hpp"

namespace metasym::datagen {

/// Time-ordered phase points of one system with its controls and metadata.
/// q and p are T x d row-major, u is T x m.
struct Trajectory {
  std::string system_id;
  std::string generator;
  std::size_t d = 0;
  std::size_t m = 0;
  double dt = 0.0;
  std::uint64_t seed = 0;
  nlohmann::json params = nlohmann::json::object();

  std::vector<double> q;
  std::vector<double> p;
  std::vector<double> u;

  std::size_t steps() const { return d == 0 ? 0 : q.size() / d; }
  void push(const std::vector<double>& qt, const std::vector<double>& pt, const std::vector<double>& ut = {});

  symp::PhasePoint point(std::size_t t) const;
  std::vector<double> state(std::size_t t) const;  // [q; p]
  std::vector<double> control(std::size_t t) const;

  /// Rows [begin, end) as N x d tensors.
  ad::Tensor q_rows(std::size_t begin, std::size_t end) const;
  ad::Tensor p_rows(std::size_t begin, std::size_t end) const;

  /// Throws if widths disagree with d/m or a value is not finite.
  void validate() const;

  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

}  // namespace metasym::datagen

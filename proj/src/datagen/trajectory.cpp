#include "metasym/datagen/trajectory.hpp"

#include <cmath>

#include "metasym/error.hpp"

namespace metasym::datagen {
namespace {

ad::Tensor rows_of(const std::vector<double>& v, std::size_t width, std::size_t begin, std::size_t end) {
  if (begin > end || end * width > v.size()) throw ShapeError("trajectory row range out of bounds");
  return ad::Tensor::matrix(end - begin, width,
                            {v.begin() + static_cast<std::ptrdiff_t>(begin * width),
                             v.begin() + static_cast<std::ptrdiff_t>(end * width)});
}

}  // namespace

void Trajectory::push(const std::vector<double>& qt, const std::vector<double>& pt, const std::vector<double>& ut) {
  if (qt.size() != d || pt.size() != d || ut.size() != m) throw ShapeError("trajectory record width mismatch");
  q.insert(q.end(), qt.begin(), qt.end());
  p.insert(p.end(), pt.begin(), pt.end());
  u.insert(u.end(), ut.begin(), ut.end());
}

symp::PhasePoint Trajectory::point(std::size_t t) const {
  const auto b = static_cast<std::ptrdiff_t>(t * d);
  const auto e = static_cast<std::ptrdiff_t>((t + 1) * d);
  return {{q.begin() + b, q.begin() + e}, {p.begin() + b, p.begin() + e}, dt};
}

std::vector<double> Trajectory::state(std::size_t t) const { return point(t).flat(); }

std::vector<double> Trajectory::control(std::size_t t) const {
  const auto b = static_cast<std::ptrdiff_t>(t * m);
  return {u.begin() + b, u.begin() + b + static_cast<std::ptrdiff_t>(m)};
}

ad::Tensor Trajectory::q_rows(std::size_t begin, std::size_t end) const { return rows_of(q, d, begin, end); }
ad::Tensor Trajectory::p_rows(std::size_t begin, std::size_t end) const { return rows_of(p, d, begin, end); }

void Trajectory::validate() const {
  if (d == 0) throw ShapeError("trajectory '" + system_id + "' has d = 0");
  if (q.size() % d != 0 || p.size() != q.size()) throw ShapeError("trajectory '" + system_id + "': q/p widths disagree with d");
  if (u.size() != steps() * m) throw ShapeError("trajectory '" + system_id + "': control width disagrees with m");
  if (!std::isfinite(dt)) throw NonFiniteError("trajectory '" + system_id + "': non-finite dt");
  for (const auto* v : {&q, &p, &u})
    for (double x : *v)
      if (!std::isfinite(x)) throw NonFiniteError("trajectory '" + system_id + "' contains NaN/Inf");
}

}  // namespace metasym::datagen

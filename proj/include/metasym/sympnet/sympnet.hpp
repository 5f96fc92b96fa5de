#pragma once

#include <cstddef>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "metasym/autodiff/graph.hpp"
#include "metasym/autodiff/params.hpp"

namespace metasym::symp {

/// Canonical coordinates with the step they are advanced by.
struct PhasePoint {
  std::vector<double> q;
  std::vector<double> p;
  double dt = 0.0;

  std::size_t dim() const { return q.size(); }
  std::vector<double> flat() const;  // [q; p]
  static PhasePoint from_flat(const std::vector<double>& x, double dt);
};

enum class Kind { up, low };
enum class FnKind { linear, activation };
enum class Nonlinearity { tanh, sigmoid };

struct LayerSpec {
  Kind kind = Kind::up;
  FnKind fn = FnKind::linear;
  Nonlinearity act = Nonlinearity::tanh;
};

std::string to_string(Kind k);
std::string to_string(FnKind k);
std::string to_string(Nonlinearity k);
Kind parse_kind(const std::string& s);
FnKind parse_fn_kind(const std::string& s);
Nonlinearity parse_nonlinearity(const std::string& s);

/// Stack of shear sub-layers sharing one parameter table between the forward
/// and inverse maps.
///
/// Layer k owns `L<k>.weight` (d x d, only the upper triangle is read) and
/// `L<k>.bias` (1 x d) when linear, or `L<k>.scale` (1 x d) when an activation.
/// The linear map applied is S = T + T^T with T = weight * mask, where the mask
/// is 1 above the diagonal and 1/2 on it, so S is symmetric bit for bit.
struct SympStack {
  std::size_t d = 0;
  std::vector<LayerSpec> layers;
  ad::ParamTable params;

  std::size_t depth() const { return layers.size(); }
  /// Materialized symmetric matrix of a linear layer.
  Eigen::MatrixXd symmetric_weight(std::size_t layer) const;
};

std::string param_name(std::size_t layer, const char* field);

/// Linear-up, linear-low, activation-up, activation-low, repeated `blocks` times.
std::vector<LayerSpec> la_pattern(std::size_t blocks, Nonlinearity act = Nonlinearity::tanh);

/// Weights ~ N(0, 0.01/d), biases 0, activation scales 0.1.
SympStack make_stack(std::size_t d, const std::vector<LayerSpec>& layers, std::mt19937_64& rng);
/// All parameters zero: the identity map.
SympStack make_zero_stack(std::size_t d, const std::vector<LayerSpec>& layers);

/// Upper-triangle-with-halved-diagonal mask used by every linear layer.
ad::Tensor triangle_mask(std::size_t d);

PhasePoint shear_forward(const PhasePoint& x, const SympStack& stack, std::size_t layer);
PhasePoint shear_inverse(const PhasePoint& x, const SympStack& stack, std::size_t layer);
PhasePoint stack_forward(const PhasePoint& x, const SympStack& stack);
PhasePoint stack_inverse(const PhasePoint& x, const SympStack& stack);

/// Chained block-triangular Jacobian of the forward map, 2d x 2d.
Eigen::MatrixXd analytic_jacobian(const PhasePoint& x, const SympStack& stack);

/// Omega = [[0, I], [-I, 0]].
Eigen::MatrixXd canonical_form(std::size_t d);
/// ||J^T Omega J - Omega||_2.
double symplectic_defect(const Eigen::MatrixXd& jacobian);

/// Multiplicative DropConnect masks, sampled once and shared by the forward
/// and inverse pass of one graph so the pair stays exactly inverse.
using DropMasks = std::map<std::string, ad::Tensor>;
DropMasks sample_dropconnect(const SympStack& stack, double rate, std::mt19937_64& rng);

/// Batched map on rows: Q, P are N x d. `dt` may be negative (inverse pass
/// through the reversed layer order is selected by `inverse`).
std::pair<ad::Var, ad::Var> forward_graph(ad::Var q, ad::Var p, double dt, const SympStack& stack,
                                          const ad::BoundParams& params, bool inverse = false,
                                          const DropMasks* masks = nullptr);

}  // namespace metasym::symp

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "metasym/autodiff/params.hpp"
#include "metasym/datagen/trajectory.hpp"
#include "metasym/rollout/rollout.hpp"
#include "metasym/sympnet/sympnet.hpp"

namespace metasym::verify {

using rollout::State;
using Map = std::function<State(const State&)>;
using JacobianFn = std::function<Eigen::MatrixXd(const State&)>;

enum class JacobianMode { analytic, finite_diff };

struct SymplecticReport {
  double defect = 0.0;   // max over points of ||J^T Omega J - Omega||_2
  double det_dev = 0.0;  // max over points of |det J - 1|
  std::size_t points = 0;
};

/// Central differences with step h.
Eigen::MatrixXd fd_jacobian(const Map& map, const State& x, double h = 1e-6);

SymplecticReport symplectic_report(const Map& map, const std::vector<State>& points, JacobianMode mode,
                                   const JacobianFn& analytic = {});
SymplecticReport encoder_report(const symp::SympStack& stack, const std::vector<State>& points, double dt,
                                JacobianMode mode);

/// One step of encoder plus decoder from a single-state window:
/// x -> Phi(x) + F(x, Phi(x)). Controls are held at `u`.
Map composed_map(const rollout::Model& model, double dt, const State& u = {});

/// Decoder correction F as a function of the latent z_c with the decoder
/// input fixed at x.
Map correction_of_latent(const rollout::Model& model, const State& x, double dt, const State& u = {});

struct BoundEstimate {
  double rho_hat = 0.0;  // max ||dF/dz_c||_2 over samples
  double defect = 0.0;   // max composed-map defect over samples
  double c_hat = 0.0;    // max defect / rho over samples with rho > 0
  std::vector<double> rho;
  std::vector<double> defects;
};

BoundEstimate perturbation_bound(const rollout::Model& model, const std::vector<State>& samples, double dt,
                                 const State& u = {});

struct ScalingPoint {
  double scale = 0.0;
  double rho_hat = 0.0;
  double defect = 0.0;
};

/// Scales the decoder output layer (head.W2, head.b2) by each factor, which
/// scales F exactly, and re-measures the bound.
std::vector<ScalingPoint> scaling_sweep(const rollout::Model& model, const std::vector<State>& samples, double dt,
                                        const std::vector<double>& scales, const State& u = {});

struct EnergyDrift {
  double max_relative = 0.0;  // max |E(t) - E(0)| / |E(0)|
  double slope = 0.0;         // least-squares slope of (E(t) - E(0)) / |E(0)| per step
};

EnergyDrift energy_drift(const std::vector<double>& energy);

/// 0.5 |sum_i (q_i p_{i+1} - q_{i+1} p_i)| over the closed polygon.
double shoelace_area(const std::vector<double>& q, const std::vector<double>& p);

struct MlpConfig {
  std::size_t hidden = 32;
  double lr = 1e-3;
  double weight_decay = 0.0;
  std::size_t epochs = 100;
  std::uint64_t seed = 0;
};

/// Two tanh hidden layers predicting a rate: x_{t+1} = x_t + dt f(x_t, dt, u_t).
/// The output layer starts at zero, so the untrained model is persistence.
struct MlpModel {
  std::size_t d = 0;
  std::size_t m = 0;
  std::size_t hidden = 0;
  ad::ParamTable params;
};

std::size_t mlp_param_count(std::size_t d, std::size_t m, std::size_t hidden);
/// Width whose parameter count is closest to `budget`.
std::size_t mlp_hidden_for_budget(std::size_t d, std::size_t m, std::size_t budget);
MlpModel make_mlp(std::size_t d, std::size_t m, const MlpConfig& config);

struct MlpResult {
  MlpModel model;
  std::vector<double> losses;  // mean one-step MSE per epoch
};

/// Full-batch AdamW step per trajectory, trajectories shuffled each epoch.
MlpResult train_mlp(const std::vector<const datagen::Trajectory*>& data, const MlpConfig& config);
double mlp_mse(const MlpModel& model, const datagen::Trajectory& traj);
State mlp_step(const MlpModel& model, const State& x, double dt, const State& u = {});
/// A diverged rollout is padded with +inf states to the full horizon.
std::vector<State> mlp_rollout(const MlpModel& model, const State& start, const std::vector<State>& controls, double dt,
                               std::size_t horizon);

}  // namespace metasym::verify

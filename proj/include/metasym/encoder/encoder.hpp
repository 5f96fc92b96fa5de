#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "json.hpp"
#include "metasym/autodiff/params.hpp"
#include "metasym/datagen/trajectory.hpp"
#include "metasym/sympnet/sympnet.hpp"

namespace metasym::encoder {

/// Contiguous partition of the T-1 transitions of a trajectory. Transition t
/// maps state t to state t+1.
struct AdaptMetaSplit {
  std::size_t adapt_begin = 0;
  std::size_t adapt_end = 0;
  std::size_t meta_begin = 0;
  std::size_t meta_end = 0;

  std::size_t adapt_size() const { return adapt_end - adapt_begin; }
  std::size_t meta_size() const { return meta_end - meta_begin; }
};

/// First `fraction` of the transitions adapt, the rest meta. Both non-empty.
AdaptMetaSplit make_split(std::size_t steps, double fraction = 0.3);

struct EncoderConfig {
  std::size_t blocks = 3;
  symp::Nonlinearity activation = symp::Nonlinearity::tanh;
  double outer_lr = 1e-3;
  double weight_decay = 1e-2;
  double inner_lr = 3e-3;
  std::size_t inner_steps = 3;
  std::size_t batch_size = 5;
  std::size_t epochs = 100;
  std::size_t patience = 110;
  double adapt_fraction = 0.3;
  double train_fraction = 0.8;
  double dropconnect = 0.1;
  double divergence_threshold = 1e6;
  std::uint64_t seed = 0;
};

struct EncoderModel {
  symp::SympStack stack;
};

EncoderModel make_encoder(std::size_t d, const EncoderConfig& config);

/// Mean squared one-step forward error over transitions [begin, end).
double forward_mse(const symp::SympStack& stack, const datagen::Trajectory& traj, std::size_t begin, std::size_t end);

/// Combined forward/inverse consistency loss over transitions [begin, end):
/// sum over rows of ||Phi(x_t) - Phi^{-1}(x_{t+1}) - (x_{t+1} - x_t)||^2,
/// divided by the number of rows.
double meta_loss(const symp::SympStack& stack, const datagen::Trajectory& traj, std::size_t begin, std::size_t end);

struct InnerResult {
  ad::ParamTable params;
  std::vector<double> losses;  // loss before each step, then the final loss
};

/// K Adam steps on the forward MSE of the adaptation transitions, starting
/// from a copy of `stack.params`. The input stack is not modified.
InnerResult inner_adapt(const symp::SympStack& stack, const datagen::Trajectory& traj, const AdaptMetaSplit& split,
                        std::size_t steps, double lr, double dropconnect = 0.0, std::mt19937_64* rng = nullptr);

/// Value and parameter gradient of `meta_loss` over the meta transitions.
std::pair<double, ad::ParamTable> meta_loss_gradient(const symp::SympStack& stack, const datagen::Trajectory& traj,
                                                     const AdaptMetaSplit& split, double dropconnect = 0.0,
                                                     std::mt19937_64* rng = nullptr);

struct EpochRecord {
  std::size_t epoch = 0;
  double inner_loss = 0.0;  // mean final inner loss across training systems
  double meta_loss = 0.0;   // mean meta loss across training systems
  double val_loss = 0.0;    // mean adapted meta loss on held-out systems
  double val_mse = 0.0;     // mean adapted one-step forward MSE on held-out systems
};

struct TrainResult {
  EncoderModel model;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  bool early_stopped = false;
};

using Telemetry = std::function<void(const nlohmann::json&)>;

/// Meta-learning loop: per mini-batch, adapt a detached copy per system, take
/// the meta-loss gradient at the adapted parameters, average over the batch
/// and apply it to the global parameters. The best validation epoch is kept.
TrainResult train_encoder(const std::vector<datagen::Trajectory>& data, const EncoderConfig& config,
                          const Telemetry& telemetry = {});

/// Largest symplectic defect of the analytic Jacobian over sample states.
double max_defect(const symp::SympStack& stack, const std::vector<symp::PhasePoint>& points);

/// Copy of `stack` after `steps` inner steps on the trajectory's adaptation
/// split; the stack itself when `steps` is 0.
symp::SympStack adapted_encoder(const symp::SympStack& stack, const datagen::Trajectory& traj, std::size_t steps,
                                double lr, double adapt_fraction = 0.3);

/// Encoder prediction Phi(x) for every state of a trajectory, T x 2d.
std::vector<std::vector<double>> encode_states(const symp::SympStack& stack, const datagen::Trajectory& traj);

}  // namespace metasym::encoder

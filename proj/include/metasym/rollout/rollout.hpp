#pragma once

#include <cstddef>
#include <deque>
#include <string>
#include <vector>

#include "metasym/autodiff/params.hpp"
#include "metasym/datagen/trajectory.hpp"
#include "metasym/decoder/decoder.hpp"
#include "metasym/sympnet/sympnet.hpp"

namespace metasym::rollout {

using State = std::vector<double>;  // [q, p], length 2d

/// Encoder plus adapted decoder. Without a decoder the next state is Phi(x_t).
struct Model {
  symp::SympStack encoder;
  decoder::DecoderModel decoder;
  ad::ParamTable zeta;
  bool use_decoder = true;

  std::size_t context() const { return use_decoder ? decoder.context : 1; }
};

/// Last c observed or predicted states with their encoder latents.
struct RolloutState {
  std::deque<State> window;
  std::deque<State> latents;
  std::size_t step = 0;
  std::size_t horizon = 0;
};

struct RolloutResult {
  std::vector<State> states;  // predictions, at most `horizon` of them
  bool halted = false;        // a non-finite prediction stopped the rollout
  std::string message;
};

/// Autoregressive prediction of `horizon` states following `seed_window`
/// (the c most recent ground-truth states). `controls[i]` is the input at
/// timeline index i, where index 0 is the first seed state; it needs
/// c + horizon - 1 entries when the model has controls and may be empty
/// otherwise.
RolloutResult rollout(const Model& model, const std::vector<State>& seed_window, const std::vector<State>& controls,
                      double dt, std::size_t horizon);

/// Seeds from states [start, start + c) of `truth` and reads only its
/// controls beyond that; later states are never consulted.
RolloutResult rollout_from(const Model& model, const datagen::Trajectory& truth, std::size_t start,
                           std::size_t horizon);

/// Ground-truth states [begin, begin + count).
std::vector<State> segment(const datagen::Trajectory& traj, std::size_t begin, std::size_t count);

/// Holds the last seed state for the whole horizon.
std::vector<State> persistence(const State& last, std::size_t horizon);

struct RolloutMetrics {
  double mse = 0.0;                   // mean over steps and coordinates
  std::vector<double> per_coordinate;  // mean over steps
  std::vector<double> per_step;        // mean over coordinates
};

RolloutMetrics evaluate_rollout(const std::vector<State>& predicted, const std::vector<State>& truth);

}  // namespace metasym::rollout

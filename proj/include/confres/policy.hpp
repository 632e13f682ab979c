#pragma once

// Shared deep-Q policy over the grid environment: feedforward Q-network,
// replay buffer with target network, epsilon-greedy training loop, greedy
// rollout, and a brute-force joint-search oracle for small instances.

#include <Eigen/Dense>

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "confres/grid_env.hpp"

namespace confres {

class NotResolved : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class StateSpaceTooLarge : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class Unreachable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Feedforward network: flattened observation -> hidden layers (ReLU) -> 7
/// action values.
struct QNetwork {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;

  int input_dim() const { return static_cast<int>(weights.front().cols()); }
  int num_layers() const { return static_cast<int>(weights.size()); }

  static QNetwork make(int input_dim, const std::vector<int>& hidden,
                       std::mt19937_64& rng) {
    QNetwork net;
    std::vector<int> dims;
    dims.push_back(input_dim);
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(kNumGridActions);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (size_t l = 0; l + 1 < dims.size(); ++l) {
      const double scale = std::sqrt(2.0 / dims[l]);
      Eigen::MatrixXd w(dims[l + 1], dims[l]);
      for (int r = 0; r < w.rows(); ++r)
        for (int c = 0; c < w.cols(); ++c) w(r, c) = scale * gauss(rng);
      net.weights.push_back(std::move(w));
      net.biases.push_back(Eigen::VectorXd::Zero(dims[l + 1]));
    }
    return net;
  }
};

/// Deterministic forward pass; ReLU on hidden layers, linear output.
inline Eigen::Matrix<double, 7, 1> q_forward(const QNetwork& net,
                                             const Observation& obs) {
  if (static_cast<int>(obs.data.size()) != net.input_dim())
    throw std::invalid_argument("q_forward: observation shape mismatch");
  Eigen::VectorXd h = obs.data;
  for (int l = 0; l < net.num_layers(); ++l) {
    h = (net.weights[l] * h + net.biases[l]).eval();
    if (l + 1 < net.num_layers()) h = h.cwiseMax(0.0);
  }
  return h;
}

/// Epsilon-greedy action selection; ties break to the lowest action index.
inline GridAction select_action(const QNetwork& net, const Observation& obs,
                                double epsilon, std::mt19937_64& rng) {
  if (epsilon > 0.0) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    if (u01(rng) < epsilon) {
      std::uniform_int_distribution<int> pick(0, kNumGridActions - 1);
      return static_cast<GridAction>(pick(rng));
    }
  }
  const auto q = q_forward(net, obs);
  int best = 0;
  for (int a = 1; a < kNumGridActions; ++a)
    if (q(a) > q(best)) best = a;
  return static_cast<GridAction>(best);
}

struct Transition {
  Eigen::VectorXd obs;
  int action = 0;
  double reward = 0.0;
  Eigen::VectorXd next_obs;
  bool terminal = false;
};

/// Fixed-capacity ring buffer, oldest-first eviction.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(size_t capacity) : capacity_(capacity) {}

  void push(Transition t) {
    if (buf_.size() == capacity_) buf_.pop_front();
    buf_.push_back(std::move(t));
  }
  size_t size() const { return buf_.size(); }
  const Transition& at(size_t i) const { return buf_[i]; }

 private:
  size_t capacity_;
  std::deque<Transition> buf_;
};

struct TrainConfig {
  double gamma = 0.95;
  double learning_rate = 5e-4;
  size_t replay_capacity = 50000;
  int batch_size = 64;
  int target_sync_period = 500;  // gradient steps between target copies
  double epsilon_start = 1.0;
  double epsilon_end = 0.05;
  int epsilon_decay_steps = 20000;
  int episodes = 2000;
  int max_steps_per_episode = 50;
  std::uint64_t seed = 0;
  std::vector<int> hidden = {256, 128};
  int learn_start = 500;  // buffer size before gradient steps begin
};

struct TrainLogRow {
  int episode = 0;
  double episode_return = 0.0;
  double epsilon = 0.0;
  double loss = 0.0;  // most recent minibatch loss
};

namespace detail {

/// Adam state for one parameter tensor.
struct AdamState {
  Eigen::MatrixXd m, v;
  Eigen::VectorXd mb, vb;
};

class Adam {
 public:
  Adam(const QNetwork& net, double lr) : lr_(lr) {
    for (int l = 0; l < net.num_layers(); ++l) {
      AdamState s;
      s.m = Eigen::MatrixXd::Zero(net.weights[l].rows(), net.weights[l].cols());
      s.v = s.m;
      s.mb = Eigen::VectorXd::Zero(net.biases[l].size());
      s.vb = s.mb;
      states_.push_back(std::move(s));
    }
  }

  void update(QNetwork& net, const std::vector<Eigen::MatrixXd>& gw,
              const std::vector<Eigen::VectorXd>& gb) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (size_t l = 0; l < states_.size(); ++l) {
      auto& s = states_[l];
      s.m = beta1_ * s.m + (1 - beta1_) * gw[l];
      s.v = beta2_ * s.v + (1 - beta2_) * gw[l].cwiseProduct(gw[l]);
      net.weights[l] -=
          (lr_ / bc1) *
          (s.m.array() / ((s.v.array() / bc2).sqrt() + eps_)).matrix();
      s.mb = beta1_ * s.mb + (1 - beta1_) * gb[l];
      s.vb = beta2_ * s.vb + (1 - beta2_) * gb[l].cwiseProduct(gb[l]);
      net.biases[l] -=
          (lr_ / bc1) *
          (s.mb.array() / ((s.vb.array() / bc2).sqrt() + eps_)).matrix();
    }
  }

 private:
  double lr_;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  std::vector<AdamState> states_;
  long t_ = 0;
};

/// One minibatch gradient step on the squared TD error. Returns the loss.
inline double dqn_gradient_step(QNetwork& net, const QNetwork& target,
                                const ReplayBuffer& buf, int batch_size,
                                double gamma, Adam& opt,
                                std::mt19937_64& rng) {
  std::uniform_int_distribution<size_t> pick(0, buf.size() - 1);
  std::vector<Eigen::MatrixXd> gw;
  std::vector<Eigen::VectorXd> gb;
  for (int l = 0; l < net.num_layers(); ++l) {
    gw.emplace_back(
        Eigen::MatrixXd::Zero(net.weights[l].rows(), net.weights[l].cols()));
    gb.emplace_back(Eigen::VectorXd::Zero(net.biases[l].size()));
  }
  double loss = 0.0;
  const int layers = net.num_layers();
  for (int b = 0; b < batch_size; ++b) {
    const Transition& tr = buf.at(pick(rng));
    // Forward with cached activations.
    std::vector<Eigen::VectorXd> acts;  // post-activation, acts[0] = input
    acts.push_back(tr.obs);
    for (int l = 0; l < layers; ++l) {
      Eigen::VectorXd z = net.weights[l] * acts.back() + net.biases[l];
      if (l + 1 < layers) z = z.cwiseMax(0.0);
      acts.push_back(std::move(z));
    }
    double y = tr.reward;
    if (!tr.terminal) {
      Eigen::VectorXd h = tr.next_obs;
      for (int l = 0; l < layers; ++l) {
        h = (target.weights[l] * h + target.biases[l]).eval();
        if (l + 1 < layers) h = h.cwiseMax(0.0);
      }
      y += gamma * h.maxCoeff();
    }
    const double td = acts.back()(tr.action) - y;
    loss += td * td;
    // Backward.
    Eigen::VectorXd delta = Eigen::VectorXd::Zero(kNumGridActions);
    delta(tr.action) = 2.0 * td / batch_size;
    for (int l = layers - 1; l >= 0; --l) {
      gw[l] += delta * acts[l].transpose();
      gb[l] += delta;
      if (l > 0) {
        delta = (net.weights[l].transpose() * delta).eval();
        delta = delta.cwiseProduct(
            (acts[l].array() > 0.0).cast<double>().matrix());
      }
    }
  }
  loss /= batch_size;
  if (!std::isfinite(loss))
    throw TrainingDiverged("dqn: non-finite minibatch loss");
  opt.update(net, gw, gb);
  return loss;
}

}  // namespace detail

/// Standard deep-Q loop with one shared network and one shared replay buffer
/// across all agents; every active vehicle acts on its own observation each
/// step. Deterministic for a fixed seed.
inline QNetwork train(
    const std::function<GridWorld(std::mt19937_64&)>& env_factory,
    const TrainConfig& config, std::vector<TrainLogRow>* log = nullptr) {
  std::mt19937_64 rng(config.seed);
  GridWorld probe = env_factory(rng);
  const int input_dim = probe.observe_dim();

  QNetwork net = QNetwork::make(input_dim, config.hidden, rng);
  QNetwork target = net;
  ReplayBuffer buffer(config.replay_capacity);
  detail::Adam opt(net, config.learning_rate);

  long env_steps = 0;
  long grad_steps = 0;
  double loss = 0.0;
  for (int ep = 0; ep < config.episodes; ++ep) {
    GridWorld world = env_factory(rng);
    const int n = world.num_vehicles();
    double ep_return = 0.0;
    double eps = config.epsilon_start;
    for (int k = 0; k < config.max_steps_per_episode && !world.all_arrived();
         ++k) {
      const double frac =
          std::min(1.0, static_cast<double>(env_steps) /
                            std::max(1, config.epsilon_decay_steps));
      eps = config.epsilon_start +
            frac * (config.epsilon_end - config.epsilon_start);
      std::vector<GridAction> actions(n, GridAction::S);
      std::vector<Observation> obs(n);
      for (int i = 0; i < n; ++i) {
        if (!world.active(i)) continue;
        obs[i] = world.observe(i);
        actions[i] = select_action(net, obs[i], eps, rng);
      }
      std::vector<bool> was_active(n);
      for (int i = 0; i < n; ++i) was_active[i] = world.active(i);
      const StepResult res = world.step(actions);
      for (int i = 0; i < n; ++i) {
        if (!was_active[i]) continue;
        Transition tr;
        tr.obs = obs[i].data;
        tr.action = static_cast<int>(actions[i]);
        tr.reward = res.rewards[i];
        tr.terminal = res.arrived[i];
        if (!tr.terminal) tr.next_obs = world.observe(i).data;
        buffer.push(std::move(tr));
        ep_return += res.rewards[i];
      }
      ++env_steps;
      if (static_cast<int>(buffer.size()) >= config.learn_start) {
        loss = detail::dqn_gradient_step(net, target, buffer,
                                         config.batch_size, config.gamma, opt,
                                         rng);
        ++grad_steps;
        if (grad_steps % config.target_sync_period == 0) target = net;
      }
    }
    if (log) log->push_back({ep, ep_return, eps, loss});
  }
  return net;
}

struct Rollout {
  /// poses[i] = pose sequence of vehicle i from step 0 until its arrival
  /// (inclusive); the last pose equals the destination pair when resolved.
  std::vector<std::vector<GridVehicle>> poses;
  std::vector<std::vector<GridAction>> actions;
  std::vector<int> arrival_step;  // number of grid actions taken by vehicle i
};

/// Deterministic greedy (epsilon = 0) joint rollout until all vehicles arrive.
inline Rollout greedy_rollout(GridWorld world, const QNetwork& net,
                              int max_steps) {
  if (max_steps <= 0) throw std::invalid_argument("max_steps must be > 0");
  const int n = world.num_vehicles();
  Rollout out;
  out.poses.resize(n);
  out.actions.resize(n);
  out.arrival_step.assign(n, 0);
  std::mt19937_64 dummy(0);  // unused at epsilon = 0
  for (int i = 0; i < n; ++i) out.poses[i].push_back(world.vehicle(i));
  for (int k = 0; k < max_steps && !world.all_arrived(); ++k) {
    std::vector<GridAction> actions(n, GridAction::S);
    std::vector<bool> was_active(n);
    for (int i = 0; i < n; ++i) {
      was_active[i] = world.active(i);
      if (world.active(i))
        actions[i] = select_action(net, world.observe(i), 0.0, dummy);
    }
    world.step(actions);
    for (int i = 0; i < n; ++i) {
      if (!was_active[i]) continue;
      out.poses[i].push_back(world.vehicle(i));
      out.actions[i].push_back(actions[i]);
      out.arrival_step[i] = k + 1;
    }
  }
  if (!world.all_arrived())
    throw NotResolved("greedy_rollout: vehicles outstanding at max_steps");
  return out;
}

/// Breadth-first search over joint poses under the exact step semantics;
/// returns the minimum number of joint steps for all vehicles to arrive.
inline int bfs_oracle(const GridWorld& world, int max_depth) {
  const int n = world.num_vehicles();
  const double poses_per_vehicle =
      static_cast<double>(world.width()) * world.height() * 4 + 1;
  if (std::pow(poses_per_vehicle, n) > 1e7)
    throw StateSpaceTooLarge("bfs_oracle: joint state space exceeds guard");

  const auto encode = [&](const std::vector<GridVehicle>& poses,
                          const std::vector<bool>& active) {
    std::string key;
    key.reserve(n * 4 + n);
    for (int i = 0; i < n; ++i) {
      if (!active[i]) {
        key.append(4, '\xff');
      } else {
        key.push_back(static_cast<char>(poses[i].front.col));
        key.push_back(static_cast<char>(poses[i].front.row));
        key.push_back(static_cast<char>(poses[i].back.col));
        key.push_back(static_cast<char>(poses[i].back.row));
      }
    }
    return key;
  };

  struct Node {
    std::vector<GridVehicle> poses;
    std::vector<bool> active;
    int depth;
  };
  std::vector<GridVehicle> start;
  std::vector<bool> active0;
  for (int i = 0; i < n; ++i) {
    start.push_back(world.vehicle(i));
    active0.push_back(world.active(i));
  }
  std::deque<Node> frontier{{start, active0, 0}};
  std::unordered_set<std::string> seen{encode(start, active0)};

  const long num_joint_actions =
      static_cast<long>(std::pow(kNumGridActions, n));
  while (!frontier.empty()) {
    Node node = std::move(frontier.front());
    frontier.pop_front();
    bool all = true;
    for (bool a : node.active) all = all && !a;
    if (all) return node.depth;
    if (node.depth >= max_depth) continue;
    for (long code = 0; code < num_joint_actions; ++code) {
      long rem = code;
      std::vector<GridAction> actions(n);
      for (int i = 0; i < n; ++i) {
        actions[i] = static_cast<GridAction>(rem % kNumGridActions);
        rem /= kNumGridActions;
      }
      JointTransition tr =
          grid_transition(world, node.poses, node.active, actions);
      const std::string key = encode(tr.poses, tr.active);
      if (seen.insert(key).second)
        frontier.push_back({std::move(tr.poses), std::move(tr.active),
                            node.depth + 1});
    }
  }
  throw Unreachable("bfs_oracle: no joint plan within max_depth");
}

}  // namespace confres

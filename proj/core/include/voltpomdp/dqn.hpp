#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "voltpomdp/environment.hpp"
#include "voltpomdp/metrics.hpp"
#include "voltpomdp/random.hpp"

namespace voltpomdp {

// Fully connected network: tanh hidden layers, linear output. Parameters are
// one flat vector; layer l stores W_l (out x in, column-major) then b_l.
class Mlp {
public:
    explicit Mlp(std::vector<int> layer_sizes);

    const std::vector<int>& layers() const noexcept { return layers_; }
    int input_size() const noexcept { return layers_.front(); }
    int output_size() const noexcept { return layers_.back(); }
    std::size_t n_params() const noexcept { return n_params_; }

    Eigen::VectorXd forward(const Eigen::VectorXd& params, const Eigen::VectorXd& x) const;
    // Column per sample: x is (input x B), result is (output x B).
    Eigen::MatrixXd forward_batch(const Eigen::VectorXd& params, const Eigen::MatrixXd& x) const;
    // Q(x_i, a_i) for every column i, skipping the other output units.
    Eigen::VectorXd forward_selected(const Eigen::VectorXd& params, const Eigen::MatrixXd& x,
                                     const std::vector<int>& actions) const;

    // Mean squared error (1/B) sum (y_i - Q(x_i, a_i))^2 and its gradient.
    double mse_gradient(const Eigen::VectorXd& params, const Eigen::MatrixXd& x, const std::vector<int>& actions,
                        const Eigen::VectorXd& targets, Eigen::VectorXd& gradient) const;

    // Glorot-uniform weights, zero biases.
    Eigen::VectorXd init_params(Rng& rng) const;

private:
    struct Offsets {
        std::size_t w;
        std::size_t b;
    };
    void check(const Eigen::VectorXd& params, Eigen::Index input_rows) const;

    std::vector<int> layers_;
    std::vector<Offsets> offsets_;
    std::size_t n_params_ = 0;
};

struct Transition {
    Eigen::VectorXd state;
    int action = 0;
    double reward = 0.0;
    Eigen::VectorXd next_state;
    bool done = false;
};

struct Batch {
    Eigen::MatrixXd states;       // input x B
    Eigen::MatrixXd next_states;  // input x B
    std::vector<int> actions;
    Eigen::VectorXd rewards;
    std::vector<bool> done;

    std::size_t size() const noexcept { return actions.size(); }
    static Batch from(const std::vector<Transition>& transitions);
};

// Fixed-capacity ring buffer with uniform sampling (with replacement).
class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity);

    void push(Transition t);
    std::size_t size() const noexcept { return data_.size(); }
    std::size_t capacity() const noexcept { return capacity_; }
    const Transition& operator[](std::size_t i) const { return data_.at(i); }

    std::vector<std::size_t> sample_indices(std::size_t n, Rng& rng) const;
    Batch sample(std::size_t n, Rng& rng) const;

private:
    std::size_t capacity_;
    std::size_t next_ = 0;
    std::vector<Transition> data_;
};

// r if done, otherwise r + gamma * Q_theta(s', argmax_a Q_theta'(s', a)).
double td_target(const Mlp& net, const Transition& t, const Eigen::VectorXd& theta,
                 const Eigen::VectorXd& theta_target, double gamma);
Eigen::VectorXd td_targets(const Mlp& net, const Batch& batch, const Eigen::VectorXd& theta,
                           const Eigen::VectorXd& theta_target, double gamma);

// One SGD step on the mean squared TD error, then theta' <- tau theta + (1 - tau) theta'.
// Returns the loss before the step; throws TrainingDiverged on a non-finite loss.
double dqn_update(const Mlp& net, const Batch& batch, Eigen::VectorXd& theta, Eigen::VectorXd& theta_target,
                  double lr, double tau, double gamma);

// LL = -sum (y_i - Q_w(s_i, a_i))^2 / (2 sigma_ll^2), additive constants dropped.
double log_likelihood(const Mlp& net, const Eigen::VectorXd& w, const Batch& batch, const Eigen::VectorXd& targets,
                      double sigma_ll);
// PL = -||w||^2 / (2 sigma_pl^2).
double log_prior(const Eigen::VectorXd& w, double sigma_pl);

struct MhOptions {
    double sigma_prop = 0.05;
    double sigma_ll = 10.0;
    double sigma_pl = 1.0;
    // Accept iff r >= U(0,1) instead of r >= log U(0,1).
    bool linear_accept = false;
};

// Current point of the Metropolis-Hastings chain with its cached log posterior.
struct MhChain {
    Eigen::VectorXd w;
    double log_post = 0.0;
};

MhChain start_chain(const Mlp& net, const Eigen::VectorXd& w, const Batch& batch, const Eigen::VectorXd& targets,
                    const MhOptions& opts);

struct MhStepResult {
    bool accepted = false;
    double log_ratio = 0.0;  // r = min(0, delta LL + delta PL) <= 0
    double tau = 0.0;
};

// Random-walk proposal w_p = w + N(0, sigma_prop^2 I) and tau_p = |N(0, sigma_prop)|
// clamped to (0, 1]. On acceptance w <- w_p, theta <- w and
// theta' <- tau_p theta + (1 - tau_p) theta'.
MhStepResult mh_step(const Mlp& net, MhChain& chain, Eigen::VectorXd& theta, Eigen::VectorXd& theta_target,
                     const Batch& batch, const Eigen::VectorXd& targets, const MhOptions& opts, Rng& rng);

// Uniform action with probability epsilon, otherwise argmax (ties to the lowest index).
int epsilon_greedy(const Eigen::VectorXd& q, double epsilon, Rng& rng);

enum class DqnAlgo { dqn, bdqn };
DqnAlgo parse_dqn_algo(std::string_view name);
std::string_view to_string(DqnAlgo algo) noexcept;

struct DqnConfig {
    DqnAlgo algo = DqnAlgo::dqn;
    std::vector<int> hidden{64, 64};
    double gamma = 0.99;
    double lr = 1e-3;
    double tau = 0.01;
    int batch_size = 32;
    int buffer_capacity = 10000;
    int update_frequency = 100;   // environment steps between learning phases
    int updates_per_phase = 1;    // update steps per learning phase
    int sample_length = 50000;    // MH proposals per update step (bdqn)
    MhOptions mh;
    double epsilon_start = 1.0;
    double epsilon_end = 0.05;
    double epsilon_decay_fraction = 0.3;
    int episodes = 600;
    double goal = 200.0;
    bool stop_at_goal = true;
    bool record_wall_time = false;

    void validate() const;
};

struct DqnEpisode {
    int episode = 0;
    double score = 0.0;
    double rolling_avg_50 = kMissing;
    double epsilon = 0.0;
    double accept_rate = kMissing;
    double wall_ms = 0.0;
};

struct DqnResult {
    std::vector<DqnEpisode> episodes;
    Eigen::VectorXd theta;
    Eigen::VectorXd theta_target;
    std::vector<int> layers;
    long episodes_to_goal = -1;  // 1-based episode count, -1 when never reached

    // episode, score, rolling_avg_50, epsilon, accept_rate, wall_ms
    MetricsTable table() const;
};

// Observed level of each monitored bus scaled to [0, 1].
Eigen::VectorXd state_features(const DiscreteState& observation, const Discretization& disc);

double epsilon_at(const DqnConfig& cfg, int episode);

DqnResult train_dqn(VoltageControlEnv& env, const DqnConfig& cfg, std::uint64_t seed);

// Raw little-endian doubles plus a JSON sidecar with the architecture.
void save_weights(const std::filesystem::path& path, const Eigen::VectorXd& params, const std::vector<int>& layers);
Eigen::VectorXd load_weights(const std::filesystem::path& path, std::vector<int>* layers = nullptr);

}  // namespace voltpomdp

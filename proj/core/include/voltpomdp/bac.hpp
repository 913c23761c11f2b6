#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "voltpomdp/environment.hpp"
#include "voltpomdp/metrics.hpp"
#include "voltpomdp/random.hpp"

namespace voltpomdp {

// Gaussian radial features over voltage-level centers. With several monitored
// buses the per-bus vectors are concatenated (dimension n_buses * L).
struct StateKernelConfig {
    std::vector<double> centers;  // p.u., strictly increasing
    double variance = 1e-4;       // p.u.^2
    int n_buses = 1;

    std::size_t n_features() const noexcept { return centers.size() * static_cast<std::size_t>(n_buses); }
    void validate() const;

    // Level midpoints as centers; variance <= 0 selects the squared level width.
    static StateKernelConfig from_discretization(const Discretization& disc, double variance = 0.0);
};

Eigen::VectorXd rbf_features(std::span<const double> voltages, const StateKernelConfig& cfg);

// Softmax over logits phi(x) . theta_a, theta being |A| blocks of length dim(phi).
Eigen::VectorXd policy_probs(const Eigen::VectorXd& phi, const Eigen::VectorXd& theta, std::size_t n_actions);

// grad_theta log mu(a | x): block b holds (delta_ab - mu_b) * phi(x).
Eigen::VectorXd step_score(const Eigen::VectorXd& phi, std::size_t action, const Eigen::VectorXd& theta,
                           std::size_t n_actions);

// A visited state-action pair with its per-step Fisher score.
struct SaPoint {
    Eigen::VectorXd phi;
    std::size_t action = 0;
    Eigen::VectorXd score;
};

struct BacEpisode {
    std::vector<SaPoint> points;
    std::vector<double> rewards;  // rewards[t] follows points[t]; the episode ends after the last one
};

// Sum of per-step scores over a trajectory.
Eigen::VectorXd fisher_score(const BacEpisode& episode);

// u_i^T (G + lambda I)^{-1} u_j with lambda = 1e-6 * trace(G) / dim (1e-6 when G = 0).
// Throws NumericalError when the factorization fails.
double fisher_kernel(const Eigen::VectorXd& u_i, const Eigen::VectorXd& u_j, const Eigen::MatrixXd& g);

// Sample Fisher information G = (1/m) sum u u^T, kept as its factors
// V = [u_1 ... u_m] / sqrt(m).
// With the thin SVD V = Y S P^T, (G + lambda I)^{-1} = Y (S^2 + lambda)^{-1} Y^T
// + (I - Y Y^T) / lambda, so G itself is never formed or inverted.
class FisherInfo {
public:
    explicit FisherInfo(std::size_t dim);

    void add(const Eigen::VectorXd& u);
    std::size_t dim() const noexcept { return dim_; }
    std::size_t count() const noexcept { return scores_.size(); }
    double trace() const noexcept;
    double lambda() const;

    // Dense G (without the regularizer).
    Eigen::MatrixXd matrix() const;
    double kernel(const Eigen::VectorXd& u_i, const Eigen::VectorXd& u_j) const;
    Eigen::MatrixXd gram(const std::vector<Eigen::VectorXd>& us) const;
    // Columns e_i with e_i^T e_j = k_F(u_i, u_j).
    Eigen::MatrixXd embed(const std::vector<Eigen::VectorXd>& us) const;

private:
    void factorize() const;

    std::size_t dim_;
    double sum_sq_ = 0.0;
    std::vector<Eigen::VectorXd> scores_;
    mutable bool dirty_ = true;
    mutable Eigen::MatrixXd y_;
    mutable Eigen::VectorXd weights_;  // 1 / (s_k^2 + lambda)
};

// Columns psi_i with psi_i^T psi_j = k((x, a), (x', a')) = phi(x)^T phi(x') + k_F(u, u').
Eigen::MatrixXd bac_embedding(const std::vector<SaPoint>& points, const FisherInfo& fisher);
Eigen::MatrixXd bac_gram(const std::vector<SaPoint>& points, const FisherInfo& fisher);

// Kernel between two points given by index into an external point store.
using IndexKernel = std::function<double(std::size_t, std::size_t)>;

struct GptdConfig {
    double gamma = 0.99;
    double noise_var = 1.0;
    double nu = 0.01;  // dictionary admission threshold on the linear-independence residual (floored at 1e-8 * k(z, z))
};

// Online GP temporal differences under r_t = Q(z_t) - gamma Q(z_{t+1}) + n_t,
// n_t ~ N(0, noise_var), with Q(z_T) = 0 after the last step of an episode.
// Points whose kernel residual against the dictionary is at most nu are
// represented by their projection onto it; every observation is then an exact
// rank-1 conditioning step, so with all points admitted (or exact repeats)
// the state equals the batch GP posterior.
class Gptd {
public:
    Gptd(IndexKernel kernel, GptdConfig cfg);

    void add_episode(std::span<const std::size_t> points, std::span<const double> rewards);

    const std::vector<std::size_t>& dictionary() const noexcept { return dict_; }
    const Eigen::VectorXd& alpha() const noexcept { return alpha_; }
    const Eigen::MatrixXd& c() const noexcept { return c_; }
    const Eigen::MatrixXd& gram() const noexcept { return k_; }

    double mean(std::size_t z) const;
    double covariance(std::size_t z1, std::size_t z2) const;

private:
    Eigen::VectorXd kernel_column(std::size_t z) const;
    // Dictionary coordinates of z, admitting it when it is new enough.
    Eigen::VectorXd coordinates(std::size_t z);
    void condition(const Eigen::VectorXd& h, double y);

    IndexKernel kernel_;
    GptdConfig cfg_;
    std::vector<std::size_t> dict_;
    Eigen::MatrixXd k_;
    Eigen::MatrixXd chol_;  // lower Cholesky factor of k_
    Eigen::VectorXd alpha_;
    Eigen::MatrixXd c_;
};

struct GradientPosterior {
    Eigen::VectorXd mean;
    Eigen::MatrixXd covariance;
};

// mean = U alpha, covariance = G - U C U^T; U has one score column per dictionary point.
GradientPosterior gradient_posterior(const Eigen::MatrixXd& u, const Eigen::VectorXd& alpha, const Eigen::MatrixXd& c,
                                     const Eigen::MatrixXd& g);

// Posterior mean of the policy gradient from a batch of episodes (Fisher
// information accumulated over every step, fresh GPTD critic).
Eigen::VectorXd bac_gradient(const std::vector<BacEpisode>& episodes, std::size_t n_actions, const GptdConfig& cfg);

struct BacConfig {
    int n_updates = 200;
    int episodes_per_update = 10;
    int eval_every = 10;
    int eval_episodes = 10;
    double beta = 0.0025;
    double gamma = 0.99;
    double kernel_variance = 0.0;  // <= 0: squared level width
    double noise_var = 1.0;
    double nu = 0.01;
    bool record_wall_time = false;

    void validate() const;
};

struct BacEval {
    int update_index = 0;
    int eval_index = 0;
    double mse_vs_1pu = 0.0;
    double avg_episode_len = 0.0;
    double avg_episodic_reward = 0.0;
    double wall_ms = 0.0;
};

struct BacResult {
    std::vector<BacEval> evaluations;
    Eigen::VectorXd theta;
    StateKernelConfig kernel;
    std::size_t n_actions = 0;

    // update_index, eval_index, mse_vs_1pu, avg_episode_len, avg_episodic_reward, wall_ms
    MetricsTable table() const;
};

// Observed voltage of each monitored bus: midpoint of the observed level.
std::vector<double> observed_voltages(const DiscreteState& observation, const Discretization& disc);

std::size_t sample_action(const Eigen::VectorXd& probs, Rng& rng);

// Evaluations run before updates 0, eval_every, ... and once after the last update,
// on a copy of the environment with its own episode stream. They do not feed learning.
BacResult bac_train(VoltageControlEnv& env, const BacConfig& cfg, std::uint64_t seed);

// Raw little-endian theta plus a JSON sidecar (L, |A|, centers, sigma^2, n_buses).
void save_policy(const std::filesystem::path& path, const Eigen::VectorXd& theta, const StateKernelConfig& kernel,
                 std::size_t n_actions);
Eigen::VectorXd load_policy(const std::filesystem::path& path, StateKernelConfig* kernel = nullptr,
                            std::size_t* n_actions = nullptr);

}  // namespace voltpomdp

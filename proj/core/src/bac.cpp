#include "voltpomdp/bac.hpp"

#include <bit>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "voltpomdp/errors.hpp"

namespace voltpomdp {

namespace {

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
    auto p = path;
    p += ".json";
    return p;
}

Eigen::VectorXd padded(const Eigen::VectorXd& v, Eigen::Index n) {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
    out.head(v.size()) = v;
    return out;
}

}  // namespace

void StateKernelConfig::validate() const {
    if (centers.size() < 2) throw InvalidArgument("at least two kernel centers are required");
    for (std::size_t i = 1; i < centers.size(); ++i) {
        if (!(centers[i] > centers[i - 1])) throw InvalidArgument("kernel centers must be strictly increasing");
    }
    if (!(variance > 0.0)) throw InvalidArgument("kernel variance must be positive");
    if (n_buses < 1) throw InvalidArgument("n_buses must be positive");
}

StateKernelConfig StateKernelConfig::from_discretization(const Discretization& disc, double variance) {
    StateKernelConfig cfg;
    for (int l = 0; l < disc.n_levels; ++l) cfg.centers.push_back(disc.level_midpoint(l));
    cfg.variance = variance > 0.0 ? variance : disc.level_width() * disc.level_width();
    cfg.n_buses = static_cast<int>(disc.n_monitored());
    return cfg;
}

Eigen::VectorXd rbf_features(std::span<const double> voltages, const StateKernelConfig& cfg) {
    if (voltages.size() != static_cast<std::size_t>(cfg.n_buses)) throw ShapeError("one voltage per bus required");
    const auto l = cfg.centers.size();
    Eigen::VectorXd phi(static_cast<Eigen::Index>(cfg.n_features()));
    for (std::size_t b = 0; b < voltages.size(); ++b) {
        for (std::size_t k = 0; k < l; ++k) {
            const double d = voltages[b] - cfg.centers[k];
            phi(static_cast<Eigen::Index>(b * l + k)) = std::exp(-d * d / (2.0 * cfg.variance));
        }
    }
    return phi;
}

Eigen::VectorXd policy_probs(const Eigen::VectorXd& phi, const Eigen::VectorXd& theta, std::size_t n_actions) {
    const auto d = phi.size();
    if (n_actions == 0 || theta.size() != d * static_cast<Eigen::Index>(n_actions)) {
        throw ShapeError("theta must hold one block per action");
    }
    const Eigen::Map<const Eigen::MatrixXd> blocks(theta.data(), d, static_cast<Eigen::Index>(n_actions));
    Eigen::VectorXd logits = blocks.transpose() * phi;
    const Eigen::VectorXd e = (logits.array() - logits.maxCoeff()).exp();
    return e / e.sum();
}

Eigen::VectorXd step_score(const Eigen::VectorXd& phi, std::size_t action, const Eigen::VectorXd& theta,
                           std::size_t n_actions) {
    if (action >= n_actions) throw InvalidArgument("action index out of range");
    Eigen::VectorXd coef = -policy_probs(phi, theta, n_actions);
    coef(static_cast<Eigen::Index>(action)) += 1.0;
    Eigen::VectorXd u(theta.size());
    Eigen::Map<Eigen::MatrixXd>(u.data(), phi.size(), static_cast<Eigen::Index>(n_actions)) = phi * coef.transpose();
    return u;
}

Eigen::VectorXd fisher_score(const BacEpisode& episode) {
    if (episode.points.empty()) throw InvalidArgument("empty trajectory");
    Eigen::VectorXd u = Eigen::VectorXd::Zero(episode.points.front().score.size());
    for (const auto& p : episode.points) u += p.score;
    return u;
}

double fisher_kernel(const Eigen::VectorXd& u_i, const Eigen::VectorXd& u_j, const Eigen::MatrixXd& g) {
    const auto n = g.rows();
    if (g.cols() != n || u_i.size() != n || u_j.size() != n) throw ShapeError("fisher kernel dimension mismatch");
    const double tr = g.trace();
    const double lambda = tr > 0.0 ? 1e-6 * tr / static_cast<double>(n) : 1e-6;
    Eigen::MatrixXd reg = g;
    reg.diagonal().array() += lambda;
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(reg);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) throw NumericalError("Fisher information factorization failed");
    const Eigen::VectorXd x = ldlt.solve(u_j);
    if (!x.allFinite()) throw NumericalError("Fisher information solve failed");
    return u_i.dot(x);
}

FisherInfo::FisherInfo(std::size_t dim) : dim_(dim) {
    if (dim == 0) throw InvalidArgument("Fisher information needs a positive dimension");
}

void FisherInfo::add(const Eigen::VectorXd& u) {
    if (static_cast<std::size_t>(u.size()) != dim_) throw ShapeError("score has wrong dimension");
    if (!u.allFinite()) throw NumericalError("non-finite Fisher score");
    scores_.push_back(u);
    sum_sq_ += u.squaredNorm();
    dirty_ = true;
}

double FisherInfo::trace() const noexcept {
    return scores_.empty() ? 0.0 : sum_sq_ / static_cast<double>(scores_.size());
}

double FisherInfo::lambda() const {
    const double tr = trace();
    return tr > 0.0 ? 1e-6 * tr / static_cast<double>(dim_) : 1e-6;
}

Eigen::MatrixXd FisherInfo::matrix() const {
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(dim_), static_cast<Eigen::Index>(dim_));
    if (scores_.empty()) return g;
    const double w = 1.0 / static_cast<double>(scores_.size());
    for (const auto& u : scores_) g.selfadjointView<Eigen::Lower>().rankUpdate(u, w);
    return g.selfadjointView<Eigen::Lower>();
}

void FisherInfo::factorize() const {
    if (!dirty_) return;
    const auto m = static_cast<Eigen::Index>(scores_.size());
    if (m == 0) {
        y_.resize(static_cast<Eigen::Index>(dim_), 0);
        weights_.resize(0);
        dirty_ = false;
        return;
    }
    Eigen::MatrixXd v(static_cast<Eigen::Index>(dim_), m);
    const double scale = 1.0 / std::sqrt(static_cast<double>(m));
    for (Eigen::Index k = 0; k < m; ++k) v.col(k) = scale * scores_[static_cast<std::size_t>(k)];
    const Eigen::BDCSVD<Eigen::MatrixXd> svd(v, Eigen::ComputeThinU);
    y_ = svd.matrixU();
    weights_ = 1.0 / (svd.singularValues().array().square() + lambda());
    if (!y_.allFinite()) throw NumericalError("Fisher information decomposition failed");
    dirty_ = false;
}

double FisherInfo::kernel(const Eigen::VectorXd& u_i, const Eigen::VectorXd& u_j) const {
    return gram({u_i, u_j})(0, 1);
}

Eigen::MatrixXd FisherInfo::embed(const std::vector<Eigen::VectorXd>& us) const {
    factorize();
    const auto n = static_cast<Eigen::Index>(us.size());
    Eigen::MatrixXd u(static_cast<Eigen::Index>(dim_), n);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (static_cast<std::size_t>(us[static_cast<std::size_t>(i)].size()) != dim_) {
            throw ShapeError("score has wrong dimension");
        }
        u.col(i) = us[static_cast<std::size_t>(i)];
    }
    const Eigen::MatrixXd proj = y_.transpose() * u;
    Eigen::MatrixXd e(proj.rows() + u.rows(), n);
    e.topRows(proj.rows()) = weights_.cwiseSqrt().asDiagonal() * proj;
    e.bottomRows(u.rows()) = (u - y_ * proj) / std::sqrt(lambda());
    return e;
}

Eigen::MatrixXd FisherInfo::gram(const std::vector<Eigen::VectorXd>& us) const {
    const auto e = embed(us);
    return e.transpose() * e;
}

Eigen::MatrixXd bac_embedding(const std::vector<SaPoint>& points, const FisherInfo& fisher) {
    std::vector<Eigen::VectorXd> scores;
    scores.reserve(points.size());
    for (const auto& p : points) scores.push_back(p.score);
    const auto e = fisher.embed(scores);
    const auto n = static_cast<Eigen::Index>(points.size());
    const Eigen::Index d = n > 0 ? points.front().phi.size() : 0;
    Eigen::MatrixXd psi(d + e.rows(), n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& phi = points[static_cast<std::size_t>(i)].phi;
        if (phi.size() != d) throw ShapeError("state features differ in size");
        psi.col(i).head(d) = phi;
    }
    psi.bottomRows(e.rows()) = e;
    if (!psi.allFinite()) throw NumericalError("non-finite kernel entries");
    return psi;
}

Eigen::MatrixXd bac_gram(const std::vector<SaPoint>& points, const FisherInfo& fisher) {
    const auto psi = bac_embedding(points, fisher);
    return psi.transpose() * psi;
}

Gptd::Gptd(IndexKernel kernel, GptdConfig cfg) : kernel_(std::move(kernel)), cfg_(cfg) {
    if (!(cfg_.noise_var > 0.0)) throw InvalidArgument("noise variance must be positive");
    if (!(cfg_.nu >= 0.0)) throw InvalidArgument("nu must be non-negative");
    if (!(cfg_.gamma >= 0.0 && cfg_.gamma <= 1.0)) throw InvalidArgument("gamma must lie in [0, 1]");
}

Eigen::VectorXd Gptd::kernel_column(std::size_t z) const {
    Eigen::VectorXd k(static_cast<Eigen::Index>(dict_.size()));
    for (std::size_t i = 0; i < dict_.size(); ++i) k(static_cast<Eigen::Index>(i)) = kernel_(dict_[i], z);
    if (!k.allFinite()) throw NumericalError("non-finite kernel entries");
    return k;
}

Eigen::VectorXd Gptd::coordinates(std::size_t z) {
    const auto kz = kernel_column(z);
    const double kzz = kernel_(z, z);
    if (!std::isfinite(kzz)) throw NumericalError("non-finite kernel entries");
    // K = L L^T; l = L^-1 k_z gives delta = k(z, z) - |l|^2 and a = L^-T l = K^-1 k_z.
    const auto n = static_cast<Eigen::Index>(dict_.size());
    Eigen::VectorXd l = kz;
    if (n > 0) chol_.triangularView<Eigen::Lower>().solveInPlace(l);
    const double delta = kzz - l.squaredNorm();
    // delta below ~1e-8 * k(z, z) is rounding noise, not novelty.
    if (!(delta > cfg_.nu) || !(delta > 1e-8 * kzz)) {
        if (n > 0) chol_.triangularView<Eigen::Lower>().transpose().solveInPlace(l);
        return l;
    }

    dict_.push_back(z);
    k_.conservativeResize(n + 1, n + 1);
    k_.col(n).head(n) = kz;
    k_.row(n).head(n) = kz.transpose();
    k_(n, n) = kzz;

    chol_.conservativeResize(n + 1, n + 1);
    chol_.col(n).setZero();
    chol_.row(n).head(n) = l.transpose();
    chol_(n, n) = std::sqrt(delta);

    alpha_.conservativeResize(n + 1);
    alpha_(n) = 0.0;
    c_.conservativeResize(n + 1, n + 1);
    c_.row(n).setZero();
    c_.col(n).setZero();

    Eigen::VectorXd e = Eigen::VectorXd::Zero(n + 1);
    e(n) = 1.0;
    return e;
}

void Gptd::condition(const Eigen::VectorXd& h, double y) {
    const Eigen::VectorXd kh = k_ * h;
    const Eigen::VectorXd ckh = c_ * kh;
    const Eigen::VectorXd p = h - ckh;
    const double v = h.dot(kh) - kh.dot(ckh) + cfg_.noise_var;
    if (!(v > 0.0) || !std::isfinite(v)) throw NumericalError("non-positive GPTD innovation variance");
    const double d = y - kh.dot(alpha_);
    alpha_ += p * (d / v);
    c_.noalias() += p * p.transpose() / v;
}

void Gptd::add_episode(std::span<const std::size_t> points, std::span<const double> rewards) {
    if (points.empty()) throw InvalidArgument("empty episode");
    if (points.size() != rewards.size()) throw ShapeError("one reward per step required");
    Eigen::VectorXd a_prev = coordinates(points[0]);
    for (std::size_t t = 0; t < points.size(); ++t) {
        Eigen::VectorXd h;
        Eigen::VectorXd a_next;
        if (t + 1 < points.size()) {
            a_next = coordinates(points[t + 1]);
            h = padded(a_prev, a_next.size()) - cfg_.gamma * a_next;
        } else {
            h = padded(a_prev, static_cast<Eigen::Index>(dict_.size()));
        }
        condition(h, rewards[t]);
        a_prev = std::move(a_next);
    }
}

double Gptd::mean(std::size_t z) const { return kernel_column(z).dot(alpha_); }

double Gptd::covariance(std::size_t z1, std::size_t z2) const {
    return kernel_(z1, z2) - kernel_column(z1).dot(c_ * kernel_column(z2));
}

GradientPosterior gradient_posterior(const Eigen::MatrixXd& u, const Eigen::VectorXd& alpha, const Eigen::MatrixXd& c,
                                     const Eigen::MatrixXd& g) {
    if (u.cols() != alpha.size() || c.rows() != alpha.size() || c.cols() != alpha.size() || g.rows() != u.rows() ||
        g.cols() != u.rows()) {
        throw ShapeError("gradient posterior dimension mismatch");
    }
    return {u * alpha, g - u * c * u.transpose()};
}

Eigen::VectorXd bac_gradient(const std::vector<BacEpisode>& episodes, std::size_t n_actions, const GptdConfig& cfg) {
    std::vector<SaPoint> points;
    std::vector<std::vector<std::size_t>> ids;
    for (const auto& ep : episodes) {
        if (ep.points.size() != ep.rewards.size()) throw ShapeError("one reward per step required");
        auto& row = ids.emplace_back();
        for (const auto& p : ep.points) {
            row.push_back(points.size());
            points.push_back(p);
        }
    }
    if (points.empty()) throw InvalidArgument("no transitions to learn from");
    const auto dim = static_cast<std::size_t>(points.front().score.size());
    if (dim != static_cast<std::size_t>(points.front().phi.size()) * n_actions) {
        throw ShapeError("score dimension does not match the policy");
    }

    FisherInfo fisher(dim);
    for (const auto& p : points) fisher.add(p.score);
    const Eigen::MatrixXd psi = bac_embedding(points, fisher);

    Gptd critic(
        [&psi](std::size_t i, std::size_t j) {
            return psi.col(static_cast<Eigen::Index>(i)).dot(psi.col(static_cast<Eigen::Index>(j)));
        },
        cfg);
    for (std::size_t e = 0; e < episodes.size(); ++e) {
        if (!ids[e].empty()) critic.add_episode(ids[e], episodes[e].rewards);
    }

    Eigen::VectorXd grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim));
    const auto& dict = critic.dictionary();
    for (std::size_t i = 0; i < dict.size(); ++i) grad += critic.alpha()(static_cast<Eigen::Index>(i)) * points[dict[i]].score;
    if (!grad.allFinite()) throw NumericalError("non-finite policy gradient");
    return grad;
}

void BacConfig::validate() const {
    if (n_updates < 1) throw InvalidArgument("n_updates must be positive");
    if (episodes_per_update < 1) throw InvalidArgument("episodes_per_update must be positive");
    if (eval_every < 1) throw InvalidArgument("eval_every must be positive");
    if (eval_episodes < 1) throw InvalidArgument("eval_episodes must be positive");
    if (!(beta > 0.0) || !std::isfinite(beta)) throw InvalidArgument("beta must be positive");
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw InvalidArgument("gamma must lie in [0, 1]");
    if (!(noise_var > 0.0)) throw InvalidArgument("noise_var must be positive");
    if (!(nu >= 0.0)) throw InvalidArgument("nu must be non-negative");
}

MetricsTable BacResult::table() const {
    MetricsTable t;
    t.columns = {"update_index", "eval_index", "mse_vs_1pu", "avg_episode_len", "avg_episodic_reward", "wall_ms"};
    for (const auto& e : evaluations) {
        t.rows.push_back({static_cast<double>(e.update_index), static_cast<double>(e.eval_index), e.mse_vs_1pu,
                          e.avg_episode_len, e.avg_episodic_reward, e.wall_ms});
    }
    return t;
}

std::vector<double> observed_voltages(const DiscreteState& observation, const Discretization& disc) {
    std::vector<double> v;
    v.reserve(observation.levels.size());
    for (int level : observation.levels) v.push_back(disc.level_midpoint(level));
    return v;
}

std::size_t sample_action(const Eigen::VectorXd& probs, Rng& rng) {
    if (probs.size() == 0) throw InvalidArgument("no actions");
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    double acc = 0.0;
    for (Eigen::Index a = 0; a < probs.size(); ++a) {
        acc += probs(a);
        if (u < acc) return static_cast<std::size_t>(a);
    }
    return static_cast<std::size_t>(probs.size() - 1);
}

BacResult bac_train(VoltageControlEnv& env, const BacConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const auto& disc = env.discretization();
    BacResult result;
    result.kernel = StateKernelConfig::from_discretization(disc, cfg.kernel_variance);
    result.kernel.validate();
    result.n_actions = env.n_actions();
    const auto n_actions = result.n_actions;
    result.theta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(result.kernel.n_features() * n_actions));
    auto& theta = result.theta;

    auto rng = make_rng(seed, 3);
    auto eval_rng = make_rng(seed, 4);
    VoltageControlEnv eval_env = env;
    const std::uint64_t eval_seed = seed ^ 0x5eed'e7a1'0000'0000ULL;
    bool eval_started = false;
    bool started = false;

    const GptdConfig gptd{cfg.gamma, cfg.noise_var, cfg.nu};
    auto features = [&](const StepResult& r) { return rbf_features(observed_voltages(r.observation, disc), result.kernel); };

    auto evaluate = [&](int update) {
        const auto t0 = std::chrono::steady_clock::now();
        BacEval ev;
        ev.update_index = update;
        ev.eval_index = static_cast<int>(result.evaluations.size());
        double sq = 0.0;
        long n_sq = 0, steps = 0;
        double reward = 0.0;
        for (int e = 0; e < cfg.eval_episodes; ++e) {
            auto r = eval_started ? eval_env.reset() : eval_env.reset(eval_seed);
            eval_started = true;
            while (!r.done) {
                r = eval_env.step(sample_action(policy_probs(features(r), theta, n_actions), eval_rng));
                reward += r.reward;
                ++steps;
                if (r.info.converged) {
                    for (double v : r.info.monitored_voltages) {
                        sq += (v - 1.0) * (v - 1.0);
                        ++n_sq;
                    }
                }
            }
        }
        ev.mse_vs_1pu = n_sq > 0 ? sq / static_cast<double>(n_sq) : kMissing;
        ev.avg_episode_len = static_cast<double>(steps) / cfg.eval_episodes;
        ev.avg_episodic_reward = reward / cfg.eval_episodes;
        if (cfg.record_wall_time) {
            ev.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        }
        result.evaluations.push_back(ev);
    };

    for (int i = 0; i < cfg.n_updates; ++i) {
        if (i % cfg.eval_every == 0) evaluate(i);
        std::vector<BacEpisode> episodes;
        for (int e = 0; e < cfg.episodes_per_update; ++e) {
            auto r = started ? env.reset() : env.reset(seed);
            started = true;
            BacEpisode ep;
            while (!r.done) {
                SaPoint z;
                z.phi = features(r);
                z.action = sample_action(policy_probs(z.phi, theta, n_actions), rng);
                z.score = step_score(z.phi, z.action, theta, n_actions);
                r = env.step(z.action);
                ep.points.push_back(std::move(z));
                ep.rewards.push_back(r.reward);
            }
            episodes.push_back(std::move(ep));
        }
        theta += cfg.beta * bac_gradient(episodes, n_actions, gptd);
    }
    evaluate(cfg.n_updates);
    return result;
}

void save_policy(const std::filesystem::path& path, const Eigen::VectorXd& theta, const StateKernelConfig& kernel,
                 std::size_t n_actions) {
    static_assert(std::endian::native == std::endian::little, "policies are stored little-endian");
    kernel.validate();
    if (static_cast<std::size_t>(theta.size()) != kernel.n_features() * n_actions) {
        throw ShapeError("theta does not match the kernel and action count");
    }
    std::ofstream bin(path, std::ios::binary);
    if (!bin) throw InvalidArgument("cannot write " + path.string());
    bin.write(reinterpret_cast<const char*>(theta.data()),
              static_cast<std::streamsize>(theta.size() * static_cast<Eigen::Index>(sizeof(double))));
    nlohmann::json meta{{"format", "float64-le"},     {"L", kernel.centers.size()}, {"n_actions", n_actions},
                        {"centers", kernel.centers}, {"sigma2", kernel.variance},  {"n_buses", kernel.n_buses}};
    std::ofstream(sidecar_path(path)) << meta.dump(2) << '\n';
}

Eigen::VectorXd load_policy(const std::filesystem::path& path, StateKernelConfig* kernel, std::size_t* n_actions) {
    std::ifstream side(sidecar_path(path));
    if (!side) throw InvalidArgument("missing policy sidecar " + sidecar_path(path).string());
    StateKernelConfig k;
    std::size_t actions = 0;
    try {
        const auto meta = nlohmann::json::parse(side);
        k.centers = meta.at("centers").get<std::vector<double>>();
        k.variance = meta.at("sigma2").get<double>();
        k.n_buses = meta.at("n_buses").get<int>();
        actions = meta.at("n_actions").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("invalid policy sidecar: ") + e.what(), 0);
    }
    k.validate();
    const auto n = k.n_features() * actions;
    std::ifstream bin(path, std::ios::binary | std::ios::ate);
    if (!bin) throw InvalidArgument("cannot read " + path.string());
    if (static_cast<std::size_t>(bin.tellg()) != n * sizeof(double)) throw ShapeError("policy file size mismatch");
    bin.seekg(0);
    Eigen::VectorXd theta(static_cast<Eigen::Index>(n));
    bin.read(reinterpret_cast<char*>(theta.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (kernel) *kernel = k;
    if (n_actions) *n_actions = actions;
    return theta;
}

}  // namespace voltpomdp

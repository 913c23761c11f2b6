#include "voltpomdp/dqn.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "voltpomdp/errors.hpp"

namespace voltpomdp {

namespace {

using ConstMatMap = Eigen::Map<const Eigen::MatrixXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
    auto p = path;
    p += ".json";
    return p;
}

}  // namespace

Mlp::Mlp(std::vector<int> layer_sizes) : layers_(std::move(layer_sizes)) {
    if (layers_.size() < 2) throw InvalidArgument("network needs an input and an output layer");
    for (int n : layers_) {
        if (n < 1) throw InvalidArgument("layer sizes must be positive");
    }
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < layers_.size(); ++l) {
        const auto in = static_cast<std::size_t>(layers_[l]);
        const auto out = static_cast<std::size_t>(layers_[l + 1]);
        offsets_.push_back({off, off + in * out});
        off += in * out + out;
    }
    n_params_ = off;
}

void Mlp::check(const Eigen::VectorXd& params, Eigen::Index input_rows) const {
    if (static_cast<std::size_t>(params.size()) != n_params_) throw ShapeError("parameter vector has wrong length");
    if (input_rows != layers_.front()) throw ShapeError("input has wrong dimension");
}

Eigen::VectorXd Mlp::forward(const Eigen::VectorXd& params, const Eigen::VectorXd& x) const {
    return forward_batch(params, Eigen::MatrixXd(x));
}

Eigen::MatrixXd Mlp::forward_batch(const Eigen::VectorXd& params, const Eigen::MatrixXd& x) const {
    check(params, x.rows());
    Eigen::MatrixXd h = x;
    const std::size_t n_layers = offsets_.size();
    for (std::size_t l = 0; l < n_layers; ++l) {
        const ConstMatMap w(params.data() + offsets_[l].w, layers_[l + 1], layers_[l]);
        const ConstVecMap b(params.data() + offsets_[l].b, layers_[l + 1]);
        Eigen::MatrixXd z = w * h;
        z.colwise() += b;
        h = l + 1 < n_layers ? Eigen::MatrixXd(z.array().tanh()) : std::move(z);
    }
    return h;
}

Eigen::VectorXd Mlp::forward_selected(const Eigen::VectorXd& params, const Eigen::MatrixXd& x,
                                      const std::vector<int>& actions) const {
    check(params, x.rows());
    if (static_cast<Eigen::Index>(actions.size()) != x.cols()) throw ShapeError("one action per sample required");
    Eigen::MatrixXd h = x;
    const std::size_t last = offsets_.size() - 1;
    for (std::size_t l = 0; l < last; ++l) {
        const ConstMatMap w(params.data() + offsets_[l].w, layers_[l + 1], layers_[l]);
        const ConstVecMap b(params.data() + offsets_[l].b, layers_[l + 1]);
        Eigen::MatrixXd z = w * h;
        z.colwise() += b;
        h = z.array().tanh();
    }
    const ConstMatMap w(params.data() + offsets_[last].w, layers_[last + 1], layers_[last]);
    const ConstVecMap b(params.data() + offsets_[last].b, layers_[last + 1]);
    Eigen::VectorXd q(x.cols());
    for (Eigen::Index i = 0; i < x.cols(); ++i) {
        const int a = actions[static_cast<std::size_t>(i)];
        if (a < 0 || a >= output_size()) throw InvalidArgument("action index out of range");
        q(i) = w.row(a).dot(h.col(i)) + b(a);
    }
    return q;
}

double Mlp::mse_gradient(const Eigen::VectorXd& params, const Eigen::MatrixXd& x, const std::vector<int>& actions,
                         const Eigen::VectorXd& targets, Eigen::VectorXd& gradient) const {
    check(params, x.rows());
    const Eigen::Index batch = x.cols();
    if (batch == 0) throw InvalidArgument("empty batch");
    if (static_cast<Eigen::Index>(actions.size()) != batch || targets.size() != batch) {
        throw ShapeError("actions and targets must match the batch");
    }
    const std::size_t n_layers = offsets_.size();
    std::vector<Eigen::MatrixXd> acts{x};
    for (std::size_t l = 0; l + 1 < n_layers; ++l) {
        const ConstMatMap w(params.data() + offsets_[l].w, layers_[l + 1], layers_[l]);
        const ConstVecMap b(params.data() + offsets_[l].b, layers_[l + 1]);
        Eigen::MatrixXd z = w * acts.back();
        z.colwise() += b;
        acts.emplace_back(z.array().tanh());
    }
    const std::size_t last = n_layers - 1;
    const ConstMatMap w_out(params.data() + offsets_[last].w, layers_[last + 1], layers_[last]);
    const ConstVecMap b_out(params.data() + offsets_[last].b, layers_[last + 1]);

    // delta = dL/dz for the output pre-activations; only the taken action's unit is non-zero.
    Eigen::MatrixXd delta = Eigen::MatrixXd::Zero(layers_.back(), batch);
    double loss = 0.0;
    for (Eigen::Index i = 0; i < batch; ++i) {
        const int a = actions[static_cast<std::size_t>(i)];
        if (a < 0 || a >= output_size()) throw InvalidArgument("action index out of range");
        const double q = w_out.row(a).dot(acts.back().col(i)) + b_out(a);
        const double err = q - targets(i);
        loss += err * err;
        delta(a, i) = 2.0 * err / static_cast<double>(batch);
    }
    loss /= static_cast<double>(batch);

    gradient.setZero(static_cast<Eigen::Index>(n_params_));
    for (std::size_t l = n_layers; l-- > 0;) {
        Eigen::Map<Eigen::MatrixXd> gw(gradient.data() + offsets_[l].w, layers_[l + 1], layers_[l]);
        Eigen::Map<Eigen::VectorXd> gb(gradient.data() + offsets_[l].b, layers_[l + 1]);
        gw.noalias() = delta * acts[l].transpose();
        gb = delta.rowwise().sum();
        if (l == 0) break;
        const ConstMatMap w(params.data() + offsets_[l].w, layers_[l + 1], layers_[l]);
        Eigen::MatrixXd back = w.transpose() * delta;
        delta = back.array() * (1.0 - acts[l].array().square());
    }
    return loss;
}

Eigen::VectorXd Mlp::init_params(Rng& rng) const {
    Eigen::VectorXd p = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_params_));
    for (std::size_t l = 0; l < offsets_.size(); ++l) {
        const double limit = std::sqrt(6.0 / static_cast<double>(layers_[l] + layers_[l + 1]));
        std::uniform_real_distribution<double> unif(-limit, limit);
        const auto n = static_cast<std::size_t>(layers_[l]) * static_cast<std::size_t>(layers_[l + 1]);
        for (std::size_t k = 0; k < n; ++k) p(static_cast<Eigen::Index>(offsets_[l].w + k)) = unif(rng);
    }
    return p;
}

Batch Batch::from(const std::vector<Transition>& transitions) {
    Batch b;
    if (transitions.empty()) return b;
    const auto dim = transitions.front().state.size();
    const auto n = static_cast<Eigen::Index>(transitions.size());
    b.states.resize(dim, n);
    b.next_states.resize(dim, n);
    b.rewards.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& t = transitions[static_cast<std::size_t>(i)];
        if (t.state.size() != dim || t.next_state.size() != dim) throw ShapeError("transition feature size mismatch");
        b.states.col(i) = t.state;
        b.next_states.col(i) = t.next_state;
        b.actions.push_back(t.action);
        b.rewards(i) = t.reward;
        b.done.push_back(t.done);
    }
    return b;
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw InvalidArgument("replay capacity must be positive");
    data_.reserve(std::min<std::size_t>(capacity, 1 << 16));
}

void ReplayBuffer::push(Transition t) {
    if (data_.size() < capacity_) {
        data_.push_back(std::move(t));
    } else {
        data_[next_] = std::move(t);
    }
    next_ = (next_ + 1) % capacity_;
}

std::vector<std::size_t> ReplayBuffer::sample_indices(std::size_t n, Rng& rng) const {
    if (data_.empty()) throw InvalidArgument("cannot sample from an empty replay buffer");
    std::uniform_int_distribution<std::size_t> pick(0, data_.size() - 1);
    std::vector<std::size_t> idx(n);
    for (auto& i : idx) i = pick(rng);
    return idx;
}

Batch ReplayBuffer::sample(std::size_t n, Rng& rng) const {
    std::vector<Transition> picked;
    picked.reserve(n);
    for (auto i : sample_indices(n, rng)) picked.push_back(data_[i]);
    return Batch::from(picked);
}

double td_target(const Mlp& net, const Transition& t, const Eigen::VectorXd& theta,
                 const Eigen::VectorXd& theta_target, double gamma) {
    if (t.done) return t.reward;
    Eigen::Index best = 0;
    net.forward(theta_target, t.next_state).maxCoeff(&best);
    return t.reward + gamma * net.forward(theta, t.next_state)(best);
}

Eigen::VectorXd td_targets(const Mlp& net, const Batch& batch, const Eigen::VectorXd& theta,
                           const Eigen::VectorXd& theta_target, double gamma) {
    const auto q_sel = net.forward_batch(theta_target, batch.next_states);
    const auto q_eval = net.forward_batch(theta, batch.next_states);
    Eigen::VectorXd y = batch.rewards;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        if (batch.done[static_cast<std::size_t>(i)]) continue;
        Eigen::Index best = 0;
        q_sel.col(i).maxCoeff(&best);
        y(i) += gamma * q_eval(best, i);
    }
    return y;
}

double dqn_update(const Mlp& net, const Batch& batch, Eigen::VectorXd& theta, Eigen::VectorXd& theta_target,
                  double lr, double tau, double gamma) {
    if (batch.size() == 0) throw InvalidArgument("empty batch");
    const auto targets = td_targets(net, batch, theta, theta_target, gamma);
    Eigen::VectorXd grad;
    const double loss = net.mse_gradient(theta, batch.states, batch.actions, targets, grad);
    if (!std::isfinite(loss) || !grad.allFinite()) throw TrainingDiverged("non-finite TD loss");
    theta -= lr * grad;
    theta_target = tau * theta + (1.0 - tau) * theta_target;
    return loss;
}

double log_likelihood(const Mlp& net, const Eigen::VectorXd& w, const Batch& batch, const Eigen::VectorXd& targets,
                      double sigma_ll) {
    const auto q = net.forward_selected(w, batch.states, batch.actions);
    return -(targets - q).squaredNorm() / (2.0 * sigma_ll * sigma_ll);
}

double log_prior(const Eigen::VectorXd& w, double sigma_pl) { return -w.squaredNorm() / (2.0 * sigma_pl * sigma_pl); }

MhChain start_chain(const Mlp& net, const Eigen::VectorXd& w, const Batch& batch, const Eigen::VectorXd& targets,
                    const MhOptions& opts) {
    return {w, log_likelihood(net, w, batch, targets, opts.sigma_ll) + log_prior(w, opts.sigma_pl)};
}

MhStepResult mh_step(const Mlp& net, MhChain& chain, Eigen::VectorXd& theta, Eigen::VectorXd& theta_target,
                     const Batch& batch, const Eigen::VectorXd& targets, const MhOptions& opts, Rng& rng) {
    std::normal_distribution<double> noise(0.0, 1.0);
    Eigen::VectorXd w_p(chain.w.size());
    for (Eigen::Index k = 0; k < w_p.size(); ++k) w_p(k) = chain.w(k) + opts.sigma_prop * noise(rng);
    MhStepResult out;
    out.tau = std::clamp(std::abs(opts.sigma_prop * noise(rng)), std::numeric_limits<double>::min(), 1.0);

    const double log_post =
        log_likelihood(net, w_p, batch, targets, opts.sigma_ll) + log_prior(w_p, opts.sigma_pl);
    const double delta = log_post - chain.log_post;
    out.log_ratio = std::isnan(delta) ? -std::numeric_limits<double>::infinity() : std::min(0.0, delta);

    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    out.accepted = opts.linear_accept ? out.log_ratio >= u : out.log_ratio >= std::log(u);
    if (out.accepted) {
        chain.w = std::move(w_p);
        chain.log_post = log_post;
        theta = chain.w;
        theta_target = out.tau * theta + (1.0 - out.tau) * theta_target;
    }
    return out;
}

int epsilon_greedy(const Eigen::VectorXd& q, double epsilon, Rng& rng) {
    if (q.size() == 0) throw InvalidArgument("no actions");
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw InvalidArgument("epsilon must lie in [0, 1]");
    if (epsilon > 0.0 && std::uniform_real_distribution<double>(0.0, 1.0)(rng) < epsilon) {
        return static_cast<int>(std::uniform_int_distribution<Eigen::Index>(0, q.size() - 1)(rng));
    }
    Eigen::Index best = 0;
    for (Eigen::Index a = 1; a < q.size(); ++a) {
        if (q(a) > q(best)) best = a;
    }
    return static_cast<int>(best);
}

DqnAlgo parse_dqn_algo(std::string_view name) {
    if (name == "dqn") return DqnAlgo::dqn;
    if (name == "bdqn") return DqnAlgo::bdqn;
    throw InvalidArgument("unknown algorithm '" + std::string(name) + "' (expected dqn, bdqn)");
}

std::string_view to_string(DqnAlgo algo) noexcept { return algo == DqnAlgo::bdqn ? "bdqn" : "dqn"; }

void DqnConfig::validate() const {
    for (int h : hidden) {
        if (h < 1) throw InvalidArgument("hidden layer sizes must be positive");
    }
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw InvalidArgument("gamma must lie in [0, 1]");
    if (!(lr > 0.0)) throw InvalidArgument("lr must be positive");
    if (!(tau >= 0.0 && tau <= 1.0)) throw InvalidArgument("tau must lie in [0, 1]");
    if (batch_size < 1) throw InvalidArgument("batch_size must be positive");
    if (buffer_capacity < 1) throw InvalidArgument("buffer_capacity must be positive");
    if (update_frequency < 1) throw InvalidArgument("update_frequency must be positive");
    if (updates_per_phase < 1) throw InvalidArgument("updates_per_phase must be positive");
    if (sample_length < 1) throw InvalidArgument("sample_length must be positive");
    if (!(mh.sigma_prop >= 0.0)) throw InvalidArgument("sigma_prop must be non-negative");
    if (!(mh.sigma_ll > 0.0) || !(mh.sigma_pl > 0.0)) throw InvalidArgument("sigma_ll and sigma_pl must be positive");
    if (!(epsilon_start >= 0.0 && epsilon_start <= 1.0 && epsilon_end >= 0.0 && epsilon_end <= 1.0)) {
        throw InvalidArgument("epsilon bounds must lie in [0, 1]");
    }
    if (!(epsilon_decay_fraction >= 0.0 && epsilon_decay_fraction <= 1.0)) {
        throw InvalidArgument("epsilon_decay_fraction must lie in [0, 1]");
    }
    if (episodes < 1) throw InvalidArgument("episodes must be positive");
}

MetricsTable DqnResult::table() const {
    MetricsTable t;
    t.columns = {"episode", "score", "rolling_avg_50", "epsilon", "accept_rate", "wall_ms"};
    for (const auto& e : episodes) {
        t.rows.push_back({static_cast<double>(e.episode), e.score, e.rolling_avg_50, e.epsilon, e.accept_rate,
                          e.wall_ms});
    }
    return t;
}

Eigen::VectorXd state_features(const DiscreteState& observation, const Discretization& disc) {
    Eigen::VectorXd f(static_cast<Eigen::Index>(observation.levels.size()));
    for (std::size_t i = 0; i < observation.levels.size(); ++i) {
        f(static_cast<Eigen::Index>(i)) =
            static_cast<double>(observation.levels[i]) / static_cast<double>(disc.n_levels - 1);
    }
    return f;
}

double epsilon_at(const DqnConfig& cfg, int episode) {
    const double span = cfg.epsilon_decay_fraction * cfg.episodes;
    if (!(span > 0.0) || episode >= span) return cfg.epsilon_end;
    return cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * (episode / span);
}

DqnResult train_dqn(VoltageControlEnv& env, const DqnConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const auto& disc = env.discretization();
    std::vector<int> layers{static_cast<int>(disc.n_monitored())};
    layers.insert(layers.end(), cfg.hidden.begin(), cfg.hidden.end());
    layers.push_back(static_cast<int>(env.n_actions()));
    const Mlp net(layers);

    auto rng = make_rng(seed, 2);
    DqnResult result;
    result.layers = layers;
    result.theta = net.init_params(rng);
    result.theta_target = result.theta;
    auto& theta = result.theta;
    auto& theta_target = result.theta_target;

    ReplayBuffer buffer(static_cast<std::size_t>(cfg.buffer_capacity));
    long env_steps = 0;
    long proposals = 0, accepted = 0;
    std::vector<double> scores;

    auto learn = [&] {
        for (int k = 0; k < cfg.updates_per_phase; ++k) {
            const auto batch = buffer.sample(static_cast<std::size_t>(cfg.batch_size), rng);
            if (cfg.algo == DqnAlgo::dqn) {
                dqn_update(net, batch, theta, theta_target, cfg.lr, cfg.tau, cfg.gamma);
                continue;
            }
            const auto targets = td_targets(net, batch, theta, theta_target, cfg.gamma);
            auto chain = start_chain(net, theta, batch, targets, cfg.mh);
            for (int j = 0; j < cfg.sample_length; ++j) {
                accepted += mh_step(net, chain, theta, theta_target, batch, targets, cfg.mh, rng).accepted ? 1 : 0;
                ++proposals;
            }
            if (!std::isfinite(chain.log_post)) throw TrainingDiverged("non-finite posterior");
        }
    };

    for (int ep = 0; ep < cfg.episodes; ++ep) {
        const auto t0 = std::chrono::steady_clock::now();
        const long prop0 = proposals, acc0 = accepted;
        const double eps = epsilon_at(cfg, ep);
        auto r = ep == 0 ? env.reset(seed) : env.reset();
        Eigen::VectorXd s = state_features(r.observation, disc);
        DqnEpisode log;
        log.episode = ep;
        log.epsilon = eps;
        while (!r.done) {
            const int a = epsilon_greedy(net.forward(theta, s), eps, rng);
            r = env.step(static_cast<std::size_t>(a));
            Eigen::VectorXd s_next = state_features(r.observation, disc);
            buffer.push({s, a, r.reward, s_next, r.done});
            log.score += r.reward;
            s = std::move(s_next);
            if (++env_steps % cfg.update_frequency == 0 && buffer.size() >= static_cast<std::size_t>(cfg.batch_size)) {
                learn();
            }
        }
        if (proposals > prop0) {
            log.accept_rate = static_cast<double>(accepted - acc0) / static_cast<double>(proposals - prop0);
        }
        scores.push_back(log.score);
        if (scores.size() >= 50) {
            double sum = 0.0;
            for (std::size_t i = scores.size() - 50; i < scores.size(); ++i) sum += scores[i];
            log.rolling_avg_50 = sum / 50.0;
        }
        if (cfg.record_wall_time) {
            log.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        }
        result.episodes.push_back(log);
        if (result.episodes_to_goal < 0 && !std::isnan(log.rolling_avg_50) && log.rolling_avg_50 >= cfg.goal) {
            result.episodes_to_goal = ep + 1;
            if (cfg.stop_at_goal) break;
        }
    }
    return result;
}

void save_weights(const std::filesystem::path& path, const Eigen::VectorXd& params, const std::vector<int>& layers) {
    static_assert(std::endian::native == std::endian::little, "weights are stored little-endian");
    if (static_cast<std::size_t>(params.size()) != Mlp(layers).n_params()) {
        throw ShapeError("parameter vector does not match the architecture");
    }
    std::ofstream bin(path, std::ios::binary);
    if (!bin) throw InvalidArgument("cannot write " + path.string());
    bin.write(reinterpret_cast<const char*>(params.data()),
              static_cast<std::streamsize>(params.size() * static_cast<Eigen::Index>(sizeof(double))));
    nlohmann::json meta{{"format", "float64-le"},
                        {"layers", layers},
                        {"activation", "tanh"},
                        {"output", "linear"},
                        {"n_params", params.size()}};
    std::ofstream(sidecar_path(path)) << meta.dump(2) << '\n';
}

Eigen::VectorXd load_weights(const std::filesystem::path& path, std::vector<int>* layers) {
    std::ifstream side(sidecar_path(path));
    if (!side) throw InvalidArgument("missing weight sidecar " + sidecar_path(path).string());
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(side);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("weight sidecar is not valid JSON: ") + e.what(), 0);
    }
    if (!meta.contains("layers") || !meta["layers"].is_array()) throw ParseError("weight sidecar lacks layers", 0);
    const auto arch = meta["layers"].get<std::vector<int>>();
    const auto n = Mlp(arch).n_params();

    std::ifstream bin(path, std::ios::binary | std::ios::ate);
    if (!bin) throw InvalidArgument("cannot read " + path.string());
    if (static_cast<std::size_t>(bin.tellg()) != n * sizeof(double)) throw ShapeError("weight file size mismatch");
    bin.seekg(0);
    Eigen::VectorXd params(static_cast<Eigen::Index>(n));
    bin.read(reinterpret_cast<char*>(params.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (layers) *layers = arch;
    return params;
}

}  // namespace voltpomdp

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <random>
#include <sstream>

#include "voltpomdp/dqn.hpp"
#include "voltpomdp/errors.hpp"

using namespace voltpomdp;

namespace {

// Straightforward re-implementation: explicit loops over the flat layout.
Eigen::VectorXd naive_forward(const std::vector<int>& layers, const Eigen::VectorXd& p, const Eigen::VectorXd& x) {
    std::vector<double> h(x.data(), x.data() + x.size());
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
        const int in = layers[l], out = layers[l + 1];
        std::vector<double> z(static_cast<std::size_t>(out), 0.0);
        for (int j = 0; j < out; ++j) {
            double acc = 0.0;
            for (int i = 0; i < in; ++i) acc += p(static_cast<Eigen::Index>(off + static_cast<std::size_t>(i * out + j))) * h[static_cast<std::size_t>(i)];
            z[static_cast<std::size_t>(j)] = acc;
        }
        off += static_cast<std::size_t>(in * out);
        for (int j = 0; j < out; ++j) z[static_cast<std::size_t>(j)] += p(static_cast<Eigen::Index>(off + static_cast<std::size_t>(j)));
        off += static_cast<std::size_t>(out);
        if (l + 2 < layers.size()) {
            for (auto& v : z) v = std::tanh(v);
        }
        h = std::move(z);
    }
    return Eigen::Map<Eigen::VectorXd>(h.data(), static_cast<Eigen::Index>(h.size()));
}

Eigen::VectorXd random_vector(Eigen::Index n, Rng& rng, double scale = 1.0) {
    std::normal_distribution<double> g(0.0, scale);
    Eigen::VectorXd v(n);
    for (auto& x : v) x = g(rng);
    return v;
}

Batch random_batch(const Mlp& net, std::size_t n, Rng& rng) {
    std::vector<Transition> ts;
    std::uniform_int_distribution<int> act(0, net.output_size() - 1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        ts.push_back({random_vector(net.input_size(), rng), act(rng), 50.0 - 100.0 * std::floor(3.0 * u(rng)),
                      random_vector(net.input_size(), rng), u(rng) < 0.2});
    }
    return Batch::from(ts);
}

// Single linear layer 1 -> 2 with zero weights: Q(s, .) equals the bias.
Eigen::VectorXd bias_only(double q0, double q1) {
    Eigen::VectorXd p = Eigen::VectorXd::Zero(4);
    p(2) = q0;
    p(3) = q1;
    return p;
}

EnvConfig wscc_env() {
    EnvConfig cfg;
    cfg.case_file = VOLTPOMDP_CASES_DIR "/wscc9.json";
    cfg.e_max = 10;
    cfg.terminate_on_goal = false;
    return cfg;
}

}  // namespace

TEST_CASE("network layout and forward pass") {
    const Mlp net({3, 64, 64, 125});
    CHECK(net.n_params() == 12541);

    Eigen::VectorXd zero = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(net.n_params()));
    CHECK(net.forward(zero, Eigen::Vector3d(0.3, -1.0, 2.0)).isZero(0.0));

    const Mlp ident({3, 3});
    Eigen::VectorXd p = Eigen::VectorXd::Zero(12);
    p(0) = p(4) = p(8) = 1.0;
    const Eigen::Vector3d x(0.25, -0.5, 0.75);
    CHECK((ident.forward(p, x) - x).norm() == 0.0);

    auto rng = make_rng(11);
    for (const auto& layers : std::vector<std::vector<int>>{{3, 5, 4}, {2, 7, 6, 9}, {4, 9}}) {
        const Mlp m(layers);
        for (int trial = 0; trial < 20; ++trial) {
            const auto params = random_vector(static_cast<Eigen::Index>(m.n_params()), rng);
            const auto in = random_vector(layers.front(), rng);
            CHECK((m.forward(params, in) - naive_forward(layers, params, in)).cwiseAbs().maxCoeff() < 1e-12);
        }
    }

    CHECK_THROWS_AS(net.forward(zero, Eigen::Vector2d(0.0, 0.0)), ShapeError);
    CHECK_THROWS_AS(net.forward(Eigen::VectorXd::Zero(5), Eigen::Vector3d::Zero()), ShapeError);
    CHECK_THROWS_AS(Mlp({3}), InvalidArgument);
}

TEST_CASE("batched and selected forward agree with the single-sample pass") {
    const Mlp net({3, 8, 8, 6});
    auto rng = make_rng(5);
    const auto params = random_vector(static_cast<Eigen::Index>(net.n_params()), rng, 0.5);
    const auto batch = random_batch(net, 12, rng);
    const auto all = net.forward_batch(params, batch.states);
    const auto sel = net.forward_selected(params, batch.states, batch.actions);
    for (Eigen::Index i = 0; i < 12; ++i) {
        const Eigen::VectorXd single = net.forward(params, Eigen::VectorXd(batch.states.col(i)));
        CHECK((all.col(i) - single).norm() < 1e-13);
        CHECK(sel(i) == doctest::Approx(single(batch.actions[static_cast<std::size_t>(i)])).epsilon(1e-14));
    }
}

TEST_CASE("td target") {
    const Mlp net({1, 2});
    Transition t{Eigen::VectorXd::Zero(1), 0, 50.0, Eigen::VectorXd::Zero(1), false};
    // theta' picks action 1, theta evaluates it.
    CHECK(td_target(net, t, bias_only(3.0, 10.0), bias_only(0.0, 5.0), 0.99) == doctest::Approx(59.9));
    CHECK(td_target(net, t, bias_only(3.0, 10.0), bias_only(5.0, 0.0), 0.99) == doctest::Approx(50.0 + 0.99 * 3.0));
    CHECK(td_target(net, t, bias_only(3.0, 10.0), bias_only(0.0, 5.0), 0.0) == 50.0);
    t.done = true;
    t.reward = -500.0;
    CHECK(td_target(net, t, bias_only(3.0, 10.0), bias_only(0.0, 5.0), 0.99) == -500.0);

    const Mlp deep({3, 6, 4});
    auto rng = make_rng(2);
    const auto th = random_vector(static_cast<Eigen::Index>(deep.n_params()), rng);
    const auto tt = random_vector(static_cast<Eigen::Index>(deep.n_params()), rng);
    const auto batch = random_batch(deep, 16, rng);
    const auto y = td_targets(deep, batch, th, tt, 0.9);
    for (std::size_t i = 0; i < 16; ++i) {
        const auto idx = static_cast<Eigen::Index>(i);
        Transition ti{batch.states.col(idx), batch.actions[i], batch.rewards(idx), batch.next_states.col(idx),
                      batch.done[i]};
        CHECK(y(idx) == doctest::Approx(td_target(deep, ti, th, tt, 0.9)).epsilon(1e-14));
    }
}

TEST_CASE("analytic gradient matches central finite differences") {
    auto rng = make_rng(17);
    for (const auto& layers : std::vector<std::vector<int>>{{3, 10, 5}, {3, 16, 16, 125}, {2, 6, 5, 4}}) {
        const Mlp net(layers);
        for (int trial = 0; trial < 10; ++trial) {
            auto params = random_vector(static_cast<Eigen::Index>(net.n_params()), rng, 0.5);
            const auto batch = random_batch(net, 8, rng);
            const auto targets = random_vector(8, rng, 5.0);
            Eigen::VectorXd grad;
            net.mse_gradient(params, batch.states, batch.actions, targets, grad);

            auto loss = [&](const Eigen::VectorXd& p) {
                return (targets - net.forward_selected(p, batch.states, batch.actions)).squaredNorm() / 8.0;
            };
            Eigen::VectorXd fd(grad.size());
            const double h = 1e-6;
            for (Eigen::Index k = 0; k < params.size(); ++k) {
                const double keep = params(k);
                params(k) = keep + h;
                const double up = loss(params);
                params(k) = keep - h;
                const double down = loss(params);
                params(k) = keep;
                fd(k) = (up - down) / (2.0 * h);
            }
            const double rel = (grad - fd).norm() / std::max(grad.norm(), fd.norm());
            CHECK(rel < 1e-5);
        }
    }
}

TEST_CASE("dqn update") {
    const Mlp net({3, 8, 4});
    auto rng = make_rng(3);
    const auto batch = random_batch(net, 32, rng);
    auto theta = net.init_params(rng);
    auto target = random_vector(theta.size(), rng);

    SUBCASE("tau = 1 copies the online network") {
        dqn_update(net, batch, theta, target, 1e-3, 1.0, 0.9);
        CHECK(target == theta);
    }
    SUBCASE("tau = 0 freezes the target network") {
        const auto before = target;
        dqn_update(net, batch, theta, target, 1e-3, 0.0, 0.9);
        CHECK(target == before);
    }
    SUBCASE("small steps reduce the loss on a fixed regression problem") {
        const auto fixed = td_targets(net, batch, theta, target, 0.9);
        Eigen::VectorXd g;
        const double before = net.mse_gradient(theta, batch.states, batch.actions, fixed, g);
        Eigen::VectorXd step = theta - 1e-4 * g;
        CHECK(net.mse_gradient(step, batch.states, batch.actions, fixed, g) < before);
    }
    SUBCASE("errors") {
        Batch bad = batch;
        bad.rewards(0) = std::numeric_limits<double>::infinity();
        CHECK_THROWS_AS(dqn_update(net, bad, theta, target, 1e-3, 0.5, 0.9), TrainingDiverged);
        CHECK_THROWS_AS(dqn_update(net, Batch{}, theta, target, 1e-3, 0.5, 0.9), InvalidArgument);
    }
}

TEST_CASE("log likelihood and log prior") {
    const Mlp net({1, 2});
    Transition t{Eigen::VectorXd::Zero(1), 1, 0.0, Eigen::VectorXd::Zero(1), true};
    const auto batch = Batch::from({t, t});
    const auto w = bias_only(0.0, 4.0);

    CHECK(log_likelihood(net, w, batch, Eigen::Vector2d(4.0, 4.0), 10.0) == 0.0);
    const double one = log_likelihood(net, w, batch, Eigen::Vector2d(5.0, 4.0), 10.0);
    const double two = log_likelihood(net, w, batch, Eigen::Vector2d(6.0, 4.0), 10.0);
    CHECK(two - one == doctest::Approx(-3.0 / 200.0));

    CHECK(log_prior(Eigen::VectorXd::Zero(7), 1.0) == 0.0);
    CHECK(log_prior(Eigen::Vector2d(3.0, 4.0), 2.0) == doctest::Approx(-25.0 / 8.0));
}

TEST_CASE("metropolis-hastings step") {
    const Mlp net({3, 8, 5});
    auto rng = make_rng(23);
    const auto batch = random_batch(net, 16, rng);
    const auto w0 = net.init_params(rng);
    const auto targets = random_vector(16, rng, 20.0);

    SUBCASE("zero perturbation is always accepted") {
        MhOptions opts;
        opts.sigma_prop = 0.0;
        auto chain = start_chain(net, w0, batch, targets, opts);
        Eigen::VectorXd theta = w0, target = Eigen::VectorXd::Zero(w0.size());
        for (int i = 0; i < 500; ++i) {
            const auto r = mh_step(net, chain, theta, target, batch, targets, opts, rng);
            CHECK(r.accepted);
            CHECK(r.log_ratio == 0.0);
        }
    }
    SUBCASE("an improving proposal is always accepted") {
        MhOptions opts;
        auto chain = start_chain(net, w0, batch, targets, opts);
        chain.log_post = -1e12;
        Eigen::VectorXd theta = w0, target = w0;
        const auto r = mh_step(net, chain, theta, target, batch, targets, opts, rng);
        CHECK(r.accepted);
        CHECK(r.log_ratio == 0.0);
        CHECK(theta == chain.w);
    }
    SUBCASE("log ratio never exceeds zero and acceptance tends to one as sigma shrinks") {
        double prev = -1.0;
        for (double sigma : {0.5, 0.05, 5e-3, 5e-4, 1e-6}) {
            MhOptions opts;
            opts.sigma_prop = sigma;
            auto chain = start_chain(net, w0, batch, targets, opts);
            Eigen::VectorXd theta = w0, target = w0;
            int acc = 0;
            for (int i = 0; i < 1000; ++i) {
                const auto r = mh_step(net, chain, theta, target, batch, targets, opts, rng);
                CHECK(r.log_ratio <= 0.0);
                CHECK(r.tau > 0.0);
                CHECK(r.tau <= 1.0);
                acc += r.accepted ? 1 : 0;
            }
            const double rate = acc / 1000.0;
            CHECK(rate >= prev - 0.05);
            prev = rate;
        }
        CHECK(prev > 0.99);
    }
    SUBCASE("accepted soft updates stay inside the componentwise interval") {
        MhOptions opts;
        opts.sigma_prop = 0.2;
        auto chain = start_chain(net, w0, batch, targets, opts);
        Eigen::VectorXd theta = w0, target = random_vector(w0.size(), rng);
        int accepted = 0;
        for (int i = 0; i < 2000; ++i) {
            const auto old_target = target;
            const auto r = mh_step(net, chain, theta, target, batch, targets, opts, rng);
            if (!r.accepted) {
                CHECK(target == old_target);
                continue;
            }
            ++accepted;
            CHECK(theta == chain.w);
            const auto lo = theta.cwiseMin(old_target).array() - 1e-12;
            const auto hi = theta.cwiseMax(old_target).array() + 1e-12;
            CHECK(((target.array() >= lo) && (target.array() <= hi)).all());
            CHECK(target.norm() <= std::max(theta.norm(), old_target.norm()) + 1e-12);
        }
        CHECK(accepted > 0);
    }
    SUBCASE("linear acceptance rejects every strictly negative ratio") {
        MhOptions opts;
        opts.sigma_prop = 0.05;
        opts.linear_accept = true;
        auto chain = start_chain(net, w0, batch, targets, opts);
        Eigen::VectorXd theta = w0, target = w0;
        for (int i = 0; i < 1000; ++i) {
            const auto r = mh_step(net, chain, theta, target, batch, targets, opts, rng);
            if (r.log_ratio < 0.0) CHECK_FALSE(r.accepted);
        }
    }
}

TEST_CASE("epsilon greedy") {
    auto rng = make_rng(31);
    Eigen::VectorXd q = Eigen::VectorXd::Zero(125);
    q(17) = 1.0;
    for (int i = 0; i < 1000; ++i) CHECK(epsilon_greedy(q, 0.0, rng) == 17);
    CHECK(epsilon_greedy(Eigen::Vector3d(2.0, 5.0, 5.0), 0.0, rng) == 1);

    const int draws = 100000;
    std::vector<int> counts(125, 0);
    for (int i = 0; i < draws; ++i) ++counts[static_cast<std::size_t>(epsilon_greedy(q, 1.0, rng))];
    for (int c : counts) CHECK(std::abs(c / double(draws) - 1.0 / 125.0) < 0.01);

    int best = 0;
    for (int i = 0; i < draws; ++i) best += epsilon_greedy(q, 0.1, rng) == 17 ? 1 : 0;
    CHECK(std::abs(best / double(draws) - (0.9 + 0.1 / 125.0)) < 0.01);

    CHECK_THROWS_AS(epsilon_greedy(q, 1.5, rng), InvalidArgument);
    CHECK_THROWS_AS(epsilon_greedy(Eigen::VectorXd(), 0.0, rng), InvalidArgument);
}

TEST_CASE("replay buffer") {
    ReplayBuffer buf(100);
    for (int i = 0; i < 250; ++i) {
        buf.push({Eigen::VectorXd::Constant(1, i), i % 7, double(i), Eigen::VectorXd::Zero(1), false});
        CHECK(buf.size() <= buf.capacity());
    }
    CHECK(buf.size() == 100);
    // Oldest entries were overwritten in insertion order.
    for (std::size_t i = 0; i < 100; ++i) CHECK(buf[i].reward >= 150.0);

    auto rng = make_rng(41);
    std::vector<int> counts(100, 0);
    const int draws = 100000;
    for (auto i : buf.sample_indices(draws, rng)) ++counts[i];
    double chi2 = 0.0;
    const double expected = draws / 100.0;
    for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
    // Upper 0.001 quantile of chi-squared with 99 degrees of freedom.
    CHECK(chi2 < 148.23);

    const auto batch = buf.sample(16, rng);
    CHECK(batch.size() == 16);
    CHECK(batch.states.cols() == 16);
    CHECK_THROWS_AS(ReplayBuffer(0), InvalidArgument);
    CHECK_THROWS_AS(ReplayBuffer(3).sample(1, rng), InvalidArgument);
}

TEST_CASE("epsilon schedule and features") {
    DqnConfig cfg;
    cfg.episodes = 100;
    CHECK(epsilon_at(cfg, 0) == 1.0);
    CHECK(epsilon_at(cfg, 15) == doctest::Approx(0.525));
    CHECK(epsilon_at(cfg, 30) == doctest::Approx(0.05));
    CHECK(epsilon_at(cfg, 99) == doctest::Approx(0.05));

    Discretization disc;
    disc.monitored_buses = {5, 6};
    DiscreteState s;
    s.levels = {0, 19};
    const auto f = state_features(s, disc);
    CHECK(f(0) == 0.0);
    CHECK(f(1) == 1.0);

    DqnConfig bad;
    bad.batch_size = 0;
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}

TEST_CASE("frozen greedy policy is a function of the state") {
    const Mlp net({3, 16, 16, 125});
    auto rng = make_rng(9);
    const auto theta = net.init_params(rng);
    for (int i = 0; i < 50; ++i) {
        const auto s = random_vector(3, rng);
        const int a = epsilon_greedy(net.forward(theta, s), 0.0, rng);
        for (int k = 0; k < 5; ++k) CHECK(epsilon_greedy(net.forward(theta, s), 0.0, rng) == a);
    }
}

TEST_CASE("weight checkpoint round trip") {
    const auto dir = std::filesystem::temp_directory_path() / "voltpomdp_dqn_ckpt";
    std::filesystem::create_directories(dir);
    const Mlp net({3, 16, 16, 125});
    auto rng = make_rng(4);
    const auto theta = net.init_params(rng);
    save_weights(dir / "theta.bin", theta, net.layers());
    std::vector<int> layers;
    CHECK(load_weights(dir / "theta.bin", &layers) == theta);
    CHECK(layers == net.layers());
    CHECK_THROWS_AS(save_weights(dir / "bad.bin", theta, {3, 4}), ShapeError);
    CHECK_THROWS_AS(load_weights(dir / "missing.bin"), InvalidArgument);
    std::filesystem::remove_all(dir);
}

TEST_CASE("training is deterministic for a fixed seed") {
    for (auto algo : {DqnAlgo::dqn, DqnAlgo::bdqn}) {
        DqnConfig cfg;
        cfg.algo = algo;
        cfg.hidden = {16, 16};
        cfg.episodes = 5;
        cfg.update_frequency = 10;
        cfg.sample_length = 50;
        std::string csv[2];
        for (auto& out : csv) {
            auto env = VoltageControlEnv::from_config(wscc_env());
            const auto res = train_dqn(env, cfg, 7);
            CHECK(res.episodes.size() == 5);
            std::ostringstream os;
            res.table().write_csv(os);
            out = os.str();
        }
        CHECK(csv[0] == csv[1]);
        if (algo == DqnAlgo::bdqn) CHECK(csv[0].find("NA") != std::string::npos);
    }
}

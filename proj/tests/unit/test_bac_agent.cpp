#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>
#include <sstream>

#include "oracles/batch_gp.hpp"
#include "oracles/toy_mdp.hpp"
#include "voltpomdp/bac.hpp"
#include "voltpomdp/errors.hpp"

using namespace voltpomdp;

namespace {

Eigen::VectorXd random_vector(Eigen::Index n, Rng& rng, double scale = 1.0) {
    std::normal_distribution<double> g(0.0, scale);
    Eigen::VectorXd v(n);
    for (auto& x : v) x = g(rng);
    return v;
}

double log_prob(const Eigen::VectorXd& phi, std::size_t a, const Eigen::VectorXd& theta, std::size_t n_actions) {
    return std::log(policy_probs(phi, theta, n_actions)(static_cast<Eigen::Index>(a)));
}

// Random state-action points with real policy scores.
std::vector<SaPoint> random_points(std::size_t n, std::size_t d, std::size_t n_actions, Rng& rng) {
    const auto theta = random_vector(static_cast<Eigen::Index>(d * n_actions), rng, 0.5);
    std::vector<SaPoint> pts;
    for (std::size_t i = 0; i < n; ++i) {
        SaPoint z;
        z.phi = random_vector(static_cast<Eigen::Index>(d), rng).cwiseAbs();
        z.action = sample_action(policy_probs(z.phi, theta, n_actions), rng);
        z.score = step_score(z.phi, z.action, theta, n_actions);
        pts.push_back(std::move(z));
    }
    return pts;
}

Gptd gptd_over(const Eigen::MatrixXd& k, GptdConfig cfg) {
    return Gptd([k](std::size_t i, std::size_t j) { return k(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)); },
                cfg);
}

EnvConfig wscc_env() {
    EnvConfig cfg;
    cfg.case_file = VOLTPOMDP_CASES_DIR "/wscc9.json";
    cfg.e_max = 10;
    return cfg;
}

}  // namespace

TEST_CASE("gaussian state features") {
    StateKernelConfig cfg;
    cfg.centers = {0.95, 1.0, 1.05};
    cfg.variance = 0.02 * 0.02;
    const std::vector<double> at_first{0.95};
    CHECK(rbf_features(at_first, cfg)(0) == 1.0);
    const std::vector<double> one_sigma{1.02};
    CHECK(rbf_features(one_sigma, cfg)(1) == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));

    auto rng = make_rng(3);
    std::uniform_real_distribution<double> v(0.8, 1.2);
    for (int i = 0; i < 200; ++i) {
        const std::vector<double> x{v(rng)};
        const auto phi = rbf_features(x, cfg);
        CHECK((phi.array() > 0.0).all());
        CHECK((phi.array() <= 1.0).all());
    }

    Discretization disc;
    disc.monitored_buses = {5, 6, 8};
    const auto wscc = StateKernelConfig::from_discretization(disc);
    CHECK(wscc.centers.size() == 20);
    CHECK(wscc.variance == doctest::Approx(1e-4));
    CHECK(wscc.n_features() == 60);
    const std::vector<double> three{0.905, 1.0, 1.095};
    const auto phi = rbf_features(three, wscc);
    CHECK(phi(0) == doctest::Approx(1.0));
    CHECK(phi(20 + 9) == doctest::Approx(phi(20 + 10)));
    CHECK(phi(40 + 19) == doctest::Approx(1.0));

    CHECK_THROWS_AS(rbf_features(at_first, wscc), ShapeError);
    StateKernelConfig bad = cfg;
    bad.centers = {1.0, 1.0};
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
    bad = cfg;
    bad.variance = 0.0;
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}

TEST_CASE("softmax policy") {
    const Eigen::VectorXd phi = Eigen::Vector3d(0.2, 1.0, 0.4);
    const auto uniform = policy_probs(phi, Eigen::VectorXd::Zero(3 * 125), 125);
    CHECK(uniform.size() == 125);
    CHECK((uniform.array() - 1.0 / 125.0).abs().maxCoeff() < 1e-15);

    auto rng = make_rng(8);
    for (double scale : {0.1, 1.0, 100.0, 1e4}) {
        const auto theta = random_vector(3 * 125, rng, scale);
        const auto p = policy_probs(phi, theta, 125);
        CHECK((p.array() >= 0.0).all());
        CHECK(std::abs(p.sum() - 1.0) < 1e-12);

        // delta with phi . delta = c shifts every logit by c.
        Eigen::VectorXd shifted = theta;
        const Eigen::Vector3d delta(0.0, 3.7, 0.0);
        for (int a = 0; a < 125; ++a) shifted.segment(3 * a, 3) += delta;
        CHECK((policy_probs(phi, shifted, 125) - p).cwiseAbs().maxCoeff() < 1e-12);
    }
    CHECK_THROWS_AS(policy_probs(phi, Eigen::VectorXd::Zero(7), 2), ShapeError);
}

TEST_CASE("fisher score") {
    const Eigen::VectorXd phi = Eigen::Vector2d(0.6, 0.3);
    const auto u = step_score(phi, 0, Eigen::VectorXd::Zero(4), 2);
    CHECK((u.head(2) - 0.5 * phi).norm() < 1e-15);
    CHECK((u.tail(2) + 0.5 * phi).norm() < 1e-15);

    auto rng = make_rng(12);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n_actions = 2 + static_cast<std::size_t>(trial % 5);
        const Eigen::VectorXd x = random_vector(4, rng).cwiseAbs();
        Eigen::VectorXd theta = random_vector(static_cast<Eigen::Index>(4 * n_actions), rng);
        const auto mu = policy_probs(x, theta, n_actions);

        Eigen::VectorXd expectation = Eigen::VectorXd::Zero(theta.size());
        for (std::size_t a = 0; a < n_actions; ++a) expectation += mu(static_cast<Eigen::Index>(a)) * step_score(x, a, theta, n_actions);
        CHECK(expectation.cwiseAbs().maxCoeff() < 1e-14);

        const std::size_t a = static_cast<std::size_t>(trial) % n_actions;
        const auto analytic = step_score(x, a, theta, n_actions);
        Eigen::VectorXd fd(theta.size());
        for (Eigen::Index k = 0; k < theta.size(); ++k) {
            const double keep = theta(k);
            theta(k) = keep + 1e-6;
            const double up = log_prob(x, a, theta, n_actions);
            theta(k) = keep - 1e-6;
            const double down = log_prob(x, a, theta, n_actions);
            theta(k) = keep;
            fd(k) = (up - down) / 2e-6;
        }
        CHECK((analytic - fd).norm() / analytic.norm() < 1e-5);
    }

    BacEpisode ep;
    ep.points.push_back({phi, 0, u});
    ep.points.push_back({phi, 1, step_score(phi, 1, Eigen::VectorXd::Zero(4), 2)});
    CHECK(fisher_score(ep).norm() < 1e-15);
    CHECK_THROWS_AS(fisher_score(BacEpisode{}), InvalidArgument);
}

TEST_CASE("fisher kernel") {
    auto rng = make_rng(21);
    const auto u = random_vector(6, rng);
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(6, 6);
    CHECK(fisher_kernel(Eigen::VectorXd::Zero(6), u, eye) == 0.0);
    CHECK(fisher_kernel(u, u, eye) == doctest::Approx(u.squaredNorm()).epsilon(1e-5));
    CHECK_THROWS_AS(fisher_kernel(u, u, Eigen::MatrixXd::Identity(5, 5)), ShapeError);

    SUBCASE("accumulated information is symmetric PSD and the Gram matrix is PSD") {
        const auto pts = random_points(20, 3, 4, rng);
        FisherInfo fisher(12);
        for (const auto& p : pts) {
            fisher.add(p.score);
            const auto g = fisher.matrix();
            CHECK((g - g.transpose()).norm() == 0.0);
            CHECK(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(g).eigenvalues().minCoeff() >= -1e-12);
        }
        std::vector<Eigen::VectorXd> us;
        for (const auto& p : pts) us.push_back(p.score);
        const auto gram = fisher.gram(us);
        CHECK(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(gram).eigenvalues().minCoeff() >= -1e-8);
    }

    SUBCASE("factored kernel matches the dense solve") {
        for (std::size_t m : {3u, 12u, 40u}) {
            const auto pts = random_points(m, 3, 4, rng);
            FisherInfo fisher(12);
            for (const auto& p : pts) fisher.add(p.score);
            const auto g = fisher.matrix();
            CHECK(fisher.trace() == doctest::Approx(g.trace()));
            for (int trial = 0; trial < 10; ++trial) {
                const auto a = random_vector(12, rng);
                const auto b = pts[static_cast<std::size_t>(trial) % m].score;
                const double dense = fisher_kernel(a, b, g);
                CHECK(fisher.kernel(a, b) == doctest::Approx(dense).epsilon(1e-6));
                CHECK(fisher.kernel(b, b) == doctest::Approx(fisher_kernel(b, b, g)).epsilon(1e-6));
            }
        }
    }
}

TEST_CASE("gptd closed forms") {
    SUBCASE("zero rewards leave the prior mean") {
        auto rng = make_rng(4);
        const Eigen::MatrixXd a = Eigen::MatrixXd::Random(6, 6);
        const Eigen::MatrixXd k = a * a.transpose() + Eigen::MatrixXd::Identity(6, 6);
        auto gp = gptd_over(k, {0.9, 0.5, 1e-10});
        const std::vector<std::size_t> ids{0, 1, 2, 3, 4, 5};
        const std::vector<double> zeros(6, 0.0);
        gp.add_episode(ids, zeros);
        for (std::size_t i = 0; i < 6; ++i) CHECK(gp.mean(i) == 0.0);
    }
    SUBCASE("single transition with gamma 0 is one-point regression") {
        Eigen::MatrixXd k(1, 1);
        k << 2.5;
        auto gp = gptd_over(k, {0.0, 0.7, 0.01});
        const std::vector<std::size_t> ids{0};
        const std::vector<double> r{4.0};
        gp.add_episode(ids, r);
        CHECK(gp.mean(0) == doctest::Approx(2.5 * 4.0 / (2.5 + 0.7)).epsilon(1e-14));
        CHECK(gp.covariance(0, 0) == doctest::Approx(2.5 - 2.5 * 2.5 / 3.2).epsilon(1e-14));
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(gptd_over(Eigen::MatrixXd::Identity(1, 1), {0.9, 0.0, 0.01}), InvalidArgument);
        auto gp = gptd_over(Eigen::MatrixXd::Identity(2, 2), {});
        const std::vector<std::size_t> ids{0, 1};
        const std::vector<double> r{1.0};
        CHECK_THROWS_AS(gp.add_episode(ids, r), ShapeError);
        auto nan = gptd_over(Eigen::MatrixXd::Constant(1, 1, std::nan("")), {});
        CHECK_THROWS_AS(nan.add_episode(std::vector<std::size_t>{0}, std::vector<double>{1.0}), NumericalError);
    }
}

TEST_CASE("incremental gptd equals the batch GP posterior") {
    auto rng = make_rng(77);
    SUBCASE("deterministic three-state chain") {
        // Chain 0 -> 1 -> 2 -> end with rewards 1, 2, 3, visited twice.
        Eigen::MatrixXd kx(3, 3);
        kx << 1.0, 0.5, 0.1, 0.5, 1.0, 0.5, 0.1, 0.5, 1.0;
        const std::vector<std::size_t> state{0, 1, 2, 0, 1, 2};
        Eigen::MatrixXd k(6, 6);
        for (int i = 0; i < 6; ++i) {
            for (int j = 0; j < 6; ++j) k(i, j) = kx(static_cast<Eigen::Index>(state[static_cast<std::size_t>(i)]), static_cast<Eigen::Index>(state[static_cast<std::size_t>(j)]));
        }
        const std::vector<double> r{1.0, 2.0, 3.0, 1.0, 2.0, 3.0};
        const auto batch = oracle::batch_gptd(k, {{0, 3}, {3, 3}}, r, 0.95, 0.1);
        auto gp = gptd_over(k, {0.95, 0.1, 1e-10});
        gp.add_episode(std::vector<std::size_t>{0, 1, 2}, std::vector<double>{1.0, 2.0, 3.0});
        gp.add_episode(std::vector<std::size_t>{3, 4, 5}, std::vector<double>{1.0, 2.0, 3.0});
        CHECK(gp.dictionary().size() == 3);
        for (Eigen::Index i = 0; i < 6; ++i) {
            CHECK(std::abs(gp.mean(static_cast<std::size_t>(i)) - batch.mean(i)) < 1e-8);
            for (Eigen::Index j = 0; j < 6; ++j) {
                CHECK(std::abs(gp.covariance(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) - batch.covariance(i, j)) < 1e-8);
            }
        }
    }
    SUBCASE("random BAC kernels on episodes of up to 30 points") {
        for (int trial = 0; trial < 10; ++trial) {
            const int n_eps = 1 + trial % 3;
            std::vector<std::pair<int, int>> ranges;
            int total = 0;
            for (int e = 0; e < n_eps; ++e) {
                const int len = 30 / n_eps - e;
                ranges.emplace_back(total, len);
                total += len;
            }
            const auto pts = random_points(static_cast<std::size_t>(total), 3, 3, rng);
            FisherInfo fisher(9);
            for (const auto& p : pts) fisher.add(p.score);
            const auto k = bac_gram(pts, fisher);
            std::vector<double> r;
            std::uniform_real_distribution<double> rew(-2.0, 2.0);
            for (int i = 0; i < total; ++i) r.push_back(rew(rng));
            const auto batch = oracle::batch_gptd(k, ranges, r, 0.99, 1.0);

            auto gp = gptd_over(k, {0.99, 1.0, 1e-10});
            for (const auto& [start, len] : ranges) {
                std::vector<std::size_t> ids;
                for (int t = 0; t < len; ++t) ids.push_back(static_cast<std::size_t>(start + t));
                gp.add_episode(ids, std::span<const double>(r).subspan(static_cast<std::size_t>(start), static_cast<std::size_t>(len)));
            }
            INFO("trial ", trial, " dict ", gp.dictionary().size());
            const auto& c = gp.c();
            CHECK((c - c.transpose()).cwiseAbs().maxCoeff() < 1e-10);
            for (Eigen::Index i = 0; i < total; ++i) {
                CHECK(std::abs(gp.mean(static_cast<std::size_t>(i)) - batch.mean(i)) < 1e-8);
                CHECK(std::abs(gp.covariance(static_cast<std::size_t>(i), static_cast<std::size_t>(i)) - batch.covariance(i, i)) < 1e-8);
            }
        }
    }
    SUBCASE("sparsification bounds the dictionary") {
        const auto pts = random_points(200, 2, 2, rng);
        FisherInfo fisher(4);
        for (const auto& p : pts) fisher.add(p.score);
        const auto k = bac_gram(pts, fisher);
        auto gp = gptd_over(k, {0.99, 1.0, 0.01});
        std::vector<std::size_t> ids(200);
        std::iota(ids.begin(), ids.end(), 0);
        gp.add_episode(ids, std::vector<double>(200, 1.0));
        CHECK(gp.dictionary().size() < 200);
        CHECK(gp.alpha().size() == static_cast<Eigen::Index>(gp.dictionary().size()));
    }
}

TEST_CASE("gradient posterior") {
    auto rng = make_rng(5);
    const Eigen::MatrixXd u = Eigen::MatrixXd::Random(6, 4);
    const Eigen::MatrixXd g = u * u.transpose();
    const Eigen::MatrixXd c = Eigen::MatrixXd::Random(4, 4);
    const auto zero_alpha = gradient_posterior(u, Eigen::VectorXd::Zero(4), c, g);
    CHECK(zero_alpha.mean.isZero(0.0));
    const auto zero_c = gradient_posterior(u, random_vector(4, rng), Eigen::MatrixXd::Zero(4, 4), g);
    CHECK(zero_c.covariance == g);
    CHECK_THROWS_AS(gradient_posterior(u, Eigen::VectorXd::Zero(3), c, g), ShapeError);
}

TEST_CASE("toy MDP: the BAC gradient tracks the Monte-Carlo gradient") {
    const oracle::ToyMdp mdp;
    Eigen::VectorXd theta(4);
    theta << 0.3, -0.2, 0.1, 0.4;
    auto rng = make_rng(2024);

    // The Monte-Carlo oracle itself agrees with finite differences of the exact return.
    Eigen::VectorXd exact(4);
    for (Eigen::Index k = 0; k < 4; ++k) {
        Eigen::VectorXd up = theta, down = theta;
        up(k) += 1e-6;
        down(k) -= 1e-6;
        exact(k) = (mdp.expected_return(up) - mdp.expected_return(down)) / 2e-6;
    }
    const auto mc = mdp.monte_carlo_gradient(theta, 100000, rng);
    CHECK(oracle::angle_degrees(mc, exact) < 3.0);

    std::vector<BacEpisode> episodes;
    for (int i = 0; i < 2000; ++i) episodes.push_back(mdp.sample(theta, rng));
    const auto bac = bac_gradient(episodes, 2, GptdConfig{mdp.gamma, 1.0, 0.01});
    CHECK(oracle::angle_degrees(bac, mc) < 15.0);
}

TEST_CASE("toy MDP: ascent along the Monte-Carlo gradient improves the return") {
    const oracle::ToyMdp mdp;
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(4);
    auto rng = make_rng(99);
    double prev = mdp.expected_return(theta);
    for (int i = 0; i < 20; ++i) {
        theta += 0.0025 * mdp.monte_carlo_gradient(theta, 20000, rng);
        const double now = mdp.expected_return(theta);
        CHECK(now > prev);
        prev = now;
    }
}

TEST_CASE("training on WSCC-9") {
    BacConfig cfg;
    cfg.n_updates = 4;
    cfg.episodes_per_update = 3;
    cfg.eval_every = 2;
    cfg.eval_episodes = 2;
    std::string csv[2];
    for (auto& out : csv) {
        auto env = VoltageControlEnv::from_config(wscc_env());
        const auto res = bac_train(env, cfg, 11);
        CHECK(res.evaluations.size() == 3);
        CHECK(res.evaluations.back().update_index == 4);
        CHECK(res.theta.size() == 60 * 125);
        CHECK(res.theta.allFinite());
        for (const auto& e : res.evaluations) {
            CHECK(e.avg_episode_len >= 1.0);
            CHECK(e.avg_episode_len <= 10.0);
            CHECK(e.avg_episodic_reward <= 50.0 * 10);
        }
        std::ostringstream os;
        res.table().write_csv(os);
        out = os.str();
    }
    CHECK(csv[0] == csv[1]);
    CHECK(csv[0].rfind("update_index,eval_index,mse_vs_1pu,avg_episode_len,avg_episodic_reward", 0) == 0);

    BacConfig bad;
    bad.beta = 0.0;
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}

TEST_CASE("policy checkpoint round trip") {
    const auto dir = std::filesystem::temp_directory_path() / "voltpomdp_bac_ckpt";
    std::filesystem::create_directories(dir);
    Discretization disc;
    disc.monitored_buses = {6};
    const auto kernel = StateKernelConfig::from_discretization(disc);
    auto rng = make_rng(1);
    const auto theta = random_vector(20 * 125, rng);
    save_policy(dir / "theta.bin", theta, kernel, 125);
    StateKernelConfig loaded;
    std::size_t n_actions = 0;
    CHECK(load_policy(dir / "theta.bin", &loaded, &n_actions) == theta);
    CHECK(n_actions == 125);
    CHECK(loaded.centers == kernel.centers);
    CHECK(loaded.variance == kernel.variance);
    CHECK_THROWS_AS(save_policy(dir / "bad.bin", theta, kernel, 124), ShapeError);
    std::filesystem::remove_all(dir);
}

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "ctxprune/error.hpp"
#include "ctxprune/qnet.hpp"
#include "ctxprune/rng.hpp"

using namespace ctxprune;

namespace {

constexpr double kH = 1e-5;
constexpr double kRelTol = 1e-5;

NetSpec small_spec(Rng& rng) {
    std::uniform_int_distribution<int> dim(2, 6);
    std::uniform_int_distribution<int> depth(1, 2);
    NetSpec s;
    s.input_dim = dim(rng);
    s.hidden_dims.clear();
    for (int i = 0, n = depth(rng); i < n; ++i) s.hidden_dims.push_back(dim(rng));
    s.output_dim = dim(rng);
    return s;
}

FlatWeights random_weights(const NetSpec& s, Rng& rng) {
    FlatWeights w = init_weights(s, rng());
    std::normal_distribution<double> n(0.0, 0.5);
    for (auto& b : w.biases)
        for (double& x : b) x = n(rng);
    return w;
}

std::vector<double> random_vector(std::size_t n, Rng& rng, double scale = 1.0) {
    std::normal_distribution<double> d(0.0, scale);
    std::vector<double> v(n);
    for (double& x : v) x = d(rng);
    return v;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

/// Smallest |pre-activation| over hidden units; FD across a ReLU kink is meaningless.
double kink_distance(const FlatWeights& w, const std::vector<double>& obs) {
    std::vector<double> a = obs;
    double closest = INFINITY;
    const auto layers = unflatten(w);
    for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
        const Layer& L = layers[l];
        std::vector<double> z(static_cast<std::size_t>(L.rows));
        for (int r = 0; r < L.rows; ++r) {
            double s = L.bias[static_cast<std::size_t>(r)];
            for (int c = 0; c < L.cols; ++c)
                s += L.weight[static_cast<std::size_t>(r * L.cols + c)] * a[static_cast<std::size_t>(c)];
            closest = std::min(closest, std::abs(s));
            z[static_cast<std::size_t>(r)] = std::max(0.0, s);
        }
        a = z;
    }
    return closest;
}

/// up . Q(x) for weights w * gates, evaluated independently in long double so
/// that finite differences of tiny logit gradients are not swamped by rounding.
long double gated_dot_ld(const FlatWeights& w, const std::vector<long double>& gates,
                         const std::vector<double>& obs, const std::vector<double>& up) {
    std::vector<long double> a(obs.begin(), obs.end());
    const auto layers = unflatten(w);
    std::size_t offset = 0;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const Layer& L = layers[l];
        std::vector<long double> z(static_cast<std::size_t>(L.rows));
        for (int r = 0; r < L.rows; ++r) {
            long double s = L.bias[static_cast<std::size_t>(r)];
            for (int c = 0; c < L.cols; ++c) {
                const auto k = static_cast<std::size_t>(r * L.cols + c);
                s += static_cast<long double>(L.weight[k]) * gates[offset + k] * a[static_cast<std::size_t>(c)];
            }
            z[static_cast<std::size_t>(r)] = l + 1 < layers.size() ? std::max(0.0L, s) : s;
        }
        offset += static_cast<std::size_t>(L.rows * L.cols);
        a = std::move(z);
    }
    long double out = 0.0L;
    for (std::size_t i = 0; i < a.size(); ++i) out += a[i] * up[i];
    return out;
}

long double sigmoid_ld(long double x) { return 1.0L / (1.0L + std::exp(-x)); }

bool close(double analytic, double numeric) {
    const double scale = std::max(std::abs(analytic), std::abs(numeric));
    if (scale < 1e-7) return std::abs(analytic - numeric) < 1e-11;
    return std::abs(analytic - numeric) / scale < kRelTol;
}

}  // namespace

TEST_CASE("layout arithmetic") {
    NetSpec s;
    s.input_dim = 129;
    s.hidden_dims = {64, 64};
    CHECK(s.num_weights() == 129u * 64 + 64u * 64 + 64u * 4);
    CHECK(s.layer_rows(0) == 64);
    CHECK(s.layer_cols(0) == 129);
    const FlatWeights w = init_weights(s, 1);
    CHECK(w.layer_offset(1) == 129u * 64);
    NetSpec bad = s;
    bad.hidden_dims.clear();
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = s;
    bad.hidden_dims = {0};
    CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("glorot init bounds and zero biases") {
    NetSpec s;
    s.input_dim = 129;
    const FlatWeights w = init_weights(s, 42);
    for (int l = 0; l < s.num_layers(); ++l) {
        const double lim = std::sqrt(6.0 / (s.layer_rows(l) + s.layer_cols(l)));
        const auto begin = w.layer_offset(l);
        const auto end = begin + static_cast<std::size_t>(s.layer_rows(l) * s.layer_cols(l));
        for (std::size_t i = begin; i < end; ++i) REQUIRE(std::abs(w.w[i]) <= lim);
    }
    for (const auto& b : w.biases)
        for (double x : b) CHECK(x == 0.0);
    CHECK(init_weights(s, 42) == w);
    CHECK_FALSE(init_weights(s, 43) == w);
}

TEST_CASE("forward examples") {
    NetSpec s;
    s.input_dim = 5;
    s.hidden_dims = {3};
    s.output_dim = 2;
    const auto zero = forward(zero_weights(s), std::vector<double>{1, 2, 3, 4, 5});
    CHECK(zero == std::vector<double>{0.0, 0.0});

    // 2-2-1 net by hand: h = relu([[1,-1],[0.5,2]] x + [0, -1]), q = [3, -2] h + 0.25
    NetSpec t;
    t.input_dim = 2;
    t.hidden_dims = {2};
    t.output_dim = 1;
    std::vector<Layer> layers(2);
    layers[0] = {2, 2, {1.0, -1.0, 0.5, 2.0}, {0.0, -1.0}};
    layers[1] = {1, 2, {3.0, -2.0}, {0.25}};
    const FlatWeights w = flatten(t, layers);
    // x = (2, 1): z = (1, 2), h = (1, 2), q = 3 - 4 + 0.25
    CHECK(forward(w, std::vector<double>{2.0, 1.0})[0] == doctest::Approx(-0.75).epsilon(1e-15));
    // x = (-1, 0.25): z = (-1.25, -1), h = 0, q = 0.25
    CHECK(forward(w, std::vector<double>{-1.0, 0.25})[0] == 0.25);

    CHECK_THROWS_AS(forward(w, std::vector<double>{1.0}), Error);
}

TEST_CASE("flatten round trip is exact") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const NetSpec s = small_spec(rng);
        const FlatWeights w = random_weights(s, rng);
        const FlatWeights back = flatten(s, unflatten(w));
        REQUIRE(std::memcmp(back.w.data(), w.w.data(), w.w.size() * sizeof(double)) == 0);
        REQUIRE(back == w);
        const auto obs = random_vector(static_cast<std::size_t>(s.input_dim), rng);
        REQUIRE(forward(back, obs) == forward(w, obs));
    }
}

TEST_CASE("batched and single-sample passes agree") {
    Rng rng(6);
    const NetSpec s = small_spec(rng);
    const FlatWeights w = random_weights(s, rng);
    std::vector<std::vector<double>> obs;
    for (int i = 0; i < 7; ++i) obs.push_back(random_vector(static_cast<std::size_t>(s.input_dim), rng));
    const auto cache = forward_batch(w, make_batch(obs));
    for (std::size_t i = 0; i < obs.size(); ++i) {
        const auto q = forward(w, obs[i]);
        for (int a = 0; a < s.output_dim; ++a) {
            CHECK(cache.output()(a, static_cast<Eigen::Index>(i)) ==
                  doctest::Approx(q[static_cast<std::size_t>(a)]).epsilon(1e-14));
        }
    }
}

TEST_CASE("backward examples") {
    Rng rng(7);
    const NetSpec s = small_spec(rng);
    const FlatWeights w = random_weights(s, rng);
    const auto obs = random_vector(static_cast<std::size_t>(s.input_dim), rng);

    const auto g0 = backward(w, obs, std::vector<double>(static_cast<std::size_t>(s.output_dim), 0.0));
    for (double x : g0.d_w) CHECK(x == 0.0);
    for (const auto& b : g0.d_biases)
        for (double x : b) CHECK(x == 0.0);

    const auto up = random_vector(static_cast<std::size_t>(s.output_dim), rng);
    const auto g = backward(w, obs, up);
    CHECK(g.d_biases.back() == up);
}

TEST_CASE("backward matches central finite differences") {
    Rng rng(2024);
    int checked = 0;
    int attempts = 0;
    while (checked < 100) {
        REQUIRE(++attempts < 1000);
        const NetSpec s = small_spec(rng);
        const FlatWeights w = random_weights(s, rng);
        const auto obs = random_vector(static_cast<std::size_t>(s.input_dim), rng);
        if (kink_distance(w, obs) < 1e-3) continue;
        const auto up = random_vector(static_cast<std::size_t>(s.output_dim), rng);
        const auto g = backward(w, obs, up);

        for (std::size_t i = 0; i < w.w.size(); ++i) {
            FlatWeights p = w;
            FlatWeights m = w;
            p.w[i] += kH;
            m.w[i] -= kH;
            const double fd = (dot(up, forward(p, obs)) - dot(up, forward(m, obs))) / (2 * kH);
            REQUIRE(close(g.d_w[i], fd));
        }
        for (std::size_t l = 0; l < w.biases.size(); ++l) {
            for (std::size_t i = 0; i < w.biases[l].size(); ++i) {
                FlatWeights p = w;
                FlatWeights m = w;
                p.biases[l][i] += kH;
                m.biases[l][i] -= kH;
                const double fd = (dot(up, forward(p, obs)) - dot(up, forward(m, obs))) / (2 * kH);
                REQUIRE(close(g.d_biases[l][i], fd));
            }
        }
        ++checked;
    }
}

TEST_CASE("argmax breaks ties toward the lowest index") {
    CHECK(argmax_action(std::vector<double>{1.0, 3.0, 3.0, 0.0}) == 1);
    CHECK(argmax_action(std::vector<double>{0.0, 0.0, 0.0, 0.0}) == 0);
    CHECK(argmax_action(std::vector<double>{-1.0, -2.0, -0.5, -0.5}) == 2);
}

TEST_CASE("hard mask uses a strict threshold") {
    MaskLogits l{{-1.0, 0.0, 1e-300, 2.0}};
    CHECK(l.hard_mask() == std::vector<std::uint8_t>{0, 0, 1, 1});
    CHECK(l.density() == 0.5);
    CHECK(sigmoid(0.0) == 0.5);
    CHECK(sigmoid_derivative(0.0) == 0.25);
    CHECK(std::isfinite(sigmoid(-1000.0)));
    CHECK(sigmoid(1000.0) == 1.0);
}

TEST_CASE("straight-through forward identities") {
    Rng rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        const NetSpec s = small_spec(rng);
        const FlatWeights w = random_weights(s, rng);
        const auto obs = random_vector(static_cast<std::size_t>(s.input_dim), rng);
        MaskLogits logits{random_vector(w.size(), rng)};

        // Train and eval forward are bitwise equal.
        const auto train = masked_forward(w, logits, obs, MaskMode::Train);
        const auto eval = masked_forward(w, logits, obs, MaskMode::Eval);
        REQUIRE(std::memcmp(train.data(), eval.data(), train.size() * sizeof(double)) == 0);

        // All-ones mask reproduces the unmasked network bitwise.
        MaskLogits on{std::vector<double>(w.size(), 10.0)};
        const auto full = forward(w, obs);
        const auto masked_on = masked_forward(w, on, obs, MaskMode::Train);
        REQUIRE(std::memcmp(full.data(), masked_on.data(), full.size() * sizeof(double)) == 0);

        // All-zeros mask leaves only the biases.
        MaskLogits off{std::vector<double>(w.size(), -10.0)};
        FlatWeights biases_only = w;
        std::fill(biases_only.w.begin(), biases_only.w.end(), 0.0);
        REQUIRE(masked_forward(w, off, obs, MaskMode::Eval) == forward(biases_only, obs));

        // Gating never touches biases.
        const FlatWeights gated = apply_gates(w, hard_gates(logits));
        REQUIRE(gated.biases == w.biases);
        for (std::size_t i = 0; i < w.size(); ++i) {
            REQUIRE(gated.w[i] == (logits.l[i] > 0.0 ? w.w[i] : 0.0));
        }
    }
}

TEST_CASE("logit gradient examples") {
    Rng rng(9);
    const NetSpec s = small_spec(rng);
    FlatWeights w = random_weights(s, rng);
    w.w[0] = 0.0;
    const auto obs = random_vector(static_cast<std::size_t>(s.input_dim), rng);
    const auto up = random_vector(static_cast<std::size_t>(s.output_dim), rng);

    MaskLogits zero{std::vector<double>(w.size(), 0.0)};
    const auto d = masked_backward_logits(w, zero, obs, up);
    CHECK(d[0] == 0.0);
    // At l = 0 the hard mask is all zeros, so dL/dw~ comes from the biases-only network.
    const auto g = backward(apply_gates(w, hard_gates(zero)), obs, up);
    for (std::size_t i = 0; i < w.size(); ++i) {
        REQUIRE(d[i] == doctest::Approx(0.25 * w.w[i] * g.d_w[i]).epsilon(1e-14));
    }
}

TEST_CASE("surrogate-path logit gradient matches finite differences") {
    Rng rng(31);
    int checked = 0;
    int attempts = 0;
    while (checked < 100) {
        REQUIRE(++attempts < 1000);
        const NetSpec s = small_spec(rng);
        const FlatWeights w = random_weights(s, rng);
        const auto obs = random_vector(static_cast<std::size_t>(s.input_dim), rng);
        const MaskLogits logits{random_vector(w.size(), rng, 2.0)};
        if (kink_distance(apply_gates(w, surrogate_gates(logits)), obs) < 1e-3) continue;
        const auto up = random_vector(static_cast<std::size_t>(s.output_dim), rng);
        const auto d = masked_backward_logits(w, logits, obs, up, GatePath::Surrogate);

        auto f = [&](const MaskLogits& l) {
            std::vector<long double> gates(w.size());
            for (std::size_t i = 0; i < w.size(); ++i) gates[i] = sigmoid_ld(l.l[i]);
            return gated_dot_ld(w, gates, obs, up);
        };
        for (std::size_t i = 0; i < w.size(); ++i) {
            MaskLogits p = logits;
            MaskLogits m = logits;
            p.l[i] += kH;
            m.l[i] -= kH;
            const double fd = static_cast<double>((f(p) - f(m)) / (static_cast<long double>(p.l[i]) - m.l[i]));
            INFO("analytic " << d[i] << " fd " << fd);
            REQUIRE(close(d[i], fd));
        }
        ++checked;
    }
}

TEST_CASE("straight-through logit gradient matches finite differences") {
    // The STE gradient at l0 is the exact gradient of
    //   f(l) = L(w * (m(l0) - sigma(l0) + sigma(l)))
    // whose value at l0 equals the hard-masked loss.
    Rng rng(32);
    int checked = 0;
    int attempts = 0;
    while (checked < 100) {
        REQUIRE(++attempts < 1000);
        const NetSpec s = small_spec(rng);
        const FlatWeights w = random_weights(s, rng);
        const auto obs = random_vector(static_cast<std::size_t>(s.input_dim), rng);
        const MaskLogits logits{random_vector(w.size(), rng, 2.0)};
        const auto hard = hard_gates(logits);
        if (kink_distance(apply_gates(w, hard), obs) < 1e-3) continue;
        const auto up = random_vector(static_cast<std::size_t>(s.output_dim), rng);
        const auto d = masked_backward_logits(w, logits, obs, up, GatePath::StraightThrough);

        auto f = [&](const MaskLogits& l) {
            std::vector<long double> gates(w.size());
            for (std::size_t i = 0; i < w.size(); ++i)
                gates[i] = hard[i] - sigmoid_ld(logits.l[i]) + sigmoid_ld(l.l[i]);
            return gated_dot_ld(w, gates, obs, up);
        };
        for (std::size_t i = 0; i < w.size(); ++i) {
            MaskLogits p = logits;
            MaskLogits m = logits;
            p.l[i] += kH;
            m.l[i] -= kH;
            const double fd = static_cast<double>((f(p) - f(m)) / (static_cast<long double>(p.l[i]) - m.l[i]));
            INFO("analytic " << d[i] << " fd " << fd);
            REQUIRE(close(d[i], fd));
        }
        ++checked;
    }
}

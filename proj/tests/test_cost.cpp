#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "branchy/cost.hpp"
#include "branchy/engine.hpp"
#include "oracles.hpp"

using namespace branchy;

namespace {

BranchyModel make_model(ModelKind kind, std::size_t embed_dim,
                        std::vector<std::size_t> hidden, std::size_t classes,
                        std::uint64_t seed) {
    ArchSpec spec;
    spec.kind = kind;
    spec.vocab_size = 20;
    spec.embedding_dim = embed_dim;
    spec.hidden_sizes = std::move(hidden);
    spec.n_classes = classes;
    return init_parameters(spec, seed);
}

}  // namespace

TEST_CASE("single-layer closed forms") {
    // dense 100->50 alone
    CHECK(detail::layer_params(ModelKind::kDnn, {100, 50}) == 5050);
    CHECK(detail::layer_flops(ModelKind::kDnn, {100, 50}, 1) == 5000);
    // LSTM cell in=10, h=20
    CHECK(detail::layer_params(ModelKind::kStackedLstm, {10, 20}) == 2480);
    CHECK(detail::layer_flops(ModelKind::kStackedLstm, {10, 20}, 5) == 12000);
}

TEST_CASE("count_params composes layers and heads") {
    BranchyModel m = make_model(ModelKind::kDnn, 4, {6, 5}, 3, 1);
    // layer1: 4*6+6=30, head1: 6*3+3=21; layer2: 6*5+5=35, head2: 5*3+3=18
    CHECK(count_params(m, 1) == 51);
    CHECK(count_params(m, 2) == 104);
    CHECK(count_params(m, 2, true) == 104 + 20 * 4);
    CHECK_THROWS_AS(count_params(m, 0), IndexError);
    CHECK_THROWS_AS(count_params(m, 3), IndexError);

    // heads make the multi-exit total exceed the headless backbone count
    std::uint64_t backbone_only = 30 + 35;
    CHECK(count_params(m, 2) > backbone_only);
}

TEST_CASE("count_flops composes layers and heads") {
    BranchyModel m = make_model(ModelKind::kDnn, 4, {6, 5}, 3, 1);
    // layer1: 24, head1: 6*3 + 3 + 6 = 27; layer2: 30, head2: 5*3 + 3 + 5 = 23
    CHECK(count_flops(m, 1, 1) == 51);
    CHECK(count_flops(m, 2, 1) == 104);
    CHECK(count_flops(m, 2, 7) == 104);  // seq_len is ignored for the DNN
    CHECK_THROWS_AS(count_flops(m, 1, 0), ConfigError);

    BranchyModel l = make_model(ModelKind::kStackedLstm, 3, {4, 4}, 2, 1);
    // cell1 per step: 4*(3*4+4*4)=112; head1: 4*2+2+4=14
    CHECK(count_flops(l, 1, 2) == 2 * 112 + 14);
    // cell2 per step: 4*(4*4+4*4)=128
    CHECK(count_flops(l, 2, 2) == 2 * 112 + 14 + 2 * 128 + 14);
}

TEST_CASE("cumulative costs increase strictly with exit index") {
    for (auto kind : {ModelKind::kDnn, ModelKind::kStackedLstm}) {
        BranchyModel m = make_model(kind, 5, {7, 6, 5, 4}, 3, 2);
        std::uint64_t prev_p = 0, prev_f = 0;
        for (std::size_t n = 1; n <= 4; ++n) {
            std::uint64_t p = count_params(m, n), f = count_flops(m, n, 3);
            CHECK(p > prev_p);
            CHECK(f > prev_f);
            prev_p = p;
            prev_f = f;
        }
    }
}

TEST_CASE("expected_complexity reproduces the published reference arithmetic") {
    ExitDistribution dnn_dist{{0.2780, 0.0192, 0.7020}};
    double dnn = expected_complexity({32.5, 38.7, 40.6}, dnn_dist);
    CHECK(dnn == Catch::Approx(38.27).margin(0.05));

    ExitDistribution lstm_dist{{0.1532, 0.0071, 0.8397}};
    double lstm = expected_complexity({23.1, 46.1, 69.2}, lstm_dist);
    CHECK(lstm == Catch::Approx(61.99).margin(0.05));

    CHECK(relative_savings(61.99, 69.2) == Catch::Approx(0.104).margin(0.001));
    CHECK(relative_savings(38.27, 36.2) == Catch::Approx(-0.0572).margin(0.0005));
    CHECK(relative_savings(38.27, 36.2) < 0.0);
    CHECK(relative_savings(5.0, 5.0) == 0.0);
    CHECK_THROWS_AS(relative_savings(1.0, 0.0), ConfigError);
}

TEST_CASE("expected_complexity edge cases and validation") {
    ExitDistribution degenerate{{1.0, 0.0, 0.0}};
    CHECK(expected_complexity({11.0, 22.0, 33.0}, degenerate) == 11.0);

    ExitDistribution point3{{0.0, 0.0, 1.0}};
    CHECK(expected_complexity({11.0, 22.0, 33.0}, point3) == 33.0);

    CHECK_THROWS_AS(expected_complexity({1.0, 2.0}, degenerate), ConfigError);
    ExitDistribution not_normalized{{0.5, 0.2, 0.2}};
    CHECK_THROWS_AS(expected_complexity({1, 2, 3}, not_normalized), ConfigError);
    ExitDistribution negative{{-0.2, 0.6, 0.6}};
    CHECK_THROWS_AS(expected_complexity({1, 2, 3}, negative), ConfigError);
}

TEST_CASE("expected_complexity is monotone under mass shifts toward earlier exits") {
    Rng rng(21);
    for (int it = 0; it < 200; ++it) {
        std::vector<double> flops{10, 25, 60};
        std::vector<double> p(3);
        double s = 0;
        for (double& v : p) {
            v = rng.uniform(0.01, 1.0);
            s += v;
        }
        for (double& v : p) v /= s;
        double base = expected_complexity(flops, ExitDistribution{p});
        // move mass from exit 3 to exit 1
        double delta = p[2] * rng.uniform(0.0, 1.0);
        std::vector<double> q = p;
        q[2] -= delta;
        q[0] += delta;
        CHECK(expected_complexity(flops, ExitDistribution{q}) <= base + 1e-12);
    }
}

TEST_CASE("analytic count_flops equals the instrumented MAC counter") {
    Rng rng(77);
    for (int it = 0; it < 20; ++it) {
        bool is_lstm = it % 2 == 1;
        std::size_t depth = is_lstm ? 2 + rng.index(3) : 2 + rng.index(4);
        std::vector<std::size_t> hidden;
        for (std::size_t l = 0; l < depth; ++l) hidden.push_back(2 + rng.index(15));
        std::size_t embed = 2 + rng.index(15);
        std::size_t classes = 2 + rng.index(6);
        std::size_t seq = 1 + rng.index(6);
        BranchyModel m = make_model(is_lstm ? ModelKind::kStackedLstm : ModelKind::kDnn,
                                    embed, hidden, classes, 100 + it);

        std::vector<std::size_t> tokens;
        for (std::size_t t = 0; t < seq; ++t) tokens.push_back(rng.index(20));

        MacCounter mc;
        forward_all_probs(m, tokens, &mc);
        CHECK(mc.macs == count_flops(m, depth, is_lstm ? seq : 1));

        // lazy early exit charges exactly the cumulative cost of the egress point
        for (std::size_t n = 1; n <= depth; ++n) {
            MacCounter forced;
            infer_early_exit(m, tokens, &forced, nullptr, n);
            CHECK(forced.macs == count_flops(m, n, is_lstm ? seq : 1));
        }
    }
}

TEST_CASE("measure_exit_distribution") {
    BranchyModel m = make_model(ModelKind::kDnn, 4, {6, 6, 6}, 3, 9);
    Dataset data = synth_generate(3, 8, 4, 0.2, 6);

    SECTION("zero thresholds force all mass onto the final exit") {
        m.thresholds = ThresholdSet{{0.0, 0.0, 0.0}};
        auto d = measure_exit_distribution(m, data).probs;
        CHECK(d == std::vector<double>{0.0, 0.0, 1.0});
    }

    SECTION("thresholds above ln C put all mass on exit 1") {
        double big = std::log(3.0) + 0.1;
        m.thresholds = ThresholdSet{{big, big, big}};
        auto d = measure_exit_distribution(m, data).probs;
        CHECK(d == std::vector<double>{1.0, 0.0, 0.0});
    }

    SECTION("entries always sum to 1") {
        m.thresholds = calibrate_thresholds(m, data);
        auto d = measure_exit_distribution(m, data).probs;
        double s = 0;
        for (double v : d) {
            CHECK(v >= 0.0);
            s += v;
        }
        CHECK(s == Catch::Approx(1.0).margin(1e-12));

        Dataset empty = data;
        empty.examples.clear();
        CHECK_THROWS_AS(measure_exit_distribution(m, empty), ConfigError);
    }
}

TEST_CASE("build_cost_report baseline equals backbone plus one final head") {
    BranchyModel m = make_model(ModelKind::kDnn, 4, {6, 5}, 3, 1);
    CostReport r = build_cost_report(m, 1);
    REQUIRE(r.per_exit.size() == 2);
    CHECK(r.per_exit[0].cumulative_params == count_params(m, 1));
    CHECK(r.per_exit[1].cumulative_flops == count_flops(m, 2, 1));
    // backbone 30+35 params, final head 18; flops 24+30 + (15+3)
    CHECK(r.baseline_params == 83);
    CHECK(r.baseline_flops == 72);
    // multi-exit totals exceed the single-head baseline
    CHECK(r.per_exit.back().cumulative_params > r.baseline_params);
}

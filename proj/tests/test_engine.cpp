#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "branchy/cost.hpp"
#include "branchy/engine.hpp"
#include "oracles.hpp"

using namespace branchy;

namespace {

ArchSpec small_dnn_spec(std::size_t vocab, std::size_t classes) {
    ArchSpec s;
    s.kind = ModelKind::kDnn;
    s.vocab_size = vocab;
    s.embedding_dim = 6;
    s.hidden_sizes = {8, 8, 8};
    s.n_classes = classes;
    return s;
}

}  // namespace

TEST_CASE("alpha_weights") {
    auto single = alpha_weights(1, 0.2, 0.9);
    REQUIRE(single.size() == 1);
    CHECK(single[0] == Catch::Approx(0.9).margin(1e-15));

    auto w = alpha_weights(3, 0.3, 1.0);
    CHECK(w[0] == Catch::Approx(1.0).margin(1e-12));
    CHECK(w[1] == Catch::Approx(0.65).margin(1e-12));
    CHECK(w[2] == Catch::Approx(0.3 + 0.7 / 3.0).margin(1e-12));

    auto flat = alpha_weights(4, 0.5, 0.5);
    for (double v : flat) CHECK(v == 0.5);

    CHECK_THROWS_AS(alpha_weights(3, 0.0, 1.0), ConfigError);
    CHECK_THROWS_AS(alpha_weights(3, 1.0, 0.5), ConfigError);
}

TEST_CASE("joint_loss") {
    std::vector<Tensor> logits{Tensor::vector({2.0, -1.0, 0.5}),
                               Tensor::vector({0.1, 0.2, 0.3}),
                               Tensor::vector({-1.0, -1.0, 5.0})};

    AlphaSchedule selector;
    selector.n_exits = 3;
    selector.mode = AlphaMode::kFixed;
    selector.fixed = {1.0, 0.0, 0.0};
    double exit1_ce = cross_entropy(softmax(logits[0]), 1).item();
    CHECK(joint_loss(logits, 1, selector).item() ==
          Catch::Approx(exit1_ce).margin(1e-12));

    // all exits uniform -> L = (sum alpha) * ln C
    std::vector<Tensor> uniform{Tensor::vector({0, 0, 0}), Tensor::vector({0, 0, 0}),
                                Tensor::vector({0, 0, 0})};
    AlphaSchedule sched = AlphaSchedule::make(3, 0.3, 1.0, AlphaMode::kFixed);
    double alpha_sum = 1.0 + 0.65 + (0.3 + 0.7 / 3.0);
    CHECK(joint_loss(uniform, 0, sched).item() ==
          Catch::Approx(alpha_sum * std::log(3.0)).margin(1e-9));

    // near-one-hot predictions at every exit -> loss ~ 0
    std::vector<Tensor> confident{Tensor::vector({50, 0, 0}),
                                  Tensor::vector({50, 0, 0}),
                                  Tensor::vector({50, 0, 0})};
    CHECK(joint_loss(confident, 0, sched).item() == Catch::Approx(0.0).margin(1e-9));

    std::vector<Tensor> short_list{logits[0]};
    CHECK_THROWS_AS(joint_loss(short_list, 0, sched), ConfigError);
}

TEST_CASE("joint_loss is linear in the alpha vector") {
    std::vector<Tensor> logits{Tensor::vector({1.0, -0.5}), Tensor::vector({0.2, 0.9})};
    auto make = [&](std::vector<double> w) {
        AlphaSchedule s;
        s.n_exits = 2;
        s.mode = AlphaMode::kFixed;
        s.fixed = std::move(w);
        return s;
    };
    double a = joint_loss(logits, 1, make({0.7, 0.2})).item();
    double b = joint_loss(logits, 1, make({0.1, 0.9})).item();
    double ab = joint_loss(logits, 1, make({0.8, 1.1})).item();
    CHECK(ab == Catch::Approx(a + b).margin(1e-12));
}

TEST_CASE("joint multi-exit loss gradient matches finite differences") {
    Rng rng(55);
    ArchSpec spec = small_dnn_spec(10, 4);
    BranchyModel model = init_parameters(spec, 3);
    std::vector<std::size_t> tokens{1, 4, 7};
    std::size_t label = 2;

    auto leaves = model.parameters();
    auto forward = [&] {
        auto features = dnn_forward(mean_embed(tokens, model.embedding), model.dnn);
        std::vector<Tensor> logits;
        for (std::size_t n = 0; n < features.size(); ++n)
            logits.push_back(exit_logits(features[n], model.heads[n]));
        return joint_loss(logits, label, model.alphas);
    };
    CHECK(oracles::max_grad_rel_error(leaves, forward) <= 1e-4);
}

TEST_CASE("entropy") {
    CHECK(entropy({1.0, 0.0, 0.0}) == 0.0);
    std::vector<double> uniform(25, 1.0 / 25);
    CHECK(entropy(uniform) == Catch::Approx(std::log(25.0)).margin(1e-12));
    CHECK(entropy({0.5, 0.5}) == Catch::Approx(std::log(2.0)).margin(1e-12));
}

TEST_CASE("entropy is maximized exactly by the uniform distribution") {
    Rng rng(13);
    for (int it = 0; it < 500; ++it) {
        std::size_t c = 2 + rng.index(12);
        std::vector<double> p(c);
        double s = 0;
        for (double& v : p) {
            v = -std::log(1.0 - rng.uniform());  // exponential draw
            s += v;
        }
        for (double& v : p) v /= s;
        double h = entropy(p);
        CHECK(h >= 0.0);
        CHECK(h <= std::log(double(c)) + 1e-12);
    }
}

TEST_CASE("scaling logits toward zero drives entropy to ln C, large scale to 0") {
    std::vector<double> logits{1.2, -0.3, 0.8};
    auto probs_at_scale = [&](double k) {
        std::vector<double> scaled = logits;
        for (double& v : scaled) v *= k;
        return kernels::softmax(scaled, nullptr);
    };
    CHECK(entropy(probs_at_scale(1e-9)) == Catch::Approx(std::log(3.0)).margin(1e-6));
    CHECK(entropy(probs_at_scale(1e4)) == Catch::Approx(0.0).margin(1e-6));
    // monotone between successive halvings toward zero
    double prev = entropy(probs_at_scale(1.0));
    for (double k = 0.5; k > 1e-4; k *= 0.5) {
        double cur = entropy(probs_at_scale(k));
        CHECK(cur >= prev - 1e-12);
        prev = cur;
    }
}

TEST_CASE("argmax prediction is invariant under logit shifts") {
    Rng rng(3);
    for (int it = 0; it < 100; ++it) {
        std::vector<double> logits(5);
        for (double& v : logits) v = rng.uniform(-4, 4);
        auto p1 = kernels::softmax(logits, nullptr);
        double shift = rng.uniform(-30, 30);
        std::vector<double> shifted = logits;
        for (double& v : shifted) v += shift;
        auto p2 = kernels::softmax(shifted, nullptr);
        CHECK(kernels::argmax(p1) == kernels::argmax(p2));
    }
}

TEST_CASE("calibrate_thresholds") {
    Dataset data = synth_generate(3, 4, 4, 0.0, 2);
    ArchSpec spec = small_dnn_spec(data.vocab.size(), 3);
    BranchyModel model = init_parameters(spec, 4);

    ThresholdSet t = calibrate_thresholds(model, data);
    REQUIRE(t.values.size() == 3);
    for (std::size_t n = 0; n < 3; ++n) {
        double s = 0;
        for (const auto& ex : data.examples)
            s += entropy(forward_all_probs(model, ex.tokens)[n]);
        CHECK(t.values[n] == Catch::Approx(s / double(data.size())).margin(1e-12));
        CHECK(t.values[n] >= 0.0);
        CHECK(t.values[n] <= std::log(3.0) + 1e-12);
    }

    Dataset single = data;
    single.examples.resize(1);
    ThresholdSet t1 = calibrate_thresholds(model, single);
    auto probs = forward_all_probs(model, single.examples[0].tokens);
    for (std::size_t n = 0; n < 3; ++n)
        CHECK(t1.values[n] == Catch::Approx(entropy(probs[n])).margin(1e-12));

    // a model emitting uniform probabilities everywhere -> thresholds = ln C
    BranchyModel flat = init_parameters(spec, 4);
    for (auto& head : flat.heads) {
        for (double& v : head.W.values()) v = 0.0;
        for (double& v : head.b.values()) v = 0.0;
    }
    for (double v : calibrate_thresholds(flat, data).values)
        CHECK(v == Catch::Approx(std::log(3.0)).margin(1e-12));

    Dataset empty = data;
    empty.examples.clear();
    CHECK_THROWS_AS(calibrate_thresholds(model, empty), CalibrationError);
}

TEST_CASE("infer_early_exit routing") {
    ArchSpec spec = small_dnn_spec(12, 3);
    BranchyModel model = init_parameters(spec, 4);
    std::vector<std::size_t> tokens{1, 5, 9};

    SECTION("uncalibrated model is a state error") {
        CHECK_THROWS_AS(infer_early_exit(model, tokens), StateError);
    }

    SECTION("first exit fires when its entropy clears the threshold") {
        auto probs = forward_all_probs(model, tokens);
        double h1 = entropy(probs[0]);
        model.thresholds = ThresholdSet{{h1 + 0.1, 0.0, 0.0}};
        std::size_t layers = 0;
        ExitTrace t = infer_early_exit(model, tokens, nullptr, &layers);
        CHECK(t.chosen_exit == 1);
        CHECK(t.entropies.size() == 1);
        CHECK(layers == 1);
        CHECK(t.prediction == kernels::argmax(probs[0]));
    }

    SECTION("no exit fires: fallback at N with all entropies recorded") {
        model.thresholds = ThresholdSet{{0.0, 0.0, 0.0}};
        std::size_t layers = 0;
        ExitTrace t = infer_early_exit(model, tokens, nullptr, &layers);
        CHECK(t.chosen_exit == 3);
        CHECK(t.entropies.size() == 3);
        CHECK(layers == 3);
    }

    SECTION("thresholds at ln C: everything non-uniform exits at 1") {
        double lnc = std::log(3.0);
        model.thresholds = ThresholdSet{{lnc, lnc, lnc}};
        ExitTrace t = infer_early_exit(model, tokens);
        auto probs = forward_all_probs(model, tokens);
        bool uniform_exit1 =
            std::abs(entropy(probs[0]) - lnc) < 1e-15;
        if (!uniform_exit1) CHECK(t.chosen_exit == 1);
    }
}

TEST_CASE("raising every threshold never reduces the early-egress fraction") {
    Dataset data = synth_generate(4, 10, 4, 0.2, 3);
    ArchSpec spec = small_dnn_spec(data.vocab.size(), 4);
    spec.hidden_sizes = {8, 8};
    BranchyModel model = init_parameters(spec, 6);
    model.thresholds = calibrate_thresholds(model, data);

    auto early_fraction = [&](double bump) {
        BranchyModel m = model;
        ThresholdSet t = *model.thresholds;
        for (double& v : t.values) v += bump;
        m.thresholds = t;
        std::size_t early = 0;
        for (const auto& ex : data.examples)
            if (infer_early_exit(m, ex.tokens).chosen_exit < m.n_exits()) ++early;
        return double(early) / double(data.size());
    };

    double prev = early_fraction(-0.5);
    for (double bump : {-0.25, 0.0, 0.25, 0.5, 1.0}) {
        double cur = early_fraction(bump);
        CHECK(cur >= prev);
        prev = cur;
    }
}

TEST_CASE("train_branchy basics") {
    Dataset full = synth_generate(2, 40, 5, 0.0, 17);
    auto parts = split(full, 0.8, 0.1, 0.1, 17);

    ArchSpec spec;
    spec.kind = ModelKind::kDnn;
    spec.vocab_size = full.vocab.size();
    spec.embedding_dim = 8;
    spec.hidden_sizes = {12, 12};
    spec.n_classes = 2;

    SECTION("lr = 0 leaves parameters unchanged") {
        BranchyModel model = init_parameters(spec, 5);
        auto before = model.embedding.weights.values();
        TrainConfig tc{0.0, 2, 8, 5};
        train_branchy(model, parts[0], parts[1], tc);
        CHECK(model.embedding.weights.values() == before);
    }

    SECTION("identical seeds give bit-identical parameters") {
        BranchyModel m1 = init_parameters(spec, 5);
        BranchyModel m2 = init_parameters(spec, 5);
        TrainConfig tc{0.1, 3, 8, 5};
        train_branchy(m1, parts[0], parts[1], tc);
        train_branchy(m2, parts[0], parts[1], tc);
        CHECK(m1.embedding.weights.values() == m2.embedding.weights.values());
        for (std::size_t l = 0; l < 2; ++l)
            CHECK(m1.dnn.layers[l].W.values() == m2.dnn.layers[l].W.values());
        for (std::size_t n = 0; n < 2; ++n)
            CHECK(m1.heads[n].W.values() == m2.heads[n].W.values());
    }

    SECTION("separable 2-class corpus reaches 99% train accuracy within 50 epochs") {
        BranchyModel model = init_parameters(spec, 5);
        TrainConfig tc{0.2, 50, 8, 5};
        train_branchy(model, parts[0], parts[0], tc);
        std::size_t hits = 0;
        for (const auto& ex : parts[0].examples)
            if (kernels::argmax(forward_all_probs(model, ex.tokens).back()) == ex.label)
                ++hits;
        CHECK(double(hits) / double(parts[0].size()) >= 0.99);
    }

    SECTION("trainable alphas stay within the clamp bounds") {
        ArchSpec tspec = spec;
        tspec.alpha_mode = AlphaMode::kTrainable;
        BranchyModel model = init_parameters(tspec, 5);
        TrainConfig tc{0.2, 3, 8, 5};
        train_branchy(model, parts[0], parts[1], tc);
        for (double a : model.alphas.current()) {
            CHECK(a >= tspec.r_l / 10.0);
            CHECK(a <= 10.0 * tspec.r_u);
        }
    }
}

TEST_CASE("forced final exit equals routing-free final-exit prediction") {
    ArchSpec spec = small_dnn_spec(14, 3);
    BranchyModel model = init_parameters(spec, 8);
    Dataset data = synth_generate(3, 6, 4, 0.1, 4);
    model.thresholds = calibrate_thresholds(model, data);
    for (const auto& ex : data.examples) {
        ExitTrace forced = infer_early_exit(model, ex.tokens, nullptr, nullptr, 3);
        auto probs = forward_all_probs(model, ex.tokens);
        CHECK(forced.prediction == kernels::argmax(probs.back()));
        CHECK(forced.chosen_exit == 3);
    }
}

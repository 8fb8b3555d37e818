#include <catch2/catch_amalgamated.hpp>

#include "branchy/metrics.hpp"
#include "branchy/rng.hpp"
#include "oracles.hpp"

using namespace branchy;

TEST_CASE("accuracy hand cases") {
    CHECK(accuracy({0, 1, 2}, {0, 1, 2}) == 1.0);
    CHECK(accuracy({0, 0, 0, 0}, {1, 1, 1, 1}) == 0.0);
    CHECK(accuracy({0, 1, 1, 0}, {0, 1, 0, 1}) == 0.5);
    CHECK_THROWS_AS(accuracy({0, 1}, {0}), ConfigError);
    CHECK_THROWS_AS(accuracy({}, {}), ConfigError);
}

TEST_CASE("macro F1 hand cases") {
    // all predictions class 0, gold half-and-half:
    // class 0: P=0.5, R=1 -> f1 = 2/3; class 1: f1 = 0 -> macro 1/3
    std::vector<std::size_t> pred{0, 0, 0, 0}, gold{0, 0, 1, 1};
    CHECK(macro_f1(pred, gold, 2) == Catch::Approx(1.0 / 3).margin(1e-12));

    auto per = per_class_metrics(pred, gold, 2);
    CHECK(per[0].precision == 0.5);
    CHECK(per[0].recall == 1.0);
    CHECK(per[0].f1 == Catch::Approx(2.0 / 3).margin(1e-12));
    CHECK(per[1].precision == 0.0);
    CHECK(per[1].f1 == 0.0);
    CHECK(per[0].support == 2);
    CHECK(per[1].support == 2);

    CHECK(macro_f1({0, 1, 2}, {0, 1, 2}, 3) == 1.0);

    CHECK_THROWS_AS(per_class_metrics({5}, {0}, 3), IndexError);
}

TEST_CASE("zero-support classes count as f1 = 0 in strict macro F1 only") {
    // class 2 never occurs in gold and is never predicted
    std::vector<std::size_t> pred{0, 1, 0, 1}, gold{0, 1, 0, 1};
    CHECK(macro_f1(pred, gold, 3) == Catch::Approx(2.0 / 3).margin(1e-12));
    CHECK(macro_f1_present(pred, gold, 3) == 1.0);

    // predicting an absent class costs precision of that class but its f1
    // still counts as 0 in both conventions (no gold support -> recall 0)
    std::vector<std::size_t> pred2{2, 1, 0, 1};
    auto per = per_class_metrics(pred2, gold, 3);
    CHECK(per[2].recall == 0.0);
    CHECK(per[2].f1 == 0.0);
}

TEST_CASE("metrics match brute-force confusion-matrix oracles on random cases") {
    Rng rng(99);
    for (int it = 0; it < 300; ++it) {
        std::size_t c = 2 + rng.index(9);
        std::size_t n = 1 + rng.index(40);
        std::vector<std::size_t> pred(n), gold(n);
        for (std::size_t i = 0; i < n; ++i) {
            pred[i] = rng.index(c);
            gold[i] = rng.index(c);
        }
        CHECK(accuracy(pred, gold) == oracles::brute_force_accuracy(pred, gold));
        CHECK(macro_f1(pred, gold, c) == oracles::brute_force_macro_f1(pred, gold, c));
        for (std::size_t cls = 0; cls < c; ++cls) {
            auto lib = per_class_metrics(pred, gold, c)[cls];
            auto ref = oracles::brute_force_prf(pred, gold, cls);
            CHECK(lib.precision == ref.precision);
            CHECK(lib.recall == ref.recall);
            CHECK(lib.f1 == ref.f1);
        }
    }
}

#include <catch2/catch_amalgamated.hpp>

#include "dgode/metrics.hpp"

using dgode::DenseMatrix;

TEST_CASE("perfect predictions give unit scores") {
    const std::vector<int> labels{0, 1, 2, 1, 0};
    const auto r = dgode::evaluate_predictions(labels, labels, {"a", "b", "c"});
    for (double f1 : r.per_class_f1) CHECK(f1 == Catch::Approx(1.0));
    CHECK(r.weighted_f1 == Catch::Approx(1.0));
    CHECK(r.accuracy == Catch::Approx(1.0));
}

TEST_CASE("hand-worked confusion matrix") {
    const DenseMatrix confusion{{1, 1}, {0, 2}};
    const auto r = dgode::metrics_from_confusion(confusion, {"neg", "pos"});
    CHECK(r.per_class_f1[0] == Catch::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(r.per_class_f1[1] == Catch::Approx(0.8).epsilon(1e-12));
    CHECK(r.support[0] == 2);
    CHECK(r.support[1] == 2);
    CHECK(r.weighted_f1 == Catch::Approx(11.0 / 15.0).margin(1e-9));
    CHECK(r.weighted_f1 == Catch::Approx(0.73333).margin(1e-5));
    CHECK(r.accuracy == Catch::Approx(0.75));
}

TEST_CASE("absent class gets zero F1 and zero weight") {
    // Class 2 never appears in labels or predictions.
    const std::vector<int> labels{0, 0, 1, 1};
    const std::vector<int> preds{0, 1, 1, 1};
    const auto r = dgode::evaluate_predictions(labels, preds, {"a", "b", "c"});
    CHECK(r.per_class_f1[2] == 0.0);
    CHECK(r.support[2] == 0);

    // Weighted F1 over the present classes only.
    const double expected =
        0.5 * r.per_class_f1[0] + 0.5 * r.per_class_f1[1];
    CHECK(r.weighted_f1 == Catch::Approx(expected).margin(1e-12));
}

TEST_CASE("weighted F1 identity and confusion row sums") {
    const DenseMatrix confusion{{5, 2, 1}, {1, 7, 0}, {2, 2, 4}};
    const auto r = dgode::metrics_from_confusion(confusion, {"x", "y", "z"});

    double total = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < 3; ++j) row += confusion(i, j);
        CHECK(r.support[i] == static_cast<std::size_t>(row));
        total += row;
    }
    double recomputed = 0.0;
    for (std::size_t i = 0; i < 3; ++i)
        recomputed += (static_cast<double>(r.support[i]) / total) * r.per_class_f1[i];
    CHECK(r.weighted_f1 == Catch::Approx(recomputed).margin(1e-12));
}

TEST_CASE("metrics table layout") {
    const DenseMatrix confusion{{1, 1}, {0, 2}};
    const auto r = dgode::metrics_from_confusion(confusion, {"neg", "pos"});
    const std::string table = dgode::format_metrics_table(r, "dgode");
    CHECK(table.find("neg") != std::string::npos);
    CHECK(table.find("pos") != std::string::npos);
    CHECK(table.find("W-F1") != std::string::npos);
    CHECK(table.find("0.7333") != std::string::npos);
    CHECK(table.find("confusion") != std::string::npos);
}

TEST_CASE("metrics validation") {
    CHECK_THROWS_AS(dgode::confusion_matrix({0, 1}, {0}, 2), dgode::DimensionError);
    CHECK_THROWS_AS(dgode::confusion_matrix({0, 2}, {0, 1}, 2), dgode::LabelError);
}

#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "dgode/verify.hpp"

TEST_CASE("verification suite passes on seeded instances") {
    dgode::verify::VerifyOptions opts;
    opts.seed = 7;
    const auto results = dgode::verify::run_all(opts);
    for (const auto& r : results) {
        INFO(r.name << " measured " << r.measured << " tol " << r.tolerance);
        CHECK(r.pass);
    }
    CHECK(dgode::verify::all_passed(results));
}

TEST_CASE("fault injection trips the oracle triangle") {
    dgode::verify::VerifyOptions opts;
    opts.fault_inject = true;
    const auto results = dgode::verify::run_all(opts);
    bool triangle_failed = false;
    for (const auto& r : results)
        if (r.name == "oracle_triangle") triangle_failed = !r.pass;
    CHECK(triangle_failed);
    CHECK_FALSE(dgode::verify::all_passed(results));
}

TEST_CASE("every equation-bearing operation is covered") {
    const auto results = dgode::verify::run_all(dgode::verify::VerifyOptions{});
    std::set<std::string> covered;
    for (const auto& r : results)
        for (const auto& op : r.covers) covered.insert(op);
    for (const auto& op : dgode::verify::required_operations()) {
        INFO("operation " << op);
        CHECK(covered.count(op) == 1);
    }
}

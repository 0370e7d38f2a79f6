#include "doctest.h"
#include "fpenc/verify.hpp"

using namespace fpenc;

TEST_CASE("factorized convolution matches its dense reference across trials") {
  LemmaReport report = verify_fpconv(20, 131);
  CHECK(report.trials == 20);
  CHECK(report.passed == 20);
  CHECK(report.all_passed());
  CHECK(report.worst_err <= 1e-10);
  CHECK(report.failures.empty());
  CHECK(report.seconds >= 0.0);
}

TEST_CASE("grouped attention matches its dense reference across trials") {
  LemmaReport report = verify_fptransformer(20, 132);
  CHECK(report.trials == 20);
  CHECK(report.passed == 20);
  CHECK(report.all_passed());
  CHECK(report.worst_err <= 1e-10);
}

TEST_CASE("a sabotaged reference path is reported as a failure") {
  LemmaReport conv = verify_fpconv(10, 133, 1e-10, true);
  CHECK_FALSE(conv.all_passed());
  CHECK(conv.passed < conv.trials);
  CHECK_FALSE(conv.failures.empty());
  CHECK(conv.worst_err > 1e-10);
  // failure records carry the trial index and its error
  CHECK(conv.failures.front().err > 1e-10);

  LemmaReport attn = verify_fptransformer(10, 134, 1e-10, true);
  CHECK_FALSE(attn.all_passed());
  CHECK_FALSE(attn.failures.empty());
}

TEST_CASE("trial counts below one are rejected") {
  CHECK_THROWS_AS(verify_fpconv(0, 135), ParamError);
  CHECK_THROWS_AS(verify_fptransformer(-3, 135), ParamError);
}

TEST_CASE("every layer passes the finite-difference gradient check") {
  GradReport report = verify_gradients(136);
  REQUIRE(report.checks.size() == 8);
  CHECK(report.all_passed());

  std::vector<std::string> expected = {
      "fpconv", "fptransformer-block", "sads",         "gds",
      "tds",    "upsample",            "mlp-baseline", "network-2stage"};
  for (size_t i = 0; i < expected.size(); ++i) {
    CHECK(report.checks[i].name == expected[i]);
    CHECK(report.checks[i].passed);
    CHECK(report.checks[i].max_err <= report.tol);
  }
}

TEST_CASE("detached outputs make every gradient check fail") {
  GradReport report = verify_gradients(137, 1e-4, true);
  REQUIRE(report.checks.size() == 8);
  CHECK_FALSE(report.all_passed());
  for (const GradCheckResult& check : report.checks) {
    CHECK_FALSE(check.passed);
    CHECK(check.max_err > report.tol);
  }

  GradReport empty;
  CHECK_FALSE(empty.all_passed());
}

#include "tmlesi/core_data.hpp"

#include <doctest.h>

#include <sstream>

using namespace tmlesi;

namespace {

Sample tiny() {
  Eigen::MatrixXd w(4, 1);
  w << 0.1, -0.2, 0.3, 1.5;
  Eigen::VectorXd a(4), y(4);
  a << 1, 0, 0, 1;
  y << 2.0, -1.0, 0.5, 3.0;
  return make_sample({"w"}, w, a, y);
}

}  // namespace

TEST_CASE("make_sample enforces its invariants") {
  Eigen::MatrixXd w(3, 1);
  w << 1, 2, 3;
  Eigen::VectorXd a(3), y(3);
  a << 1, 0, 0.5;
  y << 1, 2, 3;
  CHECK_THROWS_AS(make_sample({"w"}, w, a, y), ParseError);
  a[2] = 1;
  CHECK_NOTHROW(make_sample({"w"}, w, a, y));
  CHECK_THROWS_AS(make_sample({"w", "x"}, w, a, y), ParseError);
  Eigen::MatrixXd w1(1, 1);
  w1 << 0;
  CHECK_THROWS_AS(make_sample({"w"}, w1, Eigen::VectorXd::Ones(1), Eigen::VectorXd::Zero(1)),
                  ParseError);
}

TEST_CASE("exposure summary and k_n") {
  const Sample s = tiny();
  auto e = exposure_summary(s, KnIdentity{});
  CHECK(e.n == 4);
  CHECK(e.s_n == 2);
  CHECK(e.a_bar == 0.5);
  CHECK(e.k_value == 0.5);
  CHECK(exposure_summary(s, KnCount{}).k_value == 2.0);
  CHECK(exposure_summary(s, parse_kn("affine:slope=0.5,intercept=0.1")).k_value ==
        doctest::Approx(0.35));
  CHECK_THROWS_AS(exposure_summary(s, KnAffine{2.0, 0.5}), EstimationError);

  Sample all = s;
  all.exposure.setOnes();
  CHECK_THROWS_WITH_AS(exposure_summary(all, KnIdentity{}),
                       doctest::Contains("degenerate exposure proportion"), EstimationError);
}

TEST_CASE("k_n specs round-trip through text") {
  for (const std::string t : {"identity", "count"}) CHECK(to_string(parse_kn(t)) == t);
  const auto k = parse_kn(to_string(KnAffine{0.25, -0.125}));
  REQUIRE(std::holds_alternative<KnAffine>(k));
  CHECK(std::get<KnAffine>(k).slope == 0.25);
  CHECK(std::get<KnAffine>(k).intercept == -0.125);
  CHECK_THROWS_AS(parse_kn("quadratic"), ParseError);
  CHECK_THROWS_AS(parse_kn("affine:slope=x"), ParseError);
}

TEST_CASE("outcome scaling maps into [0,1] and inverts exactly") {
  const Sample s = tiny();
  const auto scaled = scale_outcome(s);
  CHECK(scaled.scale.lower == -1.0);
  CHECK(scaled.scale.upper == 3.0);
  CHECK(scaled.sample.outcome.minCoeff() == 0.0);
  CHECK(scaled.sample.outcome.maxCoeff() == 1.0);
  const auto back = unscale_outcome(scaled.sample.outcome, scaled.scale);
  CHECK((back - s.outcome).cwiseAbs().maxCoeff() < 1e-15);

  const auto fixed = scale_outcome(s, OutcomeScale{-2.0, 4.0});
  CHECK(fixed.sample.outcome[0] == doctest::Approx(4.0 / 6.0));
  CHECK_THROWS_WITH_AS(scale_outcome(s, OutcomeScale{0.0, 4.0}), doctest::Contains("row 2"),
                       ParseError);

  Sample flat = s;
  flat.outcome.setConstant(1.0);
  CHECK_THROWS_AS(scale_outcome(flat), EstimationError);
}

TEST_CASE("CSV ingestion splits groups in first-appearance order") {
  std::istringstream in(
      "clinic,w,a,y\n"
      "b,0.1,1,2\n"
      "a,0.2,0,1\n"
      "b,0.3,0,0\n"
      "a,0.4,1,5\n"
      "c,0.5,1,1\n");
  const auto loaded = parse_samples(in, CsvSchema{{"w"}, "a", "y", std::string("clinic")});
  REQUIRE(loaded.samples.size() == 2);
  CHECK(*loaded.samples[0].group_id == "b");
  CHECK(*loaded.samples[1].group_id == "a");
  CHECK(loaded.samples[0].outcome[1] == 0.0);
  CHECK(loaded.samples[1].covariates(1, 0) == 0.4);
  REQUIRE(loaded.rejected.size() == 1);
  CHECK(loaded.rejected[0].first == "c");
}

TEST_CASE("CSV errors name the problem") {
  const CsvSchema schema{{"w"}, "a", "y", std::nullopt};
  std::istringstream missing("w,a\n1,0\n");
  CHECK_THROWS_WITH_AS(parse_samples(missing, schema), doctest::Contains("missing column 'y'"),
                       ParseError);
  std::istringstream bad_a("w,a,y\n1,0,1\n2,2,1\n");
  CHECK_THROWS_WITH_AS(parse_samples(bad_a, schema), doctest::Contains("exposure not binary at row 2"),
                       ParseError);
  std::istringstream bad_cell("w,a,y\n1,0,1\nx1,1,1\n");
  CHECK_THROWS_WITH_AS(parse_samples(bad_cell, schema), doctest::Contains("non-numeric cell at row 2"),
                       ParseError);
}

TEST_CASE("write_sample round-trips through the reader") {
  Sample s = tiny();
  s.covariates(0, 0) = 0.1 + 1e-16 * 3;
  std::ostringstream out;
  write_sample(out, s);
  std::istringstream in(out.str());
  const auto back = parse_samples(in, CsvSchema{{"w"}, "a", "y", std::nullopt});
  REQUIRE(back.samples.size() == 1);
  CHECK(back.samples[0].covariates == s.covariates);
  CHECK(back.samples[0].outcome == s.outcome);
  CHECK(back.samples[0].exposure == s.exposure);
}

TEST_CASE("permute_rows reorders every column together") {
  const Sample s = tiny();
  const auto p = permute_rows(s, {3, 2, 1, 0});
  CHECK(p.covariates(0, 0) == s.covariates(3, 0));
  CHECK(p.exposure[1] == s.exposure[2]);
  CHECK(p.outcome[3] == s.outcome[0]);
}

TEST_CASE("numeric parsing is strict") {
  CHECK(parse_double("1.5e-3").value() == 1.5e-3);
  CHECK(!parse_double("1.5x"));
  CHECK(!parse_double(""));
  const auto cells = split_csv_line("a,\"b,c\",d");
  REQUIRE(cells.size() == 3);
  CHECK(cells[1] == "b,c");
}

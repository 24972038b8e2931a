#include "doctest.h"
#include "mtta/checks.hpp"

using namespace mtta::checks;

namespace {

void require_all(const std::vector<Result>& rs) {
  REQUIRE(!rs.empty());
  for (const auto& r : rs) {
    CAPTURE(r.name);
    CAPTURE(r.detail);
    CHECK(r.pass);
  }
}

}  // namespace

TEST_CASE("gradient suite passes and is reproducible") {
  const auto a = gradient_suite(3, 2);
  require_all(a);
  const auto b = gradient_suite(3, 2);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].detail == b[i].detail);
  bool has_lf = false, has_lm = false;
  for (const auto& r : a) {
    has_lf = has_lf || r.name == "grad L_F";
    has_lm = has_lm || r.name == "grad L_M";
  }
  CHECK(has_lf);
  CHECK(has_lm);
}

TEST_CASE("quantization, EMA, soft reset and geometry suites pass") {
  require_all(quantization_suite(5, 200));
  require_all(ema_suite(6));
  require_all(soft_reset_suite(7));
  require_all(geometry_suite(8));
}

TEST_CASE("all_pass") {
  CHECK(all_pass({{"a", true, ""}, {"b", true, ""}}));
  CHECK_FALSE(all_pass({{"a", true, ""}, {"b", false, ""}}));
}

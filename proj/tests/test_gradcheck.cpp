#include "doctest.h"
#include "gradcheck.hpp"

TEST_CASE("every primitive passes central finite-difference checks") {
  const auto results = testutil::check_all_primitives(5);
  CHECK(results.size() >= 20);
  for (const auto& r : results) {
    INFO("primitive ", r.name, " max rel err ", r.max_rel_err);
    CHECK(r.max_rel_err <= 1e-4);
  }
}

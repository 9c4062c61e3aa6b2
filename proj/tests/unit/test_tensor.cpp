#include <doctest.h>

#include <set>

#include "dtae/random.hpp"
#include "dtae/tensor.hpp"

using namespace dtae;

TEST_SUITE("tensor") {
  TEST_CASE("shape helpers") {
    CHECK(shape_size({2, 3, 4}) == 24);
    CHECK(shape_size({}) == 1);
    CHECK(shape_str({2, 3}) == "[2,3]");
  }

  TEST_CASE("construction checks the data length") {
    CHECK_THROWS_AS(Tensorf({2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
    Tensorf t({2, 3}, std::vector<float>{0, 1, 2, 3, 4, 5});
    CHECK(t.row_size() == 3);
    CHECK(t.at(1, 2) == 5);
    CHECK(t.row(1)[0] == 3);
  }

  TEST_CASE("reshape keeps data and rejects size changes") {
    Tensord t({2, 3}, std::vector<double>{0, 1, 2, 3, 4, 5});
    CHECK(t.reshaped({3, 2}).data == t.data);
    CHECK_THROWS_AS(t.reshaped({4, 2}), ShapeError);
  }

  TEST_CASE("derived seeds separate streams") {
    CHECK(derive_seed(1, {2, 3}) == derive_seed(1, {2, 3}));
    std::set<std::uint64_t> seen;
    for (std::uint64_t base = 0; base < 4; ++base)
      for (std::uint64_t a = 0; a < 8; ++a)
        for (std::uint64_t b = 0; b < 8; ++b) seen.insert(derive_seed(base, {a, b}));
    CHECK(seen.size() == 4 * 8 * 8);
    CHECK(derive_seed(5, {1, 2}) != derive_seed(5, {2, 1}));
  }
}

#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "sysrisk/oracle.hpp"
#include "sysrisk/scenarios.hpp"

using namespace sysrisk;

TEST_CASE("oracle on the remark network") {
  const auto r = brute_force_allocation(sysrisk::testing::remark_network(), 1.0, 10);
  CHECK(std::abs(r.best_loss - 1.0) <= 1e-12);
  CHECK(r.best_weights == Eigen::Vector3d(0, 1, 0));
  CHECK(r.evaluations == 66);
  CHECK(r.grid_resolution == 10);
}

TEST_CASE("oracle with zero capital") {
  const auto net = sysrisk::testing::remark_network();
  const auto r = brute_force_allocation(net, 0.0, 4);
  CHECK(r.best_loss == shortfall(net));
  CHECK(r.best_weights == Eigen::Vector3d(0, 0, 1));
}

TEST_CASE("oracle on the two-node network") {
  const auto r = brute_force_allocation(sysrisk::testing::two_node_network(), 11.0, 11);
  CHECK(r.best_loss == 0.0);
  CHECK(r.best_weights == Eigen::Vector2d(1, 0));
}

TEST_CASE("oracle guards") {
  const FinancialNetwork big(Eigen::VectorXd::Zero(7), Eigen::MatrixXd::Zero(7, 7));
  CHECK_THROWS_AS(brute_force_allocation(big, 1.0, 2), std::invalid_argument);
  const FinancialNetwork six(Eigen::VectorXd::Zero(6), Eigen::MatrixXd::Zero(6, 6));
  CHECK_THROWS_AS(brute_force_allocation(six, 1.0, 1000), std::invalid_argument);
  CHECK_THROWS_AS(brute_force_allocation(six, 1.0, 0), std::invalid_argument);
  CHECK(simplex_grid_size(3, 10) == 66);
  CHECK(simplex_grid_size(1, 10) == 1);
}

TEST_CASE("refining the grid never hurts") {
  std::mt19937_64 rng(12);
  for (int rep = 0; rep < 8; ++rep) {
    const auto net = sysrisk::testing::random_network(rng, 4, 0.6, 3.0, 0.0, 0.5);
    const double c = 2.0;
    const auto coarse = brute_force_allocation(net, c, 6);
    const auto fine = brute_force_allocation(net, c, 12);
    CHECK(fine.best_loss <= coarse.best_loss + 1e-12);
    CHECK(std::abs(fine.best_weights.sum() - 1.0) <= 1e-12);
    CHECK(fine.best_loss == doctest::Approx(shortfall(net, c * fine.best_weights)).epsilon(1e-12));
  }
}

TEST_CASE("closed-form toy optimum") {
  CHECK(closed_form_toy_optimum(ToyKind::kCascade, 10, 9.0).loss == 0.0);
  CHECK(closed_form_toy_optimum(ToyKind::kStar, 10, 0.0).loss == 9.0);
  CHECK(closed_form_toy_optimum(ToyKind::kStar, 10, 4.5).loss == doctest::Approx(4.5).epsilon(1e-14));
  CHECK(closed_form_toy_optimum(ToyKind::kCascade, 10, 4.0).loss == doctest::Approx(45.0).epsilon(1e-14));
  CHECK_THROWS_AS(closed_form_toy_optimum(ToyKind::kStar, 10, 9.5), std::invalid_argument);
  CHECK_THROWS_AS(toy_kind_from_string("ring"), std::invalid_argument);
}

TEST_CASE("closed form agrees with the oracle on N=4 miniatures") {
  for (double c : {0.0, 0.5, 1.5, 3.0}) {
    CAPTURE(c);
    const auto cas = closed_form_toy_optimum(ToyKind::kCascade, 4, c);
    const auto oc = brute_force_allocation(cascade_network(4, 0), c, 60);
    CHECK(oc.best_loss == doctest::Approx(cas.loss).epsilon(1e-12));
    const auto st = closed_form_toy_optimum(ToyKind::kStar, 4, c);
    const auto os = brute_force_allocation(star_network(4, 0), c, 60);
    CHECK(std::abs(os.best_loss - st.loss) <= 1e-12);
  }
}

#include <doctest.h>

#include <sstream>

#include "oracles.hpp"
#include "sysrisk/network.hpp"
#include "sysrisk/network_io.hpp"

using namespace sysrisk;
using sysrisk::testing::random_network;
using sysrisk::testing::remark_network;
using sysrisk::testing::two_node_network;

namespace {

FinancialNetwork chain(Index n, Index start, Eigen::VectorXd assets) {
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(n, n);
  const Index skip = (start + n - 1) % n;
  for (Index j = 0; j < n; ++j)
    if (j != skip) l(j, (j + 1) % n) = static_cast<double>(n - 1);
  return FinancialNetwork(std::move(assets), l);
}

FinancialNetwork star(Index n, Index center) {
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(n, n);
  for (Index j = 0; j < n; ++j)
    if (j != center) l(j, center) = 1;
  return FinancialNetwork(Eigen::VectorXd::Zero(n), l);
}

}  // namespace

TEST_CASE("network construction rejects invalid inputs") {
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(2, 2);
  CHECK_NOTHROW(FinancialNetwork(Eigen::Vector2d(0, 0), l));
  l(1, 1) = 1;
  CHECK_THROWS_AS(FinancialNetwork(Eigen::Vector2d(0, 0), l), NetworkError);
  l(1, 1) = 0;
  l(0, 1) = -1;
  CHECK_THROWS_AS(FinancialNetwork(Eigen::Vector2d(0, 0), l), NetworkError);
  l(0, 1) = 1;
  CHECK_THROWS_AS(FinancialNetwork(Eigen::Vector2d(-1, 0), l), NetworkError);
  CHECK_THROWS_AS(FinancialNetwork(Eigen::Vector3d(0, 0, 0), l), NetworkError);
  CHECK_THROWS_AS(FinancialNetwork(Eigen::Vector2d(std::nan(""), 0), l), NetworkError);
}

TEST_CASE("derive_liabilities") {
  SUBCASE("two-node network owes 12") {
    const auto d = derive_liabilities(two_node_network());
    CHECK(d.total == Eigen::Vector2d(12, 0));
    CHECK(d.relative(0, 1) == 1.0);
    CHECK(d.relative(0, 0) == 0.0);
    CHECK(d.relative.row(1).isZero());
  }
  SUBCASE("empty network") {
    const FinancialNetwork net(Eigen::VectorXd::Zero(3), Eigen::MatrixXd::Zero(3, 3));
    const auto d = derive_liabilities(net);
    CHECK(d.total.isZero());
    CHECK(d.relative.isZero());
  }
  SUBCASE("row sums and proportions") {
    Eigen::MatrixXd l(3, 3);
    l << 0, 1, 1, 2, 0, 0, 0, 0, 0;
    const auto d = derive_liabilities(FinancialNetwork(Eigen::VectorXd::Zero(3), l));
    CHECK(d.total == Eigen::Vector3d(2, 2, 0));
    Eigen::MatrixXd expected(3, 3);
    expected << 0, .5, .5, 1, 0, 0, 0, 0, 0;
    CHECK(d.relative == expected);
  }
}

TEST_CASE("phi") {
  const auto remark = remark_network();
  const auto d = derive_liabilities(remark);
  CHECK(phi(Eigen::Vector3d::Zero(), remark.assets(), d).isZero());

  const FinancialNetwork empty(Eigen::VectorXd::Zero(4), Eigen::MatrixXd::Zero(4, 4));
  const auto de = derive_liabilities(empty);
  CHECK(phi(de.total, empty.assets(), de).isZero());

  // cascade start node has no inflow: min(0 + 0, 9) = 0
  const auto cas = chain(10, 0, Eigen::VectorXd::Zero(10));
  const auto dc = derive_liabilities(cas);
  const Eigen::VectorXd out = phi(Eigen::VectorXd::Constant(10, 9.0), cas.assets(), dc);
  CHECK(out(0) == 0.0);
  CHECK(out(1) == 9.0);

  CHECK_THROWS_AS(phi(Eigen::Vector2d::Zero(), remark.assets(), d), NetworkError);
}

TEST_CASE("clearing_vector examples") {
  SUBCASE("remark network clears at zero") {
    const auto r = clearing_vector(remark_network());
    CHECK(r.clearing_vector.isZero());
    CHECK(r.converged);
    CHECK(aggregate_loss(remark_network(), r) == 2.0);
  }
  SUBCASE("two-node network: node 0 pays its assets") {
    const auto r = clearing_vector(two_node_network());
    CHECK(r.clearing_vector == Eigen::Vector2d(1, 0));
    CHECK(aggregate_loss(two_node_network(), r) == 11.0);
  }
  SUBCASE("no liabilities") {
    const FinancialNetwork net(Eigen::Vector3d(1, 2, 3), Eigen::MatrixXd::Zero(3, 3));
    const auto r = clearing_vector(net);
    CHECK(r.clearing_vector.isZero());
    CHECK(r.iterations <= 1);
    CHECK(aggregate_loss(net, r) == 0.0);
  }
  SUBCASE("funded cascade repays fully") {
    for (Index start = 0; start < 10; ++start) {
      Eigen::VectorXd a = Eigen::VectorXd::Zero(10);
      a(start) = 9;
      const auto net = chain(10, start, a);
      const auto r = clearing_vector(net);
      const Index end = (start + 9) % 10;
      for (Index i = 0; i < 10; ++i) CHECK(r.clearing_vector(i) == (i == end ? 0.0 : 9.0));
      CHECK(aggregate_loss(net, r) == 0.0);
    }
  }
  SUBCASE("unfunded cascade and star losses") {
    CHECK(shortfall(chain(10, 3, Eigen::VectorXd::Zero(10))) == 81.0);
    CHECK(shortfall(star(10, 4)) == 9.0);
  }
}

TEST_CASE("clearing_vector reports nonconvergence") {
  // a slowly leaking two-cycle converges geometrically with ratio 0.999
  Eigen::MatrixXd l(3, 3);
  l << 0, 999, 1, 1000, 0, 0, 0, 0, 0;
  const FinancialNetwork net(Eigen::Vector3d(0.001, 0, 0), l);
  ClearingOptions opts;
  opts.max_iter = 5;
  CHECK_THROWS_AS(clearing_vector(net, opts), NonConvergence);
  opts.throw_on_nonconvergence = false;
  const auto r = clearing_vector(net, opts);
  CHECK_FALSE(r.converged);
  CHECK(r.iterations == 5);
  CHECK(r.residual > opts.tol);
  CHECK_THROWS_AS(clearing_vector(net, ClearingOptions{-1.0, 0, true}), std::invalid_argument);
}

TEST_CASE("clearing agrees with the fictitious default oracle") {
  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 200; ++rep) {
    const Index n = 2 + static_cast<Index>(rng() % 12);
    const auto net = random_network(rng, n, 0.5, 5.0, 0.05, 3.0);
    const auto r = clearing_vector(net);
    const auto ref = sysrisk::testing::fictitious_default_clearing(net);
    for (Index i = 0; i < n; ++i)
      CHECK(std::abs(static_cast<long double>(r.clearing_vector(i)) - ref(i)) < 1e-8L);
  }
}

TEST_CASE("clearing in long double matches double") {
  std::mt19937_64 rng(3);
  const auto net = random_network(rng, 8, 0.6, 4.0, 0.1, 2.0);
  const auto rd = clearing_vector(net);
  const auto rl = clearing_vector(net.cast<long double>(), ClearingOptions{1e-15, 0, true});
  CHECK((rd.clearing_vector.cast<long double>() - rl.clearing_vector).cwiseAbs().maxCoeff() < 1e-9L);
}

TEST_CASE("permute_network") {
  const Permutation swap({1, 0});
  const auto p = permute_network(two_node_network(), swap);
  CHECK(p.assets() == Eigen::Vector2d(2, 1));
  Eigen::MatrixXd expected = Eigen::MatrixXd::Zero(2, 2);
  expected(1, 0) = 12;
  CHECK(p.liabilities() == expected);

  CHECK(permute_network(remark_network(), Permutation::identity(3)) == remark_network());

  const Permutation cycle({1, 2, 0});
  const auto rc = permute_network(remark_network(), cycle);
  CHECK(shortfall(rc) == shortfall(remark_network()));
  CHECK(permute_network(rc, cycle.inverse()) == remark_network());

  CHECK_THROWS_AS(permute_network(remark_network(), swap), NetworkError);
  CHECK_THROWS_AS(Permutation({0, 0}), NetworkError);
  CHECK_THROWS_AS(Permutation({0, 2}), NetworkError);
}

TEST_CASE("neighborhood lists debtors") {
  CHECK(neighborhood(remark_network(), 2) == std::vector<Index>{0, 1});
  CHECK(neighborhood(remark_network(), 0).empty());
  const FinancialNetwork empty(Eigen::VectorXd::Zero(3), Eigen::MatrixXd::Zero(3, 3));
  for (Index i = 0; i < 3; ++i) CHECK(neighborhood(empty, i).empty());
  CHECK(neighborhood(star(6, 2), 2) == std::vector<Index>{0, 1, 3, 4, 5});
  CHECK_THROWS_AS(neighborhood(empty, 3), NetworkError);
}

TEST_CASE("text format round-trips exactly") {
  std::mt19937_64 rng(5);
  std::vector<FinancialNetwork> nets;
  for (int k = 0; k < 5; ++k) nets.push_back(random_network(rng, 1 + k, 0.5, 3.3, 0.0, 1.7));
  std::stringstream ss;
  write_networks(ss, nets);
  CHECK(read_networks(ss) == nets);

  std::istringstream bad("2\n1 2\n0 1\n");
  CHECK_THROWS_AS(read_networks(bad), FormatError);
  std::istringstream selfloop("1\n0\n3\n");
  CHECK_THROWS_AS(read_networks(selfloop), FormatError);
}

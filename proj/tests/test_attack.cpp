#include "doctest.h"

#include "mfadv/attack.hpp"
#include "mfadv/rng.hpp"

#include <Eigen/SVD>

#include <cmath>

using namespace mfadv;
using doctest::Approx;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

const NormPair kPairs[] = {{Lp::One, Lp::One}, {Lp::One, Lp::Two}, {Lp::One, Lp::Inf},
                           {Lp::Two, Lp::Two}, {Lp::Two, Lp::Inf}, {Lp::Inf, Lp::Inf}};

MatrixXd random_matrix(Index r, Index c, std::uint64_t seed)
{
	MatrixXd m(r, c);
	fill_gaussian(m, 1.0, seed);
	return m;
}

// max over the vertices of the unit p-ball; exact for p in {1, inf} since the norm is convex.
double vertex_max(const MatrixXd& J, NormPair pair)
{
	const Index d = J.cols();
	double best = 0.0;
	if (pair.p == Lp::One) {
		for (Index j = 0; j < d; ++j)
			best = std::max(best, lp_norm(J.col(j), pair.q));
		return best;
	}
	for (unsigned mask = 0; mask < (1u << d); ++mask) {
		VectorXd s(d);
		for (Index j = 0; j < d; ++j)
			s(j) = (mask >> j) & 1u ? 1.0 : -1.0;
		best = std::max(best, lp_norm(VectorXd(J * s), pair.q));
	}
	return best;
}

NetworkConfig linear_config(Index d, Index K, Index N, Index L)
{
	NetworkConfig c;
	c.d = d;
	c.K = K;
	c.N = N;
	c.L = L;
	c.u = c.v = 1.0;
	c.sigma_w2 = 1.0;
	c.sigma_b2 = 0.1;
	return c;
}

} // namespace

TEST_CASE("projection onto lp balls")
{
	const VectorXd inside = (VectorXd(3) << 0.1, -0.2, 0.3).finished();
	for (Lp p : {Lp::One, Lp::Two, Lp::Inf})
		CHECK(project_lp_ball(inside, p, 1.0) == inside);

	const VectorXd v = (VectorXd(2) << 3, 4).finished();
	const VectorXd w2 = project_lp_ball(v, Lp::Two, 1.0);
	CHECK(w2(0) == Approx(0.6));
	CHECK(w2(1) == Approx(0.8));

	const VectorXd winf = project_lp_ball(v, Lp::Inf, 3.5);
	CHECK(winf(0) == 3.0);
	CHECK(winf(1) == 3.5);

	const VectorXd u = (VectorXd(2) << 3, 1).finished();
	const VectorXd w1 = project_lp_ball(u, Lp::One, 2.0);
	CHECK(w1(0) == Approx(2.0));
	CHECK(w1(1) == Approx(0.0));

	// grid oracle on the l1 ball of radius 2
	double best = 1e300;
	VectorXd arg(2);
	const int n = 800;
	for (int i = -n; i <= n; ++i) {
		const double a = 2.0 * i / n;
		for (double b : {2.0 - std::fabs(a), -(2.0 - std::fabs(a))}) {
			const double dist = (a - 3) * (a - 3) + (b - 1) * (b - 1);
			if (dist < best) {
				best = dist;
				arg << a, b;
			}
		}
	}
	CHECK((arg - w1).norm() < 5e-3);

	CHECK(project_lp_ball(v, Lp::One, 0.0).isZero(0.0));
	CHECK_THROWS_AS(project_lp_ball(v, Lp::Two, -1.0), std::invalid_argument);
}

TEST_CASE("l1 projection matches a brute-force optimum on random vectors")
{
	for (std::uint64_t s = 0; s < 50; ++s) {
		const VectorXd v = 2.0 * random_matrix(6, 1, s);
		const VectorXd w = project_lp_ball(v, Lp::One, 1.0);
		CHECK(w.lpNorm<1>() <= 1.0 + 1e-12);
		// any other feasible point is no closer: perturb within the ball
		Xoshiro256pp g(s);
		for (int k = 0; k < 200; ++k) {
			VectorXd z(6);
			for (Index i = 0; i < 6; ++i)
				z(i) = standard_normal(g);
			z = project_lp_ball(VectorXd(w + 0.1 * z), Lp::One, 1.0);
			CHECK((z - v).norm() >= (w - v).norm() - 1e-12);
		}
	}
}

TEST_CASE("operator norms on a fixed matrix")
{
	const MatrixXd J = (MatrixXd(2, 2) << 1, -2, 3, 4).finished();
	CHECK(operator_norm(J, {Lp::Inf, Lp::Inf}) == Approx(7.0));
	CHECK(operator_norm(J, {Lp::One, Lp::One}) == Approx(6.0));
	CHECK(operator_norm(J, {Lp::Two, Lp::Two}) == Approx(std::sqrt(15.0 + std::sqrt(125.0))));
	CHECK(operator_norm(J, {Lp::Two, Lp::Two}) == Approx(5.1167).epsilon(1e-4));
	CHECK(operator_norm(J, {Lp::One, Lp::Inf}) == 4.0);
	CHECK(operator_norm(J, {Lp::Two, Lp::Inf}) == Approx(5.0));
	CHECK(operator_norm(J, {Lp::One, Lp::Two}) == Approx(std::sqrt(20.0)));
	CHECK_THROWS_AS(operator_norm(J, {Lp::Inf, Lp::Two}), std::invalid_argument);
	CHECK(operator_norm(MatrixXd::Zero(3, 2), {Lp::Two, Lp::Two}) == 0.0);
}

TEST_CASE("closed-form operator norms agree with brute force")
{
	int n = 0;
	for (std::uint64_t s = 0; s < 100; ++s) {
		const Index K = 1 + static_cast<Index>(s % 8), d = 1 + static_cast<Index>((s / 8) % 8);
		const MatrixXd J = random_matrix(K, d, 300 + s);
		for (NormPair pair : kPairs) {
			const double closed = operator_norm(J, pair);
			if (pair == NormPair{Lp::Two, Lp::Two}) {
				const double sv = Eigen::JacobiSVD<MatrixXd>(J).singularValues()(0);
				CHECK(std::fabs(closed - sv) <= 1e-4 * sv);
			} else if (pair == NormPair{Lp::Two, Lp::Inf}) {
				// attained at a normalized row; no unit vector does better (Cauchy-Schwarz)
				double attained = 0.0;
				for (Index i = 0; i < K; ++i)
					attained = std::max(attained, lp_norm(VectorXd(J * J.row(i).transpose().normalized()), Lp::Inf));
				CHECK(std::fabs(closed - attained) <= 1e-6 * attained);
				Xoshiro256pp g(s);
				for (int k = 0; k < 100; ++k) {
					VectorXd x(d);
					for (Index i = 0; i < d; ++i)
						x(i) = standard_normal(g);
					CHECK(lp_norm(VectorXd(J * x.normalized()), Lp::Inf) <= closed * (1 + 1e-12));
				}
			} else {
				const double brute = vertex_max(J, pair);
				CHECK(std::fabs(closed - brute) <= 1e-6 * brute);
			}
			++n;
		}
	}
	CHECK(n == 600);
}

TEST_CASE("power iteration handles rank-deficient and orthogonal-start matrices")
{
	// ones-vector start is in the null space
	const MatrixXd J = (MatrixXd(2, 2) << 1, -1, 2, -2).finished();
	CHECK(operator_norm(J, {Lp::Two, Lp::Two}) == Approx(std::sqrt(10.0)));
	const MatrixXd D = Eigen::Vector3d(3, -5, 1).asDiagonal();
	CHECK(operator_norm(D, {Lp::Two, Lp::Two}) == Approx(5.0));
}

TEST_CASE("attack spec validation")
{
	AttackSpec s;
	CHECK_NOTHROW(s.validate());
	s.iters = 0;
	CHECK_THROWS_AS(s.validate(), std::invalid_argument);
	s = {};
	s.restarts = 0;
	CHECK_THROWS_AS(s.validate(), std::invalid_argument);
	s = {};
	s.step_scale = 0.0;
	CHECK_THROWS_AS(s.validate(), std::invalid_argument);
	s = {};
	s.eps = -0.1;
	CHECK_THROWS_AS(s.validate(), std::invalid_argument);
}

TEST_CASE("PGD with eps = 0 returns nothing")
{
	NetworkConfig c;
	c.d = 5;
	c.K = 3;
	c.N = 10;
	c.L = 2;
	const NetworkD net = sample_network(c, 1);
	AttackSpec s;
	s.eps = 0.0;
	const AttackResult r = pgd_attack(net, VectorXd::Ones(5), s);
	CHECK(r.loss == 0.0);
	CHECK(r.eta.isZero(0.0));
}

TEST_CASE("PGD results are feasible, consistent and monotone")
{
	NetworkConfig c;
	c.d = 12;
	c.K = 4;
	c.N = 40;
	c.L = 3;
	for (Arch arch : {Arch::Vanilla, Arch::Residual}) {
		c.arch = arch;
		c.sigma_w2 = arch == Arch::Vanilla ? 2.0 : 0.2;
		const NetworkD net = sample_network(c, 17);
		const VectorXd x = random_matrix(12, 1, 18);
		const VectorXd f = evaluate(net, x);
		for (NormPair pair : kPairs) {
			AttackSpec s;
			s.pair = pair;
			s.eps = 0.3;
			s.iters = 30;
			s.restarts = 3;
			s.seed = 5;
			const AttackResult r = pgd_attack(net, x, s);
			CHECK(lp_norm(r.eta, pair.p) <= s.eps * (1 + 1e-9));
			CHECK(r.loss == Approx(lp_norm(VectorXd(evaluate(net, VectorXd(x + r.eta)) - f), pair.q)).epsilon(1e-12));
			CHECK(r.loss > 0.0);
			REQUIRE(r.restart_traces.size() == 3);
			for (const auto& tr : r.restart_traces) {
				CHECK(tr.size() == 31);
				for (std::size_t i = 1; i < tr.size(); ++i)
					CHECK(tr[i] >= tr[i - 1]);
			}
			CHECK(r.trace.back() == Approx(r.loss).epsilon(1e-9));
			CHECK(r.aborted_restarts == 0);

			// same seed, same answer
			const AttackResult again = pgd_attack(net, x, s);
			CHECK(again.eta == r.eta);
		}
	}
}

TEST_CASE("batched specs match separate attacks")
{
	NetworkConfig c;
	c.d = 8;
	c.K = 5;
	c.N = 30;
	c.L = 2;
	const NetworkD net = sample_network(c, 23);
	const VectorXd x = random_matrix(8, 1, 24);
	std::vector<AttackSpec> specs;
	for (NormPair pair : kPairs) {
		AttackSpec s;
		s.pair = pair;
		s.eps = 0.2;
		s.iters = 15 + static_cast<int>(specs.size());
		s.restarts = 2;
		s.seed = 100 + specs.size();
		specs.push_back(s);
	}
	const auto many = pgd_attack_many(net, x, specs);
	for (std::size_t i = 0; i < specs.size(); ++i) {
		const AttackResult one = pgd_attack(net, x, specs[i]);
		CHECK(many[i].loss == Approx(one.loss).epsilon(1e-9));
		CHECK((many[i].eta - one.eta).norm() <= 1e-9);
	}

	MatrixXd X(8, 3);
	for (Index j = 0; j < 3; ++j)
		X.col(j) = random_matrix(8, 1, 60 + j);
	const auto batch = pgd_attack_batch(net, X, specs[3]);
	REQUIRE(batch.size() == 3);
	for (Index j = 0; j < 3; ++j) {
		CHECK(lp_norm(batch[j].eta, Lp::Two) <= 0.2 * (1 + 1e-9));
		CHECK(batch[j].loss > 0.0);
	}
}

TEST_CASE("PGD on a globally linear net reaches eps times the operator norm")
{
	const NetworkConfig c = linear_config(10, 6, 30, 3);
	for (std::uint64_t seed = 0; seed < 5; ++seed) {
		const NetworkD net = sample_network(c, 40 + seed);
		const VectorXd x = random_matrix(10, 1, 50 + seed);
		const MatrixXd J = extract_linear_region(net, x).J;
		AttackSpec s;
		s.pair = {Lp::Inf, Lp::Inf};
		s.eps = 0.1;
		s.iters = 50;
		s.restarts = 3;
		s.seed = seed;
		const double target = s.eps * operator_norm(J, s.pair);
		const AttackResult r = pgd_attack(net, x, s);
		CHECK(r.loss >= 0.98 * target);
		CHECK(r.loss <= target * (1 + 1e-9));
	}
}

TEST_CASE("small-eps PGD never beats the local operator-norm bound")
{
	NetworkConfig c;
	c.d = 20;
	c.K = 5;
	c.N = 60;
	c.L = 3;
	c.sigma_b2 = 0.05;
	for (std::uint64_t seed = 0; seed < 10; ++seed) {
		const NetworkD net = sample_network(c, 70 + seed);
		const VectorXd x = random_matrix(20, 1, 90 + seed);
		const MatrixXd J = extract_linear_region(net, x).J;
		for (NormPair pair : kPairs) {
			AttackSpec s;
			s.pair = pair;
			s.eps = 1e-3;
			s.iters = 40;
			s.restarts = 2;
			s.seed = seed;
			const double cap = s.eps * operator_norm(J, pair);
			const AttackResult r = pgd_attack(net, x, s);
			CHECK(r.loss <= cap * (1 + 1e-3));
			CHECK(r.loss >= 0.5 * cap);
		}
	}
}

TEST_CASE("single sign attack")
{
	NetworkConfig c;
	c.d = 30;
	c.K = 1;
	c.N = 50;
	c.L = 2;
	c.sigma_b2 = 0.01;
	for (std::uint64_t seed = 0; seed < 20; ++seed) {
		const NetworkD net = sample_network(c, 200 + seed);
		const VectorXd x = random_matrix(30, 1, 300 + seed);
		const SignAttackResult r = single_sign_attack(net, x, 0.0);
		CHECK_FALSE(r.flipped);
		CHECK(r.eta.isZero(0.0));

		// a large enough step always crosses in the linearization
		const SignAttackResult big = single_sign_attack(net, x, 10.0);
		CHECK(big.linear_crossing);
		CHECK(big.flipped);
		CHECK(lp_norm(big.eta, Lp::Inf) == Approx(10.0));
	}

	// identity activation, no bias, x orthogonal to the single row of J
	NetworkConfig lc = linear_config(4, 1, 8, 2);
	lc.sigma_b2 = 0.0;
	const NetworkD net = sample_network(lc, 9);
	const MatrixXd J = extract_linear_region(net, VectorXd::Ones(4)).J;
	VectorXd x = random_matrix(4, 1, 10);
	x -= J.row(0).transpose() * (J.row(0).dot(x) / J.row(0).squaredNorm());
	for (double eps : {1e-6, 1e-3, 0.1})
		CHECK(single_sign_attack(net, x, eps).flipped);

	c.K = 2;
	CHECK_THROWS_AS(single_sign_attack(sample_network(c, 1), VectorXd::Ones(30), 0.1), std::invalid_argument);
}

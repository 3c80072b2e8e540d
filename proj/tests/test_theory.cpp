#include "doctest.h"

#include "mfadv/log.hpp"
#include "mfadv/theory.hpp"

#include <cmath>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

using namespace mfadv;
using doctest::Approx;

namespace {

const NormPair kInfInf{Lp::Inf, Lp::Inf};
const NormPair kTwoInf{Lp::Two, Lp::Inf};
const NormPair kTwoTwo{Lp::Two, Lp::Two};

const std::vector<NormPair> kSupported = {
    {Lp::One, Lp::One}, {Lp::One, Lp::Two}, {Lp::One, Lp::Inf}, {Lp::Two, Lp::Two}, {Lp::Two, Lp::Inf}, {Lp::Inf, Lp::Inf}};

TheoryParams params(double alpha, double omega, Index L, Index N, Index d = 784, Index K = 10,
                    Arch arch = Arch::Vanilla, double sigma_b2 = 0.0)
{
	TheoryParams tp;
	tp.alpha = alpha;
	tp.omega = omega;
	tp.L = L;
	tp.N = N;
	tp.d = d;
	tp.K = K;
	tp.arch = arch;
	tp.sigma_b2 = sigma_b2;
	return tp;
}

// Collects warnings for the duration of a scope.
struct WarningSink
{
	std::vector<std::string> seen;
	WarningSink()
	{
		set_warning_handler([this](std::string_view m) { seen.emplace_back(m); });
	}
	~WarningSink() { set_warning_handler(nullptr); }
};

} // namespace

TEST_CASE("norm pair parsing")
{
	CHECK(parse_pair("inf,2") == NormPair{Lp::Inf, Lp::Two});
	CHECK(parse_pair("2,inf") == kTwoInf);
	CHECK(parse_pair("(inf, inf)") == kInfInf);
	CHECK(parse_pair(" 1 , 2 ") == NormPair{Lp::One, Lp::Two});
	CHECK(to_string(kTwoInf) == "2,inf");
	CHECK_THROWS_AS(parse_pair("3,1"), std::invalid_argument);
	CHECK_THROWS_AS(parse_pair("2"), std::invalid_argument);
	CHECK_FALSE(NormPair{Lp::Two, Lp::One}.supported());
	CHECK_FALSE(NormPair{Lp::Inf, Lp::One}.supported());
	CHECK_FALSE(NormPair{Lp::Inf, Lp::Two}.supported());
	CHECK_THROWS_AS(beta({Lp::Two, Lp::One}, 10, 10), std::invalid_argument);
}

TEST_CASE("beta table")
{
	CHECK(beta(kInfInf, 784, 10) == Approx(std::sqrt(1568.0 / std::numbers::pi)));
	CHECK(beta(kInfInf, 784, 10) == Approx(22.3398).epsilon(1e-4));
	CHECK(beta(kTwoInf, 784, 10) == 1.0);
	CHECK(beta(kTwoInf, 3, 1000) == 1.0);
	CHECK(beta(kTwoTwo, 37, 37) == Approx(2.0));
	CHECK(beta({Lp::One, Lp::One}, 100, 10) == Approx(std::sqrt(2.0 / std::numbers::pi)));
	CHECK(beta({Lp::One, Lp::Two}, 100, 25) == Approx(0.5));
	CHECK(beta({Lp::One, Lp::Inf}, 100, 10) == Approx(std::sqrt(2.0 * std::log(10.0) / 100.0)));
}

TEST_CASE("scaled beta")
{
	CHECK(beta_scaled({Lp::One, Lp::One}, 100, 10) == Approx(7.9788).epsilon(1e-5));
	CHECK(beta_scaled(kTwoTwo, 400, 4) == Approx(11.0));
	CHECK(beta_scaled(kInfInf, 321, 7) == beta(kInfInf, 321, 7));
	// lambda_p lambda_q exactly
	const double d = 50, K = 8;
	const double lin[] = {d, std::sqrt(d), 1.0};
	const double lout[] = {1.0 / K, 1.0 / std::sqrt(K), 1.0};
	for (NormPair p : kSupported)
		CHECK(beta_scaled(p, 50, 8) ==
		      Approx(lin[static_cast<int>(p.p)] * lout[static_cast<int>(p.q)] * beta(p, 50, 8)).epsilon(1e-14));
}

TEST_CASE("adversarial loss bound")
{
	CHECK(adv_loss_bound(params(0.5, 1.0, 7, 100), kTwoInf, 0.1) == Approx(0.1));
	CHECK(adv_loss_bound(params(0.5, 1.3, 7, 100), kInfInf, 0.0) == 0.0);
	CHECK(adv_loss_bound(params(0.5, 1.0, 3, 100, 500, 1), kInfInf, 0.1) == Approx(1.7841).epsilon(1e-4));
	// monotone in eps, L (omega > 1) and omega
	double prev = 0.0;
	for (double eps : {0.0, 0.01, 0.1, 1.0}) {
		const double b = adv_loss_bound(params(0.5, 1.2, 5, 100), kInfInf, eps);
		CHECK(b >= prev);
		prev = b;
	}
	prev = 0.0;
	for (Index L = 0; L < 12; ++L) {
		const double b = adv_loss_bound(params(0.5, 1.2, L, 100), kTwoTwo, 0.1);
		CHECK(b >= prev);
		prev = b;
	}
	prev = 0.0;
	for (double w : {0.5, 1.0, 1.5, 2.0}) {
		const double b = adv_loss_bound(params(0.5, w, 6, 100), kTwoTwo, 0.1);
		CHECK(b >= prev);
		prev = b;
	}
}

TEST_CASE("decomposition bounds")
{
	NetworkConfig c;
	c.u = 1;
	c.v = 0;
	c.L = 1;
	c.N = c.d = c.K = 64;
	c.sigma_w2 = 1.0;
	// (1 + 1)(1 + 1) * 2 * 1
	CHECK(naive_decomposition_bounds(c).mp_bound == Approx(8.0));
	CHECK(naive_decomposition_bounds(c).frobenius_bound == Approx(8.0 * 64.0));

	c.sigma_w2 = 0.0;
	CHECK(naive_decomposition_bounds(c).mp_bound == 0.0);
	CHECK(naive_decomposition_bounds(c).frobenius_bound == 0.0);

	// ReLU at sigma_w^2 = 2: always above omega^{L/2}, and the gap grows geometrically
	c.sigma_w2 = 2.0;
	c.N = 1000;
	c.d = 784;
	c.K = 10;
	double prev_gap = 0.0;
	for (Index L = 1; L <= 20; ++L) {
		c.L = L;
		const double thm = std::pow(c.omega(), 0.5 * static_cast<double>(L));
		const double gap = naive_decomposition_bounds(c).mp_bound / thm;
		CHECK(gap >= 1.0);
		CHECK(gap > prev_gap);
		prev_gap = gap;
	}
	CHECK(prev_gap > 1e5);
}

TEST_CASE("entry variances and mean squared output")
{
	const TheoryParams tp = params(0.5, 1.0, 10, 1000, 784, 10, Arch::Vanilla, 0.01);
	CHECK(mean_squared_output(tp, std::sqrt(784.0)) == Approx(1.05));
	CHECK(mean_squared_output(params(0.5, 1.7, 4, 10, 30), std::sqrt(30.0)) == Approx(std::pow(1.7, 4)));
	CHECK(mean_squared_output(params(0.5, 1.7, 0, 10, 30, 1, Arch::Vanilla, 0.3), 2.0) == Approx(4.0 / 30.0));
	CHECK(jacobian_entry_variance(params(0.5, 1.0, 10, 2000, 200)) == Approx(0.005));
	CHECK(bias_entry_variance(params(0.5, 2.0, 3, 10, 10, 1, Arch::Vanilla, 0.1)) == Approx(0.05 * 7.0));
	CHECK(geometric_depth_sum(3.0, 0) == 0.0);
	CHECK(geometric_depth_sum(3.0, 4) == 40.0);
}

TEST_CASE("weight-variance evolution")
{
	WarningSink sink;
	EvolutionSpec s;
	s.mode = EvolutionMode::AdvVanilla;
	s.eps = 0.3;
	s.pair = kInfInf;
	s.sigma_w2_0 = 2.0;
	s.params = params(0.5, 1.0, 10, 1000);
	CHECK(sigma_w2_at(s, 10.0) == Approx(1.93298).epsilon(1e-5));
	CHECK(sigma_w2_at(s, 0.0) == 2.0);
	CHECK_THROWS_AS(sigma_w2_at(s, -1.0), std::invalid_argument);
	CHECK(sink.seen.empty());
	sigma_w2_at(s, 200.0);
	CHECK(sink.seen.size() == 1);

	EvolutionSpec l2 = s;
	l2.mode = EvolutionMode::L2Reg;
	CHECK(sigma_w2_at(l2, 100.0) == Approx(0.99 * 2.0));
	CHECK(sigma_w2_at(l2, 0.0) == 2.0);

	// both laws linear in t; slope ratio eps alpha beta L at omega(0) = 1
	CHECK(sigma_w2_at(s, 40.0) - sigma_w2_at(s, 20.0) == Approx(sigma_w2_at(s, 20.0) - sigma_w2_at(s, 0.0)));
	CHECK(sigma_w2_slope(s) / sigma_w2_slope(l2) == Approx(0.3 * 0.5 * beta(kInfInf, 784, 10) * 10.0));

	EvolutionSpec r = s;
	r.mode = EvolutionMode::AdvResidual;
	r.sigma_w2_0 = 0.1;
	r.params = params(0.5, 1.05, 10, 1000, 784, 10, Arch::Residual);
	const double rate = (1.0 + 0.5 * 4.0 * 0.1) * 0.3 * 0.5 * beta(kInfInf, 784, 10) / 1000.0;
	CHECK(sigma_w2_at(r, 5.0) == Approx((1.0 - rate * 5.0) * 0.1));
	CHECK(sigma_w2_at(r, 0.0) == 0.1);

	// the exact solution agrees to first order in t
	r.exact_residual = true;
	const double t = 1e-3;
	CHECK((sigma_w2_at(r, t) - 0.1) / t == Approx(-rate * 0.1).epsilon(1e-3));
	CHECK(sigma_w2_at(r, 0.0) == Approx(0.1));

	sink.seen.clear();
	r.sigma_w2_0 = 1.0;
	sigma_w2_at(r, 1.0);
	CHECK(sink.seen.size() == 1);
}

TEST_CASE("trainability interval")
{
	const Interval v = trainability_interval(Arch::Vanilla, 1e4, 1e-4, 20);
	CHECK(v.lo == Approx(0.6310).epsilon(1e-4));
	CHECK(v.hi == Approx(1.5849).epsilon(1e-4));
	const Interval r = trainability_interval(Arch::Residual, std::numbers::e, 0.5, 7);
	CHECK(r.lo == 0.0);
	CHECK(r.hi == Approx(std::exp(1.0 / 7.0) - 1.0));
	const Interval one = trainability_interval(Arch::Vanilla, 1.0, 1.0, 9);
	CHECK(one.lo == 1.0);
	CHECK(one.hi == 1.0);
	CHECK_THROWS_AS(trainability_interval(Arch::Vanilla, 0.5, 0.1, 3), std::invalid_argument);
	CHECK_THROWS_AS(trainability_interval(Arch::Vanilla, 2.0, 1.5, 3), std::invalid_argument);
}

TEST_CASE("vanilla untrainability threshold")
{
	WarningSink sink;
	const double T256 = untrainable_T_vanilla(params(0.5, 1.0, 20, 256), kInfInf, 0.3, 1e-4);
	const double T512 = untrainable_T_vanilla(params(0.5, 1.0, 20, 512), kInfInf, 0.3, 1e-4);
	CHECK(T256 == Approx(28.2).epsilon(2e-3));
	CHECK(T512 == Approx(56.4).epsilon(2e-3));
	CHECK(T512 == Approx(2.0 * T256));
	CHECK(untrainable_T_vanilla(params(0.5, 1.0, 20, 256), kInfInf, 0.6, 1e-4) == Approx(0.5 * T256));
	CHECK(untrainable_T_vanilla(params(0.5, 1.0, 20, 256), kInfInf, 0.3, 1.0) == 0.0);
	CHECK(std::isinf(untrainable_T_vanilla(params(0.5, 1.0, 20, 256), kInfInf, 0.0, 1e-4)));
	CHECK(sink.seen.empty());
	untrainable_T_vanilla(params(0.5, 1.2, 20, 256), kInfInf, 0.3, 1e-4);
	CHECK(sink.seen.size() == 1);

	// the linearized law crosses m^{1/L} exactly at T
	EvolutionSpec s;
	s.eps = 0.3;
	s.pair = kInfInf;
	s.sigma_w2_0 = 2.0;
	s.params = params(0.5, 1.0, 20, 256);
	CHECK(0.5 * sigma_w2_at(s, T256) == Approx(std::pow(1e-4, 1.0 / 20.0)));
}

namespace {

// alpha sigma^2 under d(alpha sigma^2)/dt = -eps alpha beta (alpha sigma^2)^{L/2} / N, RK4;
// returns the first time it reaches `target`.
double ode_hitting_time(double a0, double target, double eps, double alpha, double b, double L, double N)
{
	auto rhs = [&](double a) { return -eps * alpha * b * std::pow(a, 0.5 * L) / N; };
	double a = a0, t = 0.0;
	const double h = 1e-3 * (a0 - target) / std::fabs(rhs(a0));
	while (a > target) {
		const double k1 = rhs(a), k2 = rhs(a + 0.5 * h * k1), k3 = rhs(a + 0.5 * h * k2), k4 = rhs(a + h * k3);
		const double next = a + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
		if (next <= target)
			return t + h * (a - target) / (a - next);
		a = next;
		t += h;
	}
	return t;
}

} // namespace

TEST_CASE("residual trainability onset")
{
	WarningSink sink;
	const double L = 4, alpha = 0.5, eps = 0.3, M = std::numbers::e, N = 1000;
	const double edge = std::exp(1.0 / L) - 1.0;

	// alpha sigma^2(0) = 2
	TheoryParams tp = params(alpha, 3.0, 4, 1000, 784, 10, Arch::Residual);
	const double T = trainable_onset_T_residual(tp, kTwoInf, eps, M);
	CHECK(T == Approx((2.0 - edge) * N / (eps * std::pow(alpha, 3.0) * 16.0)));
	// linearized at t = 0, so it is a lower bound for the convex ODE solution
	CHECK(ode_hitting_time(2.0, edge, eps, alpha, 1.0, L, N) > T);

	// for a small excess the ODE time converges to the formula
	for (double excess : {1e-2, 1e-3}) {
		tp.omega = 1.0 + edge + excess;
		const double Tf = trainable_onset_T_residual(tp, kTwoInf, eps, M);
		const double To = ode_hitting_time(edge + excess, edge, eps, alpha, 1.0, L, N);
		CHECK(std::fabs(To / Tf - 1.0) < 2.0 * excess / edge);
	}

	tp.omega = 1.0 + edge;
	CHECK(trainable_onset_T_residual(tp, kTwoInf, eps, M) == Approx(0.0).epsilon(1e-9));
	tp.omega = 3.0;
	CHECK(std::isinf(trainable_onset_T_residual(tp, kTwoInf, 0.0, M)));
	CHECK(trainable_onset_T_residual(tp, kTwoInf, 1e-9, M) > 1e10);
	tp.omega = 1.0 + 0.5 * edge;
	CHECK_THROWS_AS(trainable_onset_T_residual(tp, kTwoInf, eps, M), std::invalid_argument);
}

TEST_CASE("expected Fisher-Rao norm")
{
	WarningSink sink;
	CHECK(fisher_rao_expected(params(0.5, 1.0, 10, 1000, 784, 10), kInfInf, 0.3, 0.0) == Approx(100.0));
	CHECK(fisher_rao_expected(params(0.5, 1.0, 10, 1000, 784, 10), kInfInf, 0.3, 10.0) == Approx(66.49).epsilon(1e-4));
	CHECK(sink.seen.empty());
	for (double t : {0.0, 1.0, 50.0})
		CHECK(fisher_rao_expected(params(0.5, 1.0, 10, 1000, 784, 10, Arch::Residual), kInfInf, 0.3, t) == 0.0);
	// residual at t = 0: L K a (1 + (L - 1) a)
	CHECK(fisher_rao_expected(params(0.5, 1.1, 10, 1000, 784, 10, Arch::Residual), kInfInf, 0.3, 0.0) ==
	      Approx(100 * 0.1 * 1.9));
	fisher_rao_expected(params(0.5, 1.0, 10, 1000, 784, 10, Arch::Vanilla, 0.1), kInfInf, 0.3, 1.0);
	CHECK(sink.seen.size() == 1);
	// a measured sigma_w^2(0) a hair off criticality is not worth a warning
	fisher_rao_expected(params(0.5, 1.002, 10, 1000, 784, 10), kInfInf, 0.3, 1.0);
	CHECK(sink.seen.size() == 1);
	fisher_rao_expected(params(0.5, 1.05, 10, 1000, 784, 10), kInfInf, 0.3, 1.0);
	CHECK(sink.seen.size() == 2);
}

TEST_CASE("erf approximation")
{
	CHECK(erf_approx(0.0) == 0.0);
	for (double x = -4.0; x <= 4.0; x += 0.01)
		CHECK(std::fabs(erf_approx(x) - std::erf(x)) <= 1.5e-7);
}

TEST_CASE("flip probability")
{
	const TheoryParams tp = params(0.5, 1.0, 5, 1000, 2000, 1, Arch::Vanilla, 0.01);
	CHECK(flip_probability(tp, 0.0) == 0.0);
	CHECK(flip_probability(tp, 0.05) == Approx(std::erf(0.05 * std::sqrt(2000.0 / (std::numbers::pi * 1.025)))).epsilon(1e-6));
	CHECK(flip_probability(tp, 0.05) == Approx(0.9220).epsilon(5e-4));
	double prev = 0.0;
	for (Index d : {10, 100, 1000, 10000, 1000000}) {
		TheoryParams q = tp;
		q.d = d;
		const double p = flip_probability(q, 0.01);
		CHECK(p >= prev);
		CHECK(p <= 1.0);
		prev = p;
	}
	CHECK(prev > 0.999);
	prev = 0.0;
	for (double eps : {0.0, 0.001, 0.01, 0.1, 1.0}) {
		const double p = flip_probability(tp, eps);
		CHECK(p >= prev);
		prev = p;
	}
	TheoryParams k2 = tp;
	k2.K = 2;
	CHECK_THROWS_AS(flip_probability(k2, 0.1), std::invalid_argument);
}

#include "mfadv/theory.hpp"

#include "mfadv/log.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace mfadv {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_supported(NormPair pair, const char* who)
{
	if (!pair.supported())
		throw std::invalid_argument(std::string(who) + ": no closed form for (p,q) = (" + to_string(pair) + ")");
}

double lambda_in(Lp p, double d)
{
	switch (p) {
	case Lp::One: return d;
	case Lp::Two: return std::sqrt(d);
	case Lp::Inf: return 1.0;
	}
	return 1.0;
}

double lambda_out(Lp q, double K)
{
	switch (q) {
	case Lp::One: return 1.0 / K;
	case Lp::Two: return 1.0 / std::sqrt(K);
	case Lp::Inf: return 1.0;
	}
	return 1.0;
}

} // namespace

bool NormPair::supported() const
{
	if (p == Lp::Two && q == Lp::One) return false;
	if (p == Lp::Inf && q != Lp::Inf) return false;
	return true;
}

std::string to_string(Lp p)
{
	switch (p) {
	case Lp::One: return "1";
	case Lp::Two: return "2";
	case Lp::Inf: return "inf";
	}
	return "?";
}

std::string to_string(NormPair pair) { return to_string(pair.p) + "," + to_string(pair.q); }

Lp parse_lp(const std::string& raw)
{
	std::string s;
	for (char c : raw)
		if (!std::isspace(static_cast<unsigned char>(c)))
			s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
	if (s == "1") return Lp::One;
	if (s == "2") return Lp::Two;
	if (s == "inf" || s == "infinity" || s == "oo") return Lp::Inf;
	throw std::invalid_argument("unknown norm '" + raw + "' (expected 1, 2 or inf)");
}

NormPair parse_pair(const std::string& raw)
{
	std::string s;
	for (char c : raw)
		if (c != '(' && c != ')')
			s.push_back(c);
	const auto comma = s.find(',');
	if (comma == std::string::npos)
		throw std::invalid_argument("norm pair '" + raw + "' must look like p,q");
	return {parse_lp(s.substr(0, comma)), parse_lp(s.substr(comma + 1))};
}

TheoryParams TheoryParams::from(const NetworkConfig& c)
{
	TheoryParams tp;
	tp.alpha = c.alpha();
	tp.omega = c.omega();
	tp.arch = c.arch;
	tp.L = c.L;
	tp.N = c.N;
	tp.d = c.d;
	tp.K = c.K;
	tp.sigma_b2 = c.sigma_b2;
	return tp;
}

void TheoryParams::validate() const
{
	if (!(alpha > 0.0))
		throw std::invalid_argument("TheoryParams: alpha must be positive");
	if (!(omega >= 0.0))
		throw std::invalid_argument("TheoryParams: omega must be nonnegative");
	if (arch == Arch::Residual && omega < 1.0)
		throw std::invalid_argument("TheoryParams: residual omega must be >= 1");
	if (L < 0 || N < 1 || d < 1 || K < 1)
		throw std::invalid_argument("TheoryParams: bad dimensions");
}

double geometric_depth_sum(double omega, Index L)
{
	double s = 0.0, w = 1.0;
	for (Index k = 0; k < L; ++k) {
		s += w;
		w *= omega;
	}
	return s;
}

double beta(NormPair pair, Index d_, Index K_)
{
	require_supported(pair, "beta");
	const double d = static_cast<double>(d_), K = static_cast<double>(K_);
	using std::numbers::pi;
	if (pair.p == Lp::One) {
		switch (pair.q) {
		case Lp::One: return std::sqrt(2.0 * K * K / (pi * d));
		case Lp::Two: return std::sqrt(K / d);
		case Lp::Inf: return std::sqrt(2.0 * std::log(K) / d);
		}
	}
	if (pair.p == Lp::Two)
		return pair.q == Lp::Two ? 1.0 + std::sqrt(K / d) : 1.0;
	return std::sqrt(2.0 * d / pi);
}

double beta_scaled(NormPair pair, Index d, Index K)
{
	return lambda_in(pair.p, static_cast<double>(d)) * lambda_out(pair.q, static_cast<double>(K)) * beta(pair, d, K);
}

double adv_loss_bound(const TheoryParams& tp, NormPair pair, double eps)
{
	return eps * beta(pair, tp.d, tp.K) * std::pow(tp.omega, 0.5 * static_cast<double>(tp.L));
}

double jacobian_entry_variance(const TheoryParams& tp)
{
	return std::pow(tp.omega, static_cast<double>(tp.L)) / static_cast<double>(tp.d);
}

double bias_entry_variance(const TheoryParams& tp)
{
	return tp.alpha * tp.sigma_b2 * geometric_depth_sum(tp.omega, tp.L);
}

DecompositionBounds naive_decomposition_bounds(const NetworkConfig& c)
{
	const double L = static_cast<double>(c.L), N = static_cast<double>(c.N);
	const double d = static_cast<double>(c.d), K = static_cast<double>(c.K);
	const double slope = std::pow(std::max(std::fabs(c.u), std::fabs(c.v)), L);
	const double w = std::pow(c.sigma_w2, 0.5 * L);
	DecompositionBounds b;
	b.mp_bound = slope * (1.0 + std::sqrt(N / d)) * (1.0 + std::sqrt(K / N)) * std::pow(2.0, L) * w;
	b.frobenius_bound = slope * std::sqrt(K) * std::pow(N, 0.5 * (L + 1.0)) * w;
	return b;
}

double sigma_w2_slope(const EvolutionSpec& s)
{
	const auto& tp = s.params;
	const double L = static_cast<double>(tp.L), N = static_cast<double>(tp.N);
	switch (s.mode) {
	case EvolutionMode::AdvVanilla: {
		const double b = beta(s.pair, tp.d, tp.K);
		const double w0 = tp.alpha * s.sigma_w2_0;
		return -s.eps * tp.alpha * b * std::pow(w0, 0.5 * L - 1.0) / N * s.sigma_w2_0;
	}
	case EvolutionMode::AdvResidual: {
		const double b = beta(s.pair, tp.d, tp.K);
		const double Lp = 0.5 * L - 1.0;
		return -(1.0 + tp.alpha * Lp * s.sigma_w2_0) * s.eps * tp.alpha * b / N * s.sigma_w2_0;
	}
	case EvolutionMode::L2Reg:
		return -s.sigma_w2_0 / (L * N);
	}
	return 0.0;
}

double sigma_w2_at(const EvolutionSpec& s, double t)
{
	if (t < 0.0)
		throw std::invalid_argument("sigma_w2_at: t must be nonnegative");
	const auto& tp = s.params;
	const double N = static_cast<double>(tp.N);
	if (t > N / 10.0)
		warn("sigma_w2_at: t > N/10, outside the small-time regime of the closed forms");
	if (s.mode == EvolutionMode::AdvResidual) {
		if (tp.alpha * s.sigma_w2_0 > 0.2)
			warn("sigma_w2_at: residual law assumes alpha*sigma_w^2(0) << 1");
		if (s.exact_residual) {
			const double b = beta(s.pair, tp.d, tp.K);
			const double aLp = tp.alpha * (0.5 * static_cast<double>(tp.L) - 1.0);
			return 1.0 / ((1.0 / s.sigma_w2_0 + aLp) * std::exp(s.eps * tp.alpha * b * t / N) - aLp);
		}
	}
	return s.sigma_w2_0 + sigma_w2_slope(s) * t;
}

Interval trainability_interval(Arch arch, double M, double m, Index L)
{
	if (!(m >= 0.0 && m <= 1.0 && M >= 1.0))
		throw std::invalid_argument("trainability_interval: need 0 <= m <= 1 <= M");
	if (L < 1)
		throw std::invalid_argument("trainability_interval: L must be >= 1");
	const double inv = 1.0 / static_cast<double>(L);
	if (arch == Arch::Vanilla)
		return {std::pow(m, inv), std::pow(M, inv)};
	return {0.0, std::pow(M, inv) - 1.0};
}

// Measured initial variances sit a fraction of a percent off criticality.
constexpr double kCriticalTol = 1e-2;

double untrainable_T_vanilla(const TheoryParams& tp, NormPair pair, double eps, double m)
{
	if (!(m >= 0.0 && m <= 1.0))
		throw std::invalid_argument("untrainable_T_vanilla: need 0 <= m <= 1");
	if (std::fabs(tp.alpha_sigma_w2() - 1.0) > kCriticalTol)
		warn("untrainable_T_vanilla: threshold assumes alpha*sigma_w^2(0) = 1");
	const double b = beta(pair, tp.d, tp.K);
	if (eps == 0.0)
		return kInf;
	const double slack = 1.0 - std::pow(m, 1.0 / static_cast<double>(tp.L));
	return slack * static_cast<double>(tp.N) / (eps * tp.alpha * b);
}

double trainable_onset_T_residual(const TheoryParams& tp, NormPair pair, double eps, double M)
{
	if (!(M >= 1.0))
		throw std::invalid_argument("trainable_onset_T_residual: need M >= 1");
	const double L = static_cast<double>(tp.L);
	const double as0 = tp.alpha_sigma_w2();
	const double excess = as0 - (std::pow(M, 1.0 / L) - 1.0);
	if (excess < 0.0)
		throw std::invalid_argument("trainable_onset_T_residual: condition already holds at t = 0");
	const double b = beta(pair, tp.d, tp.K);
	if (excess == 0.0)
		return 0.0;
	if (eps == 0.0)
		return kInf;
	const double s0 = as0 / tp.alpha;
	return excess * static_cast<double>(tp.N) /
	       (eps * std::pow(tp.alpha, 0.5 * L + 1.0) * b * std::pow(s0, 0.5 * L));
}

double fisher_rao_expected(const TheoryParams& tp, NormPair pair, double eps, double t)
{
	const double L = static_cast<double>(tp.L), K = static_cast<double>(tp.K), N = static_cast<double>(tp.N);
	const double rate = eps * tp.alpha * beta(pair, tp.d, tp.K) * t / N;
	if (tp.sigma_b2 != 0.0)
		warn("fisher_rao_expected: formula assumes sigma_b^2 = 0");
	if (tp.arch == Arch::Vanilla) {
		if (std::fabs(tp.omega - 1.0) > kCriticalTol)
			warn("fisher_rao_expected: vanilla formula assumes alpha*sigma_w^2(0) = 1");
		return L * K * (1.0 - rate * L);
	}
	const double a = tp.alpha_sigma_w2();
	if (a > 0.2)
		warn("fisher_rao_expected: residual formula assumes alpha*sigma_w^2(0) << 1");
	return L * K * a *
	       (1.0 + (L - 1.0) * a - (2.0 * (L - 1.0) * a + 1.0) * (1.0 + (0.5 * L - 1.0) * a) * rate);
}

double erf_approx(double x)
{
	// Abramowitz & Stegun 7.1.26
	if (x == 0.0)
		return 0.0;
	const double sign = x < 0.0 ? -1.0 : 1.0;
	x = std::fabs(x);
	const double t = 1.0 / (1.0 + 0.3275911 * x);
	const double poly =
	    t * (0.254829592 + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
	return sign * (1.0 - poly * std::exp(-x * x));
}

double flip_probability(const TheoryParams& tp, double eps)
{
	if (tp.K != 1)
		throw std::invalid_argument("flip_probability: requires K = 1");
	const double wL = std::pow(tp.omega, static_cast<double>(tp.L));
	const double denom = std::numbers::pi * (wL + tp.alpha * tp.sigma_b2 * geometric_depth_sum(tp.omega, tp.L));
	const double p = erf_approx(eps * std::sqrt(wL * static_cast<double>(tp.d) / denom));
	return std::clamp(p, 0.0, 1.0);
}

double mean_squared_output(const TheoryParams& tp, double x_norm)
{
	return jacobian_entry_variance(tp) * x_norm * x_norm + bias_entry_variance(tp);
}

} // namespace mfadv

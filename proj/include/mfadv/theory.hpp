#pragma once

#include "mfadv/network.hpp"

#include <string>

namespace mfadv {

enum class Lp { One, Two, Inf };

struct NormPair
{
	Lp p = Lp::Inf;
	Lp q = Lp::Inf;

	bool operator==(const NormPair&) const = default;
	// (2,1), (inf,1), (inf,2) have no closed form.
	bool supported() const;
};

std::string to_string(Lp p);
std::string to_string(NormPair pair);      // "inf,2"
Lp parse_lp(const std::string& s);          // "1", "2", "inf"
NormPair parse_pair(const std::string& s);  // "1,2", "(inf, inf)", ...

struct TheoryParams
{
	double alpha = 0.5;
	double omega = 1.0;
	Arch arch = Arch::Vanilla;
	Index L = 1;
	Index N = 1;
	Index d = 1;
	Index K = 1;
	double sigma_b2 = 0.0;

	static TheoryParams from(const NetworkConfig& c);
	// alpha * sigma_w^2 recovered from omega.
	double alpha_sigma_w2() const { return arch == Arch::Vanilla ? omega : omega - 1.0; }
	void validate() const;
};

// sum_{k=1}^{L} omega^{k-1}
double geometric_depth_sum(double omega, Index L);

double beta(NormPair pair, Index d, Index K);
double beta_scaled(NormPair pair, Index d, Index K);

double adv_loss_bound(const TheoryParams& tp, NormPair pair, double eps);

// Law of a single J or a entry at initialization.
double jacobian_entry_variance(const TheoryParams& tp);
double bias_entry_variance(const TheoryParams& tp);

struct DecompositionBounds
{
	double mp_bound;
	double frobenius_bound;
};
// Layer-by-layer operator-norm products; needs the raw slopes and sigma_w^2.
DecompositionBounds naive_decomposition_bounds(const NetworkConfig& c);

enum class EvolutionMode { AdvVanilla, AdvResidual, L2Reg };

struct EvolutionSpec
{
	EvolutionMode mode = EvolutionMode::AdvVanilla;
	double eps = 0.0;
	NormPair pair;
	double sigma_w2_0 = 1.0;
	TheoryParams params;
	bool exact_residual = false;   // closed-form exponential solution instead of the linearized law
};

double sigma_w2_at(const EvolutionSpec& spec, double t);
// d sigma_w^2 / dt at t = 0 of the linearized law.
double sigma_w2_slope(const EvolutionSpec& spec);

struct Interval
{
	double lo;
	double hi;
};

Interval trainability_interval(Arch arch, double M, double m, Index L);

double untrainable_T_vanilla(const TheoryParams& tp, NormPair pair, double eps, double m);
double trainable_onset_T_residual(const TheoryParams& tp, NormPair pair, double eps, double M);

double fisher_rao_expected(const TheoryParams& tp, NormPair pair, double eps, double t);

// Rational approximation, |error| <= 1.5e-7.
double erf_approx(double x);

double flip_probability(const TheoryParams& tp, double eps);

// E[f_i^2] at an input of Euclidean norm x_norm.
double mean_squared_output(const TheoryParams& tp, double x_norm);

} // namespace mfadv

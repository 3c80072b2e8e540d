#pragma once

#include "mfadv/network.hpp"
#include "mfadv/parallel.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <vector>

namespace mfadv {

struct Probe
{
	Index input = 0;   // index into MCPlan::inputs
	bool bias = false; // a_i rather than J_ij
	Index i = 0;
	Index j = 0;
};

struct MCPlan
{
	Index replicates = 2;
	std::uint64_t base_seed = 0;
	NetworkConfig config;
	std::vector<Eigen::VectorXd> inputs;
	std::vector<Probe> probes;
	bool shared_seed = false;   // every replicate reuses base_seed (degenerate, for testing)

	void validate() const;
};

std::uint64_t replicate_seed(std::uint64_t base_seed, Index replicate);

// Random inputs with ||x||_2 = sqrt(d).
std::vector<Eigen::VectorXd> random_inputs(Index d, Index count, std::uint64_t seed);

// replicates x probes. Replicate r uses the network sample_network(config,
// replicate_seed(base_seed, r)) would return, but layers are generated and consumed
// one at a time and the probed entries come from forward-mode tangents.
Eigen::MatrixXd sample_entries(const MCPlan& plan, ThreadPool* pool = nullptr);

struct FitReport
{
	double sample_mean = 0.0;
	double sample_var = 0.0;
	double ks_statistic = 0.0;
	double ks_threshold = 0.0;   // at level 0.01
	bool pass = false;
};

inline constexpr double kKsC001 = 1.628;

// One-sample KS against N(mean, var).
FitReport ks_test(std::span<const double> samples, double mean, double var);

struct TwoSampleReport
{
	double ks_statistic = 0.0;
	double ks_threshold = 0.0;
	bool pass = false;
};

TwoSampleReport ks_two_sample(std::span<const double> a, std::span<const double> b);

double correlation(std::span<const double> a, std::span<const double> b);

// Fraction of trials with max_i |z_i| > sqrt(2 sigma2 ln n), z_i ~ N(0, sigma2).
double max_abs_gaussian_check(Index n, double sigma2, Index trials, std::uint64_t seed = 0, ThreadPool* pool = nullptr);

double mean(std::span<const double> x);
double variance(std::span<const double> x);   // unbiased

struct LinearFit
{
	double slope;
	double intercept;
	double r2;
};

LinearFit least_squares(std::span<const double> x, std::span<const double> y);

inline std::span<const double> col_span(const Eigen::MatrixXd& m, Index c)
{
	return {m.data() + c * m.rows(), static_cast<std::size_t>(m.rows())};
}

} // namespace mfadv

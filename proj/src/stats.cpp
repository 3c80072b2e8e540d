#include "mfadv/stats.hpp"

#include "mfadv/rng.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace mfadv {

using Eigen::MatrixXd;
using Eigen::VectorXd;

void MCPlan::validate() const
{
	config.validate();
	if (replicates < 2)
		throw std::invalid_argument("MCPlan: need at least 2 replicates");
	for (const auto& x : inputs)
		if (x.size() != config.d)
			throw std::invalid_argument("MCPlan: probe input has the wrong dimension");
	for (const auto& p : probes) {
		if (p.input < 0 || p.input >= static_cast<Index>(inputs.size()))
			throw std::invalid_argument("MCPlan: probe refers to a missing input");
		if (p.i < 0 || p.i >= config.K || (!p.bias && (p.j < 0 || p.j >= config.d)))
			throw std::invalid_argument("MCPlan: probe index outside (K, d)");
	}
}

std::uint64_t replicate_seed(std::uint64_t base_seed, Index replicate)
{
	return stream_key({base_seed, 0x4d43ULL, static_cast<std::uint64_t>(replicate)});
}

std::vector<VectorXd> random_inputs(Index d, Index count, std::uint64_t seed)
{
	std::vector<VectorXd> xs;
	for (Index k = 0; k < count; ++k) {
		VectorXd x(d);
		fill_gaussian(x, 1.0, stream_key({seed, 0x1a9ULL, static_cast<std::uint64_t>(k)}));
		xs.push_back(x * (std::sqrt(static_cast<double>(d)) / x.norm()));
	}
	return xs;
}

namespace {

// Column layout of the propagated block for one input: primal, then tangents.
struct InputBlock
{
	Index input;
	Index primal_col;
	Index x_tangent_col = -1;            // tangent along x itself (for a = f - J x)
	std::map<Index, Index> basis_cols;   // j -> column of tangent along e_j
};

// out = G * Z (or out += G * Z) for an N x Z.rows() Gaussian G drawn column-major
// from `stream`, generated in column panels so G never leaves cache.
void gaussian_times(MatrixXd& out, Index rows, const MatrixXd& Z, double variance, std::uint64_t stream,
                    bool accumulate, MatrixXd& panel)
{
	if (!accumulate)
		out.setZero(rows, Z.cols());
	if (variance == 0.0)
		return;
	constexpr Index width = 32;
	Xoshiro256pp g(stream);
	const double sd = std::sqrt(variance);
	for (Index c0 = 0; c0 < Z.rows(); c0 += width) {
		const Index w = std::min(width, Z.rows() - c0);
		panel.resize(rows, w);
		fill_gaussian_from(panel, sd, g);
		out.noalias() += panel * Z.middleRows(c0, w);
	}
}

} // namespace

MatrixXd sample_entries(const MCPlan& plan, ThreadPool* pool)
{
	plan.validate();
	const NetworkConfig& c = plan.config;

	std::vector<InputBlock> blocks;
	std::map<Index, std::size_t> block_of;
	Index ncols = 0;
	for (const auto& p : plan.probes) {
		auto it = block_of.find(p.input);
		if (it == block_of.end()) {
			it = block_of.emplace(p.input, blocks.size()).first;
			blocks.push_back({p.input, ncols++, -1, {}});
		}
		InputBlock& b = blocks[it->second];
		if (p.bias) {
			if (b.x_tangent_col < 0)
				b.x_tangent_col = ncols++;
		} else if (!b.basis_cols.count(p.j)) {
			b.basis_cols[p.j] = ncols++;
		}
	}

	MatrixXd samples(plan.replicates, static_cast<Index>(plan.probes.size()));
	parallel_for(pool, static_cast<std::size_t>(plan.replicates), [&](std::size_t r) {
		const std::uint64_t seed = plan.shared_seed ? plan.base_seed : replicate_seed(plan.base_seed, static_cast<Index>(r));
		MatrixXd P_in, P_out;
		sample_projections(c, seed, P_in, P_out);

		MatrixXd Z(c.N, ncols);
		std::vector<bool> primal(static_cast<std::size_t>(ncols), false);
		for (const auto& b : blocks) {
			Z.col(b.primal_col) = P_in * plan.inputs[static_cast<std::size_t>(b.input)];
			primal[static_cast<std::size_t>(b.primal_col)] = true;
			if (b.x_tangent_col >= 0)
				Z.col(b.x_tangent_col) = Z.col(b.primal_col);
			for (const auto& [j, col] : b.basis_cols)
				Z.col(col) = P_in.col(j);
		}

		// same draws as sample_layer, but W and P are consumed panel by panel
		const double n = static_cast<double>(c.N);
		MatrixXd panel, H, A;
		VectorXd bias(c.N);
		for (Index l = 0; l < c.L; ++l) {
			gaussian_times(H, c.N, Z, c.sigma_w2 / n, tensor_stream(seed, Tensor::Weight, l), false, panel);
			fill_gaussian(bias, c.sigma_b2, tensor_stream(seed, Tensor::Bias, l));
			for (const auto& b : blocks)
				H.col(b.primal_col) += bias;
			// tangents take the slope pattern of their own input's primal column
			A.resize(c.N, ncols);
			for (const auto& b : blocks) {
				const auto D = activation_slope(H.col(b.primal_col), c.u, c.v);
				A.col(b.primal_col) = activate(H.col(b.primal_col), c.u, c.v);
				if (b.x_tangent_col >= 0)
					A.col(b.x_tangent_col) = (D * H.col(b.x_tangent_col).array()).matrix();
				for (const auto& [j, col] : b.basis_cols)
					A.col(col) = (D * H.col(col).array()).matrix();
			}
			if (c.arch == Arch::Residual)
				gaussian_times(Z, c.N, A, 1.0 / n, tensor_stream(seed, Tensor::Shortcut, l), true, panel);
			else
				Z.swap(A);
		}
		const MatrixXd out = P_out * Z;
		for (std::size_t k = 0; k < plan.probes.size(); ++k) {
			const Probe& p = plan.probes[k];
			const InputBlock& b = blocks[block_of.at(p.input)];
			samples(static_cast<Index>(r), static_cast<Index>(k)) =
			    p.bias ? out(p.i, b.primal_col) - out(p.i, b.x_tangent_col) : out(p.i, b.basis_cols.at(p.j));
		}
	});
	return samples;
}

double mean(std::span<const double> x)
{
	if (x.empty())
		throw std::invalid_argument("mean: empty sample");
	double s = 0.0;
	for (double v : x)
		s += v;
	return s / static_cast<double>(x.size());
}

double variance(std::span<const double> x)
{
	if (x.size() < 2)
		throw std::invalid_argument("variance: need at least 2 samples");
	const double m = mean(x);
	double s = 0.0;
	for (double v : x)
		s += (v - m) * (v - m);
	return s / static_cast<double>(x.size() - 1);
}

FitReport ks_test(std::span<const double> samples, double mu, double var)
{
	if (!(var > 0.0))
		throw std::invalid_argument("ks_test: reference variance must be positive");
	if (samples.size() < 50)
		throw std::invalid_argument("ks_test: need at least 50 samples");
	std::vector<double> s(samples.begin(), samples.end());
	std::sort(s.begin(), s.end());
	if (s.front() == s.back())
		throw std::invalid_argument("ks_test: degenerate sample (all values equal)");
	const double n = static_cast<double>(s.size());
	const double scale = std::sqrt(2.0 * var);
	double D = 0.0;
	for (std::size_t i = 0; i < s.size(); ++i) {
		const double F = 0.5 * std::erfc(-(s[i] - mu) / scale);
		D = std::max({D, F - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - F});
	}
	FitReport r;
	r.sample_mean = mean(samples);
	r.sample_var = variance(samples);
	r.ks_statistic = D;
	r.ks_threshold = kKsC001 / std::sqrt(n);
	r.pass = D < r.ks_threshold;
	return r;
}

TwoSampleReport ks_two_sample(std::span<const double> a, std::span<const double> b)
{
	if (a.size() < 2 || b.size() < 2)
		throw std::invalid_argument("ks_two_sample: need at least 2 samples per side");
	std::vector<double> x(a.begin(), a.end()), y(b.begin(), b.end());
	std::sort(x.begin(), x.end());
	std::sort(y.begin(), y.end());
	const double n = static_cast<double>(x.size()), m = static_cast<double>(y.size());
	std::size_t i = 0, j = 0;
	double D = 0.0;
	while (i < x.size() && j < y.size()) {
		const double v = std::min(x[i], y[j]);
		while (i < x.size() && x[i] == v) ++i;
		while (j < y.size() && y[j] == v) ++j;
		D = std::max(D, std::fabs(static_cast<double>(i) / n - static_cast<double>(j) / m));
	}
	TwoSampleReport r;
	r.ks_statistic = D;
	r.ks_threshold = kKsC001 * std::sqrt((n + m) / (n * m));
	r.pass = D < r.ks_threshold;
	return r;
}

double correlation(std::span<const double> a, std::span<const double> b)
{
	if (a.size() != b.size() || a.size() < 2)
		throw std::invalid_argument("correlation: need two equal-length samples of size >= 2");
	const double ma = mean(a), mb = mean(b);
	double sab = 0.0, saa = 0.0, sbb = 0.0;
	for (std::size_t i = 0; i < a.size(); ++i) {
		sab += (a[i] - ma) * (b[i] - mb);
		saa += (a[i] - ma) * (a[i] - ma);
		sbb += (b[i] - mb) * (b[i] - mb);
	}
	if (saa == 0.0 || sbb == 0.0)
		throw std::invalid_argument("correlation: zero-variance input");
	return sab / std::sqrt(saa * sbb);
}

double max_abs_gaussian_check(Index n, double sigma2, Index trials, std::uint64_t seed, ThreadPool* pool)
{
	if (n < 2 || trials < 100)
		throw std::invalid_argument("max_abs_gaussian_check: need n >= 2 and trials >= 100");
	if (sigma2 < 0.0)
		throw std::invalid_argument("max_abs_gaussian_check: sigma2 must be nonnegative");
	if (sigma2 == 0.0)
		return 0.0;
	const double threshold = std::sqrt(2.0 * std::log(static_cast<double>(n)));   // in units of sigma
	std::vector<char> hit(static_cast<std::size_t>(trials), 0);
	parallel_for(pool, hit.size(), [&](std::size_t t) {
		Xoshiro256pp g(stream_key({seed, 0x3a8ULL, static_cast<std::uint64_t>(n), t}));
		double m = 0.0;
		for (Index i = 0; i < n; ++i)
			m = std::max(m, std::fabs(standard_normal(g)));
		hit[t] = m > threshold;
	});
	Index count = 0;
	for (char h : hit)
		count += h;
	return static_cast<double>(count) / static_cast<double>(trials);
}

LinearFit least_squares(std::span<const double> x, std::span<const double> y)
{
	if (x.size() != y.size() || x.size() < 2)
		throw std::invalid_argument("least_squares: need two equal-length series of size >= 2");
	const double mx = mean(x), my = mean(y);
	double sxx = 0.0, sxy = 0.0, syy = 0.0;
	for (std::size_t i = 0; i < x.size(); ++i) {
		sxx += (x[i] - mx) * (x[i] - mx);
		sxy += (x[i] - mx) * (y[i] - my);
		syy += (y[i] - my) * (y[i] - my);
	}
	if (sxx == 0.0)
		throw std::invalid_argument("least_squares: x has zero spread");
	LinearFit f;
	f.slope = sxy / sxx;
	f.intercept = my - f.slope * mx;
	f.r2 = syy == 0.0 ? 1.0 : (sxy * sxy) / (sxx * syy);
	return f;
}

} // namespace mfadv

#pragma once

#include "mfadv/rng.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace mfadv {

using Eigen::Index;

template<class S> using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template<class S> using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;

enum class Arch { Vanilla, Residual };

struct NetworkConfig
{
	Index d = 1;
	Index K = 1;
	Index L = 1;
	Index N = 1;
	double sigma_w2 = 2.0;
	double sigma_b2 = 0.0;
	double u = 1.0;
	double v = 0.0;
	Arch arch = Arch::Vanilla;

	double alpha() const { return 0.5 * (u * u + v * v); }
	double omega() const { return arch == Arch::Vanilla ? alpha() * sigma_w2 : 1.0 + alpha() * sigma_w2; }

	void validate() const
	{
		if (d < 1 || K < 1 || L < 1 || N < 1)
			throw std::invalid_argument("NetworkConfig: d, K, L, N must all be >= 1");
		if (!(sigma_w2 >= 0.0) || !(sigma_b2 >= 0.0))
			throw std::invalid_argument("NetworkConfig: variances must be nonnegative");
		if (u == 0.0 && v == 0.0)
			throw std::invalid_argument("NetworkConfig: activation slopes (u, v) must not both be zero");
	}

	bool operator==(const NetworkConfig&) const = default;
};

// Stream ids for the parameter tensors. Each tensor gets its own stream keyed by
// (seed, tensor, layer), so any single layer can be regenerated in isolation.
enum class Tensor : std::uint64_t { InProj = 1, OutProj = 2, Weight = 3, Bias = 4, Shortcut = 5 };

inline std::uint64_t tensor_stream(std::uint64_t seed, Tensor t, Index layer = 0)
{
	return stream_key({seed, static_cast<std::uint64_t>(t), static_cast<std::uint64_t>(layer)});
}

template<class S>
struct Network
{
	NetworkConfig config;
	std::uint64_t seed = 0;
	MatX<S> P_in;                   // N x d
	MatX<S> P_out;                  // K x N
	std::vector<MatX<S>> W;         // N x N
	std::vector<VecX<S>> b;         // N
	std::vector<MatX<S>> P_short;   // N x N, residual only

	Index depth() const { return static_cast<Index>(W.size()); }
	bool residual() const { return config.arch == Arch::Residual; }
};

using NetworkD = Network<double>;

template<class S>
void sample_layer(const NetworkConfig& c, std::uint64_t seed, Index l, MatX<S>& W, VecX<S>& b, MatX<S>* P_short)
{
	W.resize(c.N, c.N);
	b.resize(c.N);
	fill_gaussian(W, c.sigma_w2 / static_cast<double>(c.N), tensor_stream(seed, Tensor::Weight, l));
	fill_gaussian(b, c.sigma_b2, tensor_stream(seed, Tensor::Bias, l));
	if (P_short) {
		P_short->resize(c.N, c.N);
		fill_gaussian(*P_short, 1.0 / static_cast<double>(c.N), tensor_stream(seed, Tensor::Shortcut, l));
	}
}

template<class S>
void sample_projections(const NetworkConfig& c, std::uint64_t seed, MatX<S>& P_in, MatX<S>& P_out)
{
	P_in.resize(c.N, c.d);
	P_out.resize(c.K, c.N);
	fill_gaussian(P_in, 1.0 / static_cast<double>(c.d), tensor_stream(seed, Tensor::InProj));
	fill_gaussian(P_out, 1.0 / static_cast<double>(c.N), tensor_stream(seed, Tensor::OutProj));
}

template<class S = double>
Network<S> sample_network(const NetworkConfig& config, std::uint64_t seed)
{
	config.validate();
	Network<S> net;
	net.config = config;
	net.seed = seed;
	sample_projections(config, seed, net.P_in, net.P_out);
	const auto L = static_cast<std::size_t>(config.L);
	net.W.resize(L);
	net.b.resize(L);
	if (config.arch == Arch::Residual)
		net.P_short.resize(L);
	for (std::size_t l = 0; l < L; ++l)
		sample_layer(config, seed, static_cast<Index>(l), net.W[l], net.b[l],
		             config.arch == Arch::Residual ? &net.P_short[l] : nullptr);
	return net;
}

// phi and phi' applied entrywise. Ties at zero take the u branch.
template<class Derived>
auto activate(const Eigen::MatrixBase<Derived>& h, double u, double v)
{
	using S = typename Derived::Scalar;
	return (h.array() >= S(0)).select(S(u) * h.array(), S(v) * h.array()).matrix();
}

template<class Derived>
auto activation_slope(const Eigen::MatrixBase<Derived>& h, double u, double v)
{
	using S = typename Derived::Scalar;
	using Arr = Eigen::Array<S, Derived::RowsAtCompileTime, Derived::ColsAtCompileTime>;
	return (h.array() >= S(0)).select(Arr::Constant(h.rows(), h.cols(), S(u)),
	                                  Arr::Constant(h.rows(), h.cols(), S(v)));
}

// M is VecX (single input) or MatX (one input per column).
template<class M>
struct Cache
{
	M x0;
	std::vector<M> h;
	std::vector<M> x;
	M out;

	const M& input_to(std::size_t l) const { return l == 0 ? x0 : x[l - 1]; }
	const M& last() const { return x.empty() ? x0 : x.back(); }
};

template<class S> using ForwardCache = Cache<VecX<S>>;
template<class S> using BatchCache = Cache<MatX<S>>;

namespace detail {

inline void check_rows(Index got, Index want, const char* what)
{
	if (got != want)
		throw std::invalid_argument(std::string(what) + ": dimension mismatch (got " + std::to_string(got) +
		                            ", expected " + std::to_string(want) + ")");
}

template<class M, class S, class Derived>
Cache<M> forward_impl(const Network<S>& net, const Eigen::MatrixBase<Derived>& xin)
{
	check_rows(xin.rows(), net.P_in.cols(), "forward");
	const double u = net.config.u, v = net.config.v;
	Cache<M> c;
	c.x0 = net.P_in * xin;
	const auto L = net.W.size();
	c.h.resize(L);
	c.x.resize(L);
	for (std::size_t l = 0; l < L; ++l) {
		const M& prev = c.input_to(l);
		c.h[l].noalias() = net.W[l] * prev;
		c.h[l].colwise() += net.b[l];
		if (net.residual()) {
			c.x[l] = prev;
			c.x[l].noalias() += net.P_short[l] * activate(c.h[l], u, v);
		} else {
			c.x[l] = activate(c.h[l], u, v);
		}
	}
	c.out.noalias() = net.P_out * c.last();
	return c;
}

} // namespace detail

template<class S, class Derived>
ForwardCache<S> forward(const Network<S>& net, const Eigen::MatrixBase<Derived>& x_in)
{
	if (x_in.cols() != 1)
		throw std::invalid_argument("forward: expected a single input vector");
	return detail::forward_impl<VecX<S>>(net, x_in);
}

template<class S, class Derived>
BatchCache<S> forward_batch(const Network<S>& net, const Eigen::MatrixBase<Derived>& X_in)
{
	return detail::forward_impl<MatX<S>>(net, X_in);
}

template<class S, class Derived>
VecX<S> evaluate(const Network<S>& net, const Eigen::MatrixBase<Derived>& x_in)
{
	return forward(net, x_in).out;
}

template<class S>
struct ParameterGradients
{
	std::vector<MatX<S>> W;
	std::vector<VecX<S>> b;

	static ParameterGradients zeros_like(const Network<S>& net)
	{
		ParameterGradients g;
		for (std::size_t l = 0; l < net.W.size(); ++l) {
			g.W.push_back(MatX<S>::Zero(net.W[l].rows(), net.W[l].cols()));
			g.b.push_back(VecX<S>::Zero(net.b[l].size()));
		}
		return g;
	}

	ParameterGradients& operator+=(const ParameterGradients& o)
	{
		for (std::size_t l = 0; l < W.size(); ++l) {
			W[l] += o.W[l];
			b[l] += o.b[l];
		}
		return *this;
	}

	ParameterGradients& operator*=(S s)
	{
		for (std::size_t l = 0; l < W.size(); ++l) {
			W[l] *= s;
			b[l] *= s;
		}
		return *this;
	}

	S squared_norm() const
	{
		S acc = 0;
		for (std::size_t l = 0; l < W.size(); ++l)
			acc += W[l].squaredNorm() + b[l].squaredNorm();
		return acc;
	}

	bool all_finite() const
	{
		for (std::size_t l = 0; l < W.size(); ++l)
			if (!W[l].allFinite() || !b[l].allFinite())
				return false;
		return true;
	}
};

template<class S, class M>
struct Backprop
{
	ParameterGradients<S> params;   // summed over columns in the batched case
	M input;                        // d x B gradient w.r.t. the inputs
	std::vector<S> chi;             // mean squared gradient w.r.t. x^(l), l = 0..L (filled on request)
};

struct BackpropOptions
{
	bool params = true;
	bool chi = false;
};

namespace detail {

template<class S, class M, class Derived>
Backprop<S, M> backward_impl(const Network<S>& net, const Cache<M>& c, const Eigen::MatrixBase<Derived>& out_grad,
                             BackpropOptions opt)
{
	check_rows(out_grad.rows(), net.P_out.rows(), "backprop");
	const double u = net.config.u, v = net.config.v;
	const auto L = net.W.size();
	Backprop<S, M> r;
	if (opt.params) {
		r.params.W.resize(L);
		r.params.b.resize(L);
	}
	if (opt.chi)
		r.chi.assign(L + 1, S(0));

	M g = net.P_out.transpose() * out_grad;   // gradient w.r.t. x^(L)
	M gh;
	for (std::size_t k = L; k-- > 0;) {
		if (opt.chi)
			r.chi[k + 1] = g.squaredNorm() / static_cast<S>(g.size());
		if (net.residual())
			gh = (activation_slope(c.h[k], u, v) * (net.P_short[k].transpose() * g).array()).matrix();
		else
			gh = (activation_slope(c.h[k], u, v) * g.array()).matrix();
		if (opt.params) {
			r.params.W[k].noalias() = gh * c.input_to(k).transpose();
			r.params.b[k] = gh.rowwise().sum();
		}
		if (net.residual())
			g.noalias() += net.W[k].transpose() * gh;
		else
			g.noalias() = net.W[k].transpose() * gh;
	}
	if (opt.chi)
		r.chi[0] = g.squaredNorm() / static_cast<S>(g.size());
	r.input.noalias() = net.P_in.transpose() * g;
	return r;
}

} // namespace detail

// Gradients of <out_grad, f(x_in)> with respect to every W, b and to x_in.
template<class S, class Derived>
Backprop<S, VecX<S>> backprop(const Network<S>& net, const ForwardCache<S>& cache,
                              const Eigen::MatrixBase<Derived>& out_grad, BackpropOptions opt = {})
{
	return detail::backward_impl<S, VecX<S>>(net, cache, out_grad, opt);
}

template<class S, class D1, class D2>
Backprop<S, VecX<S>> backprop(const Network<S>& net, const Eigen::MatrixBase<D1>& x_in,
                              const Eigen::MatrixBase<D2>& out_grad, BackpropOptions opt = {})
{
	return backprop(net, forward(net, x_in), out_grad, opt);
}

// Column j of out_grad pairs with column j of the cached batch; parameter
// gradients are summed over the batch.
template<class S, class Derived>
Backprop<S, MatX<S>> backprop_batch(const Network<S>& net, const BatchCache<S>& cache,
                                    const Eigen::MatrixBase<Derived>& out_grad, BackpropOptions opt = {})
{
	if (out_grad.cols() != cache.out.cols())
		throw std::invalid_argument("backprop_batch: out_grad column count does not match the batch");
	return detail::backward_impl<S, MatX<S>>(net, cache, out_grad, opt);
}

// chi^(l), l = 0..L, for the scalar <loss_grad, f>.
template<class S, class D1, class D2>
std::vector<S> chi_profile(const Network<S>& net, const Eigen::MatrixBase<D1>& x_in,
                           const Eigen::MatrixBase<D2>& loss_grad_at_output)
{
	return backprop(net, x_in, loss_grad_at_output, BackpropOptions{false, true}).chi;
}

template<class S>
struct LinearRegion
{
	MatX<S> J;   // K x d
	VecX<S> a;   // K
};

// Exact input Jacobian from the activation pattern at x_in; a = f(x_in) - J x_in.
// The product is accumulated from whichever end is cheaper.
template<class S, class Derived>
LinearRegion<S> extract_linear_region(const Network<S>& net, const Eigen::MatrixBase<Derived>& x_in)
{
	const ForwardCache<S> c = forward(net, x_in);
	const double u = net.config.u, v = net.config.v;
	const auto L = net.W.size();
	const Index K = net.P_out.rows(), d = net.P_in.cols();
	LinearRegion<S> lr;
	if (K <= d) {
		MatX<S> R = net.P_out;
		for (std::size_t k = L; k-- > 0;) {
			const auto D = activation_slope(c.h[k], u, v);
			if (net.residual()) {
				MatX<S> RP = R * net.P_short[k];
				RP.array().rowwise() *= D.transpose();
				R.noalias() += RP * net.W[k];
			} else {
				R.array().rowwise() *= D.transpose();
				R = R * net.W[k];
			}
		}
		lr.J.noalias() = R * net.P_in;
	} else {
		MatX<S> G = net.P_in;
		for (std::size_t k = 0; k < L; ++k) {
			const auto D = activation_slope(c.h[k], u, v);
			MatX<S> WG = net.W[k] * G;
			WG.array().colwise() *= D;
			if (net.residual())
				G.noalias() += net.P_short[k] * WG;
			else
				G = std::move(WG);
		}
		lr.J.noalias() = net.P_out * G;
	}
	lr.a = c.out - lr.J * x_in;
	return lr;
}

// Layer-by-layer affine recursion (x^(l) = A_l x_in + c_l). For residual nets
// this is the V/c recursion with U = P D W and d = P D b. Cubic in N, for tests.
template<class S, class Derived>
LinearRegion<S> linear_region_recursive(const Network<S>& net, const Eigen::MatrixBase<Derived>& x_in)
{
	const ForwardCache<S> c = forward(net, x_in);
	const double u = net.config.u, v = net.config.v;
	const Index N = net.P_in.rows();
	LinearRegion<S> lr;
	if (net.residual()) {
		MatX<S> V = MatX<S>::Zero(N, N);
		VecX<S> cc = VecX<S>::Zero(N);
		for (std::size_t k = 0; k < net.W.size(); ++k) {
			const VecX<S> D = activation_slope(c.h[k], u, v).matrix();
			const MatX<S> U = net.P_short[k] * D.asDiagonal() * net.W[k];
			const VecX<S> dd = net.P_short[k] * (D.asDiagonal() * net.b[k]);
			V = (U + V + U * V).eval();
			cc = (cc + U * cc + dd).eval();
		}
		lr.J = net.P_out * (MatX<S>::Identity(N, N) + V) * net.P_in;
		lr.a = net.P_out * cc;
	} else {
		MatX<S> A = net.P_in;
		VecX<S> cc = VecX<S>::Zero(N);
		for (std::size_t k = 0; k < net.W.size(); ++k) {
			const VecX<S> D = activation_slope(c.h[k], u, v).matrix();
			A = (D.asDiagonal() * (net.W[k] * A)).eval();
			cc = (D.asDiagonal() * (net.W[k] * cc + net.b[k])).eval();
		}
		lr.J = net.P_out * A;
		lr.a = net.P_out * cc;
	}
	return lr;
}

} // namespace mfadv

#pragma once

#include "mfadv/network.hpp"
#include "mfadv/theory.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace mfadv {

template<class Derived>
typename Derived::Scalar lp_norm(const Eigen::MatrixBase<Derived>& v, Lp p)
{
	switch (p) {
	case Lp::One: return v.template lpNorm<1>();
	case Lp::Two: return v.norm();
	case Lp::Inf: return v.size() ? v.template lpNorm<Eigen::Infinity>() : 0;
	}
	return 0;
}

// Euclidean projection onto {w : ||w||_p <= eps}.
template<class Derived>
VecX<typename Derived::Scalar> project_lp_ball(const Eigen::MatrixBase<Derived>& v, Lp p, double eps)
{
	using S = typename Derived::Scalar;
	if (eps < 0)
		throw std::invalid_argument("project_lp_ball: eps must be nonnegative");
	const S e = static_cast<S>(eps);
	switch (p) {
	case Lp::Inf:
		return v.cwiseMax(-e).cwiseMin(e);
	case Lp::Two: {
		const S n = v.norm();
		if (n <= e)
			return v;
		return v * (e / n);
	}
	case Lp::One: {
		if (v.template lpNorm<1>() <= e)
			return v;
		if (e == 0)
			return VecX<S>::Zero(v.size());
		// sort-based simplex projection of |v|, signs restored afterwards
		std::vector<S> a(v.size());
		for (Index i = 0; i < v.size(); ++i)
			a[i] = std::abs(v(i));
		std::sort(a.begin(), a.end(), std::greater<S>());
		S cum = 0, theta = 0;
		for (std::size_t j = 0; j < a.size(); ++j) {
			cum += a[j];
			const S t = (cum - e) / static_cast<S>(j + 1);
			if (a[j] - t > 0)
				theta = t;
			else
				break;
		}
		VecX<S> w(v.size());
		for (Index i = 0; i < v.size(); ++i) {
			const S m = std::max(std::abs(v(i)) - theta, S(0));
			w(i) = v(i) < 0 ? -m : m;
		}
		return w;
	}
	}
	return v;
}

// (p,q)-operator norm max_{||x||_p <= 1} ||J x||_q for the six computable pairs.
template<class Derived>
double operator_norm(const Eigen::MatrixBase<Derived>& J, NormPair pair)
{
	if (!pair.supported())
		throw std::invalid_argument("operator_norm: (" + to_string(pair) + ") is NP-hard to evaluate");
	if (J.size() == 0)
		return 0.0;
	if (pair.p == Lp::One) {
		// extreme points of the l1 ball are the signed basis vectors
		switch (pair.q) {
		case Lp::One: return J.cwiseAbs().colwise().sum().maxCoeff();
		case Lp::Two: return J.colwise().norm().maxCoeff();
		case Lp::Inf: return J.cwiseAbs().maxCoeff();
		}
	}
	if (pair.p == Lp::Inf)
		return J.cwiseAbs().rowwise().sum().maxCoeff();
	if (pair.q == Lp::Inf)
		return J.rowwise().norm().maxCoeff();

	// (2,2): power iteration on J^T J
	using MatD = Eigen::MatrixXd;
	using VecD = Eigen::VectorXd;
	const MatD A = J.template cast<double>();
	VecD x = VecD::Ones(A.cols()) / std::sqrt(static_cast<double>(A.cols()));
	if ((A * x).norm() == 0.0) {
		Index j;
		A.colwise().norm().maxCoeff(&j);
		x.setZero();
		x(j) = 1.0;
	}
	double lam = 0.0;
	for (int it = 0; it < 10000; ++it) {
		const VecD Ax = A * x;
		const double next = Ax.squaredNorm();
		VecD y = A.transpose() * Ax;
		const double ny = y.norm();
		if (ny == 0.0)
			return 0.0;
		x = y / ny;
		if (std::fabs(next - lam) <= 1e-8 * next) {
			lam = next;
			break;
		}
		lam = next;
	}
	return std::sqrt(std::max(lam, (A * x).squaredNorm()));
}

struct AttackSpec
{
	NormPair pair;
	double eps = 0.1;
	int iters = 50;
	int restarts = 1;
	double step_scale = 2.5;
	std::uint64_t seed = 0;

	void validate() const;
	bool operator==(const AttackSpec&) const = default;
};

struct AttackResult
{
	Eigen::VectorXd eta;
	double loss = 0.0;
	std::vector<double> trace;                       // best-so-far over restarts, one entry per evaluation
	std::vector<std::vector<double>> restart_traces; // best-so-far within each restart
	int aborted_restarts = 0;
};

// A subgradient of ||delta||_q. For q = inf it picks the largest entry.
Eigen::VectorXd norm_gradient(const Eigen::VectorXd& delta, Lp q);

AttackResult pgd_attack(const NetworkD& net, const Eigen::VectorXd& x_in, const AttackSpec& spec);

// Several specs on the same input, run as one batched sweep (one forward/backward
// pass per iteration for every spec and restart). Results match separate calls up
// to floating-point reassociation.
std::vector<AttackResult> pgd_attack_many(const NetworkD& net, const Eigen::VectorXd& x_in,
                                          const std::vector<AttackSpec>& specs);

// One spec, one attack per column of X. Used by adversarial training.
std::vector<AttackResult> pgd_attack_batch(const NetworkD& net, const Eigen::MatrixXd& X, const AttackSpec& spec);

struct SignAttackResult
{
	bool flipped = false;
	bool sign_changed = false;    // sign(f(x+eta)) != sign(f(x))
	bool linear_crossing = false; // |J x + a| < |J eta|
	Eigen::VectorXd eta;
	double f_clean = 0.0;
	double f_adv = 0.0;
};

// eta = eps * sign(J) pointed against the current output sign, K = 1 only.
SignAttackResult single_sign_attack(const NetworkD& net, const Eigen::VectorXd& x_in, double eps);

} // namespace mfadv

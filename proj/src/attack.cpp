#include "mfadv/attack.hpp"

#include "mfadv/log.hpp"
#include "mfadv/rng.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <numbers>

namespace mfadv {

using Eigen::MatrixXd;
using Eigen::VectorXd;

void AttackSpec::validate() const
{
	if (!(eps >= 0.0))
		throw std::invalid_argument("AttackSpec: eps must be nonnegative");
	if (iters < 1 || restarts < 1)
		throw std::invalid_argument("AttackSpec: iters and restarts must be >= 1");
	if (!(step_scale > 0.0))
		throw std::invalid_argument("AttackSpec: step_scale must be positive");
}

namespace {

struct Job
{
	Index input;
	AttackSpec spec;
};

// Uniform sample from the eps-ball of the given norm.
VectorXd uniform_in_ball(Index d, Lp p, double eps, Xoshiro256pp& g)
{
	VectorXd v(d);
	switch (p) {
	case Lp::Inf:
		for (Index i = 0; i < d; ++i)
			v(i) = eps * (2.0 * g.uniform() - 1.0);
		break;
	case Lp::Two: {
		for (Index i = 0; i < d; ++i)
			v(i) = standard_normal(g);
		const double r = eps * std::pow(g.uniform(), 1.0 / static_cast<double>(d));
		v *= r / v.norm();
		break;
	}
	case Lp::One: {
		// first d coordinates of a flat Dirichlet on d+1 cells, random signs
		double total = 0.0;
		for (Index i = 0; i < d; ++i) {
			v(i) = -std::log1p(-g.uniform());
			total += v(i);
		}
		total += -std::log1p(-g.uniform());
		for (Index i = 0; i < d; ++i)
			v(i) *= (g() & 1 ? eps : -eps) / total;
		break;
	}
	}
	return v;
}

// Unit step in the geometry of the p-ball. A zero gradient gives a zero step.
VectorXd ascent_direction(const VectorXd& grad, Lp p)
{
	switch (p) {
	case Lp::Inf:
		return grad.array().sign().matrix();
	case Lp::Two: {
		const double n = grad.norm();
		return n > 0.0 ? VectorXd(grad / n) : VectorXd::Zero(grad.size());
	}
	case Lp::One: {
		VectorXd e = VectorXd::Zero(grad.size());
		Index j;
		const double m = grad.cwiseAbs().maxCoeff(&j);
		if (m > 0.0)
			e(j) = grad(j) > 0.0 ? 1.0 : -1.0;
		return e;
	}
	}
	return grad;
}

VectorXd random_direction(Index d, Lp p, Xoshiro256pp& g)
{
	VectorXd v(d);
	switch (p) {
	case Lp::Inf:
		for (Index i = 0; i < d; ++i)
			v(i) = g() & 1 ? 1.0 : -1.0;
		break;
	case Lp::Two:
		for (Index i = 0; i < d; ++i)
			v(i) = standard_normal(g);
		v.normalize();
		break;
	case Lp::One:
		v.setZero();
		v(static_cast<Index>(g() % static_cast<std::uint64_t>(d))) = g() & 1 ? 1.0 : -1.0;
		break;
	}
	return v;
}

// argmax of ||J eta||_q over the eps-ball of the p-norm, for the computable pairs
VectorXd linear_maximizer(const MatrixXd& J, NormPair pair, double eps)
{
	const Index d = J.cols();
	VectorXd eta = VectorXd::Zero(d);
	Index k = 0;
	if (pair.p == Lp::One) {
		switch (pair.q) {
		case Lp::One: J.cwiseAbs().colwise().sum().maxCoeff(&k); break;
		case Lp::Two: J.colwise().norm().maxCoeff(&k); break;
		case Lp::Inf: J.cwiseAbs().colwise().maxCoeff().maxCoeff(&k); break;
		}
		eta(k) = eps;
	} else if (pair.p == Lp::Inf) {
		J.cwiseAbs().rowwise().sum().maxCoeff(&k);
		eta = eps * J.row(k).transpose().array().sign().matrix();
	} else if (pair.q == Lp::Inf) {
		const double n = J.rowwise().norm().maxCoeff(&k);
		if (n > 0.0)
			eta = eps / n * J.row(k).transpose();
	} else {
		// top right singular vector through the K x K Gram matrix
		Eigen::SelfAdjointEigenSolver<MatrixXd> es(J * J.transpose());
		const VectorXd v = J.transpose() * es.eigenvectors().col(J.rows() - 1);
		if (v.norm() > 0.0)
			eta = eps * v.normalized();
	}
	return eta;
}

double step_size(const AttackSpec& s, int t)
{
	// mean step over the schedule is step_scale * eps / iters
	const double base = s.step_scale * s.eps / static_cast<double>(s.iters);
	return base * (1.0 + std::cos(std::numbers::pi * static_cast<double>(t) / static_cast<double>(s.iters)));
}

std::vector<AttackResult> run_jobs(const NetworkD& net, const MatrixXd& X, const std::vector<Job>& jobs)
{
	const Index d = X.rows();
	if (d != net.config.d)
		throw std::invalid_argument("pgd_attack: input dimension mismatch");
	for (const auto& j : jobs) {
		j.spec.validate();
		if (!j.spec.pair.supported())
			warn("pgd_attack: (" + to_string(j.spec.pair) + ") has no closed-form bound; attacking anyway");
	}

	struct Column
	{
		std::size_t job;
		int restart;
		Xoshiro256pp rng;
		bool alive = true;
		double best = -1.0;
		VectorXd best_eta;
		std::vector<double> trace;
	};

	std::vector<Column> cols;
	int max_iters = 0;
	for (std::size_t j = 0; j < jobs.size(); ++j) {
		if (jobs[j].spec.eps == 0.0)
			continue;
		max_iters = std::max(max_iters, jobs[j].spec.iters);
		for (int r = 0; r < jobs[j].spec.restarts; ++r)
			cols.push_back({j, r, Xoshiro256pp(stream_key({jobs[j].spec.seed, 0x5a7ULL, static_cast<std::uint64_t>(r)})), true, -1.0, {}, {}});
	}

	const Index C = static_cast<Index>(cols.size());
	const BatchCache<double> clean = forward_batch(net, X);
	const MatrixXd& F0 = clean.out;

	// input Jacobians at the clean points that seed a warm start
	const Index K = net.config.K;
	std::vector<MatrixXd> J(static_cast<std::size_t>(X.cols()));
	{
		std::vector<char> need(J.size(), 0);
		for (const auto& col : cols)
			if (col.restart == 0 && jobs[col.job].spec.pair.supported())
				need[static_cast<std::size_t>(jobs[col.job].input)] = 1;
		std::vector<Index> which;
		for (std::size_t i = 0; i < need.size(); ++i)
			if (need[i])
				which.push_back(static_cast<Index>(i));
		if (!which.empty()) {
			MatrixXd Xr(d, K * static_cast<Index>(which.size()));
			MatrixXd Gr = MatrixXd::Zero(K, Xr.cols());
			for (std::size_t w = 0; w < which.size(); ++w) {
				Xr.middleCols(K * static_cast<Index>(w), K).colwise() = X.col(which[w]);
				Gr.middleCols(K * static_cast<Index>(w), K).setIdentity();
			}
			const MatrixXd JT = backprop_batch(net, forward_batch(net, Xr), Gr, BackpropOptions{false, false}).input;
			for (std::size_t w = 0; w < which.size(); ++w)
				J[static_cast<std::size_t>(which[w])] = JT.middleCols(K * static_cast<Index>(w), K).transpose();
		}
	}

	MatrixXd eta(d, C);
	MatrixXd Xa(d, C);
	for (Index c = 0; c < C; ++c) {
		auto& col = cols[c];
		const AttackSpec& s = jobs[col.job].spec;
		if (col.restart == 0 && s.pair.supported())
			// maximizer of the local linearization; the objective itself is flat at eta = 0
			eta.col(c) = linear_maximizer(J[static_cast<std::size_t>(jobs[col.job].input)], s.pair, s.eps);
		else if (col.restart == 0)
			eta.col(c) = project_lp_ball(step_size(s, 0) * random_direction(d, s.pair.p, col.rng), s.pair.p, s.eps);
		else
			eta.col(c) = uniform_in_ball(d, s.pair.p, s.eps, col.rng);
		col.best_eta = VectorXd::Zero(d);
	}

	MatrixXd G;
	for (int t = 0; C > 0; ++t) {
		for (Index c = 0; c < C; ++c)
			Xa.col(c) = X.col(jobs[cols[c].job].input) + eta.col(c);
		const BatchCache<double> cache = forward_batch(net, Xa);
		G.setZero(net.config.K, C);
		for (Index c = 0; c < C; ++c) {
			auto& col = cols[c];
			if (!col.alive)
				continue;
			const Job& job = jobs[col.job];
			const VectorXd delta = cache.out.col(c) - F0.col(job.input);
			const double loss = lp_norm(delta, job.spec.pair.q);
			if (!std::isfinite(loss)) {
				col.alive = false;
				warn("pgd_attack: non-finite loss, restart aborted");
				continue;
			}
			if (loss > col.best) {
				col.best = loss;
				col.best_eta = eta.col(c);
			}
			if (t <= job.spec.iters)
				col.trace.push_back(col.best);
			G.col(c) = norm_gradient(delta, job.spec.pair.q);
		}
		if (t >= max_iters)
			break;
		const MatrixXd grad = backprop_batch(net, cache, G, BackpropOptions{false, false}).input;
		for (Index c = 0; c < C; ++c) {
			auto& col = cols[c];
			const AttackSpec& s = jobs[col.job].spec;
			if (!col.alive || t >= s.iters)
				continue;
			if (!grad.col(c).allFinite()) {
				col.alive = false;
				warn("pgd_attack: non-finite gradient, restart aborted");
				continue;
			}
			eta.col(c) = project_lp_ball(eta.col(c) + step_size(s, t) * ascent_direction(grad.col(c), s.pair.p),
			                             s.pair.p, s.eps);
		}
	}

	std::vector<AttackResult> out(jobs.size());
	for (std::size_t j = 0; j < jobs.size(); ++j)
		out[j].eta = VectorXd::Zero(d);
	std::vector<double> best(jobs.size(), -1.0);
	for (auto& col : cols) {
		AttackResult& r = out[col.job];
		if (!col.alive)
			++r.aborted_restarts;
		if (col.best > best[col.job]) {
			best[col.job] = col.best;
			r.eta = col.best_eta;
		}
		if (r.trace.size() < col.trace.size())
			r.trace.resize(col.trace.size(), 0.0);
		for (std::size_t i = 0; i < col.trace.size(); ++i)
			r.trace[i] = std::max(r.trace[i], col.trace[i]);
		r.restart_traces.push_back(std::move(col.trace));
	}
	for (std::size_t j = 0; j < jobs.size(); ++j) {
		const VectorXd x = X.col(jobs[j].input);
		out[j].loss = jobs[j].spec.eps == 0.0
		                  ? 0.0
		                  : lp_norm(VectorXd(evaluate(net, VectorXd(x + out[j].eta)) - evaluate(net, x)), jobs[j].spec.pair.q);
	}
	return out;
}

} // namespace

VectorXd norm_gradient(const VectorXd& delta, Lp q)
{
	switch (q) {
	case Lp::One:
		return delta.array().sign().matrix();
	case Lp::Two: {
		const double n = delta.norm();
		return n > 0.0 ? VectorXd(delta / n) : VectorXd::Zero(delta.size());
	}
	case Lp::Inf: {
		VectorXd e = VectorXd::Zero(delta.size());
		Index k;
		const double m = delta.cwiseAbs().maxCoeff(&k);
		if (m > 0.0)
			e(k) = delta(k) > 0.0 ? 1.0 : -1.0;
		return e;
	}
	}
	return delta;
}

AttackResult pgd_attack(const NetworkD& net, const VectorXd& x_in, const AttackSpec& spec)
{
	return pgd_attack_many(net, x_in, {spec}).front();
}

std::vector<AttackResult> pgd_attack_many(const NetworkD& net, const VectorXd& x_in, const std::vector<AttackSpec>& specs)
{
	std::vector<Job> jobs;
	for (const auto& s : specs)
		jobs.push_back({0, s});
	return run_jobs(net, x_in, jobs);
}

std::vector<AttackResult> pgd_attack_batch(const NetworkD& net, const MatrixXd& X, const AttackSpec& spec)
{
	std::vector<Job> jobs;
	for (Index i = 0; i < X.cols(); ++i) {
		AttackSpec s = spec;
		s.seed = stream_key({spec.seed, static_cast<std::uint64_t>(i)});
		jobs.push_back({i, s});
	}
	return run_jobs(net, X, jobs);
}

SignAttackResult single_sign_attack(const NetworkD& net, const VectorXd& x_in, double eps)
{
	if (net.config.K != 1)
		throw std::invalid_argument("single_sign_attack: requires K = 1");
	if (!(eps >= 0.0))
		throw std::invalid_argument("single_sign_attack: eps must be nonnegative");
	const ForwardCache<double> c = forward(net, x_in);
	const VectorXd J = backprop(net, c, VectorXd::Ones(1), BackpropOptions{false, false}).input;
	SignAttackResult r;
	r.f_clean = c.out(0);
	const double toward_zero = r.f_clean > 0.0 ? -1.0 : 1.0;
	r.eta = toward_zero * eps * J.array().sign().matrix();
	r.f_adv = evaluate(net, VectorXd(x_in + r.eta))(0);
	auto sgn = [](double z) { return (z > 0.0) - (z < 0.0); };
	r.sign_changed = sgn(r.f_adv) != sgn(r.f_clean);
	r.linear_crossing = std::fabs(r.f_clean) < std::fabs(J.dot(r.eta));
	r.flipped = r.sign_changed || r.linear_crossing;
	return r;
}

} // namespace mfadv

#include "mfadv/experiments.hpp"

#include "mfadv/rng.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <numeric>

namespace mfadv {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

std::uint64_t net_seed(std::uint64_t seed, Index s) { return stream_key({seed, 0xb0ULL, static_cast<std::uint64_t>(s)}); }
std::uint64_t input_seed(std::uint64_t seed, Index s) { return stream_key({seed, 0xb1ULL, static_cast<std::uint64_t>(s)}); }

} // namespace

std::vector<BoundPoint> bound_point(const NetworkConfig& c, const std::vector<NormPair>& pairs, double eps,
                                    Index samples, const AttackSpec& attack, std::uint64_t seed, ThreadPool* pool)
{
	c.validate();
	if (samples < 1)
		throw std::invalid_argument("bound_point: need at least one sample");
	const TheoryParams tp = TheoryParams::from(c);
	std::vector<std::vector<double>> losses(static_cast<std::size_t>(samples));
	parallel_for(pool, losses.size(), [&](std::size_t s) {
		const NetworkD net = sample_network(c, net_seed(seed, static_cast<Index>(s)));
		const VectorXd x = random_inputs(c.d, 1, input_seed(seed, static_cast<Index>(s))).front();
		std::vector<AttackSpec> specs;
		for (std::size_t k = 0; k < pairs.size(); ++k) {
			AttackSpec a = attack;
			a.pair = pairs[k];
			a.eps = eps;
			a.seed = stream_key({seed, 0xb2ULL, s, k});
			specs.push_back(a);
		}
		for (const auto& r : pgd_attack_many(net, x, specs))
			losses[s].push_back(r.loss);
	});

	std::vector<BoundPoint> out;
	for (std::size_t k = 0; k < pairs.size(); ++k) {
		BoundPoint p;
		p.pair = pairs[k];
		p.eps = eps;
		p.bound = pairs[k].supported() ? adv_loss_bound(tp, pairs[k], eps) : std::nan("");
		Index over = 0;
		for (const auto& l : losses) {
			p.losses.push_back(l[k]);
			over += l[k] > p.bound;
		}
		p.mean = mean(p.losses);
		p.std = p.losses.size() > 1 ? std::sqrt(variance(p.losses)) : 0.0;
		p.exceed_fraction = static_cast<double>(over) / static_cast<double>(samples);
		out.push_back(std::move(p));
	}
	return out;
}

FlipResult flip_experiment(const NetworkConfig& c, double eps, Index nets, std::uint64_t seed, ThreadPool* pool)
{
	if (c.K != 1)
		throw std::invalid_argument("flip_experiment: requires K = 1");
	std::vector<char> flipped(static_cast<std::size_t>(nets), 0);
	parallel_for(pool, flipped.size(), [&](std::size_t s) {
		const NetworkD net = sample_network(c, net_seed(seed, static_cast<Index>(s)));
		const VectorXd x = random_inputs(c.d, 1, input_seed(seed, static_cast<Index>(s))).front();
		flipped[s] = single_sign_attack(net, x, eps).flipped;
	});
	FlipResult r;
	r.nets = nets;
	r.flips = std::accumulate(flipped.begin(), flipped.end(), Index{0});
	r.rate = nets ? static_cast<double>(r.flips) / static_cast<double>(nets) : 0.0;
	r.predicted = flip_probability(TheoryParams::from(c), eps);
	return r;
}

std::vector<double> fisher_rao_at_init(const NetworkConfig& c, Index nets, std::uint64_t seed, ThreadPool* pool)
{
	std::vector<double> fr(static_cast<std::size_t>(nets));
	parallel_for(pool, fr.size(), [&](std::size_t s) {
		const NetworkD net = sample_network(c, net_seed(seed, static_cast<Index>(s)));
		fr[s] = fisher_rao_diag(net, random_inputs(c.d, 1, input_seed(seed, static_cast<Index>(s))).front());
	});
	return fr;
}

std::vector<double> chi_ratios(const NetworkConfig& c, Index nets, std::uint64_t seed, ThreadPool* pool)
{
	std::vector<double> out(static_cast<std::size_t>(nets));
	parallel_for(pool, out.size(), [&](std::size_t s) {
		const NetworkD net = sample_network(c, net_seed(seed, static_cast<Index>(s)));
		const VectorXd x = random_inputs(c.d, 1, input_seed(seed, static_cast<Index>(s))).front();
		VectorXd g(c.K);
		fill_gaussian(g, 1.0, stream_key({seed, 0xc4ULL, s}));
		const auto chi = chi_profile(net, x, g);
		out[s] = chi.front() / chi.back();
	});
	return out;
}

double geometric_mean(const std::vector<double>& v)
{
	if (v.empty())
		throw std::invalid_argument("geometric_mean: empty input");
	double s = 0.0;
	for (double x : v)
		s += std::log(x);
	return std::exp(s / static_cast<double>(v.size()));
}

OpNormCheck opnorm_selftest(Index matrices, Index max_dim, std::uint64_t seed)
{
	if (max_dim < 1 || max_dim > 16)
		throw std::invalid_argument("opnorm_selftest: max_dim must be in [1, 16]");
	const NormPair pairs[] = {{Lp::One, Lp::One}, {Lp::One, Lp::Two}, {Lp::One, Lp::Inf},
	                          {Lp::Two, Lp::Two}, {Lp::Two, Lp::Inf}, {Lp::Inf, Lp::Inf}};
	OpNormCheck out;
	out.matrices = matrices;
	for (Index m = 0; m < matrices; ++m) {
		Xoshiro256pp g(stream_key({seed, 0x09ULL, static_cast<std::uint64_t>(m)}));
		const Index K = 1 + static_cast<Index>(g() % static_cast<std::uint64_t>(max_dim));
		const Index d = 1 + static_cast<Index>(g() % static_cast<std::uint64_t>(max_dim));
		MatrixXd J(K, d);
		fill_gaussian(J, 1.0, g());
		for (NormPair pair : pairs) {
			const double closed = operator_norm(J, pair);
			double oracle = 0.0;
			if (pair.p == Lp::One) {
				for (Index j = 0; j < d; ++j)
					oracle = std::max(oracle, lp_norm(J.col(j), pair.q));
			} else if (pair.p == Lp::Inf) {
				for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << d); ++mask) {
					VectorXd s(d);
					for (Index j = 0; j < d; ++j)
						s(j) = (mask >> j) & 1u ? 1.0 : -1.0;
					oracle = std::max(oracle, lp_norm(VectorXd(J * s), pair.q));
				}
			} else if (pair.q == Lp::Inf) {
				for (Index i = 0; i < K; ++i)
					oracle = std::max(oracle, lp_norm(VectorXd(J * J.row(i).transpose().normalized()), Lp::Inf));
			} else {
				oracle = Eigen::JacobiSVD<MatrixXd>(J).singularValues()(0);
			}
			const double err = std::fabs(closed - oracle) / std::max(oracle, 1e-300);
			double& worst = pair == NormPair{Lp::Two, Lp::Two} ? out.worst_rel_err_22 : out.worst_rel_err;
			worst = std::max(worst, err);
		}
	}
	return out;
}

RobustEval robust_accuracy(const NetworkD& net, const Dataset& data, Index first, Index count, const AttackSpec& attack)
{
	const Index end = std::min(data.size(), first + count);
	RobustEval r;
	constexpr Index chunk = 64;
	Index clean = 0, robust = 0;
	for (Index s = first; s < end; s += chunk) {
		const Index e = std::min(end, s + chunk);
		std::vector<Index> idx(static_cast<std::size_t>(e - s));
		std::iota(idx.begin(), idx.end(), s);
		const MatrixXd X = data.columns(idx);
		AttackSpec a = attack;
		a.seed = stream_key({attack.seed, static_cast<std::uint64_t>(s)});
		const auto res = pgd_attack_batch(net, X, a);
		MatrixXd Xa = X;
		for (Index c = 0; c < X.cols(); ++c)
			Xa.col(c) += res[static_cast<std::size_t>(c)].eta;
		const MatrixXd f = forward_batch(net, X).out, fa = forward_batch(net, Xa).out;
		for (Index c = 0; c < X.cols(); ++c) {
			const int y = data.labels[static_cast<std::size_t>(s + c)];
			Index k;
			f.col(c).maxCoeff(&k);
			clean += k == y;
			fa.col(c).maxCoeff(&k);
			robust += k == y;
		}
	}
	r.evaluated = std::max<Index>(0, end - first);
	if (r.evaluated > 0) {
		r.clean_accuracy = static_cast<double>(clean) / static_cast<double>(r.evaluated);
		r.robust_accuracy = static_cast<double>(robust) / static_cast<double>(r.evaluated);
	}
	return r;
}

} // namespace mfadv

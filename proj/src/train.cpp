#include "mfadv/train.hpp"

#include "mfadv/log.hpp"
#include "mfadv/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace mfadv {

using Eigen::MatrixXd;
using Eigen::VectorXd;

void TrainSpec::validate() const
{
	if (!(lr > 0.0))
		throw std::invalid_argument("TrainSpec: lr must be positive");
	if (steps < 0 || batch < 1 || metric_every < 1 || early_stop < 0 || eval_size < 1)
		throw std::invalid_argument("TrainSpec: steps >= 0, batch >= 1, metric_every >= 1, eval_size >= 1 required");
	if (mode == TrainMode::AdvSurrogate && !pair.supported())
		throw std::invalid_argument("TrainSpec: AdvSurrogate needs a supported norm pair");
	if (mode == TrainMode::AdvPGD)
		attack.validate();
}

WeightVariance weight_variance(const NetworkD& net)
{
	double sw = 0.0, sb = 0.0;
	Index nw = 0, nb = 0;
	for (std::size_t l = 0; l < net.W.size(); ++l) {
		sw += net.W[l].squaredNorm();
		sb += net.b[l].squaredNorm();
		nw += net.W[l].size();
		nb += net.b[l].size();
	}
	const double N = static_cast<double>(net.config.N);
	return {nw ? N * sw / static_cast<double>(nw) : 0.0, nb ? sb / static_cast<double>(nb) : 0.0};
}

namespace {

void check_labels(const std::vector<int>& y, Index K, Index cols)
{
	if (static_cast<Index>(y.size()) != cols)
		throw std::invalid_argument("labels and inputs differ in count");
	for (int c : y)
		if (c < 0 || c >= K)
			throw std::invalid_argument("label " + std::to_string(c) + " outside [0, K)");
}

// softmax(logits) - onehot, column-wise; also returns the summed loss.
MatrixXd cross_entropy_residual(const MatrixXd& logits, const std::vector<int>& y, double& loss_sum)
{
	MatrixXd P(logits.rows(), logits.cols());
	loss_sum = 0.0;
	for (Index c = 0; c < logits.cols(); ++c) {
		const double m = logits.col(c).maxCoeff();
		const VectorXd e = (logits.col(c).array() - m).exp().matrix();
		const double z = e.sum();
		P.col(c) = e / z;
		loss_sum += std::log(z) + m - logits(y[c], c);
		P(y[c], c) -= 1.0;
	}
	return P;
}

Grads scaled_weights(const NetworkD& net, double s)
{
	Grads g = Grads::zeros_like(net);
	for (std::size_t l = 0; l < net.W.size(); ++l)
		g.W[l] = s * net.W[l];
	return g;
}

} // namespace

Grads grad_standard(const NetworkD& net, const MatrixXd& X, const std::vector<int>& y, double* loss)
{
	check_labels(y, net.config.K, X.cols());
	const BatchCache<double> cache = forward_batch(net, X);
	double total = 0.0;
	MatrixXd G = cross_entropy_residual(cache.out, y, total);
	const double B = static_cast<double>(X.cols());
	G /= B;
	if (loss)
		*loss = total / B;
	return backprop_batch(net, cache, G).params;
}

Grads grad_adv_surrogate(const NetworkD& net, double eps, NormPair pair)
{
	const NetworkConfig& c = net.config;
	const double b = beta(pair, c.d, c.K);
	const double a = c.alpha();
	const double s2 = weight_variance(net).sigma_w2;
	const double omega = c.arch == Arch::Vanilla ? a * s2 : 1.0 + a * s2;
	const double L = static_cast<double>(net.depth());
	const double coef = eps * a * b * std::pow(omega, 0.5 * L - 1.0) / static_cast<double>(c.N);
	return scaled_weights(net, std::isfinite(coef) ? coef : 0.0);
}

Grads grad_l2(const NetworkD& net)
{
	return scaled_weights(net, 2.0 * TrainSpec::l2_lambda(net.config));
}

Grads grad_adv_pgd(const NetworkD& net, const MatrixXd& X, const AttackSpec& spec, double* loss)
{
	const auto res = pgd_attack_batch(net, X, spec);
	MatrixXd Xa = X;
	for (Index c = 0; c < X.cols(); ++c)
		Xa.col(c) += res[c].eta;
	const BatchCache<double> clean = forward_batch(net, X);
	const BatchCache<double> adv = forward_batch(net, Xa);
	const double B = static_cast<double>(X.cols());
	MatrixXd G(net.config.K, X.cols());
	double total = 0.0;
	for (Index c = 0; c < X.cols(); ++c) {
		const VectorXd delta = adv.out.col(c) - clean.out.col(c);
		total += lp_norm(delta, spec.pair.q);
		G.col(c) = norm_gradient(delta, spec.pair.q) / B;
	}
	if (loss)
		*loss = total / B;
	Grads g = backprop_batch(net, adv, G).params;
	g += backprop_batch(net, clean, MatrixXd(-G)).params;
	return g;
}

double fisher_rao_diag(const NetworkD& net, const VectorXd& x_in)
{
	const ForwardCache<double> c = forward(net, x_in);
	const double u = net.config.u, v = net.config.v;
	MatrixXd G = net.P_out.transpose();   // column k: d f_k / d x^(L)
	MatrixXd Gh;
	double fr = 0.0;
	for (std::size_t k = net.W.size(); k-- > 0;) {
		const auto D = activation_slope(c.h[k], u, v);
		if (net.residual())
			Gh = (net.P_short[k].transpose() * G).array().colwise() * D;
		else
			Gh = G.array().colwise() * D;
		// sum_k sum_ij W_ij^2 (Gh_ik x_j)^2 = sum_k (Gh_k^2)^T (W.W) x^2
		const VectorXd wx = net.W[k].array().square().matrix() * c.input_to(k).array().square().matrix();
		fr += (Gh.array().square().matrix().transpose() * wx).sum();
		if (net.residual())
			G.noalias() += net.W[k].transpose() * Gh;
		else
			G = net.W[k].transpose() * Gh;
	}
	return fr;
}

double accuracy(const NetworkD& net, const Dataset& data, Index count)
{
	count = std::min(count, data.size());
	if (count == 0)
		return 0.0;
	Index hits = 0;
	constexpr Index chunk = 512;
	for (Index s = 0; s < count; s += chunk) {
		const Index e = std::min(count, s + chunk);
		std::vector<Index> idx(static_cast<std::size_t>(e - s));
		std::iota(idx.begin(), idx.end(), s);
		const MatrixXd out = forward_batch(net, data.columns(idx)).out;
		for (Index c = 0; c < out.cols(); ++c) {
			Index k;
			out.col(c).maxCoeff(&k);
			hits += (k == data.labels[static_cast<std::size_t>(s + c)]);
		}
	}
	return static_cast<double>(hits) / static_cast<double>(count);
}

namespace {

class Optimizer
{
public:
	Optimizer(const TrainSpec& spec, const NetworkD& net) : spec_(spec)
	{
		if (spec.optimizer == OptimizerKind::Adam) {
			m_ = Grads::zeros_like(net);
			v_ = Grads::zeros_like(net);
		}
	}

	void apply(NetworkD& net, const Grads& g)
	{
		if (spec_.optimizer == OptimizerKind::SGD) {
			for (std::size_t l = 0; l < net.W.size(); ++l) {
				net.W[l] -= spec_.lr * g.W[l];
				net.b[l] -= spec_.lr * g.b[l];
			}
			return;
		}
		constexpr double b1 = 0.9, b2 = 0.999, delta = 1e-8;
		++t_;
		const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
		const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
		auto update = [&](auto& p, auto& m, auto& v, const auto& grad) {
			m = b1 * m + (1.0 - b1) * grad;
			v = b2 * v + (1.0 - b2) * grad.cwiseAbs2();
			p.array() -= spec_.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + delta);
		};
		for (std::size_t l = 0; l < net.W.size(); ++l) {
			update(net.W[l], m_.W[l], v_.W[l], g.W[l]);
			update(net.b[l], m_.b[l], v_.b[l], g.b[l]);
		}
	}

private:
	const TrainSpec& spec_;
	Grads m_, v_;
	long t_ = 0;
};

} // namespace

TrainTrace train(NetworkD& net, const Dataset& data, const TrainSpec& spec)
{
	spec.validate();
	if (data.size() == 0)
		throw std::invalid_argument("train: empty dataset");
	if (data.dim() != net.config.d)
		throw std::invalid_argument("train: dataset dimension does not match the network input");
	check_labels(data.labels, net.config.K, data.size());

	TrainTrace trace;
	const VectorXd x_probe = normalize_sqrt_d(data.images.row(0).transpose());
	const int y_probe = data.labels.front();

	auto record = [&](Index step) {
		TraceRow r;
		r.step = step;
		r.t = static_cast<double>(step) * spec.lr;
		const WeightVariance wv = weight_variance(net);
		r.sigma_w2 = wv.sigma_w2;
		r.sigma_b2 = wv.sigma_b2;
		r.train_acc = accuracy(net, data, spec.eval_size);
		r.fr_diag = fisher_rao_diag(net, x_probe);
		double unused;
		const VectorXd g = cross_entropy_residual(evaluate(net, x_probe), {y_probe}, unused);
		const std::vector<double> chi = chi_profile(net, x_probe, g);
		r.chi_ratio = chi.back() > 0.0 ? chi.front() / chi.back() : std::numeric_limits<double>::quiet_NaN();
		trace.rows.push_back(r);
		return r.train_acc;
	};

	Xoshiro256pp rng(stream_key({spec.seed, 0x7a1ULL}));
	std::vector<Index> order(static_cast<std::size_t>(data.size()));
	std::iota(order.begin(), order.end(), Index{0});
	std::shuffle(order.begin(), order.end(), rng);
	std::size_t cursor = 0;
	auto next_batch = [&] {
		std::vector<Index> idx;
		idx.reserve(static_cast<std::size_t>(spec.batch));
		while (static_cast<Index>(idx.size()) < spec.batch) {
			if (cursor == order.size()) {
				std::shuffle(order.begin(), order.end(), rng);
				cursor = 0;
			}
			idx.push_back(order[cursor++]);
		}
		return idx;
	};

	Optimizer opt(spec, net);
	double best_acc = record(0);
	Index last_improvement = 0;

	for (Index step = 1; step <= spec.steps; ++step) {
		const std::vector<Index> idx = next_batch();
		const MatrixXd X = data.columns(idx);
		std::vector<int> y;
		for (Index i : idx)
			y.push_back(data.labels[static_cast<std::size_t>(i)]);

		double loss = 0.0;
		Grads g = grad_standard(net, X, y, &loss);
		switch (spec.mode) {
		case TrainMode::Standard: break;
		case TrainMode::L2Reg: g += grad_l2(net); break;
		case TrainMode::AdvSurrogate: g += grad_adv_surrogate(net, spec.eps, spec.pair); break;
		case TrainMode::AdvPGD: {
			AttackSpec a = spec.attack;
			a.seed = stream_key({spec.attack.seed, static_cast<std::uint64_t>(step)});
			double adv = 0.0;
			g += grad_adv_pgd(net, X, a, &adv);
			loss += adv;
			break;
		}
		}
		if (!std::isfinite(loss) || !g.all_finite()) {
			trace.aborted = true;
			trace.abort_reason = "non-finite loss or gradient at step " + std::to_string(step);
			warn("train: " + trace.abort_reason);
			break;
		}
		opt.apply(net, g);
		trace.steps_run = step;

		if (step % spec.metric_every == 0) {
			const double acc = record(step);
			if (acc > best_acc) {
				best_acc = acc;
				last_improvement = step;
			} else if (spec.early_stop > 0 && step - last_improvement >= spec.early_stop) {
				trace.early_stopped = true;
				break;
			}
		}
	}
	return trace;
}

} // namespace mfadv

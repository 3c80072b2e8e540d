#pragma once

#include "mfadv/attack.hpp"
#include "mfadv/dataset.hpp"
#include "mfadv/network.hpp"
#include "mfadv/theory.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace mfadv {

enum class TrainMode { Standard, L2Reg, AdvSurrogate, AdvPGD };
enum class OptimizerKind { SGD, Adam };

struct TrainSpec
{
	TrainMode mode = TrainMode::Standard;
	OptimizerKind optimizer = OptimizerKind::SGD;
	double lr = 1e-3;
	Index steps = 100;
	Index batch = 32;
	AttackSpec attack;          // AdvPGD
	double eps = 0.0;           // AdvSurrogate
	NormPair pair;              // AdvSurrogate
	Index metric_every = 10;
	std::uint64_t seed = 0;
	Index early_stop = 0;       // patience in steps, 0 disables
	Index eval_size = 1024;     // leading training examples used for train_acc

	static double l2_lambda(const NetworkConfig& c)
	{
		return 1.0 / (2.0 * static_cast<double>(c.L) * static_cast<double>(c.N));
	}
	void validate() const;
	bool operator==(const TrainSpec&) const = default;
};

struct TraceRow
{
	Index step = 0;
	double t = 0.0;
	double sigma_w2 = 0.0;
	double sigma_b2 = 0.0;
	double train_acc = 0.0;
	double fr_diag = 0.0;
	double chi_ratio = 0.0;
};

struct TrainTrace
{
	std::vector<TraceRow> rows;
	Index steps_run = 0;
	bool early_stopped = false;
	bool aborted = false;        // non-finite loss or gradient
	std::string abort_reason;
};

using Grads = ParameterGradients<double>;

struct WeightVariance
{
	double sigma_w2;
	double sigma_b2;
};

// sigma_w^2 = N * mean(W^2) over all trainable weights; sigma_b^2 = mean(b^2).
WeightVariance weight_variance(const NetworkD& net);

// Mean softmax cross-entropy over the columns of X. Optionally reports the loss.
Grads grad_standard(const NetworkD& net, const Eigen::MatrixXd& X, const std::vector<int>& y, double* loss = nullptr);

// Closed-form gradient of eps * beta * omega^{L/2}, omega from the current weights.
Grads grad_adv_surrogate(const NetworkD& net, double eps, NormPair pair);

// Gradient of lambda * sum W^2 with lambda = 1 / (2 L N).
Grads grad_l2(const NetworkD& net);

// Mean over columns of ||f(x + eta) - f(x)||_q with eta from PGD held fixed.
Grads grad_adv_pgd(const NetworkD& net, const Eigen::MatrixXd& X, const AttackSpec& spec, double* loss = nullptr);

// sum over weights and outputs of w^2 (df_k/dw)^2 at one input.
double fisher_rao_diag(const NetworkD& net, const Eigen::VectorXd& x_in);

double accuracy(const NetworkD& net, const Dataset& data, Index count);

// Trains net in place and returns the metric trace.
TrainTrace train(NetworkD& net, const Dataset& data, const TrainSpec& spec);

} // namespace mfadv

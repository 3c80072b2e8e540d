#pragma once

// Experiment drivers shared by the command-line tool and the acceptance runner.

#include "mfadv/attack.hpp"
#include "mfadv/dataset.hpp"
#include "mfadv/parallel.hpp"
#include "mfadv/stats.hpp"
#include "mfadv/theory.hpp"
#include "mfadv/train.hpp"

#include <cstdint>
#include <vector>

namespace mfadv {

struct BoundPoint
{
	NormPair pair;
	double eps = 0.0;
	double bound = 0.0;
	double mean = 0.0;
	double std = 0.0;
	double exceed_fraction = 0.0;   // samples with loss > bound
	std::vector<double> losses;
};

// For each sample: a fresh network, a random input with ||x|| = sqrt(d), and one
// PGD run per pair (batched). Attack iters, restarts and step_scale come from
// `attack`; its pair, eps and seed are overridden.
std::vector<BoundPoint> bound_point(const NetworkConfig& c, const std::vector<NormPair>& pairs, double eps,
                                    Index samples, const AttackSpec& attack, std::uint64_t seed,
                                    ThreadPool* pool = nullptr);

struct FlipResult
{
	Index nets = 0;
	Index flips = 0;
	double rate = 0.0;
	double predicted = 0.0;
};

FlipResult flip_experiment(const NetworkConfig& c, double eps, Index nets, std::uint64_t seed, ThreadPool* pool = nullptr);

// Diagonal Fisher-Rao estimate at initialization, one random input per network.
std::vector<double> fisher_rao_at_init(const NetworkConfig& c, Index nets, std::uint64_t seed, ThreadPool* pool = nullptr);

// chi(0)/chi(L) per network with a Gaussian output gradient.
std::vector<double> chi_ratios(const NetworkConfig& c, Index nets, std::uint64_t seed, ThreadPool* pool = nullptr);

double geometric_mean(const std::vector<double>& v);

struct OpNormCheck
{
	Index matrices = 0;
	double worst_rel_err = 0.0;       // non-(2,2) pairs
	double worst_rel_err_22 = 0.0;    // (2,2)
};

// Closed forms against vertex enumeration (p in {1, inf}), Cauchy-Schwarz
// attainment for (2,inf) and a singular value decomposition for (2,2).
OpNormCheck opnorm_selftest(Index matrices, Index max_dim, std::uint64_t seed);

struct RobustEval
{
	Index evaluated = 0;
	double clean_accuracy = 0.0;
	double robust_accuracy = 0.0;
};

// Accuracy on examples [first, first + count) with and without the PGD perturbation.
RobustEval robust_accuracy(const NetworkD& net, const Dataset& data, Index first, Index count, const AttackSpec& attack);

} // namespace mfadv

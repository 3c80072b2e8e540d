// mfadvlab: one subcommand per experiment, CSV out plus a manifest.

#include "CLI11.hpp"

#include "mfadv/data_io.hpp"
#include "mfadv/experiments.hpp"
#include "mfadv/log.hpp"
#include "mfadv/rng.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>

namespace fs = std::filesystem;
using namespace mfadv;

namespace {

struct RunError : std::runtime_error   // exit 1
{
	using std::runtime_error::runtime_error;
};

struct Run
{
	ExperimentConfig cfg;
	fs::path config_dir;
	fs::path out;
	ThreadPool* pool = nullptr;
	Manifest manifest;

	// every stochastic input derives from cfg.seed, so --seed reseeds everything
	std::uint64_t seed(std::uint64_t part) const { return stream_key({cfg.seed, part}); }

	void emit(const std::string& name) { manifest.outputs.push_back(name); }

	Dataset dataset() const
	{
		if (cfg.data.images.empty() || cfg.data.labels.empty())
			throw ConfigError("this subcommand needs data.images and data.labels");
		auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : config_dir / p; };
		return load_idx(resolve(cfg.data.images), resolve(cfg.data.labels), cfg.data.subset);
	}
};

std::vector<NormPair> pairs_or_default(const ExperimentConfig& cfg)
{
	if (!cfg.pairs.empty())
		return cfg.pairs;
	return {{Lp::One, Lp::One}, {Lp::One, Lp::Two}, {Lp::One, Lp::Inf},
	        {Lp::Two, Lp::Two}, {Lp::Two, Lp::Inf}, {Lp::Inf, Lp::Inf}};
}

template<class T>
std::vector<T> or_single(const std::vector<T>& v, T fallback) { return v.empty() ? std::vector<T>{fallback} : v; }

std::vector<std::string> pair_cells(NormPair p) { return {to_string(p.p), to_string(p.q)}; }

// ---- sample-jacobian ---------------------------------------------------------

void sample_jacobian(Run& r)
{
	const MCPlanSpec& m = r.cfg.mc;
	MCPlan plan;
	plan.replicates = m.replicates;
	plan.base_seed = r.seed(m.base_seed);
	plan.config = r.cfg.network;
	plan.inputs = random_inputs(plan.config.d, m.num_inputs, r.seed(m.input_seed ^ 0x1a9u));
	for (const ProbeSpec& p : m.probes)
		plan.probes.push_back({p.input, p.bias, p.i, p.j});
	if (plan.probes.empty())
		plan.probes.push_back({0, false, 0, 0});
	const Eigen::MatrixXd S = sample_entries(plan, r.pool);

	std::vector<MCSampleRow> rows;
	for (Index i = 0; i < S.rows(); ++i)
		for (Index c = 0; c < S.cols(); ++c)
			rows.push_back({i, c, S(i, c)});
	write_csv(rows, r.out / "samples.csv");
	r.emit("samples.csv");

	const TheoryParams tp = TheoryParams::from(plan.config);
	CsvTable fit{{"probe", "input", "kind", "i", "j", "sample_mean", "sample_var", "theory_var", "ks_statistic", "ks_threshold", "pass"}, {}};
	CsvTable theory{{"probe", "x", "density"}, {}};
	for (std::size_t k = 0; k < plan.probes.size(); ++k) {
		const Probe& p = plan.probes[k];
		const double var = p.bias ? bias_entry_variance(tp) : jacobian_entry_variance(tp);
		const Index col = static_cast<Index>(k);
		std::string ks = "nan", thr = "nan", pass = "nan";
		if (var > 0.0) {
			const FitReport f = ks_test(col_span(S, col), 0.0, var);
			ks = format_number(f.ks_statistic);
			thr = format_number(f.ks_threshold);
			pass = f.pass ? "1" : "0";
			std::printf("probe %zu (%s %lld,%lld @x%lld): var %.6g vs %.6g, KS %s\n", k, p.bias ? "a" : "J",
			            static_cast<long long>(p.i), static_cast<long long>(p.j), static_cast<long long>(p.input),
			            f.sample_var, var, f.pass ? "pass" : "FAIL");
		}
		fit.rows.push_back({format_number(col), format_number(p.input), p.bias ? "a" : "J", format_number(p.i),
		                    format_number(p.j), format_number(mean(col_span(S, col))), format_number(variance(col_span(S, col))),
		                    format_number(var), ks, thr, pass});
		const double sd = std::sqrt(var);
		for (int g = 0; g <= 200 && sd > 0.0; ++g) {
			const double x = sd * (-5.0 + 0.05 * g);
			theory.rows.push_back({format_number(col), format_number(x),
			                       format_number(std::exp(-x * x / (2 * var)) / std::sqrt(2 * M_PI * var))});
		}
	}
	write_csv(fit, r.out / "fit.csv");
	write_csv(theory, r.out / "samples_theory.csv");
	r.emit("fit.csv");
	r.emit("samples_theory.csv");
}

// ---- bound-sweep / equality-check ----------------------------------------------

void bound_sweep(Run& r)
{
	const NetworkConfig base = r.cfg.network;
	const auto pairs = pairs_or_default(r.cfg);
	const auto ds = or_single(r.cfg.d_values, base.d);
	const auto eps = or_single(r.cfg.eps_values, r.cfg.attack.eps);
	std::vector<BoundSweepRow> rows, theory;
	for (Index d : ds)
		for (double e : eps) {
			NetworkConfig c = base;
			c.d = d;
			for (const BoundPoint& p : bound_point(c, pairs, e, r.cfg.samples, r.cfg.attack, r.seed(stream_key({0xb5u, std::uint64_t(d)})), r.pool)) {
				rows.push_back({c.d, c.K, c.N, c.L, p.pair, e, p.mean, p.std, p.bound});
				std::printf("d=%lld eps=%g (%s): mean %.5g, bound %.5g\n", static_cast<long long>(d), e,
				            to_string(p.pair).c_str(), p.mean, p.bound);
			}
		}
	// theory on a log grid spanning the swept dimensions
	const double lo = std::log(static_cast<double>(*std::min_element(ds.begin(), ds.end())));
	const double hi = std::log(static_cast<double>(*std::max_element(ds.begin(), ds.end())));
	for (int g = 0; g < 50; ++g) {
		NetworkConfig c = base;
		c.d = static_cast<Index>(std::lround(std::exp(lo + (hi - lo) * g / 49.0)));
		for (double e : eps)
			for (NormPair p : pairs)
				if (p.supported())
					theory.push_back({c.d, c.K, c.N, c.L, p, e, 0.0, 0.0, adv_loss_bound(TheoryParams::from(c), p, e)});
	}
	write_csv(rows, r.out / "bounds.csv");
	write_csv(theory, r.out / "bounds_theory.csv");
	r.emit("bounds.csv");
	r.emit("bounds_theory.csv");
}

void equality_check(Run& r)
{
	const NetworkConfig c = r.cfg.network;
	const auto pairs = r.cfg.pairs.empty() ? std::vector<NormPair>{{Lp::Inf, Lp::Inf}, {Lp::Two, Lp::Inf}} : r.cfg.pairs;
	CsvTable out{{"p", "q", "eps", "sample", "loss", "bound", "ratio"}, {}};
	CsvTable theory{{"p", "q", "eps", "bound"}, {}};
	for (double e : or_single(r.cfg.eps_values, r.cfg.attack.eps)) {
		for (const BoundPoint& p : bound_point(c, pairs, e, r.cfg.samples, r.cfg.attack, r.seed(0xe9u), r.pool)) {
			for (std::size_t s = 0; s < p.losses.size(); ++s) {
				auto row = pair_cells(p.pair);
				row.insert(row.end(), {format_number(e), format_number(static_cast<Index>(s)), format_number(p.losses[s]),
				                       format_number(p.bound), format_number(p.losses[s] / p.bound)});
				out.rows.push_back(row);
			}
			auto row = pair_cells(p.pair);
			row.insert(row.end(), {format_number(e), format_number(p.bound)});
			theory.rows.push_back(row);
			std::printf("eps=%g (%s): mean achieved / bound = %.4f\n", e, to_string(p.pair).c_str(), p.mean / p.bound);
		}
	}
	write_csv(out, r.out / "equality.csv");
	write_csv(theory, r.out / "equality_theory.csv");
	r.emit("equality.csv");
	r.emit("equality_theory.csv");
}

// ---- training based ----------------------------------------------------------

TrainSpec seeded(const Run& r)
{
	TrainSpec s = r.cfg.train;
	s.seed = r.seed(s.seed ^ 0x7e1u);
	s.attack.seed = r.seed(s.attack.seed ^ 0xa77u);
	return s;
}

TrainTrace checked_train(NetworkD& net, const Dataset& data, const TrainSpec& s)
{
	TrainTrace tr = train(net, data, s);
	if (tr.aborted)
		throw RunError("training aborted: " + tr.abort_reason);
	return tr;
}

// The evolution law that matches the training mode; none for standard training.
std::optional<EvolutionSpec> evolution_for(const NetworkConfig& c, const TrainSpec& s, double sigma_w2_0)
{
	EvolutionSpec e;
	NetworkConfig anchored = c;
	anchored.sigma_w2 = sigma_w2_0;
	e.params = TheoryParams::from(anchored);
	e.sigma_w2_0 = sigma_w2_0;
	switch (s.mode) {
	case TrainMode::Standard: return std::nullopt;
	case TrainMode::L2Reg: e.mode = EvolutionMode::L2Reg; return e;
	case TrainMode::AdvSurrogate: e.eps = s.eps; e.pair = s.pair; break;
	case TrainMode::AdvPGD: e.eps = s.attack.eps; e.pair = s.attack.pair; break;
	}
	if (!e.pair.supported())
		return std::nullopt;
	e.mode = c.arch == Arch::Vanilla ? EvolutionMode::AdvVanilla : EvolutionMode::AdvResidual;
	return e;
}

void trace_overlay(Run& r, const TrainTrace& tr, const std::string& name)
{
	const NetworkConfig& c = r.cfg.network;
	const TrainSpec& s = r.cfg.train;
	const auto evo = evolution_for(c, s, tr.rows.front().sigma_w2);
	CsvTable theory{{"step", "t", "sigma_w2", "fr_expected"}, {}};
	for (const TraceRow& row : tr.rows) {
		const double sw = evo ? sigma_w2_at(*evo, row.t) : tr.rows.front().sigma_w2;
		double fr = std::nan("");
		if (evo && evo->mode != EvolutionMode::L2Reg)
			fr = fisher_rao_expected(evo->params, evo->pair, evo->eps, row.t);
		theory.rows.push_back({format_number(row.step), format_number(row.t), format_number(sw), format_number(fr)});
	}
	write_csv(theory, r.out / (name + "_theory.csv"));
	r.emit(name + "_theory.csv");
}

void evolve(Run& r, const std::string& name)
{
	const Dataset data = r.dataset();
	NetworkD net = sample_network(r.cfg.network, r.seed(0x4e7u));
	const TrainTrace tr = checked_train(net, data, seeded(r));
	write_csv(tr.rows, r.out / (name + ".csv"));
	r.emit(name + ".csv");
	trace_overlay(r, tr, name);
	const TraceRow &a = tr.rows.front(), &b = tr.rows.back();
	std::printf("%lld steps: sigma_w2 %.6g -> %.6g, fr_diag %.6g -> %.6g, train_acc %.4f\n",
	            static_cast<long long>(tr.steps_run), a.sigma_w2, b.sigma_w2, a.fr_diag, b.fr_diag, b.train_acc);
}

void trainability_heatmap(Run& r)
{
	const Dataset data = r.dataset();
	const auto Ls = or_single(r.cfg.L_values, r.cfg.network.L);
	const auto Ns = or_single(r.cfg.N_values, r.cfg.network.N);
	struct Cell { Index L, N; double acc; Index steps; bool stopped; };
	std::vector<Cell> cells;
	for (Index L : Ls)
		for (Index N : Ns)
			cells.push_back({L, N, 0.0, 0, false});
	parallel_for(r.pool, cells.size(), [&](std::size_t k) {
		NetworkConfig c = r.cfg.network;
		c.L = cells[k].L;
		c.N = cells[k].N;
		NetworkD net = sample_network(c, r.seed(stream_key({0x4ea7u, std::uint64_t(c.L), std::uint64_t(c.N)})));
		const TrainTrace tr = checked_train(net, data, seeded(r));
		cells[k].acc = accuracy(net, data, data.size());
		cells[k].steps = tr.steps_run;
		cells[k].stopped = tr.early_stopped;
	});
	CsvTable out{{"L", "N", "mode", "train_acc", "steps_run", "early_stopped"}, {}};
	for (const Cell& c : cells) {
		out.rows.push_back({format_number(c.L), format_number(c.N), to_string(r.cfg.train.mode), format_number(c.acc),
		                    format_number(c.steps), c.stopped ? "1" : "0"});
		std::printf("L=%lld N=%lld: train accuracy %.4f\n", static_cast<long long>(c.L), static_cast<long long>(c.N), c.acc);
	}
	write_csv(out, r.out / "heatmap.csv");
	r.emit("heatmap.csv");

	// boundary T(N): training time after which the network leaves the trainable interval
	const TrainSpec& s = r.cfg.train;
	const NormPair pair = s.mode == TrainMode::AdvSurrogate ? s.pair : s.attack.pair;
	const double eps = s.mode == TrainMode::AdvSurrogate ? s.eps : s.attack.eps;
	CsvTable theory{{"L", "N", "T", "steps"}, {}};
	const double nlo = std::log(static_cast<double>(*std::min_element(Ns.begin(), Ns.end())));
	const double nhi = std::log(static_cast<double>(*std::max_element(Ns.begin(), Ns.end())));
	for (Index L : Ls)
		for (int g = 0; g < 50 && pair.supported(); ++g) {
			NetworkConfig c = r.cfg.network;
			c.L = L;
			c.N = static_cast<Index>(std::lround(std::exp(nlo + (nhi - nlo) * g / 49.0)));
			const TheoryParams tp = TheoryParams::from(c);
			const double T = c.arch == Arch::Vanilla ? untrainable_T_vanilla(tp, pair, eps, r.cfg.m)
			                                         : trainable_onset_T_residual(tp, pair, eps, r.cfg.M);
			theory.rows.push_back({format_number(L), format_number(c.N), format_number(T), format_number(T / s.lr)});
		}
	write_csv(theory, r.out / "heatmap_theory.csv");
	r.emit("heatmap_theory.csv");
}

void flip_prob(Run& r)
{
	NetworkConfig c = r.cfg.network;
	if (c.K != 1)
		throw ConfigError("flip-prob needs network.K = 1");
	CsvTable out{{"eps", "nets", "flips", "rate", "predicted"}, {}};
	const auto eps = or_single(r.cfg.eps_values, r.cfg.attack.eps);
	for (double e : eps) {
		const FlipResult f = flip_experiment(c, e, r.cfg.samples, r.seed(0xf1u), r.pool);
		out.rows.push_back({format_number(e), format_number(f.nets), format_number(f.flips), format_number(f.rate),
		                    format_number(f.predicted)});
		std::printf("eps=%g: flip rate %.4f, predicted %.4f\n", e, f.rate, f.predicted);
	}
	write_csv(out, r.out / "flip.csv");
	r.emit("flip.csv");
	CsvTable theory{{"eps", "predicted"}, {}};
	const double top = 2.0 * *std::max_element(eps.begin(), eps.end());
	for (int g = 0; g <= 100; ++g)
		theory.rows.push_back({format_number(top * g / 100.0), format_number(flip_probability(TheoryParams::from(c), top * g / 100.0))});
	write_csv(theory, r.out / "flip_theory.csv");
	r.emit("flip_theory.csv");
}

void opnorm_check(Run& r)
{
	const OpNormCheck c = opnorm_selftest(r.cfg.samples, 8, r.seed(0x09u));
	CsvTable out{{"matrices", "worst_rel_err", "worst_rel_err_22"}, {}};
	out.rows.push_back({format_number(c.matrices), format_number(c.worst_rel_err), format_number(c.worst_rel_err_22)});
	write_csv(out, r.out / "opnorm.csv");
	r.emit("opnorm.csv");
	std::printf("%lld matrices: worst rel err %.3g, (2,2) %.3g\n", static_cast<long long>(c.matrices), c.worst_rel_err,
	            c.worst_rel_err_22);
	if (c.worst_rel_err > 1e-6 || c.worst_rel_err_22 > 1e-4)
		throw RunError("operator norm closed forms disagree with the oracles");
}

void robust_eval(Run& r)
{
	const Dataset data = r.dataset();
	// last fifth held out for evaluation
	const Index n_eval = std::max<Index>(1, data.size() / 5);
	Dataset train_set = data;
	train_set.images = data.images.topRows(data.size() - n_eval);
	train_set.labels.resize(static_cast<std::size_t>(data.size() - n_eval));
	AttackSpec eval = r.cfg.attack;
	eval.iters = 50;
	eval.restarts = 5;
	eval.seed = r.seed(0xe7a1u);
	r.manifest.notes.push_back("robust accuracy uses PGD (50 iterations, 5 restarts) in place of AutoAttack; values are upper bounds");

	const auto Ls = or_single(r.cfg.L_values, r.cfg.network.L);
	const auto Ns = or_single(r.cfg.N_values, r.cfg.network.N);
	CsvTable out{{"L", "N", "p", "eps", "evaluated", "clean_acc", "robust_acc"}, {}};
	for (Index L : Ls)
		for (Index N : Ns) {
			NetworkConfig c = r.cfg.network;
			c.L = L;
			c.N = N;
			NetworkD net = sample_network(c, r.seed(stream_key({0x4ea7u, std::uint64_t(L), std::uint64_t(N)})));
			checked_train(net, train_set, seeded(r));
			const RobustEval e = robust_accuracy(net, data, data.size() - n_eval, n_eval, eval);
			out.rows.push_back({format_number(L), format_number(N), to_string(eval.pair.p), format_number(eval.eps),
			                    format_number(e.evaluated), format_number(e.clean_accuracy), format_number(e.robust_accuracy)});
			std::printf("L=%lld N=%lld: clean %.4f, robust %.4f on %lld held-out examples\n", static_cast<long long>(L),
			            static_cast<long long>(N), e.clean_accuracy, e.robust_accuracy, static_cast<long long>(e.evaluated));
		}
	write_csv(out, r.out / "robust.csv");
	r.emit("robust.csv");
}

} // namespace

int main(int argc, char** argv)
{
	CLI::App app{"mfadvlab: mean-field adversarial training laboratory"};
	app.set_version_flag("--version", MFADV_VERSION);
	app.require_subcommand(1);

	std::string config_path, out_dir;
	std::optional<std::uint64_t> seed;
	std::optional<Index> subset;
	unsigned threads = std::max(1u, std::thread::hardware_concurrency());

	const std::map<std::string, std::function<void(Run&)>> commands = {
	    {"sample-jacobian", sample_jacobian},
	    {"bound-sweep", bound_sweep},
	    {"equality-check", equality_check},
	    {"evolve", [](Run& r) { evolve(r, "trace"); }},
	    {"trainability-heatmap", trainability_heatmap},
	    {"capacity", [](Run& r) { evolve(r, "capacity"); }},
	    {"flip-prob", flip_prob},
	    {"opnorm-selftest", opnorm_check},
	    {"robust-eval", robust_eval},
	};
	for (const auto& [name, fn] : commands) {
		CLI::App* sub = app.add_subcommand(name);
		sub->add_option("--config", config_path, "experiment config (JSON)")->required();
		sub->add_option("--out", out_dir, "output directory (overrides out_dir)");
		sub->add_option("--seed", seed, "master seed (overrides seed)");
		sub->add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
		sub->add_option("--subset", subset, "dataset truncation (overrides data.subset.count)");
	}
	try {
		app.parse(argc, argv);
	} catch (const CLI::ParseError& e) {
		const int code = app.exit(e);
		return code == 0 ? 0 : 2;
	}
	const std::string name = app.get_subcommands().front()->get_name();

	Run r;
	try {
		r.cfg = read_config(config_path);
		if (seed)
			r.cfg.seed = *seed;
		if (subset)
			r.cfg.data.subset.count = *subset;
		if (!out_dir.empty())
			r.cfg.out_dir = out_dir;
		r.cfg.network.validate();
		r.cfg.attack.validate();
		r.cfg.train.validate();
	} catch (const std::exception& e) {
		std::fprintf(stderr, "config error: %s\n", e.what());
		return 2;
	}
	r.config_dir = fs::absolute(config_path).parent_path();
	r.out = r.cfg.out_dir;
	r.manifest.subcommand = name;

	try {
		ThreadPool pool(threads);
		r.pool = &pool;
		fs::create_directories(r.out);
		commands.at(name)(r);
		r.manifest.config = r.cfg;
		write_manifest(r.manifest, r.out / "manifest.json");
	} catch (const ConfigError& e) {
		std::fprintf(stderr, "config error: %s\n", e.what());
		return 2;
	} catch (const DataError& e) {
		std::fprintf(stderr, "data error: %s\n", e.what());
		return 2;
	} catch (const std::invalid_argument& e) {
		std::fprintf(stderr, "invalid configuration: %s\n", e.what());
		return 2;
	} catch (const std::exception& e) {
		std::fprintf(stderr, "%s failed: %s\n", name.c_str(), e.what());
		return 1;
	}
	return 0;
}

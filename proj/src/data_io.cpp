#include "mfadv/data_io.hpp"

#include "json.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace mfadv {

using nlohmann::json;

std::string format_number(double v)
{
	char buf[40];
	std::snprintf(buf, sizeof buf, "%.17g", v);
	return buf;
}

std::string format_number(Index v) { return std::to_string(v); }

namespace {

std::ofstream open_out(const std::filesystem::path& path)
{
	if (path.has_parent_path())
		std::filesystem::create_directories(path.parent_path());
	std::ofstream f(path);
	if (!f)
		throw std::runtime_error("cannot write " + path.string());
	return f;
}

void emit_row(std::ostream& os, const std::vector<std::string>& cells)
{
	for (std::size_t i = 0; i < cells.size(); ++i) {
		if (i)
			os << ',';
		const std::string& c = cells[i];
		if (c.find_first_of(",\"\n") != std::string::npos) {
			os << '"';
			for (char ch : c)
				os << (ch == '"' ? "\"\"" : std::string(1, ch));
			os << '"';
		} else {
			os << c;
		}
	}
	os << '\n';
}

std::string pair_cell(Lp p) { return to_string(p); }

} // namespace

void write_csv(const CsvTable& table, const std::filesystem::path& path)
{
	auto f = open_out(path);
	emit_row(f, table.header);
	for (const auto& r : table.rows)
		emit_row(f, r);
	if (!f)
		throw std::runtime_error("write failed: " + path.string());
}

void write_csv(const std::vector<TraceRow>& rows, const std::filesystem::path& path)
{
	CsvTable t{{"step", "t", "sigma_w2", "sigma_b2", "train_acc", "fr_diag", "chi_ratio"}, {}};
	for (const auto& r : rows)
		t.rows.push_back({format_number(r.step), format_number(r.t), format_number(r.sigma_w2), format_number(r.sigma_b2),
		                  format_number(r.train_acc), format_number(r.fr_diag), format_number(r.chi_ratio)});
	write_csv(t, path);
}

void write_csv(const std::vector<BoundSweepRow>& rows, const std::filesystem::path& path)
{
	CsvTable t{{"d", "K", "N", "L", "p", "q", "eps", "sample_mean", "sample_std", "bound"}, {}};
	for (const auto& r : rows)
		t.rows.push_back({format_number(r.d), format_number(r.K), format_number(r.N), format_number(r.L),
		                  pair_cell(r.pair.p), pair_cell(r.pair.q), format_number(r.eps), format_number(r.sample_mean),
		                  format_number(r.sample_std), format_number(r.bound)});
	write_csv(t, path);
}

void write_csv(const std::vector<MCSampleRow>& rows, const std::filesystem::path& path)
{
	CsvTable t{{"replicate", "probe", "value"}, {}};
	for (const auto& r : rows)
		t.rows.push_back({format_number(r.replicate), format_number(r.probe), format_number(r.value)});
	write_csv(t, path);
}

CsvTable read_csv(const std::filesystem::path& path)
{
	std::ifstream f(path);
	if (!f)
		throw std::runtime_error("cannot read " + path.string());
	auto split = [](const std::string& line) {
		std::vector<std::string> cells;
		std::string cur;
		bool quoted = false;
		for (std::size_t i = 0; i < line.size(); ++i) {
			const char c = line[i];
			if (quoted) {
				if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
					cur.push_back('"');
					++i;
				} else if (c == '"') {
					quoted = false;
				} else {
					cur.push_back(c);
				}
			} else if (c == '"') {
				quoted = true;
			} else if (c == ',') {
				cells.push_back(std::move(cur));
				cur.clear();
			} else {
				cur.push_back(c);
			}
		}
		cells.push_back(std::move(cur));
		return cells;
	};
	CsvTable t;
	std::string line;
	if (std::getline(f, line))
		t.header = split(line);
	while (std::getline(f, line))
		if (!line.empty())
			t.rows.push_back(split(line));
	return t;
}

// ---- enums -----------------------------------------------------------------

std::string to_string(Arch a) { return a == Arch::Vanilla ? "vanilla" : "residual"; }

std::string to_string(TrainMode m)
{
	switch (m) {
	case TrainMode::Standard: return "standard";
	case TrainMode::L2Reg: return "l2reg";
	case TrainMode::AdvSurrogate: return "adv-surrogate";
	case TrainMode::AdvPGD: return "adv-pgd";
	}
	return "?";
}

std::string to_string(OptimizerKind o) { return o == OptimizerKind::SGD ? "sgd" : "adam"; }

namespace {
std::string lower(std::string s)
{
	for (auto& c : s)
		c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
	return s;
}
} // namespace

Arch parse_arch(const std::string& s)
{
	const auto l = lower(s);
	if (l == "vanilla") return Arch::Vanilla;
	if (l == "residual") return Arch::Residual;
	throw ConfigError("unknown arch '" + s + "'");
}

TrainMode parse_train_mode(const std::string& s)
{
	const auto l = lower(s);
	if (l == "standard") return TrainMode::Standard;
	if (l == "l2reg" || l == "l2") return TrainMode::L2Reg;
	if (l == "adv-surrogate" || l == "advsurrogate") return TrainMode::AdvSurrogate;
	if (l == "adv-pgd" || l == "advpgd") return TrainMode::AdvPGD;
	throw ConfigError("unknown train mode '" + s + "'");
}

OptimizerKind parse_optimizer(const std::string& s)
{
	const auto l = lower(s);
	if (l == "sgd") return OptimizerKind::SGD;
	if (l == "adam") return OptimizerKind::Adam;
	throw ConfigError("unknown optimizer '" + s + "'");
}

// ---- config ------------------------------------------------------------------

namespace {

json to_json(const NetworkConfig& c)
{
	return {{"d", c.d}, {"K", c.K}, {"L", c.L}, {"N", c.N}, {"sigma_w2", c.sigma_w2}, {"sigma_b2", c.sigma_b2},
	        {"u", c.u}, {"v", c.v}, {"arch", to_string(c.arch)}};
}

json to_json(const AttackSpec& a)
{
	return {{"pair", to_string(a.pair)}, {"eps", a.eps}, {"iters", a.iters}, {"restarts", a.restarts},
	        {"step_scale", a.step_scale}, {"seed", a.seed}};
}

json to_json(const TrainSpec& t)
{
	return {{"mode", to_string(t.mode)}, {"optimizer", to_string(t.optimizer)}, {"lr", t.lr}, {"steps", t.steps},
	        {"batch", t.batch}, {"attack", to_json(t.attack)}, {"eps", t.eps}, {"pair", to_string(t.pair)},
	        {"metric_every", t.metric_every}, {"seed", t.seed}, {"early_stop", t.early_stop}, {"eval_size", t.eval_size}};
}

json to_json(const MCPlanSpec& m)
{
	json probes = json::array();
	for (const auto& p : m.probes)
		probes.push_back({{"input", p.input}, {"kind", p.bias ? "a" : "J"}, {"i", p.i}, {"j", p.j}});
	return {{"replicates", m.replicates}, {"base_seed", m.base_seed}, {"num_inputs", m.num_inputs},
	        {"input_seed", m.input_seed}, {"probes", probes}};
}

json to_json(const DataSpec& d)
{
	return {{"images", d.images}, {"labels", d.labels}, {"subset", d.subset.count}, {"shuffle", d.subset.shuffle},
	        {"subset_seed", d.subset.seed}};
}

// Missing keys keep their defaults; present keys must have the right type.
template<class T>
void get(const json& j, const char* key, T& out)
{
	if (!j.contains(key))
		return;
	try {
		out = j.at(key).get<T>();
	} catch (const json::exception& e) {
		throw ConfigError(std::string("config key '") + key + "': " + e.what());
	}
}

template<class T, class Parse>
void get_parsed(const json& j, const char* key, T& out, Parse parse)
{
	std::string s;
	get(j, key, s);
	if (j.contains(key)) {
		try {
			out = parse(s);
		} catch (const std::invalid_argument& e) {
			throw ConfigError(std::string("config key '") + key + "': " + e.what());
		}
	}
}

void from_json_net(const json& j, NetworkConfig& c)
{
	get(j, "d", c.d);
	get(j, "K", c.K);
	get(j, "L", c.L);
	get(j, "N", c.N);
	get(j, "sigma_w2", c.sigma_w2);
	get(j, "sigma_b2", c.sigma_b2);
	get(j, "u", c.u);
	get(j, "v", c.v);
	get_parsed(j, "arch", c.arch, parse_arch);
}

void from_json_attack(const json& j, AttackSpec& a)
{
	get_parsed(j, "pair", a.pair, parse_pair);
	get(j, "eps", a.eps);
	get(j, "iters", a.iters);
	get(j, "restarts", a.restarts);
	get(j, "step_scale", a.step_scale);
	get(j, "seed", a.seed);
}

void from_json_train(const json& j, TrainSpec& t)
{
	get_parsed(j, "mode", t.mode, parse_train_mode);
	get_parsed(j, "optimizer", t.optimizer, parse_optimizer);
	get(j, "lr", t.lr);
	get(j, "steps", t.steps);
	get(j, "batch", t.batch);
	if (j.contains("attack"))
		from_json_attack(j.at("attack"), t.attack);
	get(j, "eps", t.eps);
	get_parsed(j, "pair", t.pair, parse_pair);
	get(j, "metric_every", t.metric_every);
	get(j, "seed", t.seed);
	get(j, "early_stop", t.early_stop);
	get(j, "eval_size", t.eval_size);
}

void from_json_mc(const json& j, MCPlanSpec& m)
{
	get(j, "replicates", m.replicates);
	get(j, "base_seed", m.base_seed);
	get(j, "num_inputs", m.num_inputs);
	get(j, "input_seed", m.input_seed);
	if (j.contains("probes")) {
		m.probes.clear();
		for (const auto& p : j.at("probes")) {
			ProbeSpec ps;
			get(p, "input", ps.input);
			std::string kind = "J";
			get(p, "kind", kind);
			if (kind != "J" && kind != "a")
				throw ConfigError("probe kind must be 'J' or 'a'");
			ps.bias = kind == "a";
			get(p, "i", ps.i);
			get(p, "j", ps.j);
			m.probes.push_back(ps);
		}
	}
}

void from_json_data(const json& j, DataSpec& d)
{
	get(j, "images", d.images);
	get(j, "labels", d.labels);
	get(j, "subset", d.subset.count);
	get(j, "shuffle", d.subset.shuffle);
	get(j, "subset_seed", d.subset.seed);
}

json config_json(const ExperimentConfig& c)
{
	json pairs = json::array();
	for (const auto& p : c.pairs)
		pairs.push_back(to_string(p));
	return {{"schema", c.schema},
	        {"seed", c.seed},
	        {"network", to_json(c.network)},
	        {"attack", to_json(c.attack)},
	        {"train", to_json(c.train)},
	        {"mc", to_json(c.mc)},
	        {"data", to_json(c.data)},
	        {"out_dir", c.out_dir},
	        {"sweep",
	         {{"d", c.d_values},
	          {"N", c.N_values},
	          {"L", c.L_values},
	          {"pairs", pairs},
	          {"eps", c.eps_values},
	          {"samples", c.samples},
	          {"M", c.M},
	          {"m", c.m}}}};
}

} // namespace

std::string config_to_string(const ExperimentConfig& cfg) { return config_json(cfg).dump(2) + "\n"; }

ExperimentConfig config_from_string(const std::string& text)
{
	json j;
	try {
		j = json::parse(text);
	} catch (const json::parse_error& e) {
		throw ConfigError(std::string("config is not valid JSON: ") + e.what());
	}
	if (!j.is_object())
		throw ConfigError("config must be a JSON object");
	ExperimentConfig c;
	if (!j.contains("schema"))
		throw ConfigError("config lacks a schema field");
	get(j, "schema", c.schema);
	if (c.schema != kConfigSchema)
		throw ConfigError("unknown config schema '" + c.schema + "' (expected " + kConfigSchema + ")");
	get(j, "seed", c.seed);
	if (j.contains("network")) from_json_net(j.at("network"), c.network);
	if (j.contains("attack")) from_json_attack(j.at("attack"), c.attack);
	if (j.contains("train")) from_json_train(j.at("train"), c.train);
	if (j.contains("mc")) from_json_mc(j.at("mc"), c.mc);
	if (j.contains("data")) from_json_data(j.at("data"), c.data);
	get(j, "out_dir", c.out_dir);
	if (j.contains("sweep")) {
		const json& s = j.at("sweep");
		get(s, "d", c.d_values);
		get(s, "N", c.N_values);
		get(s, "L", c.L_values);
		if (s.contains("pairs")) {
			std::vector<std::string> raw;
			get(s, "pairs", raw);
			c.pairs.clear();
			for (const auto& r : raw) {
				try {
					c.pairs.push_back(parse_pair(r));
				} catch (const std::invalid_argument& e) {
					throw ConfigError(e.what());
				}
			}
		}
		get(s, "eps", c.eps_values);
		get(s, "samples", c.samples);
		get(s, "M", c.M);
		get(s, "m", c.m);
	}
	return c;
}

void write_config(const ExperimentConfig& cfg, const std::filesystem::path& path)
{
	auto f = open_out(path);
	f << config_to_string(cfg);
}

ExperimentConfig read_config(const std::filesystem::path& path)
{
	std::ifstream f(path);
	if (!f)
		throw ConfigError("cannot read config " + path.string());
	std::stringstream ss;
	ss << f.rdbuf();
	return config_from_string(ss.str());
}

void write_manifest(const Manifest& m, const std::filesystem::path& path)
{
	json j = {{"schema", kManifestSchema},
	          {"artifact_version", MFADV_VERSION},
	          {"subcommand", m.subcommand},
	          {"seed", m.config.seed},
	          {"config", config_json(m.config)},
	          {"outputs", m.outputs},
	          {"notes", m.notes}};
	auto f = open_out(path);
	f << j.dump(2) << '\n';
}

} // namespace mfadv

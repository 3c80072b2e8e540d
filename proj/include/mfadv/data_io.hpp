#pragma once

#include "mfadv/attack.hpp"
#include "mfadv/dataset.hpp"
#include "mfadv/train.hpp"
#include "mfadv/network.hpp"
#include "mfadv/theory.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mfadv {

struct ConfigError : std::runtime_error
{
	using std::runtime_error::runtime_error;
};

// ---- CSV -----------------------------------------------------------------

struct BoundSweepRow
{
	Index d = 0, K = 0, N = 0, L = 0;
	NormPair pair;
	double eps = 0.0;
	double sample_mean = 0.0;
	double sample_std = 0.0;
	double bound = 0.0;
};

struct MCSampleRow
{
	Index replicate = 0;
	Index probe = 0;
	double value = 0.0;
};

// Generic table: header plus rows of already formatted cells.
struct CsvTable
{
	std::vector<std::string> header;
	std::vector<std::vector<std::string>> rows;
};

std::string format_number(double v);   // 17 significant digits
std::string format_number(Index v);

void write_csv(const CsvTable& table, const std::filesystem::path& path);
void write_csv(const std::vector<TraceRow>& rows, const std::filesystem::path& path);
void write_csv(const std::vector<BoundSweepRow>& rows, const std::filesystem::path& path);
void write_csv(const std::vector<MCSampleRow>& rows, const std::filesystem::path& path);
CsvTable read_csv(const std::filesystem::path& path);

// ---- experiment configuration -------------------------------------------

inline constexpr const char* kConfigSchema = "mfadvlab-config/1";
inline constexpr const char* kManifestSchema = "mfadvlab-manifest/1";

struct ProbeSpec
{
	Index input = 0;             // index into MCPlanSpec::inputs
	bool bias = false;           // a_i instead of J_ij
	Index i = 0;
	Index j = 0;

	bool operator==(const ProbeSpec&) const = default;
};

struct MCPlanSpec
{
	Index replicates = 2;
	std::uint64_t base_seed = 0;
	Index num_inputs = 1;        // random inputs with ||x|| = sqrt(d), drawn from input_seed
	std::uint64_t input_seed = 0;
	std::vector<ProbeSpec> probes;

	bool operator==(const MCPlanSpec&) const = default;
};

struct DataSpec
{
	std::string images;
	std::string labels;
	SubsetOptions subset;

	bool operator==(const DataSpec&) const = default;
};

struct ExperimentConfig
{
	std::string schema = kConfigSchema;
	std::uint64_t seed = 0;
	NetworkConfig network;
	AttackSpec attack;
	TrainSpec train;
	MCPlanSpec mc;
	DataSpec data;
	std::string out_dir = "out";
	// subcommand specific sweep axes and knobs
	std::vector<Index> d_values;
	std::vector<Index> N_values;
	std::vector<Index> L_values;
	std::vector<NormPair> pairs;
	std::vector<double> eps_values;
	Index samples = 30;
	double M = 1e4;
	double m = 1e-4;

	bool operator==(const ExperimentConfig&) const = default;
};

std::string to_string(Arch a);
std::string to_string(TrainMode m);
std::string to_string(OptimizerKind o);
Arch parse_arch(const std::string& s);
TrainMode parse_train_mode(const std::string& s);
OptimizerKind parse_optimizer(const std::string& s);

std::string config_to_string(const ExperimentConfig& cfg);
ExperimentConfig config_from_string(const std::string& text);
void write_config(const ExperimentConfig& cfg, const std::filesystem::path& path);
ExperimentConfig read_config(const std::filesystem::path& path);

struct Manifest
{
	std::string subcommand;
	ExperimentConfig config;
	std::vector<std::string> outputs;
	std::vector<std::string> notes;
};

void write_manifest(const Manifest& m, const std::filesystem::path& path);

} // namespace mfadv

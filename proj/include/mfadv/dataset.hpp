#pragma once

#include "mfadv/network.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace mfadv {

struct DataError : std::runtime_error
{
	using std::runtime_error::runtime_error;
};

struct Dataset
{
	Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> images;   // n x d, values in [0,1]
	std::vector<int> labels;
	std::string name;

	Index size() const { return images.rows(); }
	Index dim() const { return images.cols(); }
	int num_classes() const;
	// Columns are the selected images.
	Eigen::MatrixXd columns(const std::vector<Index>& idx) const;
};

struct SubsetOptions
{
	Index count = 0;          // 0 keeps everything
	bool shuffle = false;     // seeded shuffle before truncation instead of first-n
	std::uint64_t seed = 0;

	bool operator==(const SubsetOptions&) const = default;
};

// Big-endian IDX image/label pair. Transparently reads gzip-compressed files.
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 const SubsetOptions& subset = {});

Eigen::VectorXd normalize_sqrt_d(const Eigen::VectorXd& x);

} // namespace mfadv

#include "mfadv/dataset.hpp"

#include "mfadv/rng.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <numeric>

namespace mfadv {

int Dataset::num_classes() const
{
	return labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
}

Eigen::MatrixXd Dataset::columns(const std::vector<Index>& idx) const
{
	Eigen::MatrixXd X(dim(), static_cast<Index>(idx.size()));
	for (std::size_t c = 0; c < idx.size(); ++c)
		X.col(static_cast<Index>(c)) = images.row(idx[c]).transpose();
	return X;
}

namespace {

// gzread handles plain files too
struct GzFile
{
	explicit GzFile(const std::filesystem::path& p) : path(p.string()), f(gzopen(path.c_str(), "rb"))
	{
		if (!f)
			throw DataError("cannot open " + path);
	}
	~GzFile() { gzclose(f); }
	GzFile(const GzFile&) = delete;
	GzFile& operator=(const GzFile&) = delete;

	void read(void* dst, std::size_t n)
	{
		auto* out = static_cast<unsigned char*>(dst);
		while (n > 0) {
			const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(n, 1u << 30));
			const int got = gzread(f, out, chunk);
			if (got <= 0)
				throw DataError(path + ": truncated file");
			out += got;
			n -= static_cast<std::size_t>(got);
		}
	}

	std::uint32_t be32()
	{
		std::array<unsigned char, 4> b;
		read(b.data(), 4);
		return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
	}

	std::string path;
	gzFile f;
};

void expect_magic(GzFile& f, std::uint32_t want)
{
	const std::uint32_t got = f.be32();
	if (got != want) {
		char buf[96];
		std::snprintf(buf, sizeof buf, ": wrong IDX magic 0x%08x (expected 0x%08x)", got, want);
		throw DataError(f.path + buf);
	}
}

} // namespace

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 const SubsetOptions& subset)
{
	GzFile img(images_path);
	expect_magic(img, 0x00000803);
	const std::uint32_t n = img.be32(), rows = img.be32(), cols = img.be32();
	GzFile lab(labels_path);
	expect_magic(lab, 0x00000801);
	const std::uint32_t nl = lab.be32();
	if (n != nl)
		throw DataError("image count " + std::to_string(n) + " does not match label count " + std::to_string(nl));

	const std::size_t d = std::size_t{rows} * cols;
	std::vector<unsigned char> pix(std::size_t{n} * d);
	std::vector<unsigned char> lbl(n);
	img.read(pix.data(), pix.size());
	lab.read(lbl.data(), lbl.size());

	std::vector<Index> keep(n);
	std::iota(keep.begin(), keep.end(), Index{0});
	if (subset.shuffle) {
		Xoshiro256pp g(stream_key({subset.seed, 0x5b5e7ULL}));
		std::shuffle(keep.begin(), keep.end(), g);
	}
	if (subset.count > 0 && subset.count < static_cast<Index>(n))
		keep.resize(static_cast<std::size_t>(subset.count));

	Dataset ds;
	ds.name = images_path.filename().string();
	ds.images.resize(static_cast<Index>(keep.size()), static_cast<Index>(d));
	ds.labels.resize(keep.size());
	for (std::size_t r = 0; r < keep.size(); ++r) {
		const unsigned char* src = pix.data() + static_cast<std::size_t>(keep[r]) * d;
		for (std::size_t j = 0; j < d; ++j)
			ds.images(static_cast<Index>(r), static_cast<Index>(j)) = src[j] / 255.0;
		ds.labels[r] = lbl[static_cast<std::size_t>(keep[r])];
	}
	return ds;
}

Eigen::VectorXd normalize_sqrt_d(const Eigen::VectorXd& x)
{
	const double n = x.norm();
	if (n == 0.0)
		throw std::invalid_argument("normalize_sqrt_d: zero vector");
	return x * (std::sqrt(static_cast<double>(x.size())) / n);
}

} // namespace mfadv

#pragma once

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>

namespace mfadv {

inline constexpr std::uint64_t splitmix64(std::uint64_t z)
{
	z += 0x9e3779b97f4a7c15ULL;
	z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
	z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
	return z ^ (z >> 31);
}

// Folds a list of keys into one stream id. Used for (seed, tensor, layer) and
// (base_seed, replicate) splits so that streams never depend on sampling order.
inline constexpr std::uint64_t stream_key(std::initializer_list<std::uint64_t> parts)
{
	std::uint64_t h = 0x6a09e667f3bcc909ULL;
	for (std::uint64_t p : parts)
		h = splitmix64(h ^ splitmix64(p));
	return h;
}

// xoshiro256++; satisfies UniformRandomBitGenerator.
class Xoshiro256pp
{
public:
	using result_type = std::uint64_t;

	explicit Xoshiro256pp(std::uint64_t seed = 0) { reseed(seed); }

	void reseed(std::uint64_t seed)
	{
		for (auto& w : s_) {
			w = splitmix64(seed);
			seed += 0x9e3779b97f4a7c15ULL;
		}
	}

	static constexpr result_type min() { return 0; }
	static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

	result_type operator()()
	{
		const std::uint64_t r = rotl(s_[0] + s_[3], 23) + s_[0];
		const std::uint64_t t = s_[1] << 17;
		s_[2] ^= s_[0];
		s_[3] ^= s_[1];
		s_[1] ^= s_[2];
		s_[0] ^= s_[3];
		s_[2] ^= t;
		s_[3] = rotl(s_[3], 45);
		return r;
	}

	// uniform in [0,1)
	double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

private:
	static constexpr std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
	std::array<std::uint64_t, 4> s_{};
};

namespace detail {

// 256-strip ziggurat tables (Marsaglia-Tsang layout, Doornik's constants).
struct ZigguratTables
{
	static constexpr double R = 3.6541528853610088;
	static constexpr double V = 0.00492867323399;
	std::array<double, 257> x{};
	std::array<double, 256> ratio{};

	ZigguratTables()
	{
		x[0] = V / std::exp(-0.5 * R * R);
		x[1] = R;
		for (int i = 2; i < 256; ++i)
			x[i] = std::sqrt(-2.0 * std::log(V / x[i - 1] + std::exp(-0.5 * x[i - 1] * x[i - 1])));
		x[256] = 0.0;
		for (int i = 0; i < 256; ++i)
			ratio[i] = x[i + 1] / x[i];
	}
};

inline const ZigguratTables& zig() {
	static const ZigguratTables t;
	return t;
}

} // namespace detail

// Rejection branch of the ziggurat: strip 0 tail and wedge tests.
template<class Engine>
[[gnu::noinline]] double normal_slow(Engine& g, int i, double u);

// Standard normal sampler. Stateless apart from the engine it draws from.
template<class Engine>
inline double standard_normal(Engine& g)
{
	const auto& z = detail::zig();
	const std::uint64_t r = g();
	const int i = static_cast<int>(r & 0xff);
	// bits 11..63 as a signed value in [-1, 1); bits 0..7 pick the strip
	const double u = static_cast<double>(static_cast<std::int64_t>(r) >> 11) * 0x1.0p-52;
	if (std::fabs(u) < z.ratio[i]) [[likely]]
		return u * z.x[i];
	return normal_slow(g, i, u);
}

template<class Engine>
double normal_slow(Engine& g, int i, double u)
{
	const auto& z = detail::zig();
	for (;;) {
		if (std::fabs(u) < z.ratio[i])
			return u * z.x[i];
		if (i == 0) {
			// tail beyond R
			double a, b;
			do {
				a = -std::log((static_cast<double>(g() >> 11) + 0.5) * 0x1.0p-53) / z.R;
				b = -std::log((static_cast<double>(g() >> 11) + 0.5) * 0x1.0p-53);
			} while (b + b < a * a);
			return u > 0 ? z.R + a : -z.R - a;
		}
		const double xx = u * z.x[i];
		const double f0 = std::exp(-0.5 * (z.x[i] * z.x[i] - xx * xx));
		const double f1 = std::exp(-0.5 * (z.x[i + 1] * z.x[i + 1] - xx * xx));
		if (f1 + (static_cast<double>(g() >> 11) * 0x1.0p-53) * (f0 - f1) < 1.0)
			return xx;
		const std::uint64_t r = g();
		i = static_cast<int>(r & 0xff);
		u = static_cast<double>(static_cast<std::int64_t>(r) >> 11) * 0x1.0p-52;
	}
}

// Continues an existing stream: consecutive calls on column blocks of a matrix
// reproduce a single fill of the whole matrix.
template<class Derived, class Engine>
void fill_gaussian_from(Eigen::DenseBase<Derived>& m, double sd, Engine& g)
{
	using Scalar = typename Derived::Scalar;
	for (Eigen::Index j = 0; j < m.cols(); ++j)
		for (Eigen::Index i = 0; i < m.rows(); ++i)
			m(i, j) = static_cast<Scalar>(sd * standard_normal(g));
}

// Fills m (column-major element order) with N(0, variance) draws from the stream.
template<class Derived>
void fill_gaussian(Eigen::DenseBase<Derived>& m, double variance, std::uint64_t stream)
{
	if (variance == 0.0) {
		m.setZero();
		return;
	}
	Xoshiro256pp g(stream);
	fill_gaussian_from(m, std::sqrt(variance), g);
}

} // namespace mfadv

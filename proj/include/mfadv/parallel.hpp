#pragma once

#include <condition_variable>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace mfadv {

// Fixed-size pool for index-parallel loops. Each index writes only its own
// output slot, so results do not depend on the number of threads.
class ThreadPool
{
public:
	explicit ThreadPool(unsigned threads = std::thread::hardware_concurrency());
	~ThreadPool();
	ThreadPool(const ThreadPool&) = delete;
	ThreadPool& operator=(const ThreadPool&) = delete;

	unsigned size() const { return static_cast<unsigned>(workers_.size()) + 1; }

	// Runs fn(i) for i in [0, n); rethrows the first exception.
	void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

private:
	void worker_loop();
	void drain();

	std::vector<std::thread> workers_;
	std::mutex mutex_;
	std::condition_variable wake_;
	std::condition_variable done_;
	const std::function<void(std::size_t)>* job_ = nullptr;
	std::size_t next_ = 0;
	std::size_t total_ = 0;
	std::size_t in_flight_ = 0;
	std::size_t generation_ = 0;
	std::exception_ptr error_;
	bool stop_ = false;
};

// Sequential when pool is null.
inline void parallel_for(ThreadPool* pool, std::size_t n, const std::function<void(std::size_t)>& fn)
{
	if (pool && pool->size() > 1 && n > 1) {
		pool->parallel_for(n, fn);
		return;
	}
	for (std::size_t i = 0; i < n; ++i)
		fn(i);
}

} // namespace mfadv

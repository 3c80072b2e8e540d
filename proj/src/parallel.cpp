#include "mfadv/parallel.hpp"

#include <algorithm>

namespace mfadv {

ThreadPool::ThreadPool(unsigned threads)
{
	// the calling thread takes part in every loop
	for (unsigned i = 1; i < std::max(1u, threads); ++i)
		workers_.emplace_back([this] { worker_loop(); });
}

ThreadPool::~ThreadPool()
{
	{
		std::lock_guard lock(mutex_);
		stop_ = true;
	}
	wake_.notify_all();
	for (auto& t : workers_)
		t.join();
}

void ThreadPool::drain()
{
	std::unique_lock lock(mutex_);
	while (job_ && next_ < total_) {
		const std::size_t i = next_++;
		const auto* fn = job_;
		++in_flight_;
		lock.unlock();
		try {
			(*fn)(i);
			lock.lock();
		} catch (...) {
			lock.lock();
			if (!error_)
				error_ = std::current_exception();
			next_ = total_;
		}
		--in_flight_;
		if (next_ == total_ && in_flight_ == 0)
			done_.notify_all();
	}
}

void ThreadPool::worker_loop()
{
	std::size_t seen = 0;
	for (;;) {
		{
			std::unique_lock lock(mutex_);
			wake_.wait(lock, [&] { return stop_ || generation_ != seen; });
			if (stop_)
				return;
			seen = generation_;
		}
		drain();
	}
}

void ThreadPool::parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn)
{
	{
		std::lock_guard lock(mutex_);
		job_ = &fn;
		next_ = 0;
		total_ = n;
		error_ = nullptr;
		++generation_;
	}
	wake_.notify_all();
	drain();
	std::unique_lock lock(mutex_);
	done_.wait(lock, [&] { return next_ == total_ && in_flight_ == 0; });
	job_ = nullptr;
	if (error_)
		std::rethrow_exception(error_);
}

} // namespace mfadv

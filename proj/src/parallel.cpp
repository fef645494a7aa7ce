#include "dope/parallel.hpp"

#include <algorithm>
#include <cstdlib>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace dope {

ThreadPool& ThreadPool::instance() {
    static ThreadPool pool = [] {
#if defined(__GLIBC__)
        // The tensor kernels cycle many >128 KB buffers; keep them on the
        // heap instead of mmap/munmap round trips.
        mallopt(M_MMAP_THRESHOLD, 64 << 20);
        mallopt(M_TRIM_THRESHOLD, 64 << 20);
#endif
        int n = static_cast<int>(std::thread::hardware_concurrency());
        if (n <= 0) n = 1;
        if (const char* env = std::getenv("DOPE_THREADS")) {
            int cap = std::atoi(env);
            if (cap >= 1) n = std::min(n, cap);
        }
        return ThreadPool(n);
    }();
    return pool;
}

ThreadPool::ThreadPool(int threads) {
    int extra = std::max(0, threads - 1);
    tasks_.resize(extra);
    workers_.reserve(extra);
    for (int i = 0; i < extra; ++i) workers_.emplace_back([this, i] { worker_loop(i); });
}

ThreadPool::~ThreadPool() {
    {
        std::lock_guard<std::mutex> lock(mu_);
        stop_ = true;
    }
    cv_work_.notify_all();
    for (auto& w : workers_) w.join();
}

namespace {
thread_local bool tl_in_worker = false;
}

void ThreadPool::worker_loop(int slot) {
    tl_in_worker = true;
    std::uint64_t seen = 0;
    for (;;) {
        Task task;
        {
            std::unique_lock<std::mutex> lock(mu_);
            cv_work_.wait(lock, [&] { return stop_ || generation_ != seen; });
            if (stop_) return;
            seen = generation_;
            task = tasks_[slot];
        }
        if (task.fn && task.begin < task.end) (*task.fn)(task.begin, task.end);
        {
            std::lock_guard<std::mutex> lock(mu_);
            if (--pending_ == 0) cv_done_.notify_all();
        }
    }
}

void ThreadPool::parallel_ranges(
    std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn) {
    const int nw = size();
    if (n <= 0) return;
    // Nested calls from inside a worker run inline: the pool is not reentrant.
    if (nw == 1 || n < 2 || tl_in_worker) {
        fn(0, n);
        return;
    }
    const std::int64_t chunk = (n + nw - 1) / nw;
    {
        std::lock_guard<std::mutex> lock(mu_);
        pending_ = static_cast<int>(workers_.size());
        for (std::size_t i = 0; i < workers_.size(); ++i) {
            const std::int64_t b = std::min<std::int64_t>(n, static_cast<std::int64_t>(i + 1) * chunk);
            const std::int64_t e = std::min<std::int64_t>(n, static_cast<std::int64_t>(i + 2) * chunk);
            tasks_[i] = Task{&fn, b, e};
        }
        ++generation_;
    }
    cv_work_.notify_all();
    // The dispatching thread runs its own chunk; mark it busy so any nested
    // parallel_ranges call from inside fn stays inline.
    tl_in_worker = true;
    fn(0, std::min<std::int64_t>(n, chunk));
    tl_in_worker = false;
    {
        std::unique_lock<std::mutex> lock(mu_);
        cv_done_.wait(lock, [&] { return pending_ == 0; });
    }
}

} // namespace dope

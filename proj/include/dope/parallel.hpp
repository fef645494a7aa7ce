#pragma once

#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace dope {

/// Persistent worker pool used by the tensor kernels. Work is split into
/// contiguous index ranges, one per worker, so the arithmetic performed for
/// any given output element is identical regardless of thread count: results
/// stay bit-reproducible with DOPE_THREADS=1..N.
class ThreadPool {
public:
    static ThreadPool& instance();

    /// Number of workers (>= 1). Honors the DOPE_THREADS environment cap.
    int size() const { return static_cast<int>(workers_.size()) + 1; }

    /// Runs fn(begin, end) over a partition of [0, n). Blocks until done.
    /// Falls back to inline execution for small n.
    void parallel_ranges(std::int64_t n,
                         const std::function<void(std::int64_t, std::int64_t)>& fn);

    ~ThreadPool();

    ThreadPool(const ThreadPool&) = delete;
    ThreadPool& operator=(const ThreadPool&) = delete;

private:
    explicit ThreadPool(int threads);

    void worker_loop(int slot);

    struct Task {
        const std::function<void(std::int64_t, std::int64_t)>* fn = nullptr;
        std::int64_t begin = 0;
        std::int64_t end = 0;
    };

    std::vector<std::thread> workers_;
    std::vector<Task> tasks_;
    std::mutex mu_;
    std::condition_variable cv_work_;
    std::condition_variable cv_done_;
    std::uint64_t generation_ = 0;
    int pending_ = 0;
    bool stop_ = false;
};

/// parallel_ranges with an elementwise body.
template <typename Fn>
void parallel_for(std::int64_t n, Fn&& fn) {
    ThreadPool::instance().parallel_ranges(
        n, [&fn](std::int64_t b, std::int64_t e) {
            for (std::int64_t i = b; i < e; ++i) fn(i);
        });
}

} // namespace dope

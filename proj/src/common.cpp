#include "nesr/common.hpp"

#include <atomic>
#include <condition_variable>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#if defined(__x86_64__) || defined(_M_X64)
#include <immintrin.h>
#endif

namespace nesr {

const char* const kVersionString = "nesr 0.1.0";

namespace {

// Saturated softmax tails produce float denormals whose microcode assists
// dominate the attention backward; flush them to zero on every thread.
void flush_denormals() {
#if defined(__x86_64__) || defined(_M_X64)
    _MM_SET_FLUSH_ZERO_MODE(_MM_FLUSH_ZERO_ON);
    _MM_SET_DENORMALS_ZERO_MODE(_MM_DENORMALS_ZERO_ON);
#endif
}

// Tensor buffers run to tens of megabytes and are allocated per op; keeping
// them on the heap instead of per-call mmap avoids refaulting the pages.
struct ProcessTuning {
    ProcessTuning() {
#ifdef __GLIBC__
        mallopt(M_MMAP_THRESHOLD, 1 << 30);
        mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
        flush_denormals();
    }
};
const ProcessTuning g_process_tuning;

// Long-lived pool; workers sleep between parallel_for calls. Each job owns
// its chunk counter, so a worker waking late sees an exhausted job instead
// of stealing chunks from the next one. Chunk boundaries depend only on
// (n, worker count).
class Pool {
public:
    explicit Pool(int threads) {
        for (int i = 1; i < threads; ++i) {
            workers_.emplace_back([this] { worker_loop(); });
        }
        n_threads_ = threads;
    }

    ~Pool() {
        {
            std::unique_lock<std::mutex> lk(mu_);
            stop_ = true;
        }
        cv_.notify_all();
        for (auto& w : workers_) w.join();
    }

    int size() const { return n_threads_; }

    void run(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body) {
        const int nt = n_threads_;
        if (nt <= 1 || n <= 1 || t_inside_job || t_force_serial) {
            // nested calls degrade to serial execution on the calling thread
            if (n > 0) body(0, n);
            return;
        }
        auto job = std::make_shared<Job>();
        job->body = &body;
        job->n = n;
        job->chunks = std::min<std::size_t>(static_cast<std::size_t>(nt), n);
        job->pending.store(static_cast<int>(job->chunks), std::memory_order_relaxed);
        {
            std::unique_lock<std::mutex> lk(mu_);
            current_ = job;
            ++generation_;
        }
        cv_.notify_all();
        work(*job);
        {
            std::unique_lock<std::mutex> lk(mu_);
            done_cv_.wait(lk, [&] { return job->pending.load(std::memory_order_acquire) == 0; });
            if (current_ == job) current_.reset();
        }
    }

private:
    struct Job {
        const std::function<void(std::size_t, std::size_t)>* body = nullptr;
        std::size_t n = 0;
        std::size_t chunks = 0;
        std::atomic<std::size_t> next{0};
        std::atomic<int> pending{0};
    };

    void work(Job& job) {
        t_inside_job = true;
        for (;;) {
            const std::size_t c = job.next.fetch_add(1, std::memory_order_relaxed);
            if (c >= job.chunks) break;
            (*job.body)(c * job.n / job.chunks, (c + 1) * job.n / job.chunks);
            if (job.pending.fetch_sub(1, std::memory_order_acq_rel) == 1) {
                std::unique_lock<std::mutex> lk(mu_);
                done_cv_.notify_all();
            }
        }
        t_inside_job = false;
    }

    void worker_loop() {
        flush_denormals();
        std::uint64_t seen = 0;
        for (;;) {
            std::shared_ptr<Job> job;
            {
                std::unique_lock<std::mutex> lk(mu_);
                cv_.wait(lk, [&] { return stop_ || generation_ != seen; });
                if (stop_) return;
                seen = generation_;
                job = current_;
            }
            if (job) work(*job);
        }
    }

    static thread_local bool t_inside_job;

public:
    static thread_local bool t_force_serial;

private:

    std::vector<std::thread> workers_;
    int n_threads_ = 1;
    std::mutex mu_;
    std::condition_variable cv_;
    std::condition_variable done_cv_;
    std::shared_ptr<Job> current_;
    std::uint64_t generation_ = 0;
    bool stop_ = false;
};

thread_local bool Pool::t_inside_job = false;
thread_local bool Pool::t_force_serial = false;

std::mutex g_pool_mu;
std::unique_ptr<Pool> g_pool;
int g_requested_threads = 1;

Pool& pool() {
    std::unique_lock<std::mutex> lk(g_pool_mu);
    if (!g_pool) g_pool = std::make_unique<Pool>(g_requested_threads);
    return *g_pool;
}

}  // namespace

void set_worker_threads(int n) {
    if (n < 1) n = 1;
    std::unique_lock<std::mutex> lk(g_pool_mu);
    if (g_pool && g_pool->size() == n) return;
    g_pool.reset();
    g_requested_threads = n;
    g_pool = std::make_unique<Pool>(n);
}

int worker_threads() { return pool().size(); }

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body) {
    pool().run(n, body);
}

SerialScope::SerialScope() { Pool::t_force_serial = true; }
SerialScope::~SerialScope() { Pool::t_force_serial = false; }

}  // namespace nesr

#include "qkernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>

namespace estm::kernels {

namespace {

// Fork-join pool for sharding kernel work across output rows. One dispatch
// per kernel call; the calling thread works shard 0.
class WorkerPool {
  public:
    static WorkerPool & instance() {
        static WorkerPool pool;
        return pool;
    }

    int workers() {
        std::lock_guard<std::mutex> lock(config_mutex_);
        return n_workers_;
    }

    void set_workers(int n) {
        n = std::clamp(n, 1, 256);
        std::lock_guard<std::mutex> lock(config_mutex_);
        if (n == n_workers_) {
            return;
        }
        stop_threads();
        n_workers_ = n;
        start_threads();
    }

    void run(int64_t rows, const std::function<void(int64_t, int64_t)> & body) {
        std::lock_guard<std::mutex> lock(config_mutex_); // one dispatch at a time
        const int nw = n_workers_;
        if (nw <= 1 || rows < nw) {
            body(0, rows);
            return;
        }
        {
            std::lock_guard<std::mutex> job_lock(job_mutex_);
            job_body_   = &body;
            job_rows_   = rows;
            job_shards_ = nw;
            pending_.store(nw - 1, std::memory_order_relaxed);
            ++epoch_;
        }
        cv_start_.notify_all();
        run_shard(0);
        std::unique_lock<std::mutex> job_lock(job_mutex_);
        cv_done_.wait(job_lock, [this] { return pending_.load(std::memory_order_acquire) == 0; });
        job_body_ = nullptr;
    }

  private:
    WorkerPool() {
        if (const char * env = std::getenv("ESTM_THREADS")) {
            char * end = nullptr;
            const long v = std::strtol(env, &end, 10);
            if (end != env && v > 0) {
                n_workers_ = static_cast<int>(std::min<long>(v, 256));
            }
        }
        start_threads();
    }

    ~WorkerPool() {
        std::lock_guard<std::mutex> lock(config_mutex_);
        stop_threads();
    }

    void run_shard(int shard) {
        const int64_t per = (job_rows_ + job_shards_ - 1) / job_shards_;
        const int64_t lo  = std::min<int64_t>(shard * per, job_rows_);
        const int64_t hi  = std::min<int64_t>(lo + per, job_rows_);
        if (lo < hi) {
            (*job_body_)(lo, hi);
        }
    }

    void start_threads() {
        stop_ = false;
        const uint64_t epoch_at_start = epoch_;
        for (int t = 1; t < n_workers_; ++t) {
            threads_.emplace_back([this, t, epoch_at_start] {
                uint64_t seen = epoch_at_start;
                for (;;) {
                    std::unique_lock<std::mutex> lock(job_mutex_);
                    cv_start_.wait(lock, [&] { return stop_ || epoch_ != seen; });
                    if (stop_) {
                        return;
                    }
                    seen = epoch_;
                    lock.unlock();
                    run_shard(t);
                    if (pending_.fetch_sub(1, std::memory_order_acq_rel) == 1) {
                        std::lock_guard<std::mutex> done_lock(job_mutex_);
                        cv_done_.notify_one();
                    }
                }
            });
        }
    }

    void stop_threads() {
        {
            std::lock_guard<std::mutex> lock(job_mutex_);
            stop_ = true;
        }
        cv_start_.notify_all();
        for (auto & t : threads_) {
            t.join();
        }
        threads_.clear();
    }

    std::mutex               config_mutex_;
    std::mutex               job_mutex_;
    std::condition_variable  cv_start_, cv_done_;
    std::vector<std::thread> threads_;
    const std::function<void(int64_t, int64_t)> * job_body_ = nullptr;
    int64_t           job_rows_   = 0;
    int               job_shards_ = 1;
    uint64_t          epoch_      = 0;
    std::atomic<int>  pending_{0};
    bool              stop_       = false;
    int               n_workers_  = 1;
};

} // namespace

void set_worker_count(int n) {
    WorkerPool::instance().set_workers(n);
}

int worker_count() {
    return WorkerPool::instance().workers();
}

void parallel_rows(int64_t rows, const std::function<void(int64_t, int64_t)> & body) {
    WorkerPool::instance().run(rows, body);
}

Matrix Matrix::zeros(int64_t rows, int64_t cols) {
    Matrix m;
    m.rows = rows;
    m.cols = cols;
    m.data.assign(static_cast<size_t>(rows * cols), 0.0f);
    return m;
}

static void check_2d(const std::vector<int64_t> & shape, const std::string & name) {
    if (shape.size() != 2) {
        fail(errc::shape, "weight tensor '" + name + "' must be 2-D");
    }
}

Matrix matmul_f32(const Matrix & x, const TensorF32 & w) {
    check_2d(w.shape, w.name);
    const int64_t k = w.shape[0], c = w.shape[1];
    if (x.cols != k) {
        fail(errc::shape, "matmul shape mismatch: x cols " + std::to_string(x.cols) +
                              " vs w rows " + std::to_string(k));
    }
    Matrix out = Matrix::zeros(x.rows, c);
    parallel_rows(x.rows, [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) {
            const float * xi = x.data.data() + i * k;
            for (int64_t j = 0; j < c; ++j) {
                double acc = 0.0;
                for (int64_t kk = 0; kk < k; ++kk) {
                    acc += static_cast<double>(xi[kk]) *
                           static_cast<double>(w.data[static_cast<size_t>(kk * c + j)]);
                }
                out.at(i, j) = static_cast<float>(acc);
            }
        }
    });
    return out;
}

Matrix matmul_nbits(const Matrix & x, const QuantizedTensor & qw) {
    check_2d(qw.shape, qw.name);
    const int64_t k = qw.shape[0], c = qw.shape[1];
    if (x.cols != k) {
        fail(errc::shape, "matmul shape mismatch: x cols " + std::to_string(x.cols) +
                              " vs w rows " + std::to_string(k));
    }

    // Walking blocks in flat order visits each column's weights in ascending
    // k, so per-output accumulation order matches matmul_f32 exactly.
    Matrix out = Matrix::zeros(x.rows, c);
    const int64_t nblk = qw.block_count();
    parallel_rows(x.rows, [&](int64_t lo, int64_t hi) {
        std::vector<double>  acc(static_cast<size_t>((hi - lo) * c), 0.0);
        std::vector<uint8_t> codes(static_cast<size_t>(qw.block_size));
        for (int64_t b = 0; b < nblk; ++b) {
            float s = 0.0f, m = 0.0f;
            unpack_block(qw, b, s, m, codes.data());
            const int64_t from = b * qw.block_size;
            const int64_t len  = qw.block_len(b);
            for (int64_t e = 0; e < len; ++e) {
                const int64_t flat = from + e;
                const int64_t kk = flat / c, j = flat % c;
                const double w_hat = s * static_cast<float>(codes[static_cast<size_t>(e)]) + m;
                for (int64_t i = lo; i < hi; ++i) {
                    acc[static_cast<size_t>((i - lo) * c + j)] +=
                        static_cast<double>(x.data[static_cast<size_t>(i * k + kk)]) * w_hat;
                }
            }
        }
        for (int64_t i = lo; i < hi; ++i) {
            for (int64_t j = 0; j < c; ++j) {
                out.at(i, j) = static_cast<float>(acc[static_cast<size_t>((i - lo) * c + j)]);
            }
        }
    });
    return out;
}

Matrix matmul_integer(const Matrix & x, const QuantizedTensor & qw, int act_bits) {
    check_2d(qw.shape, qw.name);
    const int64_t k = qw.shape[0], c = qw.shape[1];
    if (x.cols != k) {
        fail(errc::shape, "matmul shape mismatch: x cols " + std::to_string(x.cols) +
                              " vs w rows " + std::to_string(k));
    }
    if (act_bits < 2 || act_bits > 16) {
        fail(errc::invalid_arg, "activation bits out of range");
    }
    if (x.rows == 0) {
        return Matrix::zeros(0, c);
    }

    // Per-tensor asymmetric RTN over the whole activation matrix.
    const auto [lo, hi] = std::minmax_element(x.data.begin(), x.data.end());
    const double x_min = *lo, x_max = *hi;
    const int    qmax  = (1 << act_bits) - 1;
    double s_x = 0.0, m_x = x_min;
    std::vector<int32_t> xq(x.data.size(), 0);
    if (x_max != x_min) {
        s_x             = (x_max - x_min) / qmax;
        const int64_t z = std::llround(-x_min / s_x);
        m_x             = -s_x * static_cast<double>(z);
        for (size_t i = 0; i < x.data.size(); ++i) {
            xq[i] = static_cast<int32_t>(
                std::clamp<int64_t>(std::llround(x.data[i] / s_x) + z, 0, qmax));
        }
    }

    Matrix out = Matrix::zeros(x.rows, c);
    const int64_t nblk = qw.block_count();
    parallel_rows(x.rows, [&](int64_t lo, int64_t hi) {
        std::vector<double>  acc(static_cast<size_t>((hi - lo) * c), 0.0);
        std::vector<uint8_t> codes(static_cast<size_t>(qw.block_size));
        for (int64_t b = 0; b < nblk; ++b) {
            float s_b = 0.0f, m_b = 0.0f;
            unpack_block(qw, b, s_b, m_b, codes.data());
            const double c1 = s_x * s_b, c2 = s_x * m_b, c3 = m_x * s_b, c4 = m_x * m_b;
            const int64_t from = b * qw.block_size;
            const int64_t len  = qw.block_len(b);
            for (int64_t e = 0; e < len; ++e) {
                const int64_t flat = from + e;
                const int64_t kk = flat / c, j = flat % c;
                const int32_t qwv = codes[static_cast<size_t>(e)];
                for (int64_t i = lo; i < hi; ++i) {
                    const int32_t qx = xq[static_cast<size_t>(i * k + kk)];
                    acc[static_cast<size_t>((i - lo) * c + j)] +=
                        c1 * static_cast<double>(qx * qwv) + c2 * qx + c3 * qwv + c4;
                }
            }
        }
        for (int64_t i = lo; i < hi; ++i) {
            for (int64_t j = 0; j < c; ++j) {
                out.at(i, j) = static_cast<float>(acc[static_cast<size_t>((i - lo) * c + j)]);
            }
        }
    });
    return out;
}

} // namespace estm::kernels

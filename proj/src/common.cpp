#include "spinres/common.hpp"

#include <atomic>
#include <thread>

namespace spinres {

namespace {
std::atomic<int> g_max_threads{0};  // 0 = hardware concurrency
}

void set_max_threads(int n) { g_max_threads.store(n > 0 ? n : 0); }

int max_threads() {
    int n = g_max_threads.load();
    if (n > 0) return n;
    unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
    const int workers = max_threads();
    if (workers <= 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    constexpr std::size_t kBlock = 16;
    auto body = [&]() {
        for (;;) {
            std::size_t start = next.fetch_add(kBlock);
            if (start >= n) return;
            std::size_t end = std::min(n, start + kBlock);
            for (std::size_t i = start; i < end; ++i) fn(i);
        }
    };
    std::vector<std::thread> pool;
    int spawn = std::min<std::size_t>(workers, (n + kBlock - 1) / kBlock);
    pool.reserve(spawn);
    for (int t = 0; t < spawn - 1; ++t) pool.emplace_back(body);
    body();
    for (auto& th : pool) th.join();
}

}  // namespace spinres

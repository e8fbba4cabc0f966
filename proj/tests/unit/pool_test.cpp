#include <gtest/gtest.h>

#include <atomic>
#include <stdexcept>
#include <vector>

#include "pitn/pool.hpp"

using namespace pitn;

TEST(Pool, RunsEveryIndexOnce)
{
    for (std::size_t workers : {1u, 2u, 7u}) {
        std::vector<std::atomic<int>> hits(50);
        parallel_for(workers, hits.size(), [&](std::size_t i) { ++hits[i]; });
        for (const auto& h : hits)
            EXPECT_EQ(h.load(), 1);
    }
}

TEST(Pool, ZeroTasks)
{
    parallel_for(4, 0, [](std::size_t) { FAIL(); });
}

TEST(Pool, LowestFailingIndexRethrownAfterAllRun)
{
    std::atomic<int> ran{0};
    try {
        parallel_for(3, 20, [&](std::size_t i) {
            ++ran;
            if (i == 13 || i == 5)
                throw std::runtime_error("task " + std::to_string(i));
        });
        FAIL() << "expected an exception";
    } catch (const std::runtime_error& e) {
        EXPECT_STREQ(e.what(), "task 5");
    }
    EXPECT_EQ(ran.load(), 20);
}

#include <gtest/gtest.h>

#include "spycer/parallel.hpp"

int main(int argc, char** argv) {
    spycer::configure_allocator();
    ::testing::InitGoogleTest(&argc, argv);
    return RUN_ALL_TESTS();
}

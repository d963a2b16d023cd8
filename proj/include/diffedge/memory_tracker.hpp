#pragma once

// Byte accounting for CPU tensor storage. install() wraps the process-wide
// CPU allocator once; afterwards every tensor allocation is counted.

#include <cstdint>

namespace diffedge::memory {

void install();
bool installed();

int64_t current_bytes();
int64_t peak_bytes();
// Sets the peak to the current live byte count.
void reset_peak();

}  // namespace diffedge::memory

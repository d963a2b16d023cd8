#pragma once

// Analytic invariant suite: closed-form checks of the diffusion process, the
// adaptive FFT filter and the WCE loss that need no trained weights.

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

namespace diffedge {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

std::vector<CheckResult> diffusion_identity_checks(uint64_t seed = 0);
std::vector<CheckResult> fft_filter_checks(uint64_t seed = 0);
std::vector<CheckResult> wce_oracle_checks(uint64_t seed = 0);

struct SelfTestSummary {
  int passed = 0;
  int failed = 0;
};

// Runs every check, printing one line per check and a final count line.
SelfTestSummary run_selftest(std::ostream& out, uint64_t seed = 0);

}  // namespace diffedge

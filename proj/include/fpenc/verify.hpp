#pragma once

#include "fpenc/network.hpp"

namespace fpenc {

struct TrialFailure {
  int64_t trial = 0;
  double err = 0.0;
};

struct LemmaReport {
  int64_t trials = 0;
  int64_t passed = 0;
  double worst_err = 0.0;
  double tol = 0.0;
  double seconds = 0.0;
  std::vector<TrialFailure> failures;

  bool all_passed() const { return trials > 0 && passed == trials; }
};

// Randomized equivalence trials between the factorized forward pass and the
// dense reference that materializes per-pair weights. Each trial draws its
// own sizes (N up to 32, K up to 8, C up to 16, C_mid up to 4), cloud, and
// parameters from a fork of `seed`. `corrupt` perturbs one weight on the
// reference side only, so a healthy harness must report failures.
LemmaReport verify_fpconv(int64_t trials, uint64_t seed, double tol = 1e-10,
                          bool corrupt = false);

// Same protocol for the grouped vector attention; every fourth trial pins
// the attention width to the full channel count.
LemmaReport verify_fptransformer(int64_t trials, uint64_t seed,
                                 double tol = 1e-10, bool corrupt = false);

struct GradCheckResult {
  std::string name;
  double max_err = 0.0;
  bool passed = false;
};

struct GradReport {
  double tol = 0.0;
  double seconds = 0.0;
  std::vector<GradCheckResult> checks;

  bool all_passed() const;
};

// Central-difference gradient checks for every aggregation layer, every
// sampling block, the interpolation, and a two-stage network end to end.
// `corrupt` detaches each forward output from the tape, so every check must
// then report a failure.
GradReport verify_gradients(uint64_t seed, double tol = 1e-4,
                            bool corrupt = false);

}  // namespace fpenc

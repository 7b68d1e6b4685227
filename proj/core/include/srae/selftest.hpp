#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "srae/graph.hpp"
#include "srae/model.hpp"

namespace srae {

/// A small graph with a scalar output "loss" and random bindings.
struct GradCase {
    std::string name;
    OpGraph graph;
    Bindings bindings;
};

/// One case per operator, each wrapped as loss = sum(op(...) * R) with a
/// random projection R so that no gradient vanishes by symmetry.
std::vector<GradCase> operator_grad_cases(std::uint64_t seed);

/// Tiny SRAE (8x8 input) whose "loss" is the named training-graph output.
/// Uses beta_kl > 0 so the KL path is exercised.
GradCase model_grad_case(Variant variant, const std::string& loss_output, std::uint64_t seed);

/// Desk-scale hyperparameters used by the model gradient checks.
SraeHyper tiny_hyper();

struct SelftestResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

/// Gradient checks over operators and the full loss graphs plus structural
/// invariants. `progress` (optional) receives each result as it completes.
std::vector<SelftestResult> run_selftest(int seeds = 3,
                                         const std::function<void(const SelftestResult&)>& progress = {});

}  // namespace srae

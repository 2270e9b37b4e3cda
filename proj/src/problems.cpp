#include <string>

#include "hidlr/errors.hpp"
#include "hidlr/problems.hpp"

namespace hidlr {

GroupLayout group_params(const LossProblem& problem, std::string_view strategy) {
    if (strategy == "default") return problem.default_layout();
    if (strategy == "single") return GroupLayout::single(problem.dimension());
    if (strategy == "per-coordinate") return GroupLayout::per_coordinate(problem.dimension());
    if (strategy == "named-split") return problem.named_split_layout();
    throw UnknownStrategy("unknown grouping strategy '" + std::string(strategy) +
                          "' (expected default, single, per-coordinate or named-split)");
}

}  // namespace hidlr

#pragma once

#include <string>

#include "dmas/extraction.hpp"
#include "dmas/numkit.hpp"
#include "dmas/tensor.hpp"
#include "dmas/toymodel.hpp"

namespace dmas {

// How a steering tensor is collapsed to one score per head when choosing
// the top-K heads to touch. l2 is the default; the others exist to probe
// sensitivity to the scoring rule.
enum class ImportanceMode { l2, l1, signed_sum };

ImportanceMode importance_mode_from_string(const std::string& name);
std::string to_string(ImportanceMode mode);

// layers x heads score grid for a steering tensor.
Matrix head_importance(const HeadTensor& tensor, ImportanceMode mode = ImportanceMode::l2);

// Mask of the K highest-scoring heads, flattened (layer, head) order, ties
// to the smaller flat index. K above layers*heads clamps; the popcount is
// always min(K, layers*heads).
HeadMask build_mask(const HeadTensor& tensor, int k, ImportanceMode mode = ImportanceMode::l2);

// Assembles the forward-pass directive from the two steering vectors. The
// masks are selected independently; overlapping heads simply receive both
// scaled additions.
InterventionPlan make_plan(const SteeringVector& d_f, const SteeringVector& d_v,
                           double alpha, double beta, int k_f, int k_v,
                           ImportanceMode mode = ImportanceMode::l2);

}  // namespace dmas

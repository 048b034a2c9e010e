#include "dmas/intervene.hpp"

#include <cmath>

#include "dmas/errors.hpp"

namespace dmas {

ImportanceMode importance_mode_from_string(const std::string& name) {
    if (name == "l2") return ImportanceMode::l2;
    if (name == "l1") return ImportanceMode::l1;
    if (name == "signed-sum") return ImportanceMode::signed_sum;
    throw param_error("unknown importance mode '" + name + "' (expected l2, l1 or signed-sum)");
}

std::string to_string(ImportanceMode mode) {
    switch (mode) {
        case ImportanceMode::l2: return "l2";
        case ImportanceMode::l1: return "l1";
        case ImportanceMode::signed_sum: return "signed-sum";
    }
    throw internal_error("to_string: bad ImportanceMode");
}

Matrix head_importance(const HeadTensor& tensor, ImportanceMode mode) {
    Matrix scores(static_cast<std::size_t>(tensor.n_layers),
                  static_cast<std::size_t>(tensor.n_heads));
    for (int l = 0; l < tensor.n_layers; ++l) {
        for (int h = 0; h < tensor.n_heads; ++h) {
            auto s = tensor.slice(l, h);
            double acc = 0.0;
            switch (mode) {
                case ImportanceMode::l2:
                    for (double x : s) acc += x * x;
                    acc = std::sqrt(acc);
                    break;
                case ImportanceMode::l1:
                    for (double x : s) acc += std::abs(x);
                    break;
                case ImportanceMode::signed_sum:
                    for (double x : s) acc += x;
                    break;
            }
            scores.at(static_cast<std::size_t>(l), static_cast<std::size_t>(h)) = acc;
        }
    }
    return scores;
}

HeadMask build_mask(const HeadTensor& tensor, int k, ImportanceMode mode) {
    if (k < 0) throw param_error("build_mask: negative K");
    Matrix scores = head_importance(tensor, mode);
    std::vector<std::size_t> picked = top_k_indices(scores.data, static_cast<std::size_t>(k));
    HeadMask mask(tensor.n_layers, tensor.n_heads);
    for (std::size_t flat : picked) mask.bits[flat] = 1;
    return mask;
}

InterventionPlan make_plan(const SteeringVector& d_f, const SteeringVector& d_v,
                           double alpha, double beta, int k_f, int k_v,
                           ImportanceMode mode) {
    if (!d_f.values.same_shape(d_v.values))
        throw param_error("make_plan: steering tensors have different shapes");
    if (d_f.kind != SteeringVector::Kind::truthfulness)
        throw param_error("make_plan: d_f must be a truthfulness vector");
    if (d_v.kind != SteeringVector::Kind::visual)
        throw param_error("make_plan: d_v must be a visual vector");
    InterventionPlan plan;
    plan.alpha = alpha;
    plan.beta = beta;
    plan.d_f = d_f.values;
    plan.d_v = d_v.values;
    plan.mask_f = build_mask(d_f.values, k_f, mode);
    plan.mask_v = build_mask(d_v.values, k_v, mode);
    return plan;
}

}  // namespace dmas

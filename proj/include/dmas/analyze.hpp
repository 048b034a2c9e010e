#pragma once

#include <string>
#include <vector>

#include "dmas/extraction.hpp"
#include "dmas/intervene.hpp"
#include "dmas/numkit.hpp"

namespace dmas {

// layers x heads grid of where a steering signal concentrates. The grid is
// produced by the same head_importance used for mask building, so what the
// plot shows is exactly what top-K selection sees.
struct HeatmapReport {
    Matrix grid;  // n_layers x n_heads
    std::string csv;
};

HeatmapReport head_difference_heatmap(const HeadTensor& mean_difference,
                                      ImportanceMode mode = ImportanceMode::l2);

// Mean raw contrastive difference (no denoising) for a question corpus.
HeadTensor mean_truthfulness_difference(const std::vector<ContrastiveSample>& samples,
                                        const ModelWeights& weights,
                                        const CaptureHook& hook = {});

// Mean raw clean-vs-corrupt difference for explicit visual pairs.
HeadTensor mean_visual_difference(const std::vector<VisualContrastPair>& pairs,
                                  const ModelWeights& weights,
                                  const VisualCaptureHook& hook = {});

// 2-D view of per-sample difference vectors, colored by cluster.
struct ProjectionReport {
    Matrix points;            // n x 2
    std::vector<int> labels;  // n
    std::string csv;          // sample_id,cluster_id,x,y
};

struct LabeledDifference {
    std::string sample_id;
    int cluster_id = 0;
    std::vector<double> difference;  // flattened (layer, head, dim)
};

// Requires at least two clusters with at least two samples each.
ProjectionReport cluster_projection(const std::vector<LabeledDifference>& differences);

std::string heatmap_csv(const Matrix& grid);

}  // namespace dmas

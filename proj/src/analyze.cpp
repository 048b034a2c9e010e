#include "dmas/analyze.hpp"

#include <cstdio>
#include <map>

#include "dmas/errors.hpp"

namespace dmas {

namespace {

std::string full_precision(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

HeadTensor mean_tensors(std::vector<HeadTensor>&& diffs) {
    HeadTensor mean(diffs.front().n_layers, diffs.front().n_heads, diffs.front().head_dim);
    for (const HeadTensor& d : diffs)
        for (std::size_t i = 0; i < mean.data.size(); ++i) mean.data[i] += d.data[i];
    for (double& x : mean.data) x /= static_cast<double>(diffs.size());
    return mean;
}

}  // namespace

std::string heatmap_csv(const Matrix& grid) {
    std::string csv = "layer,head,score\n";
    for (std::size_t l = 0; l < grid.rows; ++l)
        for (std::size_t h = 0; h < grid.cols; ++h)
            csv += std::to_string(l) + "," + std::to_string(h) + "," +
                   full_precision(grid.at(l, h)) + "\n";
    return csv;
}

HeatmapReport head_difference_heatmap(const HeadTensor& mean_difference, ImportanceMode mode) {
    HeatmapReport report;
    report.grid = head_importance(mean_difference, mode);
    report.csv = heatmap_csv(report.grid);
    return report;
}

HeadTensor mean_truthfulness_difference(const std::vector<ContrastiveSample>& samples,
                                        const ModelWeights& weights, const CaptureHook& hook) {
    if (samples.empty()) throw param_error("mean_truthfulness_difference: no samples");
    std::vector<HeadTensor> diffs;
    diffs.reserve(samples.size());
    for (const ContrastiveSample& s : samples) {
        std::vector<int> pos_seq = s.prompt;
        pos_seq.insert(pos_seq.end(), s.y_pos.begin(), s.y_pos.end());
        std::vector<int> neg_seq = s.prompt;
        neg_seq.insert(neg_seq.end(), s.y_neg.begin(), s.y_neg.end());
        HeadAdditions pos_add, neg_add;
        if (hook) {
            pos_add = hook(s, true);
            neg_add = hook(s, false);
        }
        HeadTensor a = capture_last_token_activations(weights, s.visual, pos_seq,
                                                      hook ? &pos_add : nullptr);
        HeadTensor b = capture_last_token_activations(weights, s.visual, neg_seq,
                                                      hook ? &neg_add : nullptr);
        diffs.push_back(a - b);
    }
    return mean_tensors(std::move(diffs));
}

HeadTensor mean_visual_difference(const std::vector<VisualContrastPair>& pairs,
                                  const ModelWeights& weights, const VisualCaptureHook& hook) {
    if (pairs.empty()) throw param_error("mean_visual_difference: no pairs");
    std::vector<HeadTensor> diffs;
    diffs.reserve(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const VisualContrastPair& p = pairs[i];
        HeadAdditions clean_add, alt_add;
        if (hook) {
            clean_add = hook(i, true);
            alt_add = hook(i, false);
        }
        HeadTensor a = capture_last_token_activations(weights, p.clean_visual, p.clean_tokens,
                                                      hook ? &clean_add : nullptr);
        HeadTensor b = capture_last_token_activations(weights, p.alt_visual, p.alt_tokens,
                                                      hook ? &alt_add : nullptr);
        diffs.push_back(a - b);
    }
    return mean_tensors(std::move(diffs));
}

ProjectionReport cluster_projection(const std::vector<LabeledDifference>& differences) {
    if (differences.empty()) throw param_error("cluster_projection: no samples");
    std::map<int, int> cluster_sizes;
    for (const auto& d : differences) cluster_sizes[d.cluster_id]++;
    if (cluster_sizes.size() < 2)
        throw param_error("cluster_projection: need at least two clusters");
    for (const auto& [id, count] : cluster_sizes)
        if (count < 2)
            throw param_error("cluster_projection: cluster " + std::to_string(id) +
                              " has fewer than two samples");

    const std::size_t dim = differences.front().difference.size();
    Matrix points(differences.size(), dim);
    for (std::size_t i = 0; i < differences.size(); ++i) {
        if (differences[i].difference.size() != dim)
            throw param_error("cluster_projection: inconsistent difference widths");
        std::copy(differences[i].difference.begin(), differences[i].difference.end(),
                  points.row(i).begin());
    }

    ProjectionReport report;
    report.points = project_2d(points);
    report.labels.reserve(differences.size());
    for (const auto& d : differences) report.labels.push_back(d.cluster_id);

    report.csv = "sample_id,cluster_id,x,y\n";
    for (std::size_t i = 0; i < differences.size(); ++i)
        report.csv += differences[i].sample_id + "," + std::to_string(differences[i].cluster_id) +
                      "," + full_precision(report.points.at(i, 0)) + "," +
                      full_precision(report.points.at(i, 1)) + "\n";
    return report;
}

}  // namespace dmas

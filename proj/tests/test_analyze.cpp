#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "dmas/analyze.hpp"
#include "dmas/errors.hpp"
#include "dmas/rng.hpp"
#include "dmas/svg.hpp"
#include "testutil.hpp"

using namespace dmas;

TEST_CASE("heatmap grid is exactly the mask-building importance") {
    Rng rng(51);
    HeadTensor t = testutil::random_tensor(3, 4, 5, rng);
    for (ImportanceMode mode :
         {ImportanceMode::l2, ImportanceMode::l1, ImportanceMode::signed_sum}) {
        HeatmapReport rep = head_difference_heatmap(t, mode);
        Matrix want = head_importance(t, mode);
        CHECK(testutil::bitwise_equal(rep.grid.data, want.data));
    }
    HeatmapReport rep = head_difference_heatmap(t);
    CHECK(rep.csv.rfind("layer,head,score\n", 0) == 0);
    // Header plus one line per (layer, head).
    std::size_t lines = 0;
    for (char c : rep.csv)
        if (c == '\n') ++lines;
    CHECK(lines == 1 + 3 * 4);
}

TEST_CASE("cluster projection reports coordinates, labels and csv in input order") {
    Rng rng(52);
    std::vector<LabeledDifference> diffs;
    for (int i = 0; i < 8; ++i) {
        LabeledDifference d;
        d.sample_id = "s" + std::to_string(i);
        d.cluster_id = i % 2;
        d.difference.resize(12);
        for (double& x : d.difference) x = rng.next_gaussian() + (i % 2 ? 6.0 : 0.0);
        diffs.push_back(std::move(d));
    }
    ProjectionReport rep = cluster_projection(diffs);
    REQUIRE(rep.points.rows == 8);
    REQUIRE(rep.points.cols == 2);
    REQUIRE(rep.labels.size() == 8);
    for (int i = 0; i < 8; ++i) CHECK(rep.labels[static_cast<std::size_t>(i)] == i % 2);
    CHECK(rep.csv.rfind("sample_id,cluster_id,x,y\n", 0) == 0);
    CHECK(rep.csv.find("s3,1,") != std::string::npos);

    ProjectionReport again = cluster_projection(diffs);
    CHECK(testutil::bitwise_equal(rep.points.data, again.points.data));
    CHECK(rep.csv == again.csv);
}

TEST_CASE("cluster projection validates its input") {
    std::vector<LabeledDifference> diffs;
    CHECK_THROWS_AS((void)cluster_projection(diffs), param_error);

    for (int i = 0; i < 4; ++i) {
        LabeledDifference d;
        d.sample_id = "s" + std::to_string(i);
        d.cluster_id = 0;
        d.difference = {1.0, 2.0};
        diffs.push_back(std::move(d));
    }
    CHECK_THROWS_AS((void)cluster_projection(diffs), param_error);  // one cluster only

    diffs[3].cluster_id = 1;
    CHECK_THROWS_AS((void)cluster_projection(diffs), param_error);  // singleton cluster

    diffs[2].cluster_id = 1;
    CHECK_NOTHROW((void)cluster_projection(diffs));

    diffs[1].difference = {1.0, 2.0, 3.0};
    CHECK_THROWS_AS((void)cluster_projection(diffs), param_error);  // width drift
}

TEST_CASE("svg emitters produce well-formed documents") {
    Rng rng(53);
    Matrix grid(3, 4);
    for (double& x : grid.data) x = rng.next_gaussian();
    std::string hm = heatmap_svg(grid, "head", "layer");
    CHECK(hm.rfind("<svg", 0) == 0);
    CHECK(hm.find("</svg>") != std::string::npos);

    Matrix pts(6, 2);
    for (double& x : pts.data) x = rng.next_gaussian();
    std::vector<int> labels{0, 0, 1, 1, 2, 2};
    std::string sc = scatter_svg(pts, labels);
    CHECK(sc.rfind("<svg", 0) == 0);
    CHECK(sc.find("</svg>") != std::string::npos);

    LineSeries series;
    series.name = "f1";
    series.x = {0.0, 1.0, 2.0};
    series.y = {0.5, 0.7, 0.6};
    std::string lc = line_chart_svg({series}, "alpha", "f1");
    CHECK(lc.rfind("<svg", 0) == 0);
    CHECK(lc.find("</svg>") != std::string::npos);
}

#pragma once

#include <string>
#include <vector>

namespace dcfuse::metrics {

enum class Direction { kHigherBetter, kLowerBetter };

struct MetricColumn {
    std::string name;
    Direction direction = Direction::kHigherBetter;
    std::vector<double> values; // one per method, same order as the method list
};

struct MetricReport {
    std::vector<std::string> methods;
    std::vector<MetricColumn> columns;
    // [metric][method]. Ranks are a permutation of 1..N (ties ordered by
    // method position); points give tied methods the mean of their places.
    std::vector<std::vector<int>> ranks;
    std::vector<std::vector<double>> points;
    std::vector<double> borda;       // per method, summed over metrics
    std::vector<int> borda_rank;     // 1 = most points
};

// Place r of N earns N - r + 1 points in each metric.
MetricReport borda(std::vector<std::string> methods, std::vector<MetricColumn> columns);

} // namespace dcfuse::metrics

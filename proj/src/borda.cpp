#include "dcfuse/borda.hpp"

#include "dcfuse/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dcfuse::metrics {

MetricReport borda(std::vector<std::string> methods, std::vector<MetricColumn> columns)
{
    const std::size_t n = methods.size();
    require(n >= 2, "borda", "Borda ranking needs at least two methods");
    for (const auto& c : columns) {
        require(c.values.size() == n, "borda", "metric '" + c.name + "' is missing values");
        for (double v : c.values)
            require(std::isfinite(v), "borda", "metric '" + c.name + "' has a non-finite value");
    }

    MetricReport r;
    r.borda.assign(n, 0.0);
    for (const auto& c : columns) {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        const bool higher = c.direction == Direction::kHigherBetter;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return higher ? c.values[a] > c.values[b] : c.values[a] < c.values[b];
        });

        std::vector<int> rank(n);
        std::vector<double> pts(n);
        for (std::size_t i = 0; i < n;) {
            std::size_t j = i;
            while (j + 1 < n && c.values[order[j + 1]] == c.values[order[i]]) ++j;
            // places i+1..j+1 share the mean of their points
            double shared = 0.0;
            for (std::size_t k = i; k <= j; ++k) shared += static_cast<double>(n - k);
            shared /= static_cast<double>(j - i + 1);
            for (std::size_t k = i; k <= j; ++k) {
                rank[order[k]] = static_cast<int>(k + 1);
                pts[order[k]] = shared;
            }
            i = j + 1;
        }
        for (std::size_t m = 0; m < n; ++m) r.borda[m] += pts[m];
        r.ranks.push_back(std::move(rank));
        r.points.push_back(std::move(pts));
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return r.borda[a] > r.borda[b]; });
    r.borda_rank.resize(n);
    for (std::size_t k = 0; k < n; ++k) r.borda_rank[order[k]] = static_cast<int>(k + 1);

    r.methods = std::move(methods);
    r.columns = std::move(columns);
    return r;
}

} // namespace dcfuse::metrics

#pragma once

#include <cstddef>

namespace tierkv {

// Stand-in for GPU compute. Quadratic prefill term models attention over the
// growing context; every cost is strictly positive so phase ordering is
// observable in timing records.
struct CostModel {
    double prefill_linear = 2e-6;      // seconds per token
    double prefill_quadratic = 0.0;    // seconds per token^2
    double decode_cost_per_token = 1e-4;
    double floor = 1e-6;

    double prefill_cost(size_t tokens) const {
        double t = prefill_linear * double(tokens) +
                   prefill_quadratic * double(tokens) * double(tokens);
        return t > floor ? t : floor;
    }

    // Layer costs sum to the query's prefill cost.
    double layer_cost(size_t tokens, size_t num_layers) const {
        return prefill_cost(tokens) / double(num_layers);
    }

    double decode_cost() const {
        return decode_cost_per_token > floor ? decode_cost_per_token : floor;
    }
};

}  // namespace tierkv

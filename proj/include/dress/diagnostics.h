#pragma once

#include "dress/eval.h"
#include "dress/probes.h"
#include "dress/store.h"
#include "dress/subspace.h"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace dress {

// Quotes a CSV field when it holds a comma, quote or line break.
std::string csv_field(std::string_view s);

// pair_id,polarity,p1,p2,q1,q2: projections on (v1, v2) and (v_{K+1}, v_{K+2})
std::string projection_export(const activation_store & store, const head_subspace & head);

// row_kind,layer,head_rank,accuracy,std: per layer, head rows sorted by
// descending accuracy, then one summary row (mean, std) per layer
std::string probe_heatmap_export(const std::vector<std::pair<hook_point, double>> & scores, uint32_t n_layers, uint32_t n_heads);

struct sweep_point {
    std::string parameter;  // "lambda" or "heads"
    double value = 0.0;
};

struct sweep_row {
    sweep_point point;
    std::optional<eval_report> report;
    std::string error;
};

// Evaluates each grid point with `run`; a failing point is recorded and the
// sweep continues. Rows come back in grid order.
std::vector<sweep_row> sweep(const std::vector<sweep_point> & grid, const std::function<eval_report(const sweep_point &)> & run,
                             size_t workers = 1);

// grid_index,parameter,value,si,sp,fs,oa,error
std::string sweep_csv(const std::vector<sweep_row> & rows);

}  // namespace dress

#include "dress/diagnostics.h"

#include "dress/errors.h"
#include "dress/parallel.h"

#include <cmath>
#include <sstream>

namespace dress {

namespace {

std::ostringstream csv_stream() {
    std::ostringstream os;
    os.precision(17);
    return os;
}

}  // namespace

std::string csv_field(std::string_view s) {
    if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

std::string projection_export(const activation_store & store, const head_subspace & head) {
    if (!store.has_hook(head.hook)) throw data_error("projection export: head missing from the store");
    if (!head.irrelevant) throw data_error("projection export: artifact was built without the irrelevant directions");
    if (head.rank() < 2) throw data_error("projection export: needs K >= 2");
    mat dirs(4, head.basis.cols);
    for (size_t r = 0; r < 2; ++r) {
        std::copy(head.basis.row(r).begin(), head.basis.row(r).end(), dirs.row(r).begin());
        std::copy(head.irrelevant->row(r).begin(), head.irrelevant->row(r).end(), dirs.row(2 + r).begin());
    }
    auto os = csv_stream();
    os << "pair_id,polarity,p1,p2,q1,q2\n";
    for (size_t i = 0; i < store.n_pairs(); ++i) {
        for (polarity pol : {positive, negative}) {
            auto c = project(store.at(head.hook, i, pol), dirs);
            os << csv_field(store.pair_ids()[i]) << ',' << (pol == positive ? "pos" : "neg") << ',' << c[0] << ',' << c[1] << ','
               << c[2] << ',' << c[3] << '\n';
        }
    }
    return os.str();
}

std::string probe_heatmap_export(const std::vector<std::pair<hook_point, double>> & scores, uint32_t n_layers, uint32_t n_heads) {
    std::vector<std::vector<double>> by_layer(n_layers);
    for (const auto & [h, acc] : scores) {
        if (h.layer >= n_layers || h.head >= n_heads) throw data_error("heatmap: head out of range");
        by_layer[h.layer].push_back(acc);
    }
    auto os = csv_stream();
    os << "row_kind,layer,head_rank,accuracy,std\n";
    for (uint32_t l = 0; l < n_layers; ++l) {
        auto & v = by_layer[l];
        std::stable_sort(v.begin(), v.end(), std::greater<>());
        for (size_t r = 0; r < v.size(); ++r) os << "head," << l << ',' << r << ',' << v[r] << ",\n";
    }
    for (uint32_t l = 0; l < n_layers; ++l) {
        const auto & v = by_layer[l];
        compensated_sum s;
        for (double x : v) s.add(x);
        const double mean = v.empty() ? 0.0 : s.value() / double(v.size());
        compensated_sum q;
        for (double x : v) q.add((x - mean) * (x - mean));
        const double sd = v.empty() ? 0.0 : std::sqrt(q.value() / double(v.size()));
        os << "layer_mean," << l << ",," << mean << ',' << sd << '\n';
    }
    return os.str();
}

std::vector<sweep_row> sweep(const std::vector<sweep_point> & grid, const std::function<eval_report(const sweep_point &)> & run,
                             size_t workers) {
    std::vector<sweep_row> rows(grid.size());
    parallel_for(grid.size(), workers, [&](size_t i) {
        rows[i].point = grid[i];
        try {
            rows[i].report = run(grid[i]);
        } catch (const std::exception & e) {
            rows[i].error = e.what();
        }
    });
    return rows;
}

std::string sweep_csv(const std::vector<sweep_row> & rows) {
    auto os = csv_stream();
    os << "grid_index,parameter,value,si,sp,fs,oa,error\n";
    for (size_t i = 0; i < rows.size(); ++i) {
        const auto & r = rows[i];
        os << i << ',' << r.point.parameter << ',' << r.point.value << ',';
        if (r.report) {
            os << r.report->si << ',' << r.report->sp << ',' << r.report->fs << ',' << r.report->oa << ",";
        } else {
            os << ",,,," << csv_field(r.error);
        }
        os << '\n';
    }
    return os.str();
}

}  // namespace dress

// dress: command-line driver for the steering pipeline.
#include "dress/errors.h"
#include "dress/pipeline.h"
#include "dress/synthgen.h"

#include <CLI11.hpp>

#include <iostream>

namespace {

struct common_flags {
    std::string config;
    bool force = false;
    bool trace = false;
    size_t workers = 0;
    double lambda = -1.0;
    std::string method;
    size_t heads = 0;
    size_t rank = 0;
};

void add_common(CLI::App * sub, common_flags & f) {
    sub->add_option("--config", f.config, "YAML run config")->required();
    sub->add_flag("--force", f.force, "rerun even if an existing manifest disagrees");
    sub->add_option("--workers", f.workers, "worker threads (overrides config)");
    sub->add_flag("--trace", f.trace, "record per-token steering traces");
    sub->add_option("--lambda", f.lambda, "steering strength");
    sub->add_option("--method", f.method, "none|dress|dress_fixed|iti|repe|mean_centring");
    sub->add_option("--heads", f.heads, "number of steered heads H");
    sub->add_option("--rank", f.rank, "subspace rank K");
}

dress::pipeline_runner make_runner(const common_flags & f) {
    dress::stage_options o;
    o.force = f.force;
    o.trace = f.trace;
    if (f.workers) o.workers = f.workers;
    if (f.lambda >= 0.0) o.lambda = f.lambda;
    if (!f.method.empty()) o.method = dress::parse_method(f.method);
    if (f.heads) o.heads = f.heads;
    if (f.rank) o.rank = f.rank;
    return dress::pipeline_runner(dress::run_config::load(f.config), o, std::cerr);
}

void report(const dress::stage_result & r) {
    std::cout << r.stage << (r.skipped ? " skipped " : " done ") << r.run_digest << '\n';
}

int synth(const std::string & kind, const std::string & out, uint64_t seed) {
    namespace fs = std::filesystem;
    if (kind == "styled") {
        dress::write_styled_demo(out, seed);
    } else if (kind == "tiny") {
        fs::create_directories(out);
        dress::save_model(dress::tiny_model(seed), fs::path(out) / "tiny.drsw");
    } else if (kind == "planted") {
        fs::create_directories(out);
        dress::planted_config pc;
        pc.seed = seed;
        pc.style_heads = {{2, 3}, {5, 1}};
        auto res = dress::planted_store(pc);
        dress::save_store(res.store, fs::path(out) / "planted.drsa");
        dress::write_file_text(fs::path(out) / "truth.json", res.truth.to_json() + "\n");
    } else {
        throw dress::config_error("synth: unknown kind '" + kind + "' (styled|tiny|planted)");
    }
    std::cout << "synth " << kind << " written to " << out << '\n';
    return 0;
}

}  // namespace

int main(int argc, char ** argv) {
    CLI::App app{"dress: disentangled activation steering for text style"};
    app.set_version_flag("--version", dress::dress_version);
    app.require_subcommand(1);

    common_flags f;
    const char * stages[] = {"prepare", "extract", "probe", "subspace", "generate", "eval", "diag", "sweep", "pipeline"};
    for (const char * s : stages) add_common(app.add_subcommand(s, std::string("run the ") + s + " stage"), f);

    std::string synth_kind = "styled", synth_out;
    uint64_t synth_seed = 0;
    auto * sy = app.add_subcommand("synth", "write synthetic models, stores or demo runs");
    sy->add_option("--kind", synth_kind, "styled|tiny|planted");
    sy->add_option("--out", synth_out, "output directory")->required();
    sy->add_option("--seed", synth_seed, "seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError & e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (sy->parsed()) return synth(synth_kind, synth_out, synth_seed);
        auto runner = make_runner(f);
        const std::string cmd = app.get_subcommands().front()->get_name();
        if (cmd == "pipeline") {
            for (const auto & r : runner.pipeline()) report(r);
        } else if (cmd == "prepare") {
            report(runner.prepare());
        } else if (cmd == "extract") {
            report(runner.extract());
        } else if (cmd == "probe") {
            report(runner.probe());
        } else if (cmd == "subspace") {
            report(runner.subspace());
        } else if (cmd == "generate") {
            report(runner.generate());
        } else if (cmd == "eval") {
            report(runner.evaluate());
        } else if (cmd == "diag") {
            report(runner.diag());
        } else if (cmd == "sweep") {
            report(runner.sweep());
        }
        return 0;
    } catch (const dress::config_error & e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const dress::data_error & e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    } catch (const dress::model_error & e) {
        std::cerr << "model error: " << e.what() << '\n';
        return 4;
    } catch (const dress::invariant_error & e) {
        std::cerr << "invariant failure: " << e.what() << '\n';
        return 5;
    } catch (const std::exception & e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return 5;
    }
}

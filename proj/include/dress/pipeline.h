#pragma once

#include "dress/corpus.h"
#include "dress/eval.h"
#include "dress/steering.h"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace dress {

inline constexpr const char * dress_version = "0.1.0";

// Everything a run needs, read from one YAML file. Relative paths are
// resolved against the config file's directory.
struct run_config {
    std::filesystem::path base_dir;
    std::string run_id = "run";
    std::string model_scale = "tiny";  // tiny | paper
    size_t workers = 1;

    std::filesystem::path model_path;
    std::filesystem::path corpus_path;
    std::filesystem::path general_path;  // optional D'
    std::filesystem::path sidecar_path;  // optional offline rewrites
    std::filesystem::path template_dir;  // defaults to the shipped templates

    split_spec split;
    size_t probe_heads = 0;  // 0: preset
    bool per_layer = false;
    size_t rank = 0;         // 0: preset
    bool orient = true;

    steer_method method = steer_method::dress;
    std::optional<double> lambda;  // nullopt: preset
    std::vector<uint32_t> layers;

    std::filesystem::path questions_path;  // optional JSONL {id, question}
    uint32_t max_new = 32;

    std::vector<double> sweep_lambdas{0, 1, 2, 3, 4};
    std::vector<size_t> sweep_heads;

    std::filesystem::path output_dir;

    size_t heads() const;
    size_t subspace_rank() const;
    double steer_lambda() const;

    // throws config_error naming the offending key
    static run_config parse(std::string_view yaml, const std::filesystem::path & base_dir);
    static run_config load(const std::filesystem::path & path);
};

struct stage_options {
    bool force = false;
    bool trace = false;
    std::optional<size_t> workers;
    std::optional<double> lambda;
    std::optional<steer_method> method;
    std::optional<size_t> heads;
    std::optional<size_t> rank;
};

struct stage_result {
    std::string stage;
    bool skipped = false;
    std::string run_digest;
    std::vector<std::filesystem::path> outputs;
};

// Runs the stages of one config. Each stage writes its outputs plus
// {run_id}.{stage}.manifest.json; a stage whose manifest matches its inputs
// and outputs is skipped, and a mismatch needs force.
class pipeline_runner {
public:
    pipeline_runner(run_config cfg, stage_options opts, std::ostream & log);

    stage_result prepare();
    stage_result extract();
    stage_result probe();
    stage_result subspace();
    stage_result generate();
    stage_result evaluate();
    stage_result diag();
    stage_result sweep();
    std::vector<stage_result> pipeline();

    std::filesystem::path out(const std::string & name) const;
    const run_config & config() const { return cfg_; }

private:
    struct manifest_plan;
    stage_result run_stage(manifest_plan & plan);
    std::filesystem::path ensure_reference();
    style_corpus prepared_corpus() const;
    std::vector<std::pair<std::string, std::string>> questions() const;
    steer_config steer() const;
    size_t workers() const;

    run_config cfg_;
    stage_options opts_;
    std::ostream & log_;
};

// Generates a response for each (id, question); one callback per question.
response_set generate_responses(const model_bundle & bundle, const style_artifact * artifact, const steer_config & steer,
                                const std::vector<std::pair<std::string, std::string>> & questions, uint32_t max_new,
                                size_t workers, std::vector<trace_row> * trace = nullptr);

// Writes a styled tiny model, its mechanical corpus, held-out questions and a
// ready-to-run config into dir.
void write_styled_demo(const std::filesystem::path & dir, uint64_t seed);

}  // namespace dress

#include "dress/pipeline.h"

#include "dress/diagnostics.h"
#include "dress/errors.h"
#include "dress/parallel.h"
#include "dress/probes.h"
#include "dress/store.h"
#include "dress/subspace.h"
#include "dress/synthgen.h"

#include <json.hpp>
#include <yaml-cpp/yaml.h>

#include <cstdlib>
#include <functional>
#include <ostream>
#include <set>

namespace dress {

using json = nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------- config

size_t run_config::heads() const { return probe_heads ? probe_heads : (model_scale == "paper" ? 64 : 8); }
size_t run_config::subspace_rank() const { return rank ? rank : (model_scale == "paper" ? 16 : 4); }
double run_config::steer_lambda() const { return lambda.value_or(3.0); }

namespace {

[[noreturn]] void bad_key(const std::string & key, const std::string & why) {
    throw config_error("config key '" + key + "': " + why);
}

void check_keys(const YAML::Node & node, const std::string & prefix, const std::set<std::string> & allowed) {
    if (!node.IsMap()) bad_key(prefix.empty() ? "<root>" : prefix, "expected a mapping");
    for (const auto & kv : node) {
        const auto k = kv.first.as<std::string>();
        if (!allowed.count(k)) bad_key(prefix.empty() ? k : prefix + "." + k, "unknown key");
    }
}

template <typename T>
T scalar(const YAML::Node & n, const std::string & key) {
    try {
        return n.as<T>();
    } catch (const YAML::Exception &) {
        bad_key(key, "wrong type");
    }
}

fs::path resolve(const fs::path & base, const std::string & p) {
    if (p.empty()) return {};
    fs::path path(p);
    return path.is_absolute() ? path : base / path;
}

}  // namespace

run_config run_config::parse(std::string_view yaml, const fs::path & base_dir) {
    YAML::Node root;
    try {
        root = YAML::Load(std::string(yaml));
    } catch (const YAML::Exception & e) {
        throw config_error(std::string("config is not valid YAML: ") + e.what());
    }
    if (!root || root.IsNull()) throw config_error("config is empty");
    check_keys(root, "", {"run_id", "model_scale", "workers", "model", "corpus", "split", "probe", "subspace", "steer",
                          "generate", "sweep", "output"});
    run_config c;
    c.base_dir = base_dir;
    c.template_dir = fs::path(DRESS_ASSET_DIR) / "templates";
    if (root["run_id"]) c.run_id = scalar<std::string>(root["run_id"], "run_id");
    if (c.run_id.empty() || c.run_id.find_first_of("/\\") != std::string::npos) bad_key("run_id", "must be a plain name");
    if (root["model_scale"]) c.model_scale = scalar<std::string>(root["model_scale"], "model_scale");
    if (c.model_scale != "tiny" && c.model_scale != "paper") bad_key("model_scale", "must be tiny or paper");
    if (root["workers"]) c.workers = scalar<size_t>(root["workers"], "workers");
    if (c.workers == 0) bad_key("workers", "must be >= 1");

    auto section = [&](const char * name, std::set<std::string> keys) -> YAML::Node {
        YAML::Node n = root[name];
        if (n) check_keys(n, name, keys);
        return n;
    };
    if (auto m = section("model", {"path"})) {
        if (m["path"]) c.model_path = resolve(base_dir, scalar<std::string>(m["path"], "model.path"));
    }
    if (c.model_path.empty()) bad_key("model.path", "is required");
    if (auto n = section("corpus", {"path", "general_path", "sidecar", "template_dir"})) {
        if (n["path"]) c.corpus_path = resolve(base_dir, scalar<std::string>(n["path"], "corpus.path"));
        if (n["general_path"]) c.general_path = resolve(base_dir, scalar<std::string>(n["general_path"], "corpus.general_path"));
        if (n["sidecar"]) c.sidecar_path = resolve(base_dir, scalar<std::string>(n["sidecar"], "corpus.sidecar"));
        if (n["template_dir"]) c.template_dir = resolve(base_dir, scalar<std::string>(n["template_dir"], "corpus.template_dir"));
    }
    if (c.corpus_path.empty()) bad_key("corpus.path", "is required");
    if (auto n = section("split", {"seed", "train_fraction"})) {
        if (n["seed"]) c.split.seed = scalar<uint64_t>(n["seed"], "split.seed");
        if (n["train_fraction"]) c.split.train_fraction = scalar<double>(n["train_fraction"], "split.train_fraction");
    }
    if (!(c.split.train_fraction > 0.0 && c.split.train_fraction < 1.0)) bad_key("split.train_fraction", "must lie in (0, 1)");
    if (auto n = section("probe", {"heads", "per_layer"})) {
        if (n["heads"]) c.probe_heads = scalar<size_t>(n["heads"], "probe.heads");
        if (n["per_layer"]) c.per_layer = scalar<bool>(n["per_layer"], "probe.per_layer");
    }
    if (auto n = section("subspace", {"rank", "orient"})) {
        if (n["rank"]) c.rank = scalar<size_t>(n["rank"], "subspace.rank");
        if (n["orient"]) c.orient = scalar<bool>(n["orient"], "subspace.orient");
    }
    if (auto n = section("steer", {"method", "lambda", "layers"})) {
        if (n["method"]) {
            try {
                c.method = parse_method(scalar<std::string>(n["method"], "steer.method"));
            } catch (const config_error & e) {
                bad_key("steer.method", e.what());
            }
        }
        if (n["lambda"]) c.lambda = scalar<double>(n["lambda"], "steer.lambda");
        if (c.lambda && !(std::isfinite(*c.lambda) && *c.lambda >= 0.0)) bad_key("steer.lambda", "must be finite and >= 0");
        if (n["layers"]) c.layers = scalar<std::vector<uint32_t>>(n["layers"], "steer.layers");
    }
    if (auto n = section("generate", {"questions", "max_new"})) {
        if (n["questions"]) c.questions_path = resolve(base_dir, scalar<std::string>(n["questions"], "generate.questions"));
        if (n["max_new"]) c.max_new = scalar<uint32_t>(n["max_new"], "generate.max_new");
    }
    if (auto n = section("sweep", {"lambdas", "heads"})) {
        if (n["lambdas"]) c.sweep_lambdas = scalar<std::vector<double>>(n["lambdas"], "sweep.lambdas");
        if (n["heads"]) c.sweep_heads = scalar<std::vector<size_t>>(n["heads"], "sweep.heads");
    }
    for (double l : c.sweep_lambdas)
        if (!(std::isfinite(l) && l >= 0.0)) bad_key("sweep.lambdas", "values must be finite and >= 0");
    if (auto n = section("output", {"dir"})) {
        if (n["dir"]) c.output_dir = resolve(base_dir, scalar<std::string>(n["dir"], "output.dir"));
    }
    if (c.output_dir.empty()) {
        const char * cache = std::getenv("DRESS_CACHE_DIR");
        c.output_dir = cache && *cache ? fs::path(cache) / c.run_id : base_dir / "out";
    }
    return c;
}

run_config run_config::load(const fs::path & path) {
    if (!fs::exists(path)) throw config_error("config file not found: " + path.string());
    return parse(read_file_text(path), fs::absolute(path).parent_path());
}

// ---------------------------------------------------------------- helpers

namespace {

void require_file(const fs::path & p, const std::string & key) {
    if (p.empty()) bad_key(key, "is not set");
    if (!fs::exists(p)) bad_key(key, "file not found: " + p.string());
}

json selection_to_json(const head_selection & sel) {
    json scores = json::array();
    for (const auto & s : sel.ranked) {
        scores.push_back({{"layer", s.hook.layer},
                          {"head", s.hook.head},
                          {"accuracy", s.val_accuracy},
                          {"weights", s.probe.weights},
                          {"bias", s.probe.bias}});
    }
    json selected = json::array();
    for (const auto & h : sel.selected) selected.push_back({h.layer, h.head});
    return {{"selected", selected}, {"ranked", scores}};
}

head_selection selection_from_json(const json & j) {
    head_selection sel;
    for (const auto & s : j.at("ranked")) {
        sel.ranked.push_back({{s.at("layer").get<uint32_t>(), s.at("head").get<uint32_t>()},
                              s.at("accuracy").get<double>(),
                              {s.at("weights").get<std::vector<double>>(), s.at("bias").get<double>()}});
    }
    for (const auto & h : j.at("selected")) sel.selected.push_back({h[0].get<uint32_t>(), h[1].get<uint32_t>()});
    return sel;
}

std::vector<head_score> scores_in_hook_order(const head_selection & sel) {
    auto scores = sel.ranked;
    std::sort(scores.begin(), scores.end(), [](const head_score & a, const head_score & b) { return a.hook < b.hook; });
    return scores;
}

}  // namespace

response_set generate_responses(const model_bundle & bundle, const style_artifact * artifact, const steer_config & steer,
                                const std::vector<std::pair<std::string, std::string>> & questions, uint32_t max_new,
                                size_t workers, std::vector<trace_row> * trace) {
    response_set set;
    set.method = std::string(to_string(steer.method));
    set.records.resize(questions.size());
    std::vector<std::vector<trace_row>> traces(questions.size());
    const bool steered = steer.method != steer_method::none;
    if (steered && !artifact) throw config_error("steering needs an artifact");
    parallel_for(questions.size(), workers, [&](size_t i) {
        const auto & [id, q] = questions[i];
        auto prompt = tokenize(bundle, bundle.format_prompt(q));
        std::unique_ptr<steering_callback> cb;
        if (steered) {
            cb = make_callback(steer, *artifact, bundle);
            cb->set_origin(uint32_t(prompt.size()));
        }
        auto out = generate(bundle, prompt, cb.get(), {max_new, true});
        set.records[i] = {id, q, detokenize(bundle, out)};
        if (cb) traces[i] = cb->trace();
    });
    if (trace)
        for (auto & t : traces) trace->insert(trace->end(), t.begin(), t.end());
    return set;
}

// ---------------------------------------------------------------- runner

struct pipeline_runner::manifest_plan {
    std::string stage;
    std::vector<std::pair<std::string, fs::path>> inputs;
    json params = json::object();
    std::vector<std::pair<std::string, fs::path>> outputs;
    std::function<void(const std::string & run_digest)> body;
};

pipeline_runner::pipeline_runner(run_config cfg, stage_options opts, std::ostream & log)
    : cfg_(std::move(cfg)), opts_(std::move(opts)), log_(log) {
    if (opts_.lambda) {
        if (!(std::isfinite(*opts_.lambda) && *opts_.lambda >= 0.0)) throw config_error("--lambda must be finite and >= 0");
        cfg_.lambda = opts_.lambda;
    }
    if (opts_.method) cfg_.method = *opts_.method;
    if (opts_.heads) cfg_.probe_heads = *opts_.heads;
    if (opts_.rank) cfg_.rank = *opts_.rank;
}

fs::path pipeline_runner::out(const std::string & name) const { return cfg_.output_dir / (cfg_.run_id + "." + name); }

size_t pipeline_runner::workers() const { return opts_.workers.value_or(cfg_.workers); }

steer_config pipeline_runner::steer() const {
    steer_config s;
    s.method = cfg_.method;
    s.lambda = cfg_.steer_lambda();
    s.layers = cfg_.layers;
    s.trace = opts_.trace;
    return s;
}

stage_result pipeline_runner::run_stage(manifest_plan & plan) {
    json inputs = json::object();
    for (const auto & [role, path] : plan.inputs) {
        if (!fs::exists(path)) throw data_error(plan.stage + ": missing input " + role + " (" + path.string() + ")");
        inputs[role] = {{"file", path.filename().string()}, {"sha256", file_sha256_hex(path)}};
    }
    json pre = {{"stage", plan.stage},
                {"versions", {{"dress", dress_version}, {"drsw", 1}, {"drsa", 1}, {"drss", 1}}},
                {"inputs", inputs},
                {"params", plan.params}};
    const std::string run_digest = sha256_hex(pre.dump());
    const fs::path manifest_path = out(plan.stage + ".manifest.json");

    stage_result res{plan.stage, false, run_digest, {}};
    for (const auto & o : plan.outputs) res.outputs.push_back(o.second);

    if (fs::exists(manifest_path)) {
        json old = json::parse(read_file_text(manifest_path), nullptr, false);
        bool same = !old.is_discarded() && old.value("run_digest", "") == run_digest;
        if (same) {
            for (const auto & [role, path] : plan.outputs) {
                if (!fs::exists(path) || !old["outputs"].contains(role) ||
                    old["outputs"][role].value("sha256", "") != file_sha256_hex(path)) {
                    same = false;
                    break;
                }
            }
        }
        if (same) {
            log_ << plan.stage << ": up to date, skipped\n";
            res.skipped = true;
            return res;
        }
        if (!opts_.force) {
            throw data_error(plan.stage + ": existing manifest " + manifest_path.string() +
                             " does not match the current inputs/outputs; rerun with --force");
        }
    }
    fs::create_directories(cfg_.output_dir);
    plan.body(run_digest);
    json outputs = json::object();
    for (const auto & [role, path] : plan.outputs) {
        outputs[role] = {{"file", path.filename().string()}, {"sha256", file_sha256_hex(path)}};
    }
    json manifest = pre;
    manifest["run_digest"] = run_digest;
    manifest["outputs"] = outputs;
    write_file_text(manifest_path, manifest.dump(2) + "\n");
    log_ << plan.stage << ": wrote";
    for (const auto & o : plan.outputs) log_ << ' ' << o.second.filename().string();
    log_ << '\n';
    return res;
}

style_corpus pipeline_runner::prepared_corpus() const { return load_corpus(out("corpus.jsonl")); }

std::vector<std::pair<std::string, std::string>> pipeline_runner::questions() const {
    std::vector<std::pair<std::string, std::string>> qs;
    if (!cfg_.questions_path.empty()) {
        require_file(cfg_.questions_path, "generate.questions");
        const std::string text = read_file_text(cfg_.questions_path);
        size_t start = 0, line = 0;
        while (start < text.size()) {
            size_t end = text.find('\n', start);
            if (end == std::string::npos) end = text.size();
            const std::string l = text.substr(start, end - start);
            start = end + 1;
            ++line;
            if (l.find_first_not_of(" \t\r") == std::string::npos) continue;
            json j = json::parse(l, nullptr, false);
            if (j.is_discarded() || !j.contains("id") || !j.contains("question")) {
                throw data_error(cfg_.questions_path.string() + ": line " + std::to_string(line) + ": needs id and question");
            }
            qs.push_back({j["id"].get<std::string>(), j["question"].get<std::string>()});
        }
        return qs;
    }
    const auto corpus = prepared_corpus();
    for (size_t i : make_split(corpus.size(), cfg_.split).val) qs.push_back({corpus.pairs[i].id, corpus.pairs[i].question});
    return qs;
}

stage_result pipeline_runner::prepare() {
    require_file(cfg_.corpus_path, "corpus.path");
    manifest_plan p;
    p.stage = "prepare";
    p.inputs = {{"corpus", cfg_.corpus_path}};
    if (!cfg_.general_path.empty()) {
        require_file(cfg_.general_path, "corpus.general_path");
        p.inputs.push_back({"general", cfg_.general_path});
    }
    if (!cfg_.sidecar_path.empty()) {
        require_file(cfg_.sidecar_path, "corpus.sidecar");
        p.inputs.push_back({"sidecar", cfg_.sidecar_path});
    }
    p.params = {{"few_shot", 4}, {"seed", cfg_.split.seed}};
    p.outputs = {{"corpus", out("corpus.jsonl")}};
    p.body = [&](const std::string &) {
        corpus_load_options lo{true};
        style_corpus c = load_corpus(cfg_.corpus_path, lo);
        if (!cfg_.general_path.empty()) c = merge(c, load_corpus(cfg_.general_path, lo));
        auto missing = [&] {
            return std::any_of(c.pairs.begin(), c.pairs.end(),
                               [](const style_pair & s) { return s.answer_neg.empty() || s.answer_pos.empty(); });
        };
        if (missing()) {
            if (cfg_.sidecar_path.empty()) throw data_error("corpus has records missing an answer and corpus.sidecar is not set");
            for (auto dir : {rewrite_direction::to_ordinary, rewrite_direction::to_target}) {
                offline_provider prov(cfg_.sidecar_path, dir);
                augment_options ao;
                ao.direction = dir;
                ao.template_dir = cfg_.template_dir;
                ao.seed = cfg_.split.seed;
                auto rep = augment_via_provider(c, prov, ao);
                c = std::move(rep.corpus);
            }
            if (missing()) {
                std::string ids;
                for (const auto & s : c.pairs)
                    if (s.answer_neg.empty() || s.answer_pos.empty()) ids += " " + s.id;
                throw data_error("records still unfilled after augmentation:" + ids);
            }
        }
        log_ << "prepare: N=" << c.size() << " (n=" << c.n_target() << ", n'=" << c.n_general() << ")\n";
        save_corpus(c, out("corpus.jsonl"));
    };
    return run_stage(p);
}

stage_result pipeline_runner::extract() {
    require_file(cfg_.model_path, "model.path");
    manifest_plan p;
    p.stage = "extract";
    p.inputs = {{"model", cfg_.model_path}, {"corpus", out("corpus.jsonl")}};
    p.outputs = {{"store", out("store.drsa")}};
    p.body = [&](const std::string &) {
        auto bundle = load_model(cfg_.model_path);
        extract_report rep;
        auto store = extract_last_token_activations(bundle, prepared_corpus(), workers(), &rep);
        for (const auto & w : rep.warnings) log_ << "warning: " << w << '\n';
        save_store(store, out("store.drsa"));
    };
    return run_stage(p);
}

stage_result pipeline_runner::probe() {
    manifest_plan p;
    p.stage = "probe";
    p.inputs = {{"store", out("store.drsa")}};
    const probe_fit_config fit;
    p.params = {{"split_seed", cfg_.split.seed},
                {"train_fraction", cfg_.split.train_fraction},
                {"heads", cfg_.heads()},
                {"per_layer", cfg_.per_layer},
                {"fit", {{"l2", fit.l2}, {"learning_rate", fit.learning_rate}, {"iterations", fit.iterations}}}};
    p.outputs = {{"probes", out("probes.json")}};
    p.body = [&](const std::string & run_digest) {
        auto store = load_store(out("store.drsa"));
        probe_options po{cfg_.split, fit, workers()};
        auto sel = select_heads(store, po, cfg_.heads(), cfg_.per_layer);
        log_ << "probe: best head (" << sel.ranked[0].hook.layer << "," << sel.ranked[0].hook.head
             << ") val accuracy " << sel.ranked[0].val_accuracy << '\n';
        json j = selection_to_json(sel);
        j["manifest_digest"] = run_digest;
        write_file_text(out("probes.json"), j.dump() + "\n");
    };
    return run_stage(p);
}

stage_result pipeline_runner::subspace() {
    manifest_plan p;
    p.stage = "subspace";
    p.inputs = {{"model", cfg_.model_path}, {"store", out("store.drsa")}, {"probes", out("probes.json")}, {"corpus", out("corpus.jsonl")}};
    p.params = {{"rank", cfg_.subspace_rank()}, {"orient", cfg_.orient}, {"lambda", cfg_.steer_lambda()}, {"heads", cfg_.heads()}};
    p.outputs = {{"artifact", out("artifact.drss")}};
    p.body = [&](const std::string &) {
        auto bundle = load_model(cfg_.model_path);
        auto store = load_store(out("store.drsa"));
        auto sel = selection_from_json(json::parse(read_file_text(out("probes.json"))));
        if (sel.selected.size() != cfg_.heads()) {
            throw data_error("probes.json selected " + std::to_string(sel.selected.size()) + " heads, config asks for " +
                             std::to_string(cfg_.heads()) + "; rerun probe");
        }
        artifact_provenance prov{corpus_digest(prepared_corpus()), file_sha256_hex(out("store.drsa")), cfg_.split.seed,
                                 cfg_.split.train_fraction, cfg_.orient};
        subspace_options so;
        so.orient = cfg_.orient;
        std::vector<std::string> warnings;
        auto art = build_artifact(bundle, store, sel, {cfg_.steer_lambda(), cfg_.subspace_rank()}, so, prov, workers(), &warnings);
        for (const auto & w : warnings) log_ << "warning: " << w << '\n';
        save_artifact(art, out("artifact.drss"));
    };
    return run_stage(p);
}

stage_result pipeline_runner::generate() {
    const auto sc = steer();
    const std::string method(to_string(sc.method));
    manifest_plan p;
    p.stage = "generate." + method;
    p.inputs = {{"model", cfg_.model_path}};
    if (sc.method != steer_method::none) p.inputs.push_back({"artifact", out("artifact.drss")});
    if (!cfg_.questions_path.empty()) {
        require_file(cfg_.questions_path, "generate.questions");
        p.inputs.push_back({"questions", cfg_.questions_path});
    } else {
        p.inputs.push_back({"corpus", out("corpus.jsonl")});
    }
    p.params = {{"method", method}, {"lambda", sc.lambda}, {"layers", sc.layers}, {"max_new", cfg_.max_new},
                {"split_seed", cfg_.split.seed}, {"train_fraction", cfg_.split.train_fraction}};
    p.outputs = {{"responses", out("responses." + method + ".jsonl")}};
    p.body = [&, sc](const std::string & run_digest) {
        auto bundle = load_model(cfg_.model_path);
        std::optional<style_artifact> art;
        if (sc.method != steer_method::none) art = load_artifact(out("artifact.drss"));
        auto set = generate_responses(bundle, art ? &*art : nullptr, sc, questions(), cfg_.max_new, workers());
        set.manifest_digest = run_digest;
        write_file_text(out("responses." + method + ".jsonl"), serialize_responses(set));
    };
    return run_stage(p);
}

fs::path pipeline_runner::ensure_reference() {
    stage_options o = opts_;
    o.method = steer_method::none;
    o.trace = false;
    pipeline_runner ref(cfg_, o, log_);
    ref.generate();
    return out("responses.none.jsonl");
}

stage_result pipeline_runner::evaluate() {
    const std::string method(to_string(cfg_.method));
    const fs::path reference = ensure_reference();
    manifest_plan p;
    p.stage = "eval." + method;
    p.inputs = {{"model", cfg_.model_path},
                {"corpus", out("corpus.jsonl")},
                {"responses", out("responses." + method + ".jsonl")},
                {"reference", reference}};
    p.params = {{"method", method}, {"classifier_seed", cfg_.split.seed}};
    p.outputs = {{"classifier", out("classifier.json")}, {"report", out("eval." + method + ".json")}};
    p.body = [&](const std::string & run_digest) {
        auto bundle = load_model(cfg_.model_path);
        const auto corpus = prepared_corpus();
        std::vector<std::string> pos, neg;
        for (const auto & s : corpus.pairs) {
            pos.push_back(s.answer_pos);
            neg.push_back(s.answer_neg);
        }
        auto clf = train_style_classifier(pos, neg, {}, cfg_.split);
        write_file_text(out("classifier.json"), clf.to_json() + "\n");
        auto rep = dress::evaluate(bundle, clf, load_responses(out("responses." + method + ".jsonl")), load_responses(reference),
                                   workers());
        log_ << "eval " << method << ": SI=" << rep.si << " SP=" << rep.sp << " FS=" << rep.fs << " OA=" << rep.oa
             << " (classifier held-out accuracy " << clf.heldout_accuracy() << ")\n";
        json j = json::parse(rep.to_json());
        j["manifest_digest"] = run_digest;
        write_file_text(out("eval." + method + ".json"), j.dump(2) + "\n");
    };
    return run_stage(p);
}

stage_result pipeline_runner::diag() {
    manifest_plan p;
    p.stage = "diag";
    p.inputs = {{"store", out("store.drsa")}, {"artifact", out("artifact.drss")}};
    p.outputs = {{"heatmap", out("heatmap.csv")}, {"projection", out("projection.csv")}};
    const auto sc = steer();
    if (opts_.trace) {
        p.inputs.push_back({"model", cfg_.model_path});
        p.params = {{"trace_method", std::string(to_string(sc.method))}, {"lambda", sc.lambda}, {"max_new", cfg_.max_new}};
        p.outputs.push_back({"trace", out("trace.csv")});
    }
    p.body = [&, sc](const std::string &) {
        auto store = load_store(out("store.drsa"));
        auto art = load_artifact(out("artifact.drss"));
        write_file_text(out("heatmap.csv"), probe_heatmap_export(art.all_scores, art.n_layers, art.n_heads));
        write_file_text(out("projection.csv"), projection_export(store, art.heads.front().subspace));
        if (opts_.trace) {
            auto bundle = load_model(cfg_.model_path);
            auto qs = questions();
            if (qs.size() > 1) qs.resize(1);
            std::vector<trace_row> rows;
            generate_responses(bundle, &art, sc, qs, cfg_.max_new, 1, &rows);
            write_file_text(out("trace.csv"), trace_csv(rows));
        }
    };
    return run_stage(p);
}

stage_result pipeline_runner::sweep() {
    const auto sc = steer();
    manifest_plan p;
    p.stage = "sweep";
    p.inputs = {{"model", cfg_.model_path}, {"store", out("store.drsa")}, {"probes", out("probes.json")},
                {"artifact", out("artifact.drss")}, {"corpus", out("corpus.jsonl")}};
    if (!cfg_.questions_path.empty()) p.inputs.push_back({"questions", cfg_.questions_path});
    p.params = {{"lambdas", cfg_.sweep_lambdas}, {"heads", cfg_.sweep_heads}, {"method", std::string(to_string(sc.method))},
                {"lambda", sc.lambda}, {"max_new", cfg_.max_new}, {"rank", cfg_.subspace_rank()}};
    p.outputs = {{"sweep", out("sweep.csv")}};
    p.body = [&, sc](const std::string &) {
        auto bundle = load_model(cfg_.model_path);
        auto art = load_artifact(out("artifact.drss"));
        auto store = load_store(out("store.drsa"));
        auto sel = selection_from_json(json::parse(read_file_text(out("probes.json"))));
        const auto corpus = prepared_corpus();
        std::vector<std::string> pos, neg;
        for (const auto & s : corpus.pairs) {
            pos.push_back(s.answer_pos);
            neg.push_back(s.answer_neg);
        }
        const auto clf = train_style_classifier(pos, neg, {}, cfg_.split);
        const auto qs = questions();
        steer_config none = sc;
        none.method = steer_method::none;
        const auto reference = generate_responses(bundle, nullptr, none, qs, cfg_.max_new, workers());

        std::vector<sweep_point> grid;
        for (double l : cfg_.sweep_lambdas) grid.push_back({"lambda", l});
        for (size_t h : cfg_.sweep_heads) grid.push_back({"heads", double(h)});
        auto rows = dress::sweep(grid, [&](const sweep_point & pt) {
            steer_config s = sc;
            s.trace = false;
            if (pt.parameter == "lambda") {
                s.lambda = pt.value;
                return dress::evaluate(bundle, clf, generate_responses(bundle, &art, s, qs, cfg_.max_new, workers()), reference,
                                       workers());
            }
            auto sub = rank_heads(scores_in_hook_order(sel), size_t(pt.value), store.n_layers(), cfg_.per_layer);
            subspace_options so;
            so.orient = cfg_.orient;
            auto a2 = build_artifact(bundle, store, sub, {s.lambda, cfg_.subspace_rank()}, so, art.provenance, workers());
            return dress::evaluate(bundle, clf, generate_responses(bundle, &a2, s, qs, cfg_.max_new, workers()), reference, workers());
        });
        for (const auto & r : rows) {
            if (!r.error.empty()) log_ << "sweep " << r.point.parameter << "=" << r.point.value << " failed: " << r.error << '\n';
        }
        write_file_text(out("sweep.csv"), sweep_csv(rows));
    };
    return run_stage(p);
}

std::vector<stage_result> pipeline_runner::pipeline() {
    return {prepare(), extract(), probe(), subspace()};
}

// ---------------------------------------------------------------- synth

void write_styled_demo(const fs::path & dir, uint64_t seed) {
    fs::create_directories(dir);
    const auto corpus = mechanical_corpus(60, seed);
    styled_config sc;
    sc.seed = seed;
    save_model(styled_model(sc, mechanical_training_text(corpus)), dir / "styled.drsw");
    save_corpus(corpus, dir / "corpus.jsonl");
    std::string qs;
    const auto questions = mechanical_questions(10, seed);
    for (size_t i = 0; i < questions.size(); ++i) {
        qs += json({{"id", "q" + std::to_string(i)}, {"question", questions[i]}}).dump() + "\n";
    }
    write_file_text(dir / "questions.jsonl", qs);
    write_file_text(dir / "config.yaml",
                    "# styled tiny model, mechanical upper-case style task\n"
                    "run_id: styled\n"
                    "model_scale: tiny\n"
                    "workers: 1\n"
                    "model:\n  path: styled.drsw\n"
                    "corpus:\n  path: corpus.jsonl\n"
                    "split:\n  seed: " + std::to_string(seed) + "\n  train_fraction: 0.8\n"
                    "probe:\n  heads: 8\n"
                    "subspace:\n  rank: 4\n"
                    "steer:\n  method: dress\n  lambda: 3\n"
                    "generate:\n  questions: questions.jsonl\n  max_new: 20\n"
                    "sweep:\n  lambdas: [0, 1, 2, 3, 4]\n"
                    "output:\n  dir: out\n");
}

}  // namespace dress

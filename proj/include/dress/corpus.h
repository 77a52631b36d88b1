#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace dress {

enum class pair_source { target_style, general_qa };

std::string_view to_string(pair_source s);

struct style_pair {
    std::string id;
    std::string question;
    std::string answer_neg;  // a-: ordinary style
    std::string answer_pos;  // a+: target style
    pair_source source = pair_source::target_style;

    bool operator==(const style_pair &) const = default;
};

struct style_corpus {
    std::vector<style_pair> pairs;

    size_t size() const { return pairs.size(); }
    size_t n_target() const;
    size_t n_general() const;
    const style_pair * find(std::string_view id) const;

    bool operator==(const style_corpus &) const = default;
};

struct corpus_load_options {
    // records awaiting augmentation may leave one answer empty
    bool allow_missing_answers = false;
};

// JSONL, one style_pair per line; errors name the line and field
style_corpus parse_corpus(std::string_view text, const corpus_load_options & opts = {});
style_corpus load_corpus(const std::filesystem::path & path, const corpus_load_options & opts = {});
std::string serialize_corpus(const style_corpus & corpus);
void save_corpus(const style_corpus & corpus, const std::filesystem::path & path);
std::string corpus_digest(const style_corpus & corpus);

// concatenation; throws data_error on an id collision
style_corpus merge(const style_corpus & d, const style_corpus & d_prime);

struct split_spec {
    uint64_t seed = 0;
    double train_fraction = 0.8;

    void validate() const;
};

struct split_indices {
    std::vector<size_t> train;
    std::vector<size_t> val;
};

// Seeded shuffle of 0..n-1; the first ceil(fraction * n) go to train.
split_indices make_split(size_t n, const split_spec & spec);
std::pair<style_corpus, style_corpus> split(const style_corpus & corpus, const split_spec & spec);

// ---- paraphrase provider ----

enum class rewrite_direction { to_ordinary, to_target };

std::string_view to_string(rewrite_direction d);
rewrite_direction parse_direction(std::string_view s);

struct rewrite_request {
    std::string id;
    std::string template_id;
    std::map<std::string, std::string> slots;
    std::string prompt;  // template with slots substituted
};

class paraphrase_provider {
public:
    virtual ~paraphrase_provider() = default;
    // nullopt when the provider cannot produce this rewrite
    virtual std::optional<std::string> rewrite(const rewrite_request & req) = 0;
};

// Reads precomputed rewrites from a sidecar JSONL file {id, direction, text}.
class offline_provider : public paraphrase_provider {
public:
    offline_provider(const std::filesystem::path & sidecar, rewrite_direction direction);
    std::optional<std::string> rewrite(const rewrite_request & req) override;

private:
    std::map<std::string, std::string> texts_;
};

// POST {base}/rewrite with {template_id, slots, prompt}; expects {text}.
class http_provider : public paraphrase_provider {
public:
    http_provider(std::string host, int port, int timeout_seconds = 60);
    std::optional<std::string> rewrite(const rewrite_request & req) override;

private:
    std::string host_;
    int port_;
    int timeout_;
};

struct prompt_template {
    std::string id;
    std::string text;

    // replaces every {{name}} with slots[name]; throws config_error on an unknown slot
    std::string render(const std::map<std::string, std::string> & slots) const;
};

prompt_template load_template(const std::filesystem::path & dir, std::string_view id);

struct augment_options {
    rewrite_direction direction = rewrite_direction::to_ordinary;
    std::filesystem::path template_dir;
    uint64_t seed = 0;
    size_t few_shot = 4;
    size_t concurrency = 1;
    // completed rewrites are appended here and replayed on the next run
    std::optional<std::filesystem::path> journal;
};

struct augment_report {
    style_corpus corpus;
    std::vector<std::string> filled;
    std::vector<std::string> unfilled;
};

augment_report augment_via_provider(const style_corpus & corpus, paraphrase_provider & provider, const augment_options & opts);

}  // namespace dress

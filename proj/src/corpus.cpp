#include "dress/corpus.h"

#include "dress/binio.h"
#include "dress/errors.h"
#include "dress/parallel.h"
#include "dress/rng.h"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>

namespace dress {

using json = nlohmann::json;

std::string_view to_string(pair_source s) { return s == pair_source::target_style ? "target_style" : "general_qa"; }

size_t style_corpus::n_target() const {
    size_t n = 0;
    for (const auto & p : pairs) n += p.source == pair_source::target_style;
    return n;
}

size_t style_corpus::n_general() const { return size() - n_target(); }

const style_pair * style_corpus::find(std::string_view id) const {
    for (const auto & p : pairs)
        if (p.id == id) return &p;
    return nullptr;
}

style_corpus parse_corpus(std::string_view text, const corpus_load_options & opts) {
    style_corpus out;
    std::set<std::string> seen;
    size_t line_no = 0;
    size_t start = 0;
    while (start <= text.size()) {
        size_t end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(start, end - start);
        start = end + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.find_first_not_of(" \t") == std::string_view::npos) {
            if (end == text.size()) break;
            continue;
        }
        const std::string where = "line " + std::to_string(line_no);
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error & e) {
            throw data_error(where + ": malformed JSON (" + e.what() + ")");
        }
        if (!j.is_object()) throw data_error(where + ": expected a JSON object");
        auto field = [&](const char * name, bool may_be_empty) {
            auto it = j.find(name);
            if (it == j.end() || !it->is_string()) throw data_error(where + ": missing string field '" + name + "'");
            std::string v = it->get<std::string>();
            if (v.empty() && !may_be_empty) throw data_error(where + ": empty field '" + name + "'");
            return v;
        };
        style_pair p;
        p.id = field("id", false);
        p.question = field("question", false);
        p.answer_neg = field("answer_neg", opts.allow_missing_answers);
        p.answer_pos = field("answer_pos", opts.allow_missing_answers);
        if (p.answer_neg.empty() && p.answer_pos.empty()) throw data_error(where + ": both answers empty");
        const std::string src = j.value("source", std::string("target_style"));
        if (src == "target_style") {
            p.source = pair_source::target_style;
        } else if (src == "general_qa") {
            p.source = pair_source::general_qa;
        } else {
            throw data_error(where + ": field 'source' must be target_style or general_qa");
        }
        if (!seen.insert(p.id).second) throw data_error(where + ": duplicate id '" + p.id + "'");
        out.pairs.push_back(std::move(p));
        if (end == text.size()) break;
    }
    return out;
}

style_corpus load_corpus(const std::filesystem::path & path, const corpus_load_options & opts) {
    try {
        return parse_corpus(read_file_text(path), opts);
    } catch (const data_error & e) {
        throw data_error(path.string() + ": " + e.what());
    }
}

std::string serialize_corpus(const style_corpus & corpus) {
    std::string out;
    for (const auto & p : corpus.pairs) {
        json j = {{"id", p.id},
                  {"question", p.question},
                  {"answer_neg", p.answer_neg},
                  {"answer_pos", p.answer_pos},
                  {"source", std::string(to_string(p.source))}};
        out += j.dump();
        out += '\n';
    }
    return out;
}

void save_corpus(const style_corpus & corpus, const std::filesystem::path & path) {
    write_file_text(path, serialize_corpus(corpus));
}

std::string corpus_digest(const style_corpus & corpus) { return sha256_hex(serialize_corpus(corpus)); }

style_corpus merge(const style_corpus & d, const style_corpus & d_prime) {
    std::set<std::string_view> ids;
    for (const auto & p : d.pairs) ids.insert(p.id);
    style_corpus out = d;
    for (const auto & p : d_prime.pairs) {
        if (ids.count(p.id)) throw data_error("merge: id collision '" + p.id + "'");
        out.pairs.push_back(p);
    }
    return out;
}

void split_spec::validate() const {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw config_error("split.train_fraction must lie strictly between 0 and 1");
    }
}

split_indices make_split(size_t n, const split_spec & spec) {
    spec.validate();
    if (n < 5) throw data_error("corpus too small to split: N=" + std::to_string(n) + " < 5");
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng r(spec.seed);
    r.shuffle(std::span<size_t>(order));
    // the tiny epsilon keeps 0.8 * 10 from rounding up to 9
    size_t n_train = size_t(std::ceil(spec.train_fraction * double(n) - 1e-9));
    n_train = std::clamp<size_t>(n_train, 1, n - 1);
    split_indices out;
    out.train.assign(order.begin(), order.begin() + long(n_train));
    out.val.assign(order.begin() + long(n_train), order.end());
    return out;
}

std::pair<style_corpus, style_corpus> split(const style_corpus & corpus, const split_spec & spec) {
    auto idx = make_split(corpus.size(), spec);
    std::pair<style_corpus, style_corpus> out;
    for (size_t i : idx.train) out.first.pairs.push_back(corpus.pairs[i]);
    for (size_t i : idx.val) out.second.pairs.push_back(corpus.pairs[i]);
    return out;
}

std::string_view to_string(rewrite_direction d) { return d == rewrite_direction::to_ordinary ? "to_ordinary" : "to_target"; }

rewrite_direction parse_direction(std::string_view s) {
    if (s == "to_ordinary") return rewrite_direction::to_ordinary;
    if (s == "to_target") return rewrite_direction::to_target;
    throw config_error("unknown rewrite direction '" + std::string(s) + "'");
}

namespace {

std::map<std::string, std::string> read_sidecar(const std::filesystem::path & path, rewrite_direction direction) {
    std::map<std::string, std::string> out;
    std::ifstream in(path);
    if (!in) return out;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error &) {
            throw data_error(path.string() + ": line " + std::to_string(line_no) + ": malformed JSON");
        }
        if (!j.contains("id") || !j.contains("direction") || !j.contains("text")) {
            throw data_error(path.string() + ": line " + std::to_string(line_no) + ": needs id, direction, text");
        }
        if (parse_direction(j["direction"].get<std::string>()) != direction) continue;
        out[j["id"].get<std::string>()] = j["text"].get<std::string>();
    }
    return out;
}

}  // namespace

offline_provider::offline_provider(const std::filesystem::path & sidecar, rewrite_direction direction) {
    if (!std::filesystem::exists(sidecar)) throw data_error("sidecar file not found: " + sidecar.string());
    texts_ = read_sidecar(sidecar, direction);
}

std::optional<std::string> offline_provider::rewrite(const rewrite_request & req) {
    auto it = texts_.find(req.id);
    if (it == texts_.end() || it->second.empty()) return std::nullopt;
    return it->second;
}

std::string prompt_template::render(const std::map<std::string, std::string> & slots) const {
    std::string out;
    size_t pos = 0;
    while (true) {
        size_t open = text.find("{{", pos);
        if (open == std::string::npos) break;
        size_t close = text.find("}}", open);
        if (close == std::string::npos) break;
        out.append(text, pos, open - pos);
        const std::string name = text.substr(open + 2, close - open - 2);
        auto it = slots.find(name);
        if (it == slots.end()) throw config_error("template " + id + ": no value for slot '" + name + "'");
        out += it->second;
        pos = close + 2;
    }
    out.append(text, pos);
    return out;
}

prompt_template load_template(const std::filesystem::path & dir, std::string_view id) {
    const auto path = dir / (std::string(id) + ".txt");
    if (!std::filesystem::exists(path)) throw config_error("template missing: " + path.string());
    return {std::string(id), read_file_text(path)};
}

augment_report augment_via_provider(const style_corpus & corpus, paraphrase_provider & provider, const augment_options & opts) {
    const bool to_ord = opts.direction == rewrite_direction::to_ordinary;
    const prompt_template tpl = load_template(opts.template_dir, to_string(opts.direction));

    augment_report rep;
    rep.corpus = corpus;
    auto & pairs = rep.corpus.pairs;

    std::map<std::string, std::string> journaled;
    if (opts.journal) journaled = read_sidecar(*opts.journal, opts.direction);

    // few-shot pool: target-style answers that already exist
    std::vector<const style_pair *> pool;
    for (const auto & p : corpus.pairs)
        if (p.source == pair_source::target_style && !p.answer_pos.empty()) pool.push_back(&p);

    struct job {
        size_t index;
        rewrite_request req;
    };
    std::vector<job> jobs;
    rng r(opts.seed);
    for (size_t i = 0; i < pairs.size(); ++i) {
        auto & p = pairs[i];
        std::string & target = to_ord ? p.answer_neg : p.answer_pos;
        if (!target.empty()) continue;
        if (auto it = journaled.find(p.id); it != journaled.end() && !it->second.empty()) {
            target = it->second;
            rep.filled.push_back(p.id);
            continue;
        }
        rewrite_request req;
        req.id = p.id;
        req.template_id = tpl.id;
        req.slots["question"] = p.question;
        req.slots["answer"] = to_ord ? p.answer_pos : p.answer_neg;
        if (!to_ord) {
            std::vector<const style_pair *> picks = pool;
            std::erase_if(picks, [&](const style_pair * q) { return q->id == p.id; });
            r.shuffle(std::span<const style_pair *>(picks));
            picks.resize(std::min(picks.size(), opts.few_shot));
            std::string shots;
            for (size_t k = 0; k < picks.size(); ++k) {
                shots += "Example " + std::to_string(k + 1) + ": " + picks[k]->answer_pos + "\n";
            }
            req.slots["examples"] = shots;
        }
        req.prompt = tpl.render(req.slots);
        jobs.push_back({i, std::move(req)});
    }

    std::vector<std::optional<std::string>> results(jobs.size());
    std::mutex journal_mu;
    std::optional<std::ofstream> journal_out;
    if (opts.journal && !jobs.empty()) {
        if (opts.journal->has_parent_path()) std::filesystem::create_directories(opts.journal->parent_path());
        journal_out.emplace(*opts.journal, std::ios::app);
    }
    parallel_for(jobs.size(), std::max<size_t>(1, opts.concurrency), [&](size_t j) {
        std::optional<std::string> text;
        try {
            text = provider.rewrite(jobs[j].req);
        } catch (const std::exception &) {
            text.reset();  // provider failure leaves the record unfilled
        }
        if (text && text->empty()) text.reset();
        if (text && journal_out) {
            std::lock_guard lock(journal_mu);
            json rec = {{"id", jobs[j].req.id}, {"direction", std::string(to_string(opts.direction))}, {"text", *text}};
            *journal_out << rec.dump() << '\n';
            journal_out->flush();
        }
        results[j] = std::move(text);
    });

    for (size_t j = 0; j < jobs.size(); ++j) {
        auto & p = pairs[jobs[j].index];
        if (results[j]) {
            (to_ord ? p.answer_neg : p.answer_pos) = *results[j];
            rep.filled.push_back(p.id);
        } else {
            rep.unfilled.push_back(p.id);
        }
    }
    std::sort(rep.filled.begin(), rep.filled.end());
    std::sort(rep.unfilled.begin(), rep.unfilled.end());
    return rep;
}

}  // namespace dress

#include "dress/steering.h"

#include "dress/errors.h"

#include <cmath>
#include <sstream>

namespace dress {

std::string_view to_string(steer_method m) {
    switch (m) {
        case steer_method::none: return "none";
        case steer_method::dress: return "dress";
        case steer_method::dress_fixed: return "dress_fixed";
        case steer_method::iti: return "iti";
        case steer_method::mean_centring: return "mean_centring";
        case steer_method::repe: return "repe";
    }
    return "?";
}

steer_method parse_method(std::string_view s) {
    for (auto m : {steer_method::none, steer_method::dress, steer_method::dress_fixed, steer_method::iti,
                   steer_method::mean_centring, steer_method::repe}) {
        if (s == to_string(m)) return m;
    }
    throw config_error("unknown steering method '" + std::string(s) +
                       "' (none|dress|dress_fixed|iti|mean_centring|repe)");
}

void steer_config::validate() const {
    if (!std::isfinite(lambda) || lambda < 0.0) throw config_error("steer.lambda must be finite and >= 0");
}

std::vector<uint32_t> default_layers(uint32_t n_layers) {
    const uint32_t n = std::max<uint32_t>(1, uint32_t(std::lround(0.3 * n_layers)));
    const uint32_t start = (n_layers - n) / 2;
    std::vector<uint32_t> out;
    for (uint32_t l = start; l < start + n; ++l) out.push_back(l);
    return out;
}

void dress_delta(const head_subspace & head, std::span<const double> u, double lambda, std::span<double> delta,
                 std::span<double> gamma, std::span<double> alpha, bool force_gamma_zero) {
    const size_t d = head.basis.cols;
    if (u.size() != d || delta.size() != d) throw std::invalid_argument("dress_delta: dimension mismatch");
    std::vector<double> to_target(d);
    for (size_t j = 0; j < d; ++j) to_target[j] = head.u_plus_mean[j] - u[j];
    std::fill(delta.begin(), delta.end(), 0.0);
    for (size_t i = 0; i < head.rank(); ++i) {
        auto v = head.basis.row(i);
        const double g = force_gamma_zero ? 0.0 : cosine(to_target, v);
        const double a = lambda * (1.0 + g) * head.betas[i];
        if (!gamma.empty()) gamma[i] = g;
        if (!alpha.empty()) alpha[i] = a;
        for (size_t j = 0; j < d; ++j) delta[j] += a * v[j];
    }
}

std::vector<double> dress_delta(const head_subspace & head, std::span<const double> u, double lambda) {
    std::vector<double> out(head.basis.cols);
    dress_delta(head, u, lambda, out);
    return out;
}

std::vector<double> dress_fixed_delta(const head_subspace & head, double lambda) {
    std::vector<double> out(head.basis.cols, 0.0);
    for (size_t i = 0; i < head.rank(); ++i) {
        const double a = lambda * head.betas[i];
        auto v = head.basis.row(i);
        for (size_t j = 0; j < out.size(); ++j) out[j] += a * v[j];
    }
    return out;
}

std::vector<double> iti_delta(std::span<const double> theta, double s, double lambda) {
    const double n = norm2(theta);
    if (!(n > 0.0)) throw invariant_error("iti_delta: zero probe direction");
    std::vector<double> out(theta.size());
    for (size_t j = 0; j < out.size(); ++j) out[j] = lambda * s * theta[j] / n;
    return out;
}

std::vector<double> repe_delta(const repe_entry & e, double lambda) {
    std::vector<double> out(e.v1.size());
    // same association as dress_fixed_delta with K = 1: (lambda beta) v
    const double a = lambda * e.beta1;
    for (size_t j = 0; j < out.size(); ++j) out[j] = 0.0 + a * e.v1[j];
    return out;
}

std::vector<double> mean_centring_delta(std::span<const double> layer_diff, double lambda) {
    std::vector<double> out(layer_diff.size());
    for (size_t j = 0; j < out.size(); ++j) out[j] = lambda * layer_diff[j];
    return out;
}

std::string trace_csv(const std::vector<trace_row> & rows) {
    std::ostringstream os;
    os.precision(17);
    os << "token_index,layer,head,i,gamma,alpha,delta_norm\n";
    for (const auto & r : rows) {
        os << r.token_index << ',' << r.layer << ',' << r.head << ',' << r.i << ',' << r.gamma << ',' << r.alpha << ','
           << r.delta_norm << '\n';
    }
    return os.str();
}

steering_callback::steering_callback(steer_config config, const style_artifact & artifact)
    : config_(std::move(config)), artifact_(artifact) {
    config_.validate();
    const size_t total = size_t(artifact.n_layers) * artifact.n_heads;
    head_at_.assign(total, nullptr);
    for (const auto & e : artifact.heads) head_at_[size_t(e.subspace.hook.layer) * artifact.n_heads + e.subspace.hook.head] = &e;
    layer_on_.assign(artifact.n_layers, false);
    if (config_.method == steer_method::mean_centring || config_.method == steer_method::repe) {
        auto layers = config_.layers.empty() ? default_layers(artifact.n_layers) : config_.layers;
        if (layers.empty()) throw config_error("steer.layers is empty");
        for (uint32_t l : layers) {
            if (l >= artifact.n_layers) throw config_error("steer.layers: layer " + std::to_string(l) + " out of range");
            layer_on_[l] = true;
        }
        if (config_.method == steer_method::repe && artifact.repe.size() != total) {
            throw data_error("artifact lacks the RepE table");
        }
        if (config_.method == steer_method::mean_centring && artifact.layer_mean_diff.size() != artifact.n_layers) {
            throw data_error("artifact lacks layer-level mean differences");
        }
    }
    gamma_.resize(artifact.rank);
    alpha_.resize(artifact.rank);
}

bool steering_callback::wants(hook_point hook) const {
    if (hook.layer >= artifact_.n_layers || hook.head >= artifact_.n_heads || config_.lambda == 0.0) return false;
    switch (config_.method) {
        case steer_method::dress:
        case steer_method::dress_fixed:
        case steer_method::iti: return head_at_[size_t(hook.layer) * artifact_.n_heads + hook.head] != nullptr;
        case steer_method::repe: return layer_on_[hook.layer];
        default: return false;
    }
}

bool steering_callback::head_delta(hook_point hook, uint32_t position, std::span<const double> u, std::span<double> delta) {
    if (!wants(hook)) return false;
    const artifact_head * e = head_at_[size_t(hook.layer) * artifact_.n_heads + hook.head];
    const double lam = config_.lambda;
    std::vector<double> tmp;
    switch (config_.method) {
        case steer_method::dress:
            dress_delta(e->subspace, u, lam, delta, gamma_, alpha_, config_.force_gamma_zero);
            break;
        case steer_method::dress_fixed:
            tmp = dress_fixed_delta(e->subspace, lam);
            for (size_t i = 0; i < e->subspace.rank(); ++i) {
                gamma_[i] = 0.0;
                alpha_[i] = lam * e->subspace.betas[i];
            }
            break;
        case steer_method::iti:
            if (norm2(e->probe.weights) == 0.0) return false;
            tmp = iti_delta(e->probe.weights, e->iti_scale, lam);
            break;
        case steer_method::repe: tmp = repe_delta(artifact_.repe_at(hook), lam); break;
        default: return false;
    }
    if (!tmp.empty()) std::copy(tmp.begin(), tmp.end(), delta.begin());
    if (config_.trace) {
        const double dn = norm2(delta);
        const uint32_t t = position - std::min(position, origin_);
        if (config_.method == steer_method::dress || config_.method == steer_method::dress_fixed) {
            for (uint32_t i = 0; i < e->subspace.rank(); ++i) trace_.push_back({t, hook.layer, hook.head, i, gamma_[i], alpha_[i], dn});
        } else {
            trace_.push_back({t, hook.layer, hook.head, 0, 0.0, lam, dn});
        }
    }
    return true;
}

bool steering_callback::block_delta(uint32_t layer, uint32_t /*position*/, std::span<double> delta) {
    if (config_.method != steer_method::mean_centring || config_.lambda == 0.0 || layer >= layer_on_.size() || !layer_on_[layer]) {
        return false;
    }
    auto d = mean_centring_delta(artifact_.layer_mean_diff[layer], config_.lambda);
    std::copy(d.begin(), d.end(), delta.begin());
    return true;
}

std::unique_ptr<steering_callback> make_callback(const steer_config & config, const style_artifact & artifact,
                                                 const model_bundle & bundle) {
    if (artifact.model_hash != bundle.hash()) {
        throw model_error("artifact was built for model " + to_hex(artifact.model_hash) + ", loaded model is " + bundle.hash_hex());
    }
    const auto & cfg = bundle.config();
    if (artifact.n_layers != cfg.n_layers || artifact.n_heads != cfg.n_heads || artifact.head_dim != cfg.head_dim) {
        throw model_error("artifact shape does not match the model");
    }
    return std::make_unique<steering_callback>(config, artifact);
}

}  // namespace dress

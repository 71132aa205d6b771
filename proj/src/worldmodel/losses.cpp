// SPDX-License-Identifier: Apache-2.0
#include "worldmodel.hpp"

#include <cmath>

namespace wmmon::worldmodel {

namespace {
constexpr double kLn2Pi = 1.8378770664093453;
}

int curriculum_horizon(int epoch, int epochs_per_stage, int max_horizon) {
    if (epoch < 1 || epochs_per_stage < 1 || max_horizon < 1)
        throw_invalid("curriculum_horizon: arguments must be positive");
    const int stage = (epoch - 1) / epochs_per_stage;
    int h = 1;
    for (int i = 0; i < stage && h < max_horizon; ++i) h *= 2;
    return std::min(h, max_horizon);
}

double mse_value(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size()) throw_invalid("mse_value: size mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const double d = double(a.data[i]) - double(b.data[i]);
        acc += d * d;
    }
    return acc / double(a.size());
}

double loss_recon(const std::vector<const Tensor*>& true_views,
                  const std::vector<const Tensor*>& pred_views,
                  const std::vector<float>& true_proprio,
                  const std::vector<float>& pred_proprio) {
    if (true_views.empty() || true_views.size() != pred_views.size())
        throw_invalid("loss_recon: view count mismatch");
    if (true_proprio.size() != pred_proprio.size())
        throw_invalid("loss_recon: proprio dimension mismatch");
    double view_sum = 0.0;
    for (size_t i = 0; i < true_views.size(); ++i)
        view_sum += mse_value(*true_views[i], *pred_views[i]);
    view_sum /= double(true_views.size());
    double prop = 0.0;
    for (size_t i = 0; i < true_proprio.size(); ++i) {
        const double d = double(true_proprio[i]) - double(pred_proprio[i]);
        prop += d * d;
    }
    prop /= double(true_proprio.size());
    return view_sum + 0.5 * prop;
}

double loss_latent_recon(const Tensor& z_true, const Tensor& z_pred) {
    if (!z_true.same_shape(z_pred)) throw_invalid("loss_latent_recon: shape mismatch");
    return mse_value(z_true, z_pred);
}

double loss_kl(const GaussianLatent& g) {
    if (!g.mu.same_shape(g.sigma)) throw_invalid("loss_kl: mu/sigma shape mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < g.mu.data.size(); ++i) {
        const double mu = double(g.mu.data[i]);
        const double s = double(g.sigma.data[i]);
        acc += 0.5 * (s * s + mu * mu - 1.0 - 2.0 * std::log(s));
    }
    return acc / double(g.mu.size());
}

double loss_nll(const Tensor& z_true, const GaussianLatent& g, bool entropy_variant) {
    if (!z_true.same_shape(g.mu)) throw_invalid("loss_nll: shape mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < g.mu.data.size(); ++i) {
        const double s = double(g.sigma.data[i]);
        if (entropy_variant) {
            acc += 0.5 * (kLn2Pi + 1.0 + 2.0 * std::log(s));
        } else {
            const double r = (double(z_true.data[i]) - double(g.mu.data[i])) / s;
            acc += 0.5 * (r * r + kLn2Pi + 2.0 * std::log(s));
        }
    }
    return acc / double(g.mu.size());
}

double total_loss(double recon, double zrecon, double kl, double nll, const WmConfig& cfg) {
    return double(cfg.w_recon) * recon + double(cfg.w_zrecon) * zrecon + double(cfg.w_kl) * kl +
           double(cfg.w_nll) * nll;
}

Tensor sample_latent(const GaussianLatent& g, nnkit::Rng& rng) {
    if (!g.mu.same_shape(g.sigma)) throw_invalid("sample_latent: shape mismatch");
    Tensor z = g.mu;
    for (size_t i = 0; i < z.data.size(); ++i)
        z.data[i] += g.sigma.data[i] * float(rng.normal());
    return z;
}

Tensor pooled_token(const Tensor& latent) {
    if (latent.shape.size() != 3) throw_invalid("pooled_token: latent must be rank 3");
    const int cells = latent.shape[0] * latent.shape[1];
    const int z = latent.shape[2];
    Tensor out = Tensor::zeros({z});
    for (int c = 0; c < cells; ++c)
        for (int k = 0; k < z; ++k) out.data[size_t(k)] += latent.data[size_t(c * z + k)];
    for (float& v : out.data) v /= float(cells);
    return out;
}

nnkit::json WmConfig::to_json() const {
    nnkit::json j;
    j["history"] = history;
    j["model_dim"] = model_dim;
    j["layers"] = layers;
    j["heads"] = heads;
    j["proprio_dim"] = proprio_dim;
    j["action_dim"] = action_dim;
    j["epochs_per_stage"] = epochs_per_stage;
    j["max_horizon"] = max_horizon;
    j["w_recon"] = w_recon;
    j["w_zrecon"] = w_zrecon;
    j["w_kl"] = w_kl;
    j["w_nll"] = w_nll;
    j["lr"] = lr;
    j["batch_size"] = batch_size;
    j["batches_per_epoch"] = batches_per_epoch;
    j["val_windows"] = val_windows;
    j["patience"] = patience;
    j["max_epochs"] = max_epochs;
    j["nll_entropy_variant"] = nll_entropy_variant;
    j["seed"] = seed;
    return j;
}

WmConfig WmConfig::from_json(const nnkit::json& j) {
    WmConfig c;
    c.history = j.value("history", c.history);
    c.model_dim = j.value("model_dim", c.model_dim);
    c.layers = j.value("layers", c.layers);
    c.heads = j.value("heads", c.heads);
    c.proprio_dim = j.value("proprio_dim", c.proprio_dim);
    c.action_dim = j.value("action_dim", c.action_dim);
    c.epochs_per_stage = j.value("epochs_per_stage", c.epochs_per_stage);
    c.max_horizon = j.value("max_horizon", c.max_horizon);
    c.w_recon = j.value("w_recon", c.w_recon);
    c.w_zrecon = j.value("w_zrecon", c.w_zrecon);
    c.w_kl = j.value("w_kl", c.w_kl);
    c.w_nll = j.value("w_nll", c.w_nll);
    c.lr = j.value("lr", c.lr);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.batches_per_epoch = j.value("batches_per_epoch", c.batches_per_epoch);
    c.val_windows = j.value("val_windows", c.val_windows);
    c.patience = j.value("patience", c.patience);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.nll_entropy_variant = j.value("nll_entropy_variant", c.nll_entropy_variant);
    c.seed = j.value("seed", c.seed);
    if (c.history < 1 || c.model_dim < 1 || c.layers < 1 || c.heads < 1)
        throw_invalid("world model config: non-positive architecture field");
    if (c.model_dim % c.heads != 0) throw_invalid("world model config: model_dim % heads != 0");
    if (c.w_recon <= 0 || c.w_zrecon <= 0 || c.w_kl <= 0 || c.w_nll <= 0)
        throw_invalid("world model config: loss weights must be positive");
    int h = 1;
    bool reachable = false;
    for (int i = 0; i < 31; ++i) {
        if (h == c.max_horizon) reachable = true;
        h *= 2;
    }
    if (!reachable) throw_invalid("world model config: max_horizon must be a power of 2");
    return c;
}

} // namespace wmmon::worldmodel

// SPDX-License-Identifier: Apache-2.0
#include "wm_graph.hpp"

#include <cmath>

namespace wmmon::worldmodel {

using namespace nnkit;

nnkit::ParamSet init_wm_params(const WmConfig& cfg, const tokenizer::Tokenizer& tok) {
    const int D = cfg.model_dim;
    const int z = tok.config().latent_dim;
    const int Z = tok.latent_size();
    const int T = 3 * cfg.history;
    Rng rng(mix_seed(cfg.seed, 0x776d6974ULL));
    ParamSet p;
    auto lin = [&](const std::string& name, int in, int out, float gain = 1.0f) {
        p.add(name + "_w", Tensor::randn({in, out}, rng, gain / std::sqrt(float(in))));
        p.add(name + "_b", Tensor::zeros({out}));
    };
    lin("embed_vis", z, D);
    lin("embed_prop", cfg.proprio_dim, D);
    lin("embed_act", cfg.action_dim, D);
    p.add("pos_emb", Tensor::randn({T, D}, rng, 0.02f));
    for (int l = 0; l < cfg.layers; ++l) {
        const std::string pre = "layer" + std::to_string(l) + "_";
        lin(pre + "qkv", D, 3 * D);
        lin(pre + "proj", D, D, 0.5f);
        p.add(pre + "ln1_g", Tensor::full({D}, 1.0f));
        p.add(pre + "ln1_b", Tensor::zeros({D}));
        p.add(pre + "ln2_g", Tensor::full({D}, 1.0f));
        p.add(pre + "ln2_b", Tensor::zeros({D}));
        lin(pre + "mlp1", D, 4 * D);
        lin(pre + "mlp2", 4 * D, D, 0.5f);
    }
    p.add("lnf_g", Tensor::full({D}, 1.0f));
    p.add("lnf_b", Tensor::zeros({D}));
    lin("head_mu", D, Z, 0.5f);
    lin("head_sigma", D, Z, 0.1f);
    lin("head_prop", D, cfg.proprio_dim);
    return p;
}

WmGraph::WmGraph(const WmConfig& cfg, const ParamSet& params, bool trainable,
                 const tokenizer::Tokenizer& tok)
    : cfg_(cfg), tok_(tok) {
    for (const auto& [name, t] : params.tensors)
        pv_[name] = trainable ? g_.param(t) : g_.input(t);
    enc_w_ = g_.input(tok.params().at("enc_w"));
    enc_b_ = g_.input(tok.params().at("enc_b"));
    dec_w_ = g_.input(tok.params().at("dec_w"));
    dec_b_ = g_.input(tok.params().at("dec_b"));
    sigma_floor_ = g_.input(Tensor::scalar(kSigmaFloor));
    ln2pi_ = g_.input(Tensor::scalar(1.8378770664093453f));
    one_ = g_.input(Tensor::scalar(1.0f));
    zdim_ = tok.config().latent_dim;
    cells_ = tok.config().grid() * tok.config().grid();
    patch_dim_ = tok.config().patch_dim();
    latent_size_ = tok.latent_size();
}

Var WmGraph::pv(const std::string& name) const {
    auto it = pv_.find(name);
    if (it == pv_.end()) throw_invalid("world model parameter '" + name + "' missing");
    return it->second;
}

WmGraph::Heads WmGraph::forward(const std::vector<Var>& vis, const std::vector<Var>& prop,
                                const std::vector<Var>& act) {
    const int H = cfg_.history;
    if (int(vis.size()) != H || int(prop.size()) != H || int(act.size()) != H)
        throw_invalid("world model forward: expected H feature vars per stream");
    const int B = g_.value(vis[0]).shape[0];
    const int D = cfg_.model_dim;
    const int T = 3 * H;

    auto embed = [&](Var x, const std::string& name) {
        Var y = add(g_, matmul(g_, x, pv(name + "_w")), pv(name + "_b"));
        return reshape(g_, y, {B, 1, D});
    };
    std::vector<Var> tokens;
    tokens.reserve(size_t(T));
    for (int h = 0; h < H; ++h) {
        tokens.push_back(embed(vis[size_t(h)], "embed_vis"));
        tokens.push_back(embed(prop[size_t(h)], "embed_prop"));
        tokens.push_back(embed(act[size_t(h)], "embed_act"));
    }
    Var x = concat(g_, tokens, 1);       // [B,T,D]
    x = add(g_, x, pv("pos_emb"));       // suffix broadcast [T,D]

    for (int l = 0; l < cfg_.layers; ++l) {
        const std::string pre = "layer" + std::to_string(l) + "_";
        Var h1 = add(g_, mul(g_, layernorm_lastdim(g_, x), pv(pre + "ln1_g")), pv(pre + "ln1_b"));
        Var qkv = add(g_, matmul(g_, reshape(g_, h1, {B * T, D}), pv(pre + "qkv_w")),
                      pv(pre + "qkv_b"));
        qkv = reshape(g_, qkv, {B, T, 3 * D});
        Var q = slice(g_, qkv, 2, 0, D);
        Var k = slice(g_, qkv, 2, D, D);
        Var v = slice(g_, qkv, 2, 2 * D, D);
        Var at = sdpa_causal(g_, q, k, v, cfg_.heads);
        at = add(g_, matmul(g_, reshape(g_, at, {B * T, D}), pv(pre + "proj_w")),
                 pv(pre + "proj_b"));
        x = add(g_, x, reshape(g_, at, {B, T, D}));
        Var h2 = add(g_, mul(g_, layernorm_lastdim(g_, x), pv(pre + "ln2_g")), pv(pre + "ln2_b"));
        Var m = add(g_, matmul(g_, reshape(g_, h2, {B * T, D}), pv(pre + "mlp1_w")),
                    pv(pre + "mlp1_b"));
        m = vtanh(g_, m);
        m = add(g_, matmul(g_, m, pv(pre + "mlp2_w")), pv(pre + "mlp2_b"));
        x = add(g_, x, reshape(g_, m, {B, T, D}));
    }
    Var xf = add(g_, mul(g_, layernorm_lastdim(g_, x), pv("lnf_g")), pv("lnf_b"));
    Var last = reshape(g_, slice(g_, xf, 1, T - 1, 1), {B, D});

    Heads out;
    out.mu = add(g_, matmul(g_, last, pv("head_mu_w")), pv("head_mu_b"));
    Var raw = add(g_, matmul(g_, last, pv("head_sigma_w")), pv("head_sigma_b"));
    out.sigma = add(g_, softplus(g_, raw), sigma_floor_);
    out.prop = add(g_, matmul(g_, last, pv("head_prop_w")), pv("head_prop_b"));
    return out;
}

Var WmGraph::decode_patches(Var z) {
    const int B = g_.value(z).shape[0];
    Var r = reshape(g_, z, {B * cells_, zdim_});
    Var y = add(g_, matmul(g_, r, dec_w_), dec_b_);
    y = clamp01(g_, y);
    return reshape(g_, y, {B, cells_ * patch_dim_});
}

Var WmGraph::encode_pool(Var patches) {
    const int B = g_.value(patches).shape[0];
    Var r = reshape(g_, patches, {B * cells_, patch_dim_});
    Var e = add(g_, matmul(g_, r, enc_w_), enc_b_);
    e = reshape(g_, e, {B, cells_, zdim_});
    return mean_axis(g_, e, 1);
}

std::vector<WmGraph::StepOut> WmGraph::rollout(std::vector<Var> vis, std::vector<Var> prop,
                                               std::vector<Var> act,
                                               const std::vector<Var>& future_actions,
                                               const std::vector<Tensor>& eps) {
    const int K = int(eps.size());
    if (int(future_actions.size()) < K - 1)
        throw_invalid("world model rollout: needs K-1 teacher actions");
    std::vector<StepOut> steps;
    steps.reserve(size_t(K));
    for (int j = 0; j < K; ++j) {
        StepOut so;
        so.heads = forward(vis, prop, act);
        so.z_samp = reparam_sample(g_, so.heads.mu, so.heads.sigma, eps[size_t(j)]);
        so.patches_pred = decode_patches(so.z_samp);
        if (j + 1 < K) {
            Var pooled = encode_pool(so.patches_pred);
            vis.erase(vis.begin());
            vis.push_back(pooled);
            prop.erase(prop.begin());
            prop.push_back(so.heads.prop);
            act.erase(act.begin());
            act.push_back(future_actions[size_t(j)]);
        }
        steps.push_back(so);
    }
    return steps;
}

WmGraph::LossVars WmGraph::step_loss(const StepOut& out, Var patches_true, Var z_true,
                                     Var prop_true) {
    LossVars lv;
    lv.recon = add(g_, mse(g_, patches_true, out.patches_pred),
                   scale(g_, mse(g_, prop_true, out.heads.prop), 0.5f));
    lv.zrecon = mse(g_, z_true, out.z_samp);
    Var ls = vlog(g_, out.heads.sigma);
    {
        Var t = add(g_, square(g_, out.heads.sigma), square(g_, out.heads.mu));
        t = sub(g_, t, one_);
        t = sub(g_, t, scale(g_, ls, 2.0f));
        lv.kl = scale(g_, mean_all(g_, t), 0.5f);
    }
    if (cfg_.nll_entropy_variant) {
        Var t = add(g_, scale(g_, ls, 2.0f), scalar_const(1.8378770664093453f + 1.0f));
        lv.nll = scale(g_, mean_all(g_, t), 0.5f);
    } else {
        Var diff = sub(g_, z_true, out.heads.mu);
        Var inv = vexp(g_, scale(g_, ls, -1.0f));
        Var r = mul(g_, diff, inv);
        Var t = add(g_, square(g_, r), scale(g_, ls, 2.0f));
        t = add(g_, t, ln2pi_);
        lv.nll = scale(g_, mean_all(g_, t), 0.5f);
    }
    lv.total = add(g_, add(g_, scale(g_, lv.recon, cfg_.w_recon), scale(g_, lv.zrecon, cfg_.w_zrecon)),
                   add(g_, scale(g_, lv.kl, cfg_.w_kl), scale(g_, lv.nll, cfg_.w_nll)));
    return lv;
}

nnkit::ParamSet WmGraph::grads() {
    ParamSet out;
    for (const auto& [name, var] : pv_) out.add(name, g_.grad(var));
    return out;
}

// ---- WorldModel ----

WorldModel WorldModel::init(WmConfig cfg, const tokenizer::Tokenizer& tok) {
    return WorldModel(cfg, init_wm_params(cfg, tok));
}

WindowFeatures WorldModel::features_of(const trajkit::HistoryWindow& window,
                                       const tokenizer::Tokenizer& tok) const {
    const int H = cfg_.history;
    if (window.length != H) throw_invalid("window length does not match configured history");
    const int z = tok.config().latent_dim;
    WindowFeatures f;
    f.vis = Tensor::zeros({H, z});
    f.prop = Tensor::zeros({H, cfg_.proprio_dim});
    f.act = Tensor::zeros({H, cfg_.action_dim});
    for (int h = 0; h < H; ++h) {
        const Tensor pooled = pooled_token(tok.encode(window.state(h).image));
        std::copy(pooled.data.begin(), pooled.data.end(), f.vis.data.begin() + size_t(h) * z);
        const auto& prop = window.state(h).proprio;
        if (int(prop.size()) != cfg_.proprio_dim) throw_invalid("proprio dimension mismatch");
        std::copy(prop.begin(), prop.end(), f.prop.data.begin() + size_t(h) * cfg_.proprio_dim);
        const auto& act = window.action(h).delta;
        if (int(act.size()) != cfg_.action_dim) throw_invalid("action dimension mismatch");
        std::copy(act.begin(), act.end(), f.act.data.begin() + size_t(h) * cfg_.action_dim);
    }
    return f;
}

namespace {

// Splits [H, dim] features into H single-row input vars.
std::vector<Var> rows_as_vars(nnkit::Graph& g, const Tensor& m) {
    const int H = m.shape[0], dim = m.shape[1];
    std::vector<Var> out;
    out.reserve(size_t(H));
    for (int h = 0; h < H; ++h) {
        Tensor row = Tensor::zeros({1, dim});
        std::copy(m.data.begin() + size_t(h) * dim, m.data.begin() + size_t(h + 1) * dim,
                  row.data.begin());
        out.push_back(g.input(std::move(row)));
    }
    return out;
}

GaussianLatent shape_latent(const Tensor& mu_row, const Tensor& sigma_row,
                            const std::vector<int>& latent_shape) {
    GaussianLatent gl;
    gl.mu = Tensor(latent_shape, mu_row.data);
    gl.sigma = Tensor(latent_shape, sigma_row.data);
    return gl;
}

} // namespace

Prediction WorldModel::forward(const WindowFeatures& feats, const tokenizer::Tokenizer& tok) const {
    WmGraph wg(cfg_, params_, /*trainable=*/false, tok);
    nnkit::Graph& g = wg.graph();
    auto heads = wg.forward(rows_as_vars(g, feats.vis), rows_as_vars(g, feats.prop),
                            rows_as_vars(g, feats.act));
    Prediction p;
    p.latent = shape_latent(g.value(heads.mu), g.value(heads.sigma), tok.latent_shape());
    if (!p.latent.mu.all_finite() || !p.latent.sigma.all_finite())
        throw_numeric("world model forward produced non-finite activations");
    const Tensor& prop = g.value(heads.prop);
    p.proprio.assign(prop.data.begin(), prop.data.end());
    return p;
}

Prediction WorldModel::forward(const trajkit::HistoryWindow& window,
                               const tokenizer::Tokenizer& tok) const {
    return forward(features_of(window, tok), tok);
}

std::vector<Prediction> WorldModel::rollout_autoregressive(
    const trajkit::HistoryWindow& window, int horizon,
    const std::vector<trajkit::Action>& actions, const tokenizer::Tokenizer& tok,
    nnkit::Rng& rng) const {
    if (horizon < 1) throw_invalid("rollout: horizon must be >= 1");
    if (horizon > cfg_.max_horizon) throw_invalid("rollout: horizon exceeds configured maximum");
    if (int(actions.size()) < horizon - 1) throw_invalid("rollout: not enough teacher actions");

    const WindowFeatures feats = features_of(window, tok);
    WmGraph wg(cfg_, params_, /*trainable=*/false, tok);
    nnkit::Graph& g = wg.graph();

    std::vector<Var> future;
    for (int j = 0; j + 1 < horizon; ++j) {
        Tensor a = Tensor::zeros({1, cfg_.action_dim});
        for (int i = 0; i < cfg_.action_dim; ++i) a.data[size_t(i)] = actions[size_t(j)].delta[size_t(i)];
        future.push_back(g.input(std::move(a)));
    }
    std::vector<Tensor> eps;
    for (int j = 0; j < horizon; ++j) {
        Tensor e = Tensor::zeros({1, tok.latent_size()});
        for (float& v : e.data) v = float(rng.normal());
        eps.push_back(std::move(e));
    }
    auto steps = wg.rollout(rows_as_vars(g, feats.vis), rows_as_vars(g, feats.prop),
                            rows_as_vars(g, feats.act), future, eps);
    std::vector<Prediction> out;
    for (const auto& so : steps) {
        Prediction p;
        p.latent = shape_latent(g.value(so.heads.mu), g.value(so.heads.sigma), tok.latent_shape());
        const Tensor& prop = g.value(so.heads.prop);
        p.proprio.assign(prop.data.begin(), prop.data.end());
        out.push_back(std::move(p));
    }
    return out;
}

void WorldModel::save(const std::filesystem::path& path) const {
    nnkit::json meta;
    meta["kind"] = "worldmodel";
    meta["config"] = cfg_.to_json();
    nnkit::save_checkpoint(params_, meta, path);
}

WorldModel WorldModel::load(const std::filesystem::path& path) {
    auto [params, meta] = nnkit::load_checkpoint(path);
    if (meta.value("kind", "") != std::string("worldmodel"))
        throw_format("checkpoint is not a world model: " + path.string());
    return WorldModel(WmConfig::from_json(meta.at("config")), std::move(params));
}

} // namespace wmmon::worldmodel

// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <ostream>

#include "wm_graph.hpp"

namespace wmmon::worldmodel {

using namespace nnkit;

namespace {

// Per-trajectory caches so training touches the tokenizer once per frame.
struct PreppedTraj {
    Tensor vis;     // [T, z]   pooled visual tokens
    Tensor latents; // [T, Z]   flattened latent maps (targets)
    Tensor patches; // [T, cells*patch_dim]  images in patch layout
    Tensor prop;    // [T, p]
    Tensor act;     // [T, d]
    int T = 0;
};

PreppedTraj prep_trajectory(const trajkit::Trajectory& traj, const WmConfig& cfg,
                            const tokenizer::Tokenizer& tok) {
    PreppedTraj pt;
    pt.T = traj.length();
    const int z = tok.config().latent_dim;
    const int Z = tok.latent_size();
    const int pd = tok.config().grid() * tok.config().grid() * tok.config().patch_dim();
    pt.vis = Tensor::zeros({pt.T, z});
    pt.latents = Tensor::zeros({pt.T, Z});
    pt.patches = Tensor::zeros({pt.T, pd});
    pt.prop = Tensor::zeros({pt.T, cfg.proprio_dim});
    pt.act = Tensor::zeros({pt.T, cfg.action_dim});
    for (int t = 0; t < pt.T; ++t) {
        const Tensor latent = tok.encode(traj.states[size_t(t)].image);
        std::copy(latent.data.begin(), latent.data.end(),
                  pt.latents.data.begin() + size_t(t) * Z);
        const Tensor pooled = pooled_token(latent);
        std::copy(pooled.data.begin(), pooled.data.end(), pt.vis.data.begin() + size_t(t) * z);
        const Tensor patches = tokenizer::image_to_patches(traj.states[size_t(t)].image, tok.config());
        std::copy(patches.data.begin(), patches.data.end(),
                  pt.patches.data.begin() + size_t(t) * pd);
        for (int i = 0; i < cfg.proprio_dim; ++i)
            pt.prop.data[size_t(t * cfg.proprio_dim + i)] = traj.states[size_t(t)].proprio[size_t(i)];
        for (int i = 0; i < cfg.action_dim; ++i)
            pt.act.data[size_t(t * cfg.action_dim + i)] = traj.actions[size_t(t)].delta[size_t(i)];
    }
    return pt;
}

struct WindowRef {
    int traj;
    int start;
};

std::vector<WindowRef> eligible_windows(const std::vector<PreppedTraj>& data, int H, int K) {
    std::vector<WindowRef> refs;
    for (int ti = 0; ti < int(data.size()); ++ti) {
        const int maxk = data[size_t(ti)].T - H - K;
        for (int k = 0; k <= maxk; ++k) refs.push_back({ti, k});
    }
    return refs;
}

// Gathers rows [start..start+count) of each selected trajectory field into
// one [B, dim] tensor per offset.
Tensor gather_rows(const std::vector<PreppedTraj>& data, const std::vector<WindowRef>& batch,
                   Tensor PreppedTraj::* field, int row_offset) {
    const Tensor& probe = data[size_t(batch[0].traj)].*field;
    const int dim = probe.shape[1];
    Tensor out = Tensor::zeros({int(batch.size()), dim});
    for (size_t b = 0; b < batch.size(); ++b) {
        const Tensor& src = data[size_t(batch[b].traj)].*field;
        const int row = batch[b].start + row_offset;
        std::copy(src.data.begin() + size_t(row) * dim, src.data.begin() + size_t(row + 1) * dim,
                  out.data.begin() + b * size_t(dim));
    }
    return out;
}

struct BatchLoss {
    double value = 0.0;
    ParamSet grads;
};

// Builds the K-step curriculum loss for one batch of windows and optionally
// runs backward. eps noise is drawn from `noise`.
BatchLoss run_batch(const std::vector<PreppedTraj>& data, const std::vector<WindowRef>& batch,
                    const WmConfig& cfg, const tokenizer::Tokenizer& tok, int K, Rng& noise,
                    bool with_grads, const ParamSet& params) {
    const int H = cfg.history;
    const int B = int(batch.size());
    const int Z = tok.latent_size();

    WmGraph wg(cfg, params, with_grads, tok);
    Graph& g = wg.graph();

    std::vector<Var> vis, prop, act;
    for (int h = 0; h < H; ++h) {
        vis.push_back(g.input(gather_rows(data, batch, &PreppedTraj::vis, h)));
        prop.push_back(g.input(gather_rows(data, batch, &PreppedTraj::prop, h)));
        act.push_back(g.input(gather_rows(data, batch, &PreppedTraj::act, h)));
    }
    std::vector<Var> future;
    for (int j = 0; j + 1 < K; ++j)
        future.push_back(g.input(gather_rows(data, batch, &PreppedTraj::act, H + j)));
    std::vector<Tensor> eps;
    for (int j = 0; j < K; ++j) {
        Tensor e = Tensor::zeros({B, Z});
        for (float& v : e.data) v = float(noise.normal());
        eps.push_back(std::move(e));
    }

    auto steps = wg.rollout(vis, prop, act, future, eps);
    Var total{};
    for (int j = 0; j < K; ++j) {
        Var pt = g.input(gather_rows(data, batch, &PreppedTraj::patches, H + j));
        Var zt = g.input(gather_rows(data, batch, &PreppedTraj::latents, H + j));
        Var prt = g.input(gather_rows(data, batch, &PreppedTraj::prop, H + j));
        auto lv = wg.step_loss(steps[size_t(j)], pt, zt, prt);
        total = (j == 0) ? lv.total : add(g, total, lv.total);
    }
    Var loss = scale(g, total, 1.0f / float(K));

    BatchLoss out;
    out.value = g.scalar(loss);
    if (!std::isfinite(out.value)) throw_numeric("world model loss is non-finite");
    if (with_grads) {
        g.backward(loss);
        out.grads = wg.grads();
        for (const auto& [name, t] : out.grads.tensors)
            if (!t.all_finite()) throw_numeric("non-finite gradient in '" + name + "'");
    }
    return out;
}

std::vector<PreppedTraj> prep_set(const std::vector<trajkit::Trajectory>& trajs,
                                  const WmConfig& cfg, const tokenizer::Tokenizer& tok,
                                  const char* which) {
    if (trajs.empty()) throw_invalid(std::string("train_wm: empty ") + which + " set");
    std::vector<PreppedTraj> out;
    out.reserve(trajs.size());
    for (const auto& t : trajs) {
        if (t.label != trajkit::Label::Nominal)
            throw_invalid("train_wm: trajectory '" + t.id + "' is not nominal; training is nominal-only");
        out.push_back(prep_trajectory(t, cfg, tok));
    }
    return out;
}

} // namespace

WorldModel train_wm(const std::vector<trajkit::Trajectory>& train_set,
                    const std::vector<trajkit::Trajectory>& val_set, const WmConfig& cfg,
                    const tokenizer::Tokenizer& tok, TrainLog* log, std::ostream* progress) {
    if (!tok.frozen()) throw_state("train_wm: tokenizer must be frozen");
    const std::vector<PreppedTraj> train_data = prep_set(train_set, cfg, tok, "train");
    const std::vector<PreppedTraj> val_data = prep_set(val_set, cfg, tok, "validation");

    WorldModel model = WorldModel::init(cfg, tok);
    if (log) log->param_count = model.param_count();
    if (progress)
        (*progress) << "world model parameters: " << model.param_count() << "\n";

    AdamState opt;
    opt.lr = cfg.lr;
    Rng pick_rng(mix_seed(cfg.seed, 0x7069636bULL));
    Rng noise_rng(mix_seed(cfg.seed, 0x6e6f6973ULL));

    int final_stage_epoch = 1;
    {
        int h = 1;
        int stage = 0;
        while (h < cfg.max_horizon) {
            h *= 2;
            ++stage;
        }
        final_stage_epoch = stage * cfg.epochs_per_stage + 1;
    }

    double best_val = std::numeric_limits<double>::infinity();
    ParamSet best_params = model.params();
    int best_epoch = 0;
    int since_improve = 0;
    int cur_K = 0;
    std::vector<WindowRef> train_refs, val_refs;

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        const int K = curriculum_horizon(epoch, cfg.epochs_per_stage, cfg.max_horizon);
        if (K != cur_K) {
            cur_K = K;
            train_refs = eligible_windows(train_data, cfg.history, K);
            if (train_refs.empty()) throw_invalid("train_wm: no training windows at current horizon");
            val_refs = eligible_windows(val_data, cfg.history, K);
            if (val_refs.empty()) throw_invalid("train_wm: no validation windows at current horizon");
            Rng vr(mix_seed(cfg.seed, 0x76616cULL + uint64_t(K)));
            vr.shuffle(val_refs);
            if (int(val_refs.size()) > cfg.val_windows) val_refs.resize(size_t(cfg.val_windows));
        }
        const int samples = std::max(1, cfg.batch_size / K);

        double train_sum = 0.0;
        for (int b = 0; b < cfg.batches_per_epoch; ++b) {
            std::vector<WindowRef> batch;
            for (int s = 0; s < samples; ++s)
                batch.push_back(train_refs[pick_rng.uniform_int(train_refs.size())]);
            BatchLoss bl = run_batch(train_data, batch, cfg, tok, K, noise_rng, true,
                                     model.params());
            adam_step(model.mutable_params(), bl.grads, opt);
            train_sum += bl.value;
        }
        const double train_loss = train_sum / cfg.batches_per_epoch;

        Rng val_noise(mix_seed(cfg.seed, 0xe9500ULL + uint64_t(epoch)));
        double val_sum = 0.0;
        int val_batches = 0;
        const int vb = std::max(1, 16 / std::max(1, K / 2)); // batch size for validation
        for (size_t off = 0; off < val_refs.size(); off += size_t(vb)) {
            std::vector<WindowRef> batch(val_refs.begin() + long(off),
                                          val_refs.begin() +
                                              long(std::min(off + size_t(vb), val_refs.size())));
            BatchLoss bl =
                run_batch(val_data, batch, cfg, tok, K, val_noise, false, model.params());
            val_sum += bl.value * double(batch.size());
            val_batches += int(batch.size());
        }
        const double val_loss = val_sum / val_batches;

        if (log) {
            log->horizon_per_epoch.push_back(K);
            log->train_loss.push_back(train_loss);
            log->val_loss.push_back(val_loss);
        }
        if (progress)
            (*progress) << "epoch " << epoch << " horizon " << K << " train " << train_loss
                        << " val " << val_loss << "\n";

        if (epoch >= final_stage_epoch) {
            if (val_loss < best_val) {
                best_val = val_loss;
                best_params = model.params();
                best_epoch = epoch;
                since_improve = 0;
            } else {
                ++since_improve;
                if (since_improve >= cfg.patience) break;
            }
        } else {
            // before the final stage, keep the latest params as the fallback
            best_params = model.params();
            best_epoch = epoch;
        }
    }

    if (log) log->best_epoch = best_epoch;
    return WorldModel(cfg, std::move(best_params));
}

nnkit::Objective make_loss_objective(const std::vector<trajkit::Trajectory>& trajs,
                                     const WmConfig& cfg, const tokenizer::Tokenizer& tok,
                                     int batch, int horizon, uint64_t seed) {
    auto data = std::make_shared<std::vector<PreppedTraj>>(prep_set(trajs, cfg, tok, "objective"));
    auto refs = eligible_windows(*data, cfg.history, horizon);
    if (refs.empty()) throw_invalid("loss objective: no eligible windows");
    Rng rng(mix_seed(seed, 0x6f626aULL));
    auto chosen = std::make_shared<std::vector<WindowRef>>();
    for (int b = 0; b < batch; ++b) chosen->push_back(refs[rng.uniform_int(refs.size())]);
    // freeze the sampling noise so the objective is deterministic
    const uint64_t noise_seed = mix_seed(seed, 0x657073ULL);
    WmConfig cfg_copy = cfg;
    const tokenizer::Tokenizer* tokp = &tok;
    return [data, chosen, cfg_copy, tokp, horizon, noise_seed](const ParamSet& params,
                                                               ParamSet* grads_out) {
        Rng noise(noise_seed);
        BatchLoss bl =
            run_batch(*data, *chosen, cfg_copy, *tokp, horizon, noise, grads_out != nullptr, params);
        if (grads_out) *grads_out = std::move(bl.grads);
        return bl.value;
    };
}

} // namespace wmmon::worldmodel

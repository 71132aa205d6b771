// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>

#include "../nnkit/checkpoint.hpp"
#include "../nnkit/gradcheck.hpp"
#include "../nnkit/graph.hpp"
#include "../nnkit/optimizer.hpp"
#include "../tokenizer/tokenizer.hpp"
#include "../trajkit/trajkit.hpp"

namespace wmmon::worldmodel {

using nnkit::Tensor;
using nnkit::Var;

constexpr float kSigmaFloor = 1e-4f;

// Per-element Gaussian over the latent feature map.
struct GaussianLatent {
    Tensor mu;    // [gx, gy, z]
    Tensor sigma; // same shape, strictly positive
};

struct WmConfig {
    int history = 8;
    int model_dim = 32;
    int layers = 2;
    int heads = 2;
    int proprio_dim = 2;
    int action_dim = 2;
    int epochs_per_stage = 16;
    int max_horizon = 32;
    float w_recon = 0.1f;
    float w_zrecon = 2.0f;
    float w_kl = 0.05f;
    float w_nll = 1.0f;
    float lr = 1e-3f;
    int batch_size = 8;
    int batches_per_epoch = 16;
    int val_windows = 48;
    int patience = 8;
    int max_epochs = 112;
    bool nll_entropy_variant = false;
    uint64_t seed = 0;

    nnkit::json to_json() const;
    static WmConfig from_json(const nnkit::json& j);
};

// Horizon for a 1-based epoch index: starts at 1, doubles every
// epochs_per_stage epochs, capped at max_horizon.
int curriculum_horizon(int epoch, int epochs_per_stage, int max_horizon);

// ---- loss terms (value-path; the training graph mirrors these exactly) ----

double mse_value(const Tensor& a, const Tensor& b);

// (1/N_views) sum of per-view pixel MSE plus half the proprio MSE.
double loss_recon(const std::vector<const Tensor*>& true_views,
                  const std::vector<const Tensor*>& pred_views,
                  const std::vector<float>& true_proprio,
                  const std::vector<float>& pred_proprio);

double loss_latent_recon(const Tensor& z_true, const Tensor& z_pred);
double loss_kl(const GaussianLatent& g);
double loss_nll(const Tensor& z_true, const GaussianLatent& g, bool entropy_variant = false);
double total_loss(double recon, double zrecon, double kl, double nll, const WmConfig& cfg);

Tensor sample_latent(const GaussianLatent& g, nnkit::Rng& rng);

// Pooled visual token: mean over the latent map's spatial cells -> [z].
Tensor pooled_token(const Tensor& latent);

// Per-timestep inputs for one window, oldest timestep first.
struct WindowFeatures {
    Tensor vis;  // [H, z]  pooled visual tokens
    Tensor prop; // [H, p]
    Tensor act;  // [H, d]
};

struct Prediction {
    GaussianLatent latent;
    std::vector<float> proprio;
};

class WorldModel {
public:
    WorldModel(WmConfig cfg, nnkit::ParamSet params) : cfg_(cfg), params_(std::move(params)) {}

    static WorldModel init(WmConfig cfg, const tokenizer::Tokenizer& tok);

    const WmConfig& config() const { return cfg_; }
    const nnkit::ParamSet& params() const { return params_; }
    nnkit::ParamSet& mutable_params() { return params_; }
    int64_t param_count() const { return params_.total_elements(); }

    Prediction forward(const WindowFeatures& feats, const tokenizer::Tokenizer& tok) const;
    Prediction forward(const trajkit::HistoryWindow& window, const tokenizer::Tokenizer& tok) const;

    // Autoregressive rollout that feeds its own sampled predictions back into
    // the window; actions are teacher-provided and must cover horizon-1 steps.
    std::vector<Prediction> rollout_autoregressive(const trajkit::HistoryWindow& window,
                                                   int horizon,
                                                   const std::vector<trajkit::Action>& actions,
                                                   const tokenizer::Tokenizer& tok,
                                                   nnkit::Rng& rng) const;

    void save(const std::filesystem::path& path) const;
    static WorldModel load(const std::filesystem::path& path);

    WindowFeatures features_of(const trajkit::HistoryWindow& window,
                               const tokenizer::Tokenizer& tok) const;

private:
    WmConfig cfg_;
    nnkit::ParamSet params_;
};

struct TrainLog {
    std::vector<int> horizon_per_epoch;
    std::vector<double> train_loss;
    std::vector<double> val_loss;
    int best_epoch = 0;
    int64_t param_count = 0;
};

// Curriculum training on nominal-only trajectories; throws if any trajectory
// is failure-labeled or the set is empty. Deterministic given cfg.seed.
WorldModel train_wm(const std::vector<trajkit::Trajectory>& train_set,
                    const std::vector<trajkit::Trajectory>& val_set, const WmConfig& cfg,
                    const tokenizer::Tokenizer& tok, TrainLog* log = nullptr,
                    std::ostream* progress = nullptr);

// Scalar objective over a small batch of windows; used by the gradient check.
nnkit::Objective make_loss_objective(const std::vector<trajkit::Trajectory>& trajs,
                                     const WmConfig& cfg, const tokenizer::Tokenizer& tok,
                                     int batch, int horizon, uint64_t seed);

} // namespace wmmon::worldmodel

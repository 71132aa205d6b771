// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "worldmodel.hpp"

namespace wmmon::worldmodel {

// Builds the world-model computation on a tape. Parameters are bound either
// as trainable leaves or as constants; tokenizer weights are always constants.
class WmGraph {
public:
    WmGraph(const WmConfig& cfg, const nnkit::ParamSet& params, bool trainable,
            const tokenizer::Tokenizer& tok);

    nnkit::Graph& graph() { return g_; }
    Var pv(const std::string& name) const;

    struct Heads {
        Var mu, sigma, prop; // [B,Z], [B,Z], [B,p]
    };

    // vis/prop/act: H vars of [B,z], [B,p], [B,d], oldest first.
    Heads forward(const std::vector<Var>& vis, const std::vector<Var>& prop,
                  const std::vector<Var>& act);

    Var decode_patches(Var z);  // [B,Z] -> [B, cells*patch_dim], clamped
    Var encode_pool(Var patches); // [B, cells*patch_dim] -> [B, z]

    struct StepOut {
        Heads heads;
        Var z_samp;        // [B,Z]
        Var patches_pred;  // [B, cells*patch_dim]
    };

    // K-step autoregressive chain. future_actions supplies the K-1 teacher
    // actions shifted in after each prediction; eps supplies one noise tensor
    // per step.
    std::vector<StepOut> rollout(std::vector<Var> vis, std::vector<Var> prop,
                                 std::vector<Var> act, const std::vector<Var>& future_actions,
                                 const std::vector<nnkit::Tensor>& eps);

    struct LossVars {
        Var recon, zrecon, kl, nll, total;
    };

    // Loss of one prediction step against ground truth (all [B,*] inputs).
    LossVars step_loss(const StepOut& out, Var patches_true, Var z_true, Var prop_true);

    Var scalar_const(float v) { return g_.input(nnkit::Tensor::scalar(v)); }

    // Reads the accumulated parameter gradients back out after backward().
    nnkit::ParamSet grads();

private:
    const WmConfig& cfg_;
    const tokenizer::Tokenizer& tok_;
    nnkit::Graph g_;
    std::map<std::string, Var> pv_;
    Var enc_w_, enc_b_, dec_w_, dec_b_;
    Var sigma_floor_, ln2pi_, one_;
    int latent_size_;
    int cells_, patch_dim_, zdim_;
};

// Parameter initialization for a fresh model.
nnkit::ParamSet init_wm_params(const WmConfig& cfg, const tokenizer::Tokenizer& tok);

} // namespace wmmon::worldmodel

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>

#include "../nnkit/checkpoint.hpp"
#include "../nnkit/graph.hpp"

namespace wmmon::tokenizer {

using nnkit::Tensor;

struct TokenizerConfig {
    int image_size = 32;
    int channels = 3;
    int patch = 4;      // patch edge in pixels
    int latent_dim = 8; // embedding dims per patch cell
    int steps = 1500;
    int batch = 128;
    float lr = 3e-3f;
    uint64_t seed = 1;

    int grid() const { return image_size / patch; }
    int patch_dim() const { return patch * patch * channels; }
};

// Frozen linear patch autoencoder standing in for a pretrained vision encoder.
class Tokenizer {
public:
    Tokenizer(TokenizerConfig cfg, nnkit::ParamSet params, bool frozen)
        : cfg_(cfg), params_(std::move(params)), frozen_(frozen) {}

    const TokenizerConfig& config() const { return cfg_; }
    const nnkit::ParamSet& params() const { return params_; }
    bool frozen() const { return frozen_; }
    uint64_t checksum() const { return params_.checksum(); }

    // [image_size, image_size, channels] -> [grid, grid, latent_dim]
    Tensor encode(const Tensor& image) const;
    // [grid, grid, latent_dim] -> image clamped to [0,1]
    Tensor decode(const Tensor& latent) const;

    std::vector<int> latent_shape() const { return {cfg_.grid(), cfg_.grid(), cfg_.latent_dim}; }
    int latent_size() const { return cfg_.grid() * cfg_.grid() * cfg_.latent_dim; }

    void save(const std::filesystem::path& path) const;
    static Tokenizer load(const std::filesystem::path& path);

private:
    TokenizerConfig cfg_;
    nnkit::ParamSet params_;
    bool frozen_ = false;

    void require_frozen() const {
        if (!frozen_) throw_state("tokenizer is not frozen");
    }
};

// Trains on pixel MSE over patches of the given frames and returns a frozen
// tokenizer. Deterministic given cfg.seed. Requires at least 1000 frames.
Tokenizer train_tokenizer(const std::vector<const Tensor*>& frames, const TokenizerConfig& cfg);

// Rearranges an image into per-patch rows: [grid*grid, patch_dim].
Tensor image_to_patches(const Tensor& image, const TokenizerConfig& cfg);
Tensor patches_to_image(const Tensor& patches, const TokenizerConfig& cfg, bool clamp);

} // namespace wmmon::tokenizer

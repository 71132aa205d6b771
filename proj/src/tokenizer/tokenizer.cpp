// SPDX-License-Identifier: Apache-2.0
#include "tokenizer.hpp"

#include "../nnkit/optimizer.hpp"

namespace wmmon::tokenizer {

Tensor image_to_patches(const Tensor& image, const TokenizerConfig& cfg) {
    const int S = cfg.image_size, C = cfg.channels, P = cfg.patch, G = cfg.grid();
    if (image.shape != std::vector<int>{S, S, C}) throw_invalid("image shape mismatch");
    Tensor out = Tensor::zeros({G * G, cfg.patch_dim()});
    for (int pi = 0; pi < G; ++pi)
        for (int pj = 0; pj < G; ++pj) {
            float* dst = out.data.data() + size_t(pi * G + pj) * cfg.patch_dim();
            for (int r = 0; r < P; ++r)
                for (int c = 0; c < P; ++c)
                    for (int ch = 0; ch < C; ++ch)
                        *dst++ = image.data[size_t(((pi * P + r) * S + (pj * P + c)) * C + ch)];
        }
    return out;
}

Tensor patches_to_image(const Tensor& patches, const TokenizerConfig& cfg, bool clamp) {
    const int S = cfg.image_size, C = cfg.channels, P = cfg.patch, G = cfg.grid();
    if (patches.shape != std::vector<int>{G * G, cfg.patch_dim()})
        throw_invalid("patch matrix shape mismatch");
    Tensor img = Tensor::zeros({S, S, C});
    for (int pi = 0; pi < G; ++pi)
        for (int pj = 0; pj < G; ++pj) {
            const float* src = patches.data.data() + size_t(pi * G + pj) * cfg.patch_dim();
            for (int r = 0; r < P; ++r)
                for (int c = 0; c < P; ++c)
                    for (int ch = 0; ch < C; ++ch) {
                        float v = *src++;
                        if (clamp) v = std::min(1.0f, std::max(0.0f, v));
                        img.data[size_t(((pi * P + r) * S + (pj * P + c)) * C + ch)] = v;
                    }
        }
    return img;
}

Tensor Tokenizer::encode(const Tensor& image) const {
    require_frozen();
    const int G = cfg_.grid(), Z = cfg_.latent_dim, D = cfg_.patch_dim();
    const Tensor patches = image_to_patches(image, cfg_);
    const Tensor& w = params_.at("enc_w"); // [D, Z]
    const Tensor& b = params_.at("enc_b"); // [Z]
    Tensor latent = Tensor::zeros({G, G, Z});
    for (int cell = 0; cell < G * G; ++cell) {
        const float* x = patches.data.data() + size_t(cell) * D;
        float* y = latent.data.data() + size_t(cell) * Z;
        for (int z = 0; z < Z; ++z) y[z] = b.data[size_t(z)];
        for (int d = 0; d < D; ++d) {
            const float xv = x[d];
            const float* wr = w.data.data() + size_t(d) * Z;
            for (int z = 0; z < Z; ++z) y[z] += xv * wr[z];
        }
    }
    return latent;
}

Tensor Tokenizer::decode(const Tensor& latent) const {
    require_frozen();
    const int G = cfg_.grid(), Z = cfg_.latent_dim, D = cfg_.patch_dim();
    if (latent.shape != latent_shape()) throw_invalid("latent shape mismatch");
    const Tensor& w = params_.at("dec_w"); // [Z, D]
    const Tensor& b = params_.at("dec_b"); // [D]
    Tensor patches = Tensor::zeros({G * G, D});
    for (int cell = 0; cell < G * G; ++cell) {
        const float* z = latent.data.data() + size_t(cell) * Z;
        float* y = patches.data.data() + size_t(cell) * D;
        for (int d = 0; d < D; ++d) y[d] = b.data[size_t(d)];
        for (int k = 0; k < Z; ++k) {
            const float zv = z[k];
            const float* wr = w.data.data() + size_t(k) * D;
            for (int d = 0; d < D; ++d) y[d] += zv * wr[d];
        }
    }
    return patches_to_image(patches, cfg_, /*clamp=*/true);
}

Tokenizer train_tokenizer(const std::vector<const Tensor*>& frames, const TokenizerConfig& cfg) {
    if (frames.size() < 1000) throw_invalid("train_tokenizer: needs at least 1000 frames");
    const int D = cfg.patch_dim(), Z = cfg.latent_dim, G = cfg.grid();

    nnkit::Rng rng(nnkit::mix_seed(cfg.seed, 0x746f6bULL));
    nnkit::ParamSet params;
    params.add("enc_w", Tensor::randn({D, Z}, rng, 1.0f / std::sqrt(float(D))));
    params.add("enc_b", Tensor::zeros({Z}));
    params.add("dec_w", Tensor::randn({Z, D}, rng, 1.0f / std::sqrt(float(Z))));
    params.add("dec_b", Tensor::zeros({D}));

    nnkit::AdamState opt;
    opt.lr = cfg.lr;
    const int n_frames = int(frames.size());
    for (int step_i = 0; step_i < cfg.steps; ++step_i) {
        Tensor batch = Tensor::zeros({cfg.batch, D});
        for (int b = 0; b < cfg.batch; ++b) {
            const Tensor& img = *frames[rng.uniform_int(uint64_t(n_frames))];
            const int pi = int(rng.uniform_int(uint64_t(G)));
            const int pj = int(rng.uniform_int(uint64_t(G)));
            const int P = cfg.patch, S = cfg.image_size, C = cfg.channels;
            float* dst = batch.data.data() + size_t(b) * D;
            for (int r = 0; r < P; ++r)
                for (int c = 0; c < P; ++c)
                    for (int ch = 0; ch < C; ++ch)
                        *dst++ = img.data[size_t(((pi * P + r) * S + (pj * P + c)) * C + ch)];
        }
        nnkit::Graph g;
        nnkit::Var x = g.input(batch);
        nnkit::Var ew = g.param(params.at("enc_w"));
        nnkit::Var eb = g.param(params.at("enc_b"));
        nnkit::Var dw = g.param(params.at("dec_w"));
        nnkit::Var db = g.param(params.at("dec_b"));
        nnkit::Var z = nnkit::add(g, nnkit::matmul(g, x, ew), eb);
        nnkit::Var y = nnkit::add(g, nnkit::matmul(g, z, dw), db);
        nnkit::Var loss = nnkit::mse(g, y, x);
        g.backward(loss);
        nnkit::ParamSet grads;
        grads.add("enc_w", g.grad(ew));
        grads.add("enc_b", g.grad(eb));
        grads.add("dec_w", g.grad(dw));
        grads.add("dec_b", g.grad(db));
        nnkit::adam_step(params, grads, opt);
    }
    return Tokenizer(cfg, std::move(params), /*frozen=*/true);
}

void Tokenizer::save(const std::filesystem::path& path) const {
    nnkit::json meta;
    meta["kind"] = "tokenizer";
    meta["latent_shape"] = latent_shape();
    meta["patch"] = cfg_.patch;
    meta["image_size"] = cfg_.image_size;
    meta["channels"] = cfg_.channels;
    meta["seed"] = cfg_.seed;
    nnkit::save_checkpoint(params_, meta, path);
}

Tokenizer Tokenizer::load(const std::filesystem::path& path) {
    auto [params, meta] = nnkit::load_checkpoint(path);
    if (meta.value("kind", "") != std::string("tokenizer"))
        throw_format("checkpoint is not a tokenizer: " + path.string());
    TokenizerConfig cfg;
    cfg.patch = meta.value("patch", cfg.patch);
    cfg.image_size = meta.value("image_size", cfg.image_size);
    cfg.channels = meta.value("channels", cfg.channels);
    cfg.seed = meta.value("seed", cfg.seed);
    const auto ls = meta.value("latent_shape", std::vector<int>{8, 8, 8});
    cfg.latent_dim = ls.size() == 3 ? ls[2] : 8;
    return Tokenizer(cfg, std::move(params), /*frozen=*/true);
}

} // namespace wmmon::tokenizer

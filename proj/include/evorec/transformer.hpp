#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "evorec/common.hpp"
#include "evorec/kernels.hpp"
#include "evorec/tensor.hpp"

// Decoder-only transformer over a token vocabulary, with optional low-rank
// adapters on selected projections. Pre-norm residual blocks, learned
// positional embeddings, output projection tied to the token embedding.
// Forward and backward are written out by hand; the backward pass is checked
// against central finite differences in the test suite.

namespace evorec {

enum LoraTarget : uint32_t {
    kLoraQuery = 1u,
    kLoraValue = 2u,
    kLoraMlpIn = 4u,
    kLoraMlpOut = 8u,
};

uint32_t parse_lora_targets(const std::string& csv);      // "q,v,mlp_in,mlp_out"
std::string lora_targets_to_string(uint32_t mask);

struct CoreConfig {
    int vocab_size = 0;
    int d_model = 0;
    int n_heads = 0;
    int n_layers = 0;
    int d_ff = 0;
    int max_pos = 0;  // maximum token positions (sequence incl. specials)
    int lora_rank = 0;
    uint32_t lora_targets = kLoraQuery | kLoraValue;
    uint64_t seed = 0;

    void validate(int min_layers) const {
        if (vocab_size < 2) throw UsageError("vocab_size must be >= 2");
        if (n_layers < min_layers)
            throw UsageError("n_layers must be >= " + std::to_string(min_layers));
        if (n_heads < 1 || d_model % n_heads != 0)
            throw UsageError("d_model must be divisible by n_heads");
        if (d_ff < 1 || max_pos < 2) throw UsageError("bad d_ff/max_pos");
        if (lora_rank < 0) throw UsageError("lora_rank must be >= 0");
        if (lora_rank > 0 && (lora_rank >= d_model || lora_rank >= d_ff))
            throw UsageError("lora_rank must be < min(d_model, d_ff)");
    }
};

template <typename T>
class TransformerCore {
public:
    struct LayerIdx {
        int ln1g, ln1b, wq, wk, wv, wo, ln2g, ln2b, win, wout;
        // adapter tensor indices, -1 when the target is not adapted
        int aq = -1, bq = -1, av = -1, bv = -1, ai = -1, bi = -1, ao = -1, bo = -1;
    };

    explicit TransformerCore(const CoreConfig& cfg) : cfg_(cfg) {
        const int d = cfg.d_model, f = cfg.d_ff, r = cfg.lora_rank;
        wte_ = add_idx("wte", {cfg.vocab_size, d});
        wpe_ = add_idx("wpe", {cfg.max_pos, d});
        layers_.resize(cfg.n_layers);
        for (int l = 0; l < cfg.n_layers; ++l) {
            std::string p = "layer" + std::to_string(l) + ".";
            LayerIdx& ix = layers_[l];
            ix.ln1g = add_idx(p + "ln1.g", {d});
            ix.ln1b = add_idx(p + "ln1.b", {d});
            ix.wq = add_idx(p + "attn.wq", {d, d});
            ix.wk = add_idx(p + "attn.wk", {d, d});
            ix.wv = add_idx(p + "attn.wv", {d, d});
            ix.wo = add_idx(p + "attn.wo", {d, d});
            ix.ln2g = add_idx(p + "ln2.g", {d});
            ix.ln2b = add_idx(p + "ln2.b", {d});
            ix.win = add_idx(p + "mlp.w_in", {f, d});
            ix.wout = add_idx(p + "mlp.w_out", {d, f});
        }
        lnfg_ = add_idx("ln_f.g", {d});
        lnfb_ = add_idx("ln_f.b", {d});
        n_base_tensors_ = store_.count();
        if (r > 0) {
            for (int l = 0; l < cfg.n_layers; ++l) {
                std::string p = "layer" + std::to_string(l) + ".lora.";
                LayerIdx& ix = layers_[l];
                if (cfg.lora_targets & kLoraQuery) {
                    ix.aq = add_idx(p + "q.A", {r, d});
                    ix.bq = add_idx(p + "q.B", {d, r});
                }
                if (cfg.lora_targets & kLoraValue) {
                    ix.av = add_idx(p + "v.A", {r, d});
                    ix.bv = add_idx(p + "v.B", {d, r});
                }
                if (cfg.lora_targets & kLoraMlpIn) {
                    ix.ai = add_idx(p + "mlp_in.A", {r, d});
                    ix.bi = add_idx(p + "mlp_in.B", {f, r});
                }
                if (cfg.lora_targets & kLoraMlpOut) {
                    ix.ao = add_idx(p + "mlp_out.A", {r, f});
                    ix.bo = add_idx(p + "mlp_out.B", {d, r});
                }
            }
        }
        init_weights();
    }

    const CoreConfig& config() const { return cfg_; }
    TensorStore<T>& params() { return store_; }
    const TensorStore<T>& params() const { return store_; }
    size_t base_tensor_count() const { return n_base_tensors_; }
    const LayerIdx& layer_idx(int l) const { return layers_[l]; }

    bool is_adapter_index(size_t i) const { return i >= n_base_tensors_; }

    void set_adapters_enabled(bool on) { adapters_on_ = on; }
    bool adapters_enabled() const { return adapters_on_; }

    // Trainability masks. Base and adapter groups are toggled separately;
    // evolution additionally narrows adapters to the located layers.
    void set_trainable(bool base, bool adapters) {
        for (size_t i = 0; i < store_.count(); ++i)
            store_[i].trainable = is_adapter_index(i) ? adapters : base;
    }
    void set_adapter_layer_trainable(int layer, bool on) {
        for (int i : {layers_[layer].aq, layers_[layer].bq, layers_[layer].av,
                      layers_[layer].bv, layers_[layer].ai, layers_[layer].bi,
                      layers_[layer].ao, layers_[layer].bo})
            if (i >= 0) store_[static_cast<size_t>(i)].trainable = on;
    }
    size_t adapter_params_per_layer() const {
        size_t n = 0;
        const LayerIdx& ix = layers_[0];
        for (int i : {ix.aq, ix.bq, ix.av, ix.bv, ix.ai, ix.bi, ix.ao, ix.bo})
            if (i >= 0) n += store_[static_cast<size_t>(i)].size();
        return n;
    }
    size_t total_adapter_params() const {
        return adapter_params_per_layer() * static_cast<size_t>(cfg_.n_layers);
    }

    struct Cache {
        int n = 0;
        std::vector<int> tokens;
        std::vector<int> logit_positions;
        std::vector<std::vector<T>> xs;  // n_layers+1 buffers of [n*d]
        struct Layer {
            std::vector<T> a1, q, k, v, p, o, x_mid, a2, hff, g;
            std::vector<T> ln1_mean, ln1_rstd, ln2_mean, ln2_rstd;
            std::vector<T> uq, uv, ui, uo;
        };
        std::vector<Layer> layers;
        std::vector<T> xf, lnf_mean, lnf_rstd;
        std::vector<T> logits;  // [logit_positions.size() * vocab]
    };

    // Runs the causally-masked forward pass, producing logits only at the
    // requested positions. The cache keeps everything backward() needs.
    void forward(const std::vector<int>& tokens, const std::vector<int>& logit_positions,
                 Cache& c) const {
        const int n = static_cast<int>(tokens.size());
        const int d = cfg_.d_model, f = cfg_.d_ff, H = cfg_.n_heads, dh = d / H;
        if (n == 0) throw DataError("forward: empty token sequence");
        if (n > cfg_.max_pos)
            throw DataError("forward: sequence length " + std::to_string(n) +
                            " exceeds max positions " + std::to_string(cfg_.max_pos));
        for (int t : tokens)
            if (t < 0 || t >= cfg_.vocab_size)
                throw DataError("forward: token id out of vocabulary: " + std::to_string(t));
        for (int p : logit_positions)
            if (p < 0 || p >= n) throw DataError("forward: logit position out of range");

        c.n = n;
        c.tokens = tokens;
        c.logit_positions = logit_positions;
        c.xs.resize(static_cast<size_t>(cfg_.n_layers) + 1);
        c.layers.resize(static_cast<size_t>(cfg_.n_layers));

        const T* wte = store_[wte_].data.data();
        const T* wpe = store_[wpe_].data.data();
        auto& x0 = c.xs[0];
        x0.assign(static_cast<size_t>(n) * d, T(0));
        for (int i = 0; i < n; ++i) {
            const T* te = wte + static_cast<size_t>(tokens[i]) * d;
            const T* pe = wpe + static_cast<size_t>(i) * d;
            T* row = x0.data() + static_cast<size_t>(i) * d;
            for (int j = 0; j < d; ++j) row[j] = te[j] + pe[j];
        }

        const T scale = T(1) / std::sqrt(static_cast<T>(dh));
        for (int l = 0; l < cfg_.n_layers; ++l) {
            const LayerIdx& ix = layers_[l];
            auto& L = c.layers[l];
            const auto& x_in = c.xs[l];
            auto& x_out = c.xs[l + 1];
            x_out.assign(static_cast<size_t>(n) * d, T(0));

            layernorm_fwd(L.a1, L.ln1_mean, L.ln1_rstd, x_in, ix.ln1g, ix.ln1b, n, d);

            resize(L.q, n, d);
            resize(L.k, n, d);
            resize(L.v, n, d);
            kernels::gemm_nt(L.q.data(), L.a1.data(), store_[ix.wq].data.data(), n, d, d, false);
            kernels::gemm_nt(L.k.data(), L.a1.data(), store_[ix.wk].data.data(), n, d, d, false);
            kernels::gemm_nt(L.v.data(), L.a1.data(), store_[ix.wv].data.data(), n, d, d, false);
            lora_fwd(L.uq, L.q, L.a1, ix.aq, ix.bq, n, d);
            lora_fwd(L.uv, L.v, L.a1, ix.av, ix.bv, n, d);

            // causal attention, one head at a time
            L.p.assign(static_cast<size_t>(H) * n * n, T(0));
            resize(L.o, n, d);
            for (int h = 0; h < H; ++h) {
                const int off = h * dh;
                T* ph = L.p.data() + static_cast<size_t>(h) * n * n;
                for (int i = 0; i < n; ++i) {
                    const T* qi = L.q.data() + static_cast<size_t>(i) * d + off;
                    T* prow = ph + static_cast<size_t>(i) * n;
                    for (int j = 0; j <= i; ++j) {
                        prow[j] = kernels::dot(qi, L.k.data() + static_cast<size_t>(j) * d + off,
                                               dh) *
                                  scale;
                    }
                    kernels::softmax_inplace(prow, i + 1);
                    T* oi = L.o.data() + static_cast<size_t>(i) * d + off;
                    for (int j = 0; j < dh; ++j) oi[j] = T(0);
                    for (int j = 0; j <= i; ++j) {
                        kernels::axpy(prow[j], L.v.data() + static_cast<size_t>(j) * d + off, oi,
                                      dh);
                    }
                }
            }

            resize(L.x_mid, n, d);
            kernels::gemm_nt(L.x_mid.data(), L.o.data(), store_[ix.wo].data.data(), n, d, d,
                             false);
            for (size_t i = 0; i < L.x_mid.size(); ++i) L.x_mid[i] += x_in[i];

            layernorm_fwd(L.a2, L.ln2_mean, L.ln2_rstd, L.x_mid, ix.ln2g, ix.ln2b, n, d);

            resize(L.hff, n, f);
            kernels::gemm_nt(L.hff.data(), L.a2.data(), store_[ix.win].data.data(), n, f, d,
                             false);
            lora_fwd(L.ui, L.hff, L.a2, ix.ai, ix.bi, n, d);

            resize(L.g, n, f);
            for (size_t i = 0; i < L.g.size(); ++i) L.g[i] = gelu(L.hff[i]);

            kernels::gemm_nt(x_out.data(), L.g.data(), store_[ix.wout].data.data(), n, d, f,
                             false);
            lora_fwd(L.uo, x_out, L.g, ix.ao, ix.bo, n, f);
            for (size_t i = 0; i < x_out.size(); ++i) x_out[i] += L.x_mid[i];
        }

        layernorm_fwd(c.xf, c.lnf_mean, c.lnf_rstd, c.xs[cfg_.n_layers], lnfg_, lnfb_, n, d);

        const int npos = static_cast<int>(logit_positions.size());
        c.logits.assign(static_cast<size_t>(npos) * cfg_.vocab_size, T(0));
        for (int pi = 0; pi < npos; ++pi) {
            const T* row = c.xf.data() + static_cast<size_t>(logit_positions[pi]) * d;
            kernels::gemm_nt(c.logits.data() + static_cast<size_t>(pi) * cfg_.vocab_size, row,
                             wte, 1, cfg_.vocab_size, d, false);
        }
    }

    // dlogits is [logit_positions.size() x vocab]; gradients accumulate into
    // the store. Weight gradients are skipped for frozen tensors (their
    // buffers stay exactly zero); activation gradients always flow.
    void backward(const Cache& c, const std::vector<T>& dlogits) {
        const int n = c.n;
        const int d = cfg_.d_model, f = cfg_.d_ff, H = cfg_.n_heads, dh = d / H;
        const int V = cfg_.vocab_size;
        const int npos = static_cast<int>(c.logit_positions.size());
        const T scale = T(1) / std::sqrt(static_cast<T>(dh));

        Tensor<T>& wte = store_[wte_];
        Tensor<T>& wpe = store_[wpe_];

        // tied output projection
        std::vector<T> dxf(static_cast<size_t>(n) * d, T(0));
        for (int pi = 0; pi < npos; ++pi) {
            const int pos = c.logit_positions[pi];
            const T* dl = dlogits.data() + static_cast<size_t>(pi) * V;
            kernels::gemm_nn(dxf.data() + static_cast<size_t>(pos) * d, dl, wte.data.data(), 1, d,
                             V, true);
            if (wte.trainable) {
                const T* xrow = c.xf.data() + static_cast<size_t>(pos) * d;
                for (int t = 0; t < V; ++t) {
                    if (dl[t] != T(0))
                        kernels::axpy(dl[t], xrow, wte.grad.data() + static_cast<size_t>(t) * d,
                                      d);
                }
            }
        }

        std::vector<T> dx(static_cast<size_t>(n) * d, T(0));
        layernorm_bwd(dx, dxf, c.xs[cfg_.n_layers], c.lnf_mean, c.lnf_rstd, lnfg_, lnfb_, n, d);

        std::vector<T> dxmid(static_cast<size_t>(n) * d), da2(static_cast<size_t>(n) * d);
        std::vector<T> dg(static_cast<size_t>(n) * f), dhff(static_cast<size_t>(n) * f);
        std::vector<T> do_(static_cast<size_t>(n) * d), dq(static_cast<size_t>(n) * d);
        std::vector<T> dk(static_cast<size_t>(n) * d), dv(static_cast<size_t>(n) * d);
        std::vector<T> da1(static_cast<size_t>(n) * d), dxin(static_cast<size_t>(n) * d);

        for (int l = cfg_.n_layers - 1; l >= 0; --l) {
            const LayerIdx& ix = layers_[l];
            const auto& L = c.layers[l];
            const auto& x_in = c.xs[l];

            // x_out = x_mid + m;  dx currently holds d(x_out)
            std::fill(dxmid.begin(), dxmid.end(), T(0));
            for (size_t i = 0; i < dx.size(); ++i) dxmid[i] = dx[i];

            // m = g Wout^T (+ lora)
            if (store_[ix.wout].trainable)
                kernels::gemm_tn(store_[ix.wout].grad.data(), dx.data(), L.g.data(), d, f, n,
                                 true);
            kernels::gemm_nn(dg.data(), dx.data(), store_[ix.wout].data.data(), n, f, d, false);
            lora_bwd(dg, dx, L.uo, L.g, ix.ao, ix.bo, n, f);

            for (size_t i = 0; i < dhff.size(); ++i) dhff[i] = dg[i] * gelu_grad(L.hff[i]);

            if (store_[ix.win].trainable)
                kernels::gemm_tn(store_[ix.win].grad.data(), dhff.data(), L.a2.data(), f, d, n,
                                 true);
            kernels::gemm_nn(da2.data(), dhff.data(), store_[ix.win].data.data(), n, d, f, false);
            lora_bwd(da2, dhff, L.ui, L.a2, ix.ai, ix.bi, n, d);

            layernorm_bwd(dxmid, da2, L.x_mid, L.ln2_mean, L.ln2_rstd, ix.ln2g, ix.ln2b, n, d);

            // x_mid = x_in + y;  dxmid now complete
            for (size_t i = 0; i < dxin.size(); ++i) dxin[i] = dxmid[i];

            // y = o Wo^T
            if (store_[ix.wo].trainable)
                kernels::gemm_tn(store_[ix.wo].grad.data(), dxmid.data(), L.o.data(), d, d, n,
                                 true);
            kernels::gemm_nn(do_.data(), dxmid.data(), store_[ix.wo].data.data(), n, d, d, false);

            std::fill(dq.begin(), dq.end(), T(0));
            std::fill(dk.begin(), dk.end(), T(0));
            std::fill(dv.begin(), dv.end(), T(0));
            std::vector<T> dprow(static_cast<size_t>(n));
            for (int h = 0; h < H; ++h) {
                const int off = h * dh;
                const T* ph = L.p.data() + static_cast<size_t>(h) * n * n;
                for (int i = 0; i < n; ++i) {
                    const T* doi = do_.data() + static_cast<size_t>(i) * d + off;
                    const T* prow = ph + static_cast<size_t>(i) * n;
                    // dp and dv
                    for (int j = 0; j <= i; ++j) {
                        dprow[j] = kernels::dot(doi,
                                                L.v.data() + static_cast<size_t>(j) * d + off, dh);
                        kernels::axpy(prow[j], doi, dv.data() + static_cast<size_t>(j) * d + off,
                                      dh);
                    }
                    // softmax backward
                    T inner = T(0);
                    for (int j = 0; j <= i; ++j) inner += prow[j] * dprow[j];
                    const T* qi = L.q.data() + static_cast<size_t>(i) * d + off;
                    T* dqi = dq.data() + static_cast<size_t>(i) * d + off;
                    for (int j = 0; j <= i; ++j) {
                        T ds = prow[j] * (dprow[j] - inner) * scale;
                        kernels::axpy(ds, L.k.data() + static_cast<size_t>(j) * d + off, dqi, dh);
                        kernels::axpy(ds, qi, dk.data() + static_cast<size_t>(j) * d + off, dh);
                    }
                }
            }

            if (store_[ix.wq].trainable)
                kernels::gemm_tn(store_[ix.wq].grad.data(), dq.data(), L.a1.data(), d, d, n, true);
            if (store_[ix.wk].trainable)
                kernels::gemm_tn(store_[ix.wk].grad.data(), dk.data(), L.a1.data(), d, d, n, true);
            if (store_[ix.wv].trainable)
                kernels::gemm_tn(store_[ix.wv].grad.data(), dv.data(), L.a1.data(), d, d, n, true);
            kernels::gemm_nn(da1.data(), dq.data(), store_[ix.wq].data.data(), n, d, d, false);
            kernels::gemm_nn(da1.data(), dk.data(), store_[ix.wk].data.data(), n, d, d, true);
            kernels::gemm_nn(da1.data(), dv.data(), store_[ix.wv].data.data(), n, d, d, true);
            lora_bwd(da1, dq, L.uq, L.a1, ix.aq, ix.bq, n, d);
            lora_bwd(da1, dv, L.uv, L.a1, ix.av, ix.bv, n, d);

            layernorm_bwd(dxin, da1, x_in, L.ln1_mean, L.ln1_rstd, ix.ln1g, ix.ln1b, n, d);
            dx.swap(dxin);
        }

        // embeddings
        for (int i = 0; i < n; ++i) {
            const T* drow = dx.data() + static_cast<size_t>(i) * d;
            if (wte.trainable)
                kernels::axpy(T(1), drow,
                              wte.grad.data() + static_cast<size_t>(c.tokens[i]) * d, d);
            if (wpe.trainable)
                kernels::axpy(T(1), drow, wpe.grad.data() + static_cast<size_t>(i) * d, d);
        }
    }

private:
    int add_idx(const std::string& name, std::vector<int> shape) {
        store_.add(name, std::move(shape));
        return static_cast<int>(store_.count()) - 1;
    }

    void init_weights() {
        Rng rng(derive_seed(cfg_.seed, "init"));
        for (size_t i = 0; i < store_.count(); ++i) {
            Tensor<T>& t = store_[i];
            bool is_lora = is_adapter_index(i);
            bool is_b = is_lora && t.name.size() > 1 && t.name.substr(t.name.size() - 2) == ".B";
            bool is_gain = t.name.size() > 1 && t.name.substr(t.name.size() - 2) == ".g";
            bool is_bias = t.name.size() > 1 && t.name.substr(t.name.size() - 2) == ".b";
            if (is_gain) {
                for (auto& v : t.data) v = T(1);
            } else if (is_bias || is_b) {
                // zero (already)
            } else {
                T std = is_lora ? T(0.01) : T(0.02);
                for (auto& v : t.data) v = static_cast<T>(rng.next_normal()) * std;
            }
        }
    }

    static void resize(std::vector<T>& v, int n, int d) {
        v.assign(static_cast<size_t>(n) * d, T(0));
    }

    static T gelu(T x) {
        const T s = T(0.7978845608028654), cc = T(0.044715);
        return T(0.5) * x * (T(1) + std::tanh(s * (x + cc * x * x * x)));
    }
    static T gelu_grad(T x) {
        const T s = T(0.7978845608028654), cc = T(0.044715);
        T u = s * (x + cc * x * x * x);
        T th = std::tanh(u);
        return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * s * (T(1) + T(3) * cc * x * x);
    }

    void layernorm_fwd(std::vector<T>& out, std::vector<T>& means, std::vector<T>& rstds,
                       const std::vector<T>& x, int gi, int bi, int n, int d) const {
        out.assign(static_cast<size_t>(n) * d, T(0));
        means.assign(static_cast<size_t>(n), T(0));
        rstds.assign(static_cast<size_t>(n), T(0));
        const T* g = store_[gi].data.data();
        const T* b = store_[bi].data.data();
        for (int i = 0; i < n; ++i) {
            const T* row = x.data() + static_cast<size_t>(i) * d;
            T mu = 0;
            for (int j = 0; j < d; ++j) mu += row[j];
            mu /= static_cast<T>(d);
            T var = 0;
            for (int j = 0; j < d; ++j) {
                T c = row[j] - mu;
                var += c * c;
            }
            var /= static_cast<T>(d);
            T rstd = T(1) / std::sqrt(var + T(1e-5));
            means[i] = mu;
            rstds[i] = rstd;
            T* orow = out.data() + static_cast<size_t>(i) * d;
            for (int j = 0; j < d; ++j) orow[j] = g[j] * ((row[j] - mu) * rstd) + b[j];
        }
    }

    void layernorm_bwd(std::vector<T>& dxin, const std::vector<T>& dy, const std::vector<T>& x,
                       const std::vector<T>& means, const std::vector<T>& rstds, int gi, int bi,
                       int n, int d) {
        Tensor<T>& gt = store_[gi];
        Tensor<T>& bt = store_[bi];
        const T* g = gt.data.data();
        for (int i = 0; i < n; ++i) {
            const T* dyr = dy.data() + static_cast<size_t>(i) * d;
            const T* xr = x.data() + static_cast<size_t>(i) * d;
            T* dxr = dxin.data() + static_cast<size_t>(i) * d;
            const T mu = means[i], rstd = rstds[i];
            T mean_dxh = 0, mean_dxh_xh = 0;
            for (int j = 0; j < d; ++j) {
                T xh = (xr[j] - mu) * rstd;
                T dxh = dyr[j] * g[j];
                mean_dxh += dxh;
                mean_dxh_xh += dxh * xh;
            }
            mean_dxh /= static_cast<T>(d);
            mean_dxh_xh /= static_cast<T>(d);
            for (int j = 0; j < d; ++j) {
                T xh = (xr[j] - mu) * rstd;
                T dxh = dyr[j] * g[j];
                dxr[j] += rstd * (dxh - mean_dxh - xh * mean_dxh_xh);
                if (gt.trainable) gt.grad[j] += dyr[j] * xh;
                if (bt.trainable) bt.grad[j] += dyr[j];
            }
        }
    }

    // y[n,dout] += (x[n,din] A^T) B^T, caching u = x A^T for backward
    void lora_fwd(std::vector<T>& u, std::vector<T>& y, const std::vector<T>& x, int ai, int bi,
                  int n, int din) const {
        if (ai < 0 || !adapters_on_) return;
        const int r = cfg_.lora_rank;
        const int dout = store_[bi].shape[0];
        u.assign(static_cast<size_t>(n) * r, T(0));
        kernels::gemm_nt(u.data(), x.data(), store_[ai].data.data(), n, r, din, false);
        kernels::gemm_nt(y.data(), u.data(), store_[bi].data.data(), n, dout, r, true);
    }

    // given dy: dB += dy^T u; du = dy B; dA += du^T x; dx += du A
    void lora_bwd(std::vector<T>& dxacc, const std::vector<T>& dy, const std::vector<T>& u,
                  const std::vector<T>& x, int ai, int bi, int n, int din) {
        if (ai < 0 || !adapters_on_) return;
        const int r = cfg_.lora_rank;
        const int dout = store_[bi].shape[0];
        std::vector<T> du(static_cast<size_t>(n) * r, T(0));
        if (store_[bi].trainable)
            kernels::gemm_tn(store_[bi].grad.data(), dy.data(), u.data(), dout, r, n, true);
        kernels::gemm_nn(du.data(), dy.data(), store_[bi].data.data(), n, r, dout, false);
        if (store_[ai].trainable)
            kernels::gemm_tn(store_[ai].grad.data(), du.data(), x.data(), r, din, n, true);
        kernels::gemm_nn(dxacc.data(), du.data(), store_[ai].data.data(), n, din, r, true);
    }

    CoreConfig cfg_;
    TensorStore<T> store_;
    std::vector<LayerIdx> layers_;
    int wte_ = -1, wpe_ = -1, lnfg_ = -1, lnfb_ = -1;
    size_t n_base_tensors_ = 0;
    bool adapters_on_ = true;
};

}  // namespace evorec

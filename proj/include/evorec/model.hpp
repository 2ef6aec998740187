#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "evorec/common.hpp"
#include "evorec/data.hpp"
#include "evorec/tensor.hpp"
#include "evorec/transformer.hpp"

namespace evorec {

struct ModelConfig {
    int n_items = 0;
    int n_layers = 4;
    int d_model = 48;
    int n_heads = 4;
    int d_ff = 192;
    int max_seq_len = 50;
    int lora_rank = 4;
    uint32_t lora_targets = kLoraQuery | kLoraValue;
    uint64_t seed = 0;

    int vocab_size() const { return n_items + 3; }  // items + BOS/SEP/PAD
    int max_pos() const { return max_seq_len + 2; }

    CoreConfig core() const {
        CoreConfig c;
        c.vocab_size = vocab_size();
        c.d_model = d_model;
        c.n_heads = n_heads;
        c.n_layers = n_layers;
        c.d_ff = d_ff;
        c.max_pos = max_pos();
        c.lora_rank = lora_rank;
        c.lora_targets = lora_targets;
        c.seed = seed;
        return c;
    }

    void validate() const {
        if (n_items < 1) throw UsageError("model: n_items must be >= 1");
        core().validate(/*min_layers=*/2);
    }
};

template <typename T>
struct ForwardTraceT {
    int n = 0;
    std::vector<std::vector<T>> hidden;  // n_layers+1 entries of [n * d_model]
    std::vector<T> final_logits;         // [vocab]

    // last-token hidden state of a layer (1..L; 0 is the embedding output)
    const T* summary(int layer, int d_model) const {
        return hidden[layer].data() + static_cast<size_t>(n - 1) * d_model;
    }
};
using ForwardTrace = ForwardTraceT<float>;

// Decoder-only next-item recommender over the item-token vocabulary.
// The base transformer is trained once (pretraining); evolution strategies
// then enable the low-rank adapters and leave the base frozen.
template <typename T>
class RecModelT {
public:
    explicit RecModelT(const ModelConfig& mc) : mc_(mc), core_(mc.core()) {
        mc.validate();
        core_.set_adapters_enabled(false);
        core_.set_trainable(/*base=*/true, /*adapters=*/false);
    }

    const ModelConfig& config() const { return mc_; }
    TokenVocab vocab() const { return TokenVocab{mc_.n_items}; }
    TransformerCore<T>& core() { return core_; }
    const TransformerCore<T>& core() const { return core_; }
    TensorStore<T>& params() { return core_.params(); }
    const TensorStore<T>& params() const { return core_.params(); }

    // ---- forward passes -------------------------------------------------

    ForwardTraceT<T> forward_trace(const std::vector<int>& tokens) const {
        typename TransformerCore<T>::Cache cache;
        core_.forward(tokens, {static_cast<int>(tokens.size()) - 1}, cache);
        ForwardTraceT<T> tr;
        tr.n = cache.n;
        tr.hidden = cache.xs;
        tr.final_logits.assign(cache.logits.begin(),
                               cache.logits.begin() + core_.config().vocab_size);
        return tr;
    }
    ForwardTraceT<T> forward_trace(const EncodedInstance& inst) const {
        return forward_trace(inst.input_tokens);
    }

    // Candidates sorted by final-position logit, ties broken by item id.
    std::vector<int> score_candidates(const EncodedInstance& inst,
                                      const CandidateSet& cands) const {
        std::vector<T> logits = final_logits(inst.input_tokens);
        std::vector<int> ranked = cands.presented;
        std::sort(ranked.begin(), ranked.end(), [&](int a, int b) {
            if (logits[a] != logits[b]) return logits[a] > logits[b];
            return a < b;
        });
        return ranked;
    }

    std::vector<T> final_logits(const std::vector<int>& tokens) const {
        typename TransformerCore<T>::Cache cache;
        core_.forward(tokens, {static_cast<int>(tokens.size()) - 1}, cache);
        return cache.logits;
    }

    // Item-restricted probability distribution at the final position
    // (BOS/SEP/PAD masked out, renormalized over items).
    std::vector<T> item_distribution(const std::vector<int>& tokens) const {
        std::vector<T> logits = final_logits(tokens);
        logits.resize(mc_.n_items);
        kernels::softmax_inplace(logits.data(), mc_.n_items);
        return logits;
    }

    // ---- losses ----------------------------------------------------------

    // Sum of -log P(target) over the instance's supervised positions.
    // When scale > 0 also backpropagates scale * d(sum)/d(params).
    double nll_instance(const EncodedInstance& inst, double scale) {
        typename TransformerCore<T>::Cache cache;
        core_.forward(inst.input_tokens, inst.target_positions, cache);
        const int V = core_.config().vocab_size;
        const int npos = static_cast<int>(inst.target_positions.size());
        double loss = 0;
        std::vector<T> dlogits;
        if (scale > 0) dlogits.assign(static_cast<size_t>(npos) * V, T(0));
        std::vector<double> probs(static_cast<size_t>(V));
        for (int p = 0; p < npos; ++p) {
            const T* row = cache.logits.data() + static_cast<size_t>(p) * V;
            double mx = row[0];
            for (int v = 1; v < V; ++v) mx = std::max(mx, static_cast<double>(row[v]));
            double sum = 0;
            for (int v = 0; v < V; ++v) {
                probs[v] = std::exp(static_cast<double>(row[v]) - mx);
                sum += probs[v];
            }
            const int tgt = inst.target_tokens[p];
            loss += -(static_cast<double>(row[tgt]) - mx - std::log(sum));
            if (scale > 0) {
                T* drow = dlogits.data() + static_cast<size_t>(p) * V;
                for (int v = 0; v < V; ++v)
                    drow[v] = static_cast<T>(scale * (probs[v] / sum - (v == tgt ? 1.0 : 0.0)));
            }
        }
        if (scale > 0) core_.backward(cache, dlogits);
        return loss;
    }

    double nll_eval(const EncodedInstance& inst) const {
        return const_cast<RecModelT*>(this)->nll_instance(inst, 0.0);
    }

    // Mean NLL over all supervised positions in the batch; gradients of the
    // mean are accumulated into the (zeroed) store.
    double nll_loss(const std::vector<EncodedInstance>& batch) {
        if (batch.empty()) throw UsageError("nll_loss: empty batch");
        core_.params().zero_grads();
        size_t total = 0;
        for (const auto& b : batch) total += b.target_tokens.size();
        double sum = 0;
        for (const auto& b : batch) sum += nll_instance(b, 1.0 / static_cast<double>(total));
        return sum / static_cast<double>(total);
    }

    // ---- pretraining -----------------------------------------------------

    struct TrainLog {
        std::vector<double> epoch_loss;
    };

    // Trains base weights on pre-cutoff instances; adapters stay inert.
    TrainLog pretrain(const std::vector<EncodedInstance>& instances, int epochs, double lr,
                      int batch_size = 32,
                      const std::function<void(int, double)>& on_epoch = nullptr) {
        if (instances.empty()) throw DataError("pretrain: no instances");
        if (epochs < 0 || lr < 0) throw UsageError("pretrain: bad epochs/lr");
        core_.set_adapters_enabled(false);
        core_.set_trainable(/*base=*/true, /*adapters=*/false);
        Optimizer<T> opt(core_.params());
        TrainLog log;
        std::vector<size_t> order(instances.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (int e = 0; e < epochs; ++e) {
            Rng shuffle_rng(derive_seed(mc_.seed, "pretrain-epoch", static_cast<uint64_t>(e)));
            shuffle_rng.shuffle(order);
            double epoch_sum = 0;
            size_t epoch_targets = 0;
            for (size_t start = 0; start < order.size();
                 start += static_cast<size_t>(batch_size)) {
                size_t end = std::min(order.size(), start + static_cast<size_t>(batch_size));
                core_.params().zero_grads();
                size_t total = 0;
                for (size_t i = start; i < end; ++i)
                    total += instances[order[i]].target_tokens.size();
                for (size_t i = start; i < end; ++i) {
                    epoch_sum += nll_instance(instances[order[i]],
                                              1.0 / static_cast<double>(total));
                }
                epoch_targets += total;
                opt.step(lr);
            }
            double mean = epoch_sum / static_cast<double>(epoch_targets);
            if (!std::isfinite(mean))
                throw NumericError("pretrain: loss diverged (NaN/inf); lower the learning rate");
            log.epoch_loss.push_back(mean);
            if (on_epoch) on_epoch(e, mean);
        }
        return log;
    }

private:
    ModelConfig mc_;
    TransformerCore<T> core_;
};

using RecModel = RecModelT<float>;

}  // namespace evorec

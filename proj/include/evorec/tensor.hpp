#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "evorec/common.hpp"

namespace evorec {

// Named parameter tensor with a gradient buffer and a trainability flag.
// Frozen tensors keep an all-zero gradient and are never touched by the
// optimizer, so their bytes stay identical across steps.
template <typename T>
struct Tensor {
    std::string name;
    std::vector<int> shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool trainable = true;

    size_t size() const { return data.size(); }
};

template <typename T>
class TensorStore {
public:
    // Registration order defines the checkpoint manifest order.
    Tensor<T>& add(const std::string& name, std::vector<int> shape) {
        size_t n = 1;
        for (int d : shape) n *= static_cast<size_t>(d);
        tensors_.push_back(Tensor<T>{name, std::move(shape),
                                     std::vector<T>(n, T(0)), std::vector<T>(n, T(0)), true});
        return tensors_.back();
    }

    Tensor<T>& operator[](size_t i) { return tensors_[i]; }
    const Tensor<T>& operator[](size_t i) const { return tensors_[i]; }
    size_t count() const { return tensors_.size(); }

    Tensor<T>* find(const std::string& name) {
        for (auto& t : tensors_)
            if (t.name == name) return &t;
        return nullptr;
    }
    const Tensor<T>* find(const std::string& name) const {
        for (const auto& t : tensors_)
            if (t.name == name) return &t;
        return nullptr;
    }

    void zero_grads() {
        for (auto& t : tensors_)
            for (auto& g : t.grad) g = T(0);
    }

    size_t total_params() const {
        size_t n = 0;
        for (const auto& t : tensors_) n += t.size();
        return n;
    }

    size_t trainable_params() const {
        size_t n = 0;
        for (const auto& t : tensors_)
            if (t.trainable) n += t.size();
        return n;
    }

    uint64_t content_hash() const {
        uint64_t h = 0xcbf29ce484222325ULL;
        for (const auto& t : tensors_) {
            uint64_t th = fnv1a64(t.data.data(), t.data.size() * sizeof(T));
            h ^= th;
            h *= 0x100000001b3ULL;
        }
        return h;
    }

    auto begin() { return tensors_.begin(); }
    auto end() { return tensors_.end(); }
    auto begin() const { return tensors_.begin(); }
    auto end() const { return tensors_.end(); }

private:
    std::vector<Tensor<T>> tensors_;
};

// Momentum-free adaptive-moment update. For each trainable element:
//
//   v   <- beta2 * v + (1 - beta2) * g^2
//   v^  <- v / (1 - beta2^step)
//   p   <- p - lr * g / (sqrt(v^) + eps)
//
// beta2 = 0.999, eps = 1e-8, both fixed. Frozen tensors are skipped outright.
template <typename T>
class Optimizer {
public:
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEps = 1e-8;

    explicit Optimizer(TensorStore<T>& store) : store_(&store) {
        state_.resize(store.count());
        for (size_t i = 0; i < store.count(); ++i) state_[i].resize(store[i].size(), 0.0);
    }

    void step(double lr) {
        ++step_count_;
        double corr = 1.0 - std::pow(kBeta2, static_cast<double>(step_count_));
        for (size_t i = 0; i < store_->count(); ++i) {
            Tensor<T>& t = (*store_)[i];
            if (!t.trainable) continue;
            auto& v = state_[i];
            for (size_t j = 0; j < t.size(); ++j) {
                double g = static_cast<double>(t.grad[j]);
                v[j] = kBeta2 * v[j] + (1.0 - kBeta2) * g * g;
                double vhat = v[j] / corr;
                t.data[j] -= static_cast<T>(lr * g / (std::sqrt(vhat) + kEps));
            }
        }
    }

    int64_t steps_taken() const { return step_count_; }

private:
    TensorStore<T>* store_;
    std::vector<std::vector<double>> state_;
    int64_t step_count_ = 0;
};

}  // namespace evorec

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "lvd/tensor.hpp"

namespace lvd {

// Ordered, name-addressed registry of learnable tensors. Registration order
// is construction order, which optimizers and checkpoints rely on.
template <typename S>
class ParamStore {
   public:
    Tensor<S> add(const std::string& name, Tensor<S> t) {
        if (find(name)) throw ShapeError("duplicate parameter name: " + name);
        entries_.emplace_back(name, t);
        return t;
    }

    Tensor<S>* find(const std::string& name) {
        for (auto& [n, t] : entries_)
            if (n == name) return &t;
        return nullptr;
    }

    const std::vector<std::pair<std::string, Tensor<S>>>& entries() const {
        return entries_;
    }
    std::vector<std::pair<std::string, Tensor<S>>>& entries() { return entries_; }

    int64_t total_params() const {
        int64_t n = 0;
        for (const auto& [name, t] : entries_) n += t.numel();
        return n;
    }

    void zero_grads() {
        for (auto& [name, t] : entries_) t.zero_grad();
    }

   private:
    std::vector<std::pair<std::string, Tensor<S>>> entries_;
};

// fan-in scaled normal init
template <typename S>
Tensor<S> kaiming_normal(Shape shape, int64_t fan_in, Rng& rng, double gain = 1.0) {
    double stdev = gain * std::sqrt(2.0 / static_cast<double>(fan_in));
    return Tensor<S>::randn(std::move(shape), rng, static_cast<S>(stdev), true);
}

}  // namespace lvd

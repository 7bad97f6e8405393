#pragma once

#include <cstring>
#include <functional>
#include <iostream>
#include <memory>
#include <utility>

#include "lvd/common.hpp"

namespace lvd {

// Shared storage behind a Tensor handle. Values are immutable once an op has
// produced them; only `grad` accumulates afterwards.
template <typename S>
struct Storage {
    std::vector<S> data;
    std::vector<S> grad;  // lazily allocated, same length as data
    bool requires_grad = false;
};

// Dense row-major tensor. Copying the handle shares the buffer; reshapes
// share storage under a new shape. No strides, no broadcasting engine.
template <typename S>
class Tensor {
   public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return filled(std::move(shape), S(0), requires_grad);
    }

    static Tensor filled(Shape shape, S value, bool requires_grad = false) {
        Tensor t;
        t.shape_ = std::move(shape);
        check_shape(t.shape_);
        t.st_ = std::make_shared<Storage<S>>();
        t.st_->data.assign(static_cast<size_t>(shape_numel(t.shape_)), value);
        t.st_->requires_grad = requires_grad;
        return t;
    }

    static Tensor from_data(Shape shape, std::vector<S> data, bool requires_grad = false) {
        check_shape(shape);
        if (shape_numel(shape) != static_cast<int64_t>(data.size()))
            throw ShapeError(strcat_("tensor data length ", data.size(),
                                     " does not match shape ", shape_str(shape)));
        Tensor t;
        t.shape_ = std::move(shape);
        t.st_ = std::make_shared<Storage<S>>();
        t.st_->data = std::move(data);
        t.st_->requires_grad = requires_grad;
        return t;
    }

    static Tensor randn(Shape shape, Rng& rng, S stdev = S(1), bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        for (auto& v : t.st_->data) v = static_cast<S>(rng.normal()) * stdev;
        return t;
    }

    static Tensor scalar(S value, bool requires_grad = false) {
        return from_data({1}, {value}, requires_grad);
    }

    bool defined() const { return st_ != nullptr; }
    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int64_t numel() const { return static_cast<int64_t>(st_->data.size()); }

    int64_t dim(int i) const {
        int r = rank();
        if (i < 0) i += r;
        if (i < 0 || i >= r)
            throw ShapeError(strcat_("dim index ", i, " out of range for rank ", r));
        return shape_[static_cast<size_t>(i)];
    }

    bool requires_grad() const { return st_->requires_grad; }

    S* data() { return st_->data.data(); }
    const S* data() const { return st_->data.data(); }

    bool grad_allocated() const { return !st_->grad.empty(); }

    // Gradient buffer, zero-initialised on first touch.
    S* grad() {
        if (st_->grad.empty()) st_->grad.assign(st_->data.size(), S(0));
        return st_->grad.data();
    }
    const S* grad() const {
        return const_cast<Tensor*>(this)->grad();
    }

    void zero_grad() {
        if (!st_->grad.empty()) std::fill(st_->grad.begin(), st_->grad.end(), S(0));
    }

    S item() const {
        if (numel() != 1)
            throw ShapeError(strcat_("item() on tensor of ", numel(), " elements"));
        return st_->data[0];
    }

    // Same storage, new shape. Element count must match.
    Tensor reshaped(Shape new_shape) const {
        check_shape(new_shape);
        if (shape_numel(new_shape) != numel())
            throw ShapeError(strcat_("cannot reshape ", shape_str(shape_), " to ",
                                     shape_str(new_shape)));
        Tensor t;
        t.st_ = st_;
        t.shape_ = std::move(new_shape);
        return t;
    }

    // Deep copy of the values; gradient state is not carried over.
    Tensor clone(bool requires_grad = false) const {
        return from_data(shape_, st_->data, requires_grad);
    }

    bool same_storage(const Tensor& other) const { return st_ == other.st_; }

   private:
    static void check_shape(const Shape& s) {
        for (int64_t e : s)
            if (e < 1) throw ShapeError(strcat_("invalid extent in shape ", shape_str(s)));
    }

    std::shared_ptr<Storage<S>> st_;
    Shape shape_;
};

// Reverse-mode tape. Ops append one backward closure each in execution
// order together with their output tensor; backward() replays the closures
// once, in reverse. Single-writer: one training step builds and consumes
// one tape.
template <typename S>
class Tape {
   public:
    bool recording() const { return recording_; }
    void set_recording(bool r) { recording_ = r; }

    void record(Tensor<S> output, std::function<void()> step) {
        if (recording_) {
            outputs_.push_back(std::move(output));
            steps_.push_back(std::move(step));
        }
    }

    size_t size() const { return steps_.size(); }
    void clear() {
        steps_.clear();
        outputs_.clear();
    }

    // Accumulates gradients into every requires_grad leaf reachable from
    // `root`. Intermediate (op output) grads are reset first, so calling
    // twice without zeroing leaf grads accumulates additively.
    void backward(Tensor<S> root) {
        if (root.numel() != 1)
            throw ShapeError(strcat_("backward root must be scalar, got ",
                                     shape_str(root.shape())));
        if (!root.requires_grad())
            throw std::invalid_argument("backward: root does not require grad");
        for (auto& t : outputs_) t.zero_grad();
        root.grad()[0] += S(1);
        for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
    }

    // RAII guard that pauses recording, for inference passes.
    struct NoGrad {
        explicit NoGrad(Tape& t) : tape(t), prev(t.recording_) { t.recording_ = false; }
        ~NoGrad() { tape.recording_ = prev; }
        Tape& tape;
        bool prev;
    };

   private:
    std::vector<std::function<void()>> steps_;
    std::vector<Tensor<S>> outputs_;
    bool recording_ = true;
};

// ---------------------------------------------------------------------------
// Serialization: little-endian, header = magic, dtype code, rank, extents.

constexpr char kTensorMagic[8] = {'L', 'V', 'T', 'N', '0', '0', '0', '1'};

template <typename S>
constexpr uint8_t dtype_code() {
    static_assert(std::is_same_v<S, float> || std::is_same_v<S, double>);
    return std::is_same_v<S, float> ? 0 : 1;
}

template <typename S>
void write_tensor(std::ostream& os, const Tensor<S>& t) {
    os.write(kTensorMagic, 8);
    uint8_t dt = dtype_code<S>();
    uint8_t rank = static_cast<uint8_t>(t.rank());
    os.put(static_cast<char>(dt));
    os.put(static_cast<char>(rank));
    for (int i = 0; i < t.rank(); i++) {
        uint64_t e = static_cast<uint64_t>(t.shape()[static_cast<size_t>(i)]);
        os.write(reinterpret_cast<const char*>(&e), 8);
    }
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.numel() * sizeof(S)));
    if (!os) throw DataError("tensor write failed");
}

template <typename S>
Tensor<S> read_tensor(std::istream& is) {
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kTensorMagic, 8) != 0)
        throw DataError("bad tensor magic");
    int dt = is.get();
    int rank = is.get();
    if (dt < 0 || dt > 1 || rank < 0) throw DataError("bad tensor header");
    Shape shape(static_cast<size_t>(rank));
    for (int i = 0; i < rank; i++) {
        uint64_t e = 0;
        is.read(reinterpret_cast<char*>(&e), 8);
        shape[static_cast<size_t>(i)] = static_cast<int64_t>(e);
    }
    int64_t n = shape_numel(shape);
    std::vector<S> out(static_cast<size_t>(n));
    if (dt == dtype_code<S>()) {
        is.read(reinterpret_cast<char*>(out.data()),
                static_cast<std::streamsize>(n * sizeof(S)));
    } else if (dt == 0) {
        std::vector<float> tmp(static_cast<size_t>(n));
        is.read(reinterpret_cast<char*>(tmp.data()),
                static_cast<std::streamsize>(n * sizeof(float)));
        for (int64_t i = 0; i < n; i++) out[static_cast<size_t>(i)] = static_cast<S>(tmp[static_cast<size_t>(i)]);
    } else {
        std::vector<double> tmp(static_cast<size_t>(n));
        is.read(reinterpret_cast<char*>(tmp.data()),
                static_cast<std::streamsize>(n * sizeof(double)));
        for (int64_t i = 0; i < n; i++) out[static_cast<size_t>(i)] = static_cast<S>(tmp[static_cast<size_t>(i)]);
    }
    if (!is) throw DataError("truncated tensor payload");
    return Tensor<S>::from_data(std::move(shape), std::move(out));
}

}  // namespace lvd

#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major 2-D
// arrays of doubles.
//
// A Tensor is a value: copies share storage, and mutation through
// mutable_values() copies first when the storage is shared. A Tensor is
// "tracked" when it carries a handle into a Tape; every op with at least one
// tracked operand records a node on that tape. The tape is rebuilt for each
// forward pass and backward() walks it once in reverse insertion order.

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace acpo {

class Tape;

struct TapeHandle {
    Tape* tape = nullptr;
    std::size_t node = 0;
};

class Tensor {
public:
    Tensor();
    Tensor(std::size_t rows, std::size_t cols);
    Tensor(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Tensor scalar(double value);
    static Tensor column(std::vector<double> data);
    static Tensor filled(std::size_t rows, std::size_t cols, double value);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return rows_ * cols_; }
    bool is_vector() const noexcept { return rows_ == 1 || cols_ == 1; }
    std::string shape_str() const;

    std::span<const double> values() const noexcept;
    // Copy-on-write access. Throws if the tensor is tracked, since the tape
    // holds the recorded value.
    std::span<double> mutable_values();

    double operator()(std::size_t r, std::size_t c) const noexcept { return (*data_)[r * cols_ + c]; }
    double operator[](std::size_t i) const noexcept { return (*data_)[i]; }
    // Value of a 1x1 tensor.
    double item() const;

    bool tracked() const noexcept { return handle_.has_value(); }
    const std::optional<TapeHandle>& handle() const noexcept { return handle_; }
    std::optional<std::size_t> node_id() const noexcept;

    // Same values, no tape handle.
    Tensor detached() const;

    // Bitwise equality of shape and values (ignores tape handles).
    bool same_values(const Tensor& other) const noexcept;

private:
    friend class Tape;

    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::shared_ptr<std::vector<double>> data_;
    std::optional<TapeHandle> handle_;
};

// Gradients keyed by tape node id. Only tracked leaves appear.
using Gradients = std::map<std::size_t, Tensor>;

class Tape {
public:
    // Gradient rule for one node: given dL/d(output) and which operands need a
    // gradient, returns one tensor per operand (empty for unwanted operands).
    using BackwardRule =
        std::function<std::vector<Tensor>(const Tensor& grad_out, const std::vector<bool>& wanted)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Registers a tracked leaf holding a copy of `value`'s handle-free view.
    Tensor leaf(const Tensor& value);

    // Records an op. Operands without a handle on this tape are treated as
    // constants. Returns the output tensor carrying the new node's handle.
    Tensor record(Tensor value, const std::vector<const Tensor*>& operands, BackwardRule rule);

    std::size_t size() const noexcept { return nodes_.size(); }
    bool is_leaf(std::size_t node) const { return nodes_.at(node).leaf; }

    // Reverse pass from a 1x1 tracked loss.
    Gradients backward(const Tensor& loss);

private:
    struct Node {
        bool leaf = false;
        std::size_t rows = 0;
        std::size_t cols = 0;
        std::vector<std::optional<std::size_t>> operands;
        BackwardRule rule;
    };

    std::vector<Node> nodes_;
};

// Finds the tape shared by the tracked operands, or nullptr when none is
// tracked. Throws if operands belong to different tapes.
Tape* common_tape(const std::vector<const Tensor*>& operands);

Tensor matmul(const Tensor& a, const Tensor& b);

enum class Elementwise { add, sub, mul };

Tensor elementwise(const Tensor& a, const Tensor& b, Elementwise kind);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor tanh(const Tensor& a);
Tensor scale(const Tensor& a, double k);

// Sum of all entries as a 1x1 tensor (left-to-right accumulation).
Tensor sum(const Tensor& a);

// Mean of equally shaped tensors, accumulated left to right.
Tensor mean(std::span<const Tensor> items);

// Row `index` of a matrix as a column vector (cols x 1).
Tensor take_row(const Tensor& m, std::size_t index);

// Vertical concatenation of two column vectors.
Tensor concat_columns(const Tensor& top, const Tensor& bottom);

// logits[index] - logsumexp(logits) for a row or column vector of logits.
Tensor log_softmax_pick(const Tensor& logits, std::size_t index);

// log(sigmoid(z)) = -softplus(-z) for a 1x1 tensor.
Tensor log_sigmoid(const Tensor& z);

// Reverse pass on the loss's tape. The loss must be a tracked 1x1 tensor.
Gradients backward(const Tensor& loss);

// Scalar helpers shared by ops and plain (tape-free) forward code.
double softplus(double z) noexcept;
double log_sum_exp(std::span<const double> xs) noexcept;

}  // namespace acpo

#include "acpo/grad_core.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <fmt/format.h>

#include "acpo/errors.hpp"

namespace acpo {

namespace {

std::shared_ptr<std::vector<double>> make_storage(std::size_t n, double value = 0.0) {
    return std::make_shared<std::vector<double>>(n, value);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError(fmt::format("{}: shape mismatch {} vs {}", op, a.shape_str(), b.shape_str()));
    }
}

// out = a * b for row-major (n x k) * (k x m).
std::vector<double> raw_matmul(std::span<const double> a, std::span<const double> b, std::size_t n,
                               std::size_t k, std::size_t m) {
    std::vector<double> out(n * m, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a[i * k + p];
            if (aip == 0.0) {
                continue;
            }
            for (std::size_t j = 0; j < m; ++j) {
                out[i * m + j] += aip * b[p * m + j];
            }
        }
    }
    return out;
}

// out = a^T * g where a is (n x k), g is (n x m); result (k x m).
std::vector<double> raw_matmul_at(std::span<const double> a, std::span<const double> g, std::size_t n,
                                  std::size_t k, std::size_t m) {
    std::vector<double> out(k * m, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a[i * k + p];
            for (std::size_t j = 0; j < m; ++j) {
                out[p * m + j] += aip * g[i * m + j];
            }
        }
    }
    return out;
}

// out = g * b^T where g is (n x m), b is (k x m); result (n x k).
std::vector<double> raw_matmul_bt(std::span<const double> g, std::span<const double> b, std::size_t n,
                                  std::size_t k, std::size_t m) {
    std::vector<double> out(n * k, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (std::size_t j = 0; j < m; ++j) {
                acc += g[i * m + j] * b[p * m + j];
            }
            out[i * k + p] = acc;
        }
    }
    return out;
}

Tensor record_if_tracked(Tensor value, const std::vector<const Tensor*>& operands, Tape::BackwardRule rule) {
    if (Tape* tape = common_tape(operands)) {
        return tape->record(std::move(value), operands, std::move(rule));
    }
    return value;
}

}  // namespace

// ---------------------------------------------------------------- Tensor

Tensor::Tensor() : data_(make_storage(0)) {}

Tensor::Tensor(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(make_storage(rows * cols)) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::make_shared<std::vector<double>>(std::move(data))) {
    if (data_->size() != rows * cols) {
        throw ShapeError(fmt::format("tensor data length {} does not match shape {}x{}", data_->size(), rows, cols));
    }
}

Tensor Tensor::scalar(double value) { return Tensor(1, 1, {value}); }

Tensor Tensor::column(std::vector<double> data) {
    const std::size_t n = data.size();
    return Tensor(n, 1, std::move(data));
}

Tensor Tensor::filled(std::size_t rows, std::size_t cols, double value) {
    Tensor t;
    t.rows_ = rows;
    t.cols_ = cols;
    t.data_ = make_storage(rows * cols, value);
    return t;
}

std::string Tensor::shape_str() const { return fmt::format("[{}x{}]", rows_, cols_); }

std::span<const double> Tensor::values() const noexcept { return {data_->data(), data_->size()}; }

std::span<double> Tensor::mutable_values() {
    if (handle_) {
        throw std::logic_error("cannot mutate a tracked tensor");
    }
    if (data_.use_count() > 1) {
        data_ = std::make_shared<std::vector<double>>(*data_);
    }
    return {data_->data(), data_->size()};
}

double Tensor::item() const {
    if (rows_ != 1 || cols_ != 1) {
        throw ShapeError(fmt::format("item() requires a 1x1 tensor, got {}", shape_str()));
    }
    return (*data_)[0];
}

std::optional<std::size_t> Tensor::node_id() const noexcept {
    if (handle_) {
        return handle_->node;
    }
    return std::nullopt;
}

Tensor Tensor::detached() const {
    Tensor t = *this;
    t.handle_.reset();
    return t;
}

bool Tensor::same_values(const Tensor& other) const noexcept {
    if (rows_ != other.rows_ || cols_ != other.cols_) {
        return false;
    }
    // Bitwise comparison: distinguishes -0.0 from 0.0 and treats identical NaNs as equal.
    return std::equal(data_->begin(), data_->end(), other.data_->begin(), [](double x, double y) {
        return std::bit_cast<uint64_t>(x) == std::bit_cast<uint64_t>(y);
    });
}

// ---------------------------------------------------------------- Tape

Tensor Tape::leaf(const Tensor& value) {
    Node node;
    node.leaf = true;
    node.rows = value.rows();
    node.cols = value.cols();
    nodes_.push_back(std::move(node));
    Tensor out = value.detached();
    out.handle_ = TapeHandle{this, nodes_.size() - 1};
    return out;
}

Tensor Tape::record(Tensor value, const std::vector<const Tensor*>& operands, BackwardRule rule) {
    Node node;
    node.rows = value.rows();
    node.cols = value.cols();
    node.operands.reserve(operands.size());
    for (const Tensor* operand : operands) {
        if (operand->handle_ && operand->handle_->tape == this) {
            node.operands.emplace_back(operand->handle_->node);
        } else {
            node.operands.emplace_back(std::nullopt);
        }
    }
    node.rule = std::move(rule);
    nodes_.push_back(std::move(node));
    value.handle_ = TapeHandle{this, nodes_.size() - 1};
    return value;
}

Gradients Tape::backward(const Tensor& loss) {
    if (loss.rows() != 1 || loss.cols() != 1) {
        throw ShapeError(fmt::format("backward: loss must be 1x1, got {}", loss.shape_str()));
    }
    if (!loss.handle_ || loss.handle_->tape != this) {
        throw std::logic_error("backward: loss is not tracked on this tape");
    }
    const std::size_t root = loss.handle_->node;
    std::vector<std::optional<Tensor>> grads(nodes_.size());
    grads[root] = Tensor::scalar(1.0);

    for (std::size_t id = root + 1; id-- > 0;) {
        Node& node = nodes_[id];
        if (node.leaf || !grads[id]) {
            continue;
        }
        std::vector<bool> wanted(node.operands.size());
        bool any = false;
        for (std::size_t i = 0; i < node.operands.size(); ++i) {
            wanted[i] = node.operands[i].has_value();
            any = any || wanted[i];
        }
        if (!any) {
            continue;
        }
        std::vector<Tensor> operand_grads = node.rule(*grads[id], wanted);
        for (std::size_t i = 0; i < node.operands.size(); ++i) {
            if (!wanted[i]) {
                continue;
            }
            const std::size_t target = *node.operands[i];
            Tensor& g = operand_grads[i];
            if (!grads[target]) {
                grads[target] = std::move(g);
            } else {
                auto acc = grads[target]->mutable_values();
                const auto add = g.values();
                for (std::size_t j = 0; j < acc.size(); ++j) {
                    acc[j] += add[j];
                }
            }
        }
    }

    Gradients out;
    for (std::size_t id = 0; id <= root; ++id) {
        if (nodes_[id].leaf && grads[id]) {
            out.emplace(id, std::move(*grads[id]));
        }
    }
    return out;
}

Tape* common_tape(const std::vector<const Tensor*>& operands) {
    Tape* found = nullptr;
    for (const Tensor* t : operands) {
        if (const auto& h = t->handle()) {
            if (found != nullptr && found != h->tape) {
                throw std::logic_error("operands are tracked on different tapes");
            }
            found = h->tape;
        }
    }
    return found;
}

Gradients backward(const Tensor& loss) {
    if (loss.rows() != 1 || loss.cols() != 1) {
        throw ShapeError(fmt::format("backward: loss must be 1x1, got {}", loss.shape_str()));
    }
    if (!loss.handle()) {
        throw std::logic_error("backward: loss is not tracked");
    }
    return loss.handle()->tape->backward(loss);
}

// ---------------------------------------------------------------- ops

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError(fmt::format("matmul: shape mismatch {} x {}", a.shape_str(), b.shape_str()));
    }
    const std::size_t n = a.rows();
    const std::size_t k = a.cols();
    const std::size_t m = b.cols();
    Tensor out(n, m, raw_matmul(a.values(), b.values(), n, k, m));
    return record_if_tracked(std::move(out), {&a, &b},
                             [a = a.detached(), b = b.detached(), n, k, m](const Tensor& g,
                                                                           const std::vector<bool>& wanted) {
                                 std::vector<Tensor> grads(2);
                                 if (wanted[0]) {
                                     grads[0] = Tensor(n, k, raw_matmul_bt(g.values(), b.values(), n, k, m));
                                 }
                                 if (wanted[1]) {
                                     grads[1] = Tensor(k, m, raw_matmul_at(a.values(), g.values(), n, k, m));
                                 }
                                 return grads;
                             });
}

Tensor elementwise(const Tensor& a, const Tensor& b, Elementwise kind) {
    require_same_shape(a, b, "elementwise");
    std::vector<double> out(a.size());
    const auto x = a.values();
    const auto y = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        switch (kind) {
            case Elementwise::add: out[i] = x[i] + y[i]; break;
            case Elementwise::sub: out[i] = x[i] - y[i]; break;
            case Elementwise::mul: out[i] = x[i] * y[i]; break;
        }
    }
    Tensor result(a.rows(), a.cols(), std::move(out));
    return record_if_tracked(
        std::move(result), {&a, &b},
        [a = a.detached(), b = b.detached(), kind](const Tensor& g, const std::vector<bool>& wanted) {
            std::vector<Tensor> grads(2);
            const auto gv = g.values();
            for (std::size_t side = 0; side < 2; ++side) {
                if (!wanted[side]) {
                    continue;
                }
                std::vector<double> d(gv.begin(), gv.end());
                if (kind == Elementwise::sub && side == 1) {
                    for (double& v : d) {
                        v = -v;
                    }
                } else if (kind == Elementwise::mul) {
                    const auto other = (side == 0 ? b : a).values();
                    for (std::size_t i = 0; i < d.size(); ++i) {
                        d[i] *= other[i];
                    }
                }
                grads[side] = Tensor(g.rows(), g.cols(), std::move(d));
            }
            return grads;
        });
}

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(a, b, Elementwise::add); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(a, b, Elementwise::sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(a, b, Elementwise::mul); }

Tensor tanh(const Tensor& a) {
    std::vector<double> out(a.size());
    const auto x = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = std::tanh(x[i]);
    }
    Tensor result(a.rows(), a.cols(), std::move(out));
    return record_if_tracked(result, {&a}, [y = result](const Tensor& g, const std::vector<bool>&) {
        std::vector<double> d(g.size());
        const auto gv = g.values();
        const auto yv = y.values();
        for (std::size_t i = 0; i < d.size(); ++i) {
            d[i] = gv[i] * (1.0 - yv[i] * yv[i]);
        }
        return std::vector<Tensor>{Tensor(g.rows(), g.cols(), std::move(d))};
    });
}

Tensor scale(const Tensor& a, double k) {
    std::vector<double> out(a.values().begin(), a.values().end());
    for (double& v : out) {
        v *= k;
    }
    Tensor result(a.rows(), a.cols(), std::move(out));
    return record_if_tracked(std::move(result), {&a}, [k](const Tensor& g, const std::vector<bool>&) {
        std::vector<double> d(g.values().begin(), g.values().end());
        for (double& v : d) {
            v *= k;
        }
        return std::vector<Tensor>{Tensor(g.rows(), g.cols(), std::move(d))};
    });
}

Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (const double v : a.values()) {
        acc += v;
    }
    return record_if_tracked(Tensor::scalar(acc), {&a},
                             [rows = a.rows(), cols = a.cols()](const Tensor& g, const std::vector<bool>&) {
                                 return std::vector<Tensor>{Tensor::filled(rows, cols, g.item())};
                             });
}

Tensor mean(std::span<const Tensor> items) {
    if (items.empty()) {
        throw ShapeError("mean: no items");
    }
    const std::size_t rows = items[0].rows();
    const std::size_t cols = items[0].cols();
    std::vector<double> acc(rows * cols, 0.0);
    std::vector<const Tensor*> operands;
    operands.reserve(items.size());
    for (const Tensor& t : items) {
        require_same_shape(items[0], t, "mean");
        const auto v = t.values();
        for (std::size_t i = 0; i < acc.size(); ++i) {
            acc[i] += v[i];
        }
        operands.push_back(&t);
    }
    const double inv = 1.0 / static_cast<double>(items.size());
    for (double& v : acc) {
        v *= inv;
    }
    return record_if_tracked(Tensor(rows, cols, std::move(acc)), operands,
                             [inv](const Tensor& g, const std::vector<bool>& wanted) {
                                 std::vector<Tensor> grads(wanted.size());
                                 const Tensor shared = scale(g.detached(), inv);
                                 for (std::size_t i = 0; i < wanted.size(); ++i) {
                                     if (wanted[i]) {
                                         grads[i] = Tensor(shared.rows(), shared.cols(),
                                                           {shared.values().begin(), shared.values().end()});
                                     }
                                 }
                                 return grads;
                             });
}

Tensor take_row(const Tensor& m, std::size_t index) {
    if (index >= m.rows()) {
        throw IndexError(fmt::format("take_row: index {} out of range for {}", index, m.shape_str()));
    }
    const auto v = m.values();
    std::vector<double> row(v.begin() + static_cast<std::ptrdiff_t>(index * m.cols()),
                            v.begin() + static_cast<std::ptrdiff_t>((index + 1) * m.cols()));
    return record_if_tracked(Tensor::column(std::move(row)), {&m},
                             [rows = m.rows(), cols = m.cols(), index](const Tensor& g, const std::vector<bool>&) {
                                 Tensor d(rows, cols);
                                 auto dv = d.mutable_values();
                                 const auto gv = g.values();
                                 std::copy(gv.begin(), gv.end(), dv.begin() + static_cast<std::ptrdiff_t>(index * cols));
                                 return std::vector<Tensor>{std::move(d)};
                             });
}

Tensor concat_columns(const Tensor& top, const Tensor& bottom) {
    if (top.cols() != 1 || bottom.cols() != 1) {
        throw ShapeError(
            fmt::format("concat_columns: expected column vectors, got {} and {}", top.shape_str(), bottom.shape_str()));
    }
    std::vector<double> out(top.values().begin(), top.values().end());
    out.insert(out.end(), bottom.values().begin(), bottom.values().end());
    return record_if_tracked(Tensor::column(std::move(out)), {&top, &bottom},
                             [n = top.rows(), m = bottom.rows()](const Tensor& g, const std::vector<bool>& wanted) {
                                 std::vector<Tensor> grads(2);
                                 const auto gv = g.values();
                                 if (wanted[0]) {
                                     grads[0] = Tensor::column({gv.begin(), gv.begin() + static_cast<std::ptrdiff_t>(n)});
                                 }
                                 if (wanted[1]) {
                                     grads[1] = Tensor::column(
                                         {gv.begin() + static_cast<std::ptrdiff_t>(n), gv.begin() + static_cast<std::ptrdiff_t>(n + m)});
                                 }
                                 return grads;
                             });
}

double softplus(double z) noexcept { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double log_sum_exp(std::span<const double> xs) noexcept {
    double hi = -std::numeric_limits<double>::infinity();
    for (const double x : xs) {
        hi = std::max(hi, x);
    }
    double acc = 0.0;
    for (const double x : xs) {
        acc += std::exp(x - hi);
    }
    return hi + std::log(acc);
}

Tensor log_softmax_pick(const Tensor& logits, std::size_t index) {
    if (!logits.is_vector() || logits.size() == 0) {
        throw ShapeError(fmt::format("log_softmax_pick: expected a vector of logits, got {}", logits.shape_str()));
    }
    if (index >= logits.size()) {
        throw IndexError(fmt::format("log_softmax_pick: index {} out of range for {} logits", index, logits.size()));
    }
    const double lse = log_sum_exp(logits.values());
    const double value = logits[index] - lse;
    return record_if_tracked(Tensor::scalar(value), {&logits},
                             [l = logits.detached(), lse, index](const Tensor& g, const std::vector<bool>&) {
                                 const double gs = g.item();
                                 std::vector<double> d(l.size());
                                 for (std::size_t i = 0; i < d.size(); ++i) {
                                     d[i] = -gs * std::exp(l[i] - lse);
                                 }
                                 d[index] += gs;
                                 return std::vector<Tensor>{Tensor(l.rows(), l.cols(), std::move(d))};
                             });
}

Tensor log_sigmoid(const Tensor& z) {
    if (z.rows() != 1 || z.cols() != 1) {
        throw ShapeError(fmt::format("log_sigmoid: expected 1x1, got {}", z.shape_str()));
    }
    const double zv = z.item();
    return record_if_tracked(Tensor::scalar(-softplus(-zv)), {&z}, [zv](const Tensor& g, const std::vector<bool>&) {
        // d/dz log sigmoid(z) = sigmoid(-z) = exp(-softplus(z))
        return std::vector<Tensor>{Tensor::scalar(g.item() * std::exp(-softplus(zv)))};
    });
}

}  // namespace acpo

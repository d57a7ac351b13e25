#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "diffpoi/core/random.hpp"
#include "diffpoi/core/tensor.hpp"

namespace diffpoi::core {

struct Parameter {
    std::string name;
    Shape shape;
    std::shared_ptr<std::vector<double>> value;
    std::vector<double> grad;
    bool trainable = true;

    std::size_t size() const { return value->size(); }
};

// Per-tape handles onto a ParameterStore. Each binding owns fresh gradient
// buffers, so several tapes can run over the same parameters and have their
// gradients reduced afterwards in a fixed order.
class Binding {
public:
    Binding() = default;
    explicit Binding(std::vector<Tensor> leaves, const std::map<std::string, std::size_t>* index)
        : leaves_(std::move(leaves)), index_(index) {}

    const Tensor& operator[](const std::string& name) const {
        auto it = index_->find(name);
        if (it == index_->end()) throw std::out_of_range("binding: unknown parameter " + name);
        return leaves_[it->second];
    }
    bool contains(const std::string& name) const { return index_->count(name) != 0; }
    const std::vector<Tensor>& leaves() const { return leaves_; }

private:
    std::vector<Tensor> leaves_;
    const std::map<std::string, std::size_t>* index_ = nullptr;
};

class ParameterStore {
public:
    ParameterStore() = default;
    ParameterStore(const ParameterStore& other) { *this = other; }
    ParameterStore& operator=(const ParameterStore& other) {
        if (this == &other) return *this;
        params_.clear();
        index_ = other.index_;
        for (const auto& p : other.params_) {
            Parameter q = p;
            q.value = std::make_shared<std::vector<double>>(*p.value);
            params_.push_back(std::move(q));
        }
        return *this;
    }
    ParameterStore(ParameterStore&&) noexcept = default;
    ParameterStore& operator=(ParameterStore&&) noexcept = default;

    Parameter& add(const std::string& name, Shape shape, std::vector<double> values) {
        if (index_.count(name)) throw std::invalid_argument("parameter store: duplicate name " + name);
        if (numel(shape) != values.size()) throw ShapeError("parameter store: bad initial data for " + name);
        index_[name] = params_.size();
        Parameter p;
        p.name = name;
        p.shape = std::move(shape);
        p.value = std::make_shared<std::vector<double>>(std::move(values));
        p.grad.assign(p.value->size(), 0.0);
        params_.push_back(std::move(p));
        return params_.back();
    }

    // Zero-mean normal initialization with the given standard deviation.
    Parameter& add_normal(const std::string& name, Shape shape, double stddev, Rng& rng) {
        std::vector<double> values(numel(shape));
        for (auto& v : values) v = stddev * rng.normal();
        return add(name, std::move(shape), std::move(values));
    }

    Parameter& add_zeros(const std::string& name, Shape shape) {
        const std::size_t n = numel(shape);
        return add(name, std::move(shape), std::vector<double>(n, 0.0));
    }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    Parameter& get(const std::string& name) { return params_.at(index_.at(name)); }
    const Parameter& get(const std::string& name) const { return params_.at(index_.at(name)); }
    std::vector<Parameter>& all() { return params_; }
    const std::vector<Parameter>& all() const { return params_; }
    std::size_t size() const { return params_.size(); }

    Binding bind(bool requires_grad = true) const {
        std::vector<Tensor> leaves;
        leaves.reserve(params_.size());
        for (const auto& p : params_) leaves.push_back(Tensor::shared(p.shape, p.value, requires_grad && p.trainable));
        return Binding(std::move(leaves), &index_);
    }

    void zero_grad() {
        for (auto& p : params_) std::fill(p.grad.begin(), p.grad.end(), 0.0);
    }

    // Adds the gradients held by a binding's leaves, scaled by `weight`.
    void accumulate(const Binding& binding, double weight = 1.0) {
        const auto& leaves = binding.leaves();
        for (std::size_t i = 0; i < params_.size(); ++i) {
            if (!leaves[i].requires_grad()) continue;
            const auto g = leaves[i].grad();
            for (std::size_t k = 0; k < g.size(); ++k) params_[i].grad[k] += weight * g[k];
        }
    }

    double squared_norm() const {
        double s = 0.0;
        for (const auto& p : params_) {
            if (!p.trainable) continue;
            for (double v : *p.value) s += v * v;
        }
        return s;
    }

    bool all_finite() const {
        for (const auto& p : params_) {
            for (double v : *p.value) {
                if (!std::isfinite(v)) return false;
            }
        }
        return true;
    }

private:
    std::vector<Parameter> params_;
    std::map<std::string, std::size_t> index_;
};

}  // namespace diffpoi::core

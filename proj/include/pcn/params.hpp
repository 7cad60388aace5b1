#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "pcn/autodiff.hpp"
#include "pcn/rng.hpp"
#include "pcn/tensor.hpp"

namespace pcn {

// Named parameter tensors in creation order. Creation order is what the
// initializer RNG and the optimizer iterate over, so it must stay fixed for a
// given model configuration.
class ParamStore {
  public:
    Tensor& create(const std::string& name, std::vector<std::int64_t> shape) {
        if (index_.count(name)) throw InvalidInputError("param already exists: " + name);
        index_[name] = items_.size();
        items_.push_back({name, Tensor(std::move(shape))});
        return items_.back().second;
    }

    // Uniform init scaled by fan-in.
    Tensor& create_uniform(const std::string& name, std::vector<std::int64_t> shape, std::int64_t fan_in, Rng& rng) {
        Tensor& t = create(name, std::move(shape));
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (auto& v : t.data) v = rng.uniform(-bound, bound);
        return t;
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    Tensor& get(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw InvalidInputError("unknown param: " + name);
        return items_[it->second].second;
    }
    const Tensor& get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw InvalidInputError("unknown param: " + name);
        return items_[it->second].second;
    }

    std::size_t count() const { return items_.size(); }
    const std::string& name_at(std::size_t i) const { return items_[i].first; }
    Tensor& tensor_at(std::size_t i) { return items_[i].second; }
    const Tensor& tensor_at(std::size_t i) const { return items_[i].second; }

  private:
    std::vector<std::pair<std::string, Tensor>> items_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Binds store tensors to tape leaves for one forward pass and collects their
// gradients after backward().
class TapeBinding {
  public:
    TapeBinding(Tape& tape, const ParamStore& store) : tape_(&tape), store_(&store) {}

    Var operator()(const std::string& name) {
        auto it = bound_.find(name);
        if (it != bound_.end()) return it->second;
        Var v = tape_->leaf(store_->get(name), true);
        bound_[name] = v;
        return v;
    }

    // Accumulates d(root)/d(param) into `grads` keyed by param name.
    void collect_grads(std::unordered_map<std::string, Tensor>& grads) const {
        for (const auto& [name, var] : bound_) {
            Tensor g = tape_->grad(var);
            auto it = grads.find(name);
            if (it == grads.end()) {
                grads.emplace(name, std::move(g));
            } else {
                for (std::int64_t i = 0; i < g.numel(); ++i) it->second[i] += g[i];
            }
        }
    }

    Tape& tape() { return *tape_; }

  private:
    Tape* tape_;
    const ParamStore* store_;
    std::unordered_map<std::string, Var> bound_;
};

}  // namespace pcn

#pragma once

// Named parameter store. std::map keeps iteration order deterministic, which
// the optimizer and checkpoint writer rely on.

#include <map>
#include <string>
#include <vector>

#include "viewco/errors.hpp"
#include "viewco/rng.hpp"
#include "viewco/tensor.hpp"

namespace viewco {

class ParamStore {
public:
    Tensor& add(const std::string& name, Tensor t) {
        if (params_.count(name)) throw ConfigError("duplicate parameter '" + name + "'");
        auto [it, ok] = params_.emplace(name, std::move(t));
        return it->second;
    }

    Tensor& add_normal(const std::string& name, int r, int c, Rng& rng, double stddev = 0.02,
                       bool rg = true) {
        return add(name, Tensor::randn(r, c, rng, stddev, rg));
    }

    Tensor& add_zeros(const std::string& name, int r, int c, bool rg = true) {
        return add(name, Tensor::zeros(r, c, rg));
    }

    Tensor& add_ones(const std::string& name, int r, int c, bool rg = true) {
        return add(name, Tensor::full(r, c, 1.0, rg));
    }

    bool has(const std::string& name) const { return params_.count(name) != 0; }

    Tensor& at(const std::string& name) {
        auto it = params_.find(name);
        if (it == params_.end()) throw ConfigError("unknown parameter '" + name + "'");
        return it->second;
    }

    const Tensor& at(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw ConfigError("unknown parameter '" + name + "'");
        return it->second;
    }

    std::map<std::string, Tensor>& all() { return params_; }
    const std::map<std::string, Tensor>& all() const { return params_; }

    size_t count() const { return params_.size(); }

    std::vector<std::string> names_with_prefix(const std::string& prefix) const {
        std::vector<std::string> out;
        for (const auto& [name, t] : params_)
            if (name.rfind(prefix, 0) == 0) out.push_back(name);
        return out;
    }

    // Deep copy of a subtree under a new prefix. Teacher copies are created
    // with requires_grad=false so no tape is ever recorded through them.
    void clone_subtree(const std::string& src_prefix, const std::string& dst_prefix,
                       bool requires_grad) {
        for (const auto& name : names_with_prefix(src_prefix)) {
            const Tensor& src = at(name);
            std::string dst = dst_prefix + name.substr(src_prefix.size());
            Tensor copy = Tensor::from(src.rows, src.cols, *src.data, requires_grad);
            add(dst, std::move(copy));
        }
    }

    void zero_grads() {
        for (auto& [name, t] : params_) t.zero_grad();
    }

private:
    std::map<std::string, Tensor> params_;
};

} // namespace viewco

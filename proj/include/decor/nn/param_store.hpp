// Named trainable tensors, the Adam optimizer and the RCFN checkpoint format.
#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "decor/database_io.hpp"
#include "decor/nn/tensor.hpp"

namespace decor::nn {

struct Parameter {
  Tensor value;
  Tensor grad;
  bool has_grad = false;
};

// std::map keeps iteration sorted by name, which fixes the order of every
// reduction over parameters.
class ParamStore {
 public:
  Parameter& add(const std::string& name, Tensor value) {
    if (params_.contains(name)) throw Error("param store: duplicate parameter '" + name + "'");
    Parameter p;
    p.grad = Tensor(value.shape);
    p.value = std::move(value);
    return params_.emplace(name, std::move(p)).first->second;
  }

  bool contains(const std::string& name) const { return params_.contains(name); }
  Parameter& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw Error("param store: no parameter '" + name + "'");
    return it->second;
  }
  const Parameter& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw Error("param store: no parameter '" + name + "'");
    return it->second;
  }
  const Tensor& value(const std::string& name) const { return at(name).value; }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  std::size_t size() const { return params_.size(); }

  void zero_grad() {
    for (auto& [_, p] : params_) {
      std::fill(p.grad.data.begin(), p.grad.data.end(), 0.0);
      p.has_grad = false;
    }
  }

  void accumulate_grad(const std::string& name, const Tensor& g) {
    Parameter& p = at(name);
    if (g.numel() != p.value.numel()) throw Error("param store: gradient shape mismatch for '" + name + "'");
    for (std::size_t i = 0; i < g.numel(); ++i) p.grad.data[i] += g.data[i];
    p.has_grad = true;
  }

  double grad_norm() const {
    double s = 0.0;
    for (const auto& [_, p] : params_) {
      for (double g : p.grad.data) s += g * g;
    }
    return std::sqrt(s);
  }

  // Scales all gradients so their global L2 norm is at most max_norm.
  // Returns the norm before clipping.
  double clip_grad_norm(double max_norm) {
    const double n = grad_norm();
    if (n > max_norm && n > 0.0) {
      const double s = max_norm / n;
      for (auto& [_, p] : params_) {
        for (double& g : p.grad.data) g *= s;
      }
    }
    return n;
  }

  std::size_t num_values() const {
    std::size_t n = 0;
    for (const auto& [_, p] : params_) n += p.value.numel();
    return n;
  }

  bool operator==(const ParamStore& o) const {
    if (params_.size() != o.params_.size()) return false;
    auto a = params_.begin();
    auto b = o.params_.begin();
    for (; a != params_.end(); ++a, ++b) {
      if (a->first != b->first || !(a->second.value == b->second.value)) return false;
    }
    return true;
  }

 private:
  std::map<std::string, Parameter> params_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig c = {}) : cfg_(c) {}

  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  long steps() const { return t_; }

  void step(ParamStore& params) {
    bool any = false;
    for (const auto& [_, p] : params) any = any || p.has_grad;
    if (!any) throw Error("adam: no gradients populated (call backward first)");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (auto& [name, p] : params) {
      auto& [m, v] = moments_[name];
      if (m.empty()) {
        m.assign(p.value.numel(), 0.0);
        v.assign(p.value.numel(), 0.0);
      }
      for (std::size_t i = 0; i < p.value.numel(); ++i) {
        const double g = p.grad.data[i];
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        p.value.data[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
    params.zero_grad();
  }

 private:
  AdamConfig cfg_;
  long t_ = 0;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments_;
};

inline constexpr std::string_view kCheckpointMagic = "RCFN";
inline constexpr std::uint32_t kCheckpointVersion = 1;

// magic, u32 version, u32 count, then per parameter (sorted by name):
// u16 name length + UTF-8 name, u8 rank, rank x u32 dims, f32 LE data.
inline std::string checkpoint_bytes(const ParamStore& params) {
  std::string out(kCheckpointMagic);
  io::put_le<std::uint32_t>(out, kCheckpointVersion);
  io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, p] : params) {
    if (name.size() > 0xffff) throw Error("checkpoint: parameter name too long");
    io::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    io::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(p.value.rank()));
    for (auto d : p.value.shape) io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (double x : p.value.data) io::put_le<float>(out, static_cast<float>(x));
  }
  return out;
}

inline ParamStore parse_checkpoint(const std::string& bytes) {
  io::Reader r(bytes, "checkpoint");
  if (r.bytes(4) != kCheckpointMagic) throw Error("checkpoint: bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) throw Error("checkpoint: unsupported version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>();
  ParamStore ps;
  std::string prev;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint16_t>();
    std::string name = r.bytes(len);
    if (i > 0 && !(prev < name)) throw Error("checkpoint: parameters not sorted by name");
    const auto rank = r.get<std::uint8_t>();
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = r.get<std::uint32_t>();
    Tensor t(shape);
    for (auto& x : t.data) x = r.get<float>();
    ps.add(name, std::move(t));
    prev = std::move(name);
  }
  if (!r.at_end()) throw Error("checkpoint: trailing bytes");
  return ps;
}

inline void save_checkpoint(const ParamStore& params, const std::filesystem::path& path) {
  io::write_file(path, checkpoint_bytes(params));
}

inline ParamStore load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(io::read_file(path)); }

// Rounds every value to single precision, i.e. what a save/load cycle does.
inline void round_to_float(ParamStore& params) {
  for (auto& [_, p] : params) {
    for (double& x : p.value.data) x = static_cast<float>(x);
  }
}

}  // namespace decor::nn

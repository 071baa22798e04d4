#include "svc/params.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace svc {

ParamView ParamStore::add(const std::string& name, const std::string& group,
                          int rows, int cols) {
  if (index_.count(name))
    throw std::invalid_argument("duplicate parameter name: " + name);
  ParamView v;
  v.offset = data_.size();
  v.rows = rows;
  v.cols = cols;
  data_.resize(data_.size() + v.size(), 0.0);
  index_[name] = v;
  group_[name] = group;
  order_.push_back(name);
  return v;
}

const ParamView& ParamStore::view(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end())
    throw std::invalid_argument("unknown parameter: " + name);
  return it->second;
}

const std::string& ParamStore::group_of(const std::string& name) const {
  auto it = group_.find(name);
  if (it == group_.end())
    throw std::invalid_argument("unknown parameter: " + name);
  return it->second;
}

Tensor ParamStore::tensor(const std::string& name) const {
  const ParamView& v = view(name);
  Tensor t(v.rows, v.cols);
  std::memcpy(t.v.data(), data(v), v.size() * sizeof(Real));
  return t;
}

void ParamStore::set_tensor(const std::string& name, const Tensor& t) {
  const ParamView& v = view(name);
  if (t.rows != v.rows || t.cols != v.cols)
    throw std::invalid_argument("shape mismatch for parameter: " + name);
  std::memcpy(data(v), t.v.data(), v.size() * sizeof(Real));
}

std::vector<std::string> ParamStore::groups() const {
  std::vector<std::string> gs;
  for (const auto& name : order_) {
    const std::string& g = group_.at(name);
    if (std::find(gs.begin(), gs.end(), g) == gs.end()) gs.push_back(g);
  }
  return gs;
}

size_t ParamStore::group_size(const std::string& group) const {
  size_t n = 0;
  for (const auto& name : order_)
    if (group_.at(name) == group) n += index_.at(name).size();
  return n;
}

std::uint64_t ParamStore::group_hash(const std::string& group) const {
  std::uint64_t h = 14695981039346656037ull;
  for (const auto& name : order_) {
    if (group_.at(name) != group) continue;
    const ParamView& v = index_.at(name);
    h = fnv1a(name, h);
    h = fnv1a(data(v), v.size() * sizeof(Real), h);
  }
  return h;
}

void ParamStore::init(std::uint64_t seed) {
  for (const auto& name : order_) {
    const ParamView& v = index_.at(name);
    Real* p = data(v);
    Rng rng(splitmix64(seed) ^ fnv1a(name));
    const bool is_gain = name.size() >= 5 && name.rfind(".gain") == name.size() - 5;
    const bool is_lora_b = name.find(".lora") != std::string::npos &&
                           name.size() >= 2 && name.rfind("_b") == name.size() - 2;
    const bool is_embed = name.find("embed") != std::string::npos;
    // The residual up-projection starts near zero so the softmax main branch
    // dominates at init and the bottleneck fades in during fine-tuning.
    const bool is_resid_up = name.find("connector") != std::string::npos &&
                             name.size() >= 3 && name.rfind(".up") == name.size() - 3;
    if (is_gain) {
      for (size_t i = 0; i < v.size(); ++i) p[i] = 1.0;
    } else if (is_lora_b) {
      for (size_t i = 0; i < v.size(); ++i) p[i] = 0.0;
    } else if (is_resid_up) {
      for (size_t i = 0; i < v.size(); ++i) p[i] = 1e-4 * rng.normal();
    } else if (is_embed) {
      for (size_t i = 0; i < v.size(); ++i) p[i] = 0.02 * rng.normal();
    } else {
      const Real scale = 1.0 / std::sqrt(static_cast<Real>(v.rows));
      for (size_t i = 0; i < v.size(); ++i) p[i] = scale * rng.normal();
    }
  }
}

std::vector<uint8_t> ParamStore::group_mask(
    const std::vector<std::string>& groups) const {
  std::vector<uint8_t> mask(data_.size(), 0);
  for (const auto& name : order_) {
    const std::string& g = group_.at(name);
    if (std::find(groups.begin(), groups.end(), g) == groups.end()) continue;
    const ParamView& v = index_.at(name);
    std::fill(mask.begin() + v.offset, mask.begin() + v.offset + v.size(), 1);
  }
  return mask;
}

}  // namespace svc

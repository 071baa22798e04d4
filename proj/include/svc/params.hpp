#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "svc/rng.hpp"
#include "svc/tensor.hpp"

namespace svc {

// View into the flat parameter vector.
struct ParamView {
  size_t offset = 0;
  int rows = 0;
  int cols = 0;
  size_t size() const { return static_cast<size_t>(rows) * cols; }
};

// Flat storage for every learnable tensor, addressed by dotted name.
// The leading dot-segment can differ from the checkpoint group, so each
// tensor records its group explicitly ("backbone", "encoder", "linear",
// "connector", "backbone-lora", "encoder-lora", "linear2", "connector2",
// "backbone-lora2").
class ParamStore {
 public:
  ParamView add(const std::string& name, const std::string& group, int rows, int cols);

  bool has(const std::string& name) const { return index_.count(name) > 0; }
  const ParamView& view(const std::string& name) const;
  const std::string& group_of(const std::string& name) const;

  Real* data(const ParamView& v) { return data_.data() + v.offset; }
  const Real* data(const ParamView& v) const { return data_.data() + v.offset; }
  Real* data(const std::string& name) { return data(view(name)); }
  const Real* data(const std::string& name) const { return data(view(name)); }

  Tensor tensor(const std::string& name) const;
  void set_tensor(const std::string& name, const Tensor& t);

  std::vector<Real>& flat() { return data_; }
  const std::vector<Real>& flat() const { return data_; }
  size_t total() const { return data_.size(); }

  // Names in registration order (the canonical layout order).
  const std::vector<std::string>& names() const { return order_; }
  std::vector<std::string> groups() const;
  size_t group_size(const std::string& group) const;

  // Content hash of one group's parameters, in registration order.
  std::uint64_t group_hash(const std::string& group) const;

  // Deterministic init. Rules are derived from the name suffix so layout
  // changes never reshuffle unrelated tensors:
  //   *.gain  -> ones, *.lora_b -> zeros, *.embed* -> N(0, 0.02),
  //   everything else -> N(0, 1/sqrt(fan_in)).
  void init(std::uint64_t seed);

  // Mask of entries belonging to any of the listed groups.
  std::vector<uint8_t> group_mask(const std::vector<std::string>& groups) const;

 private:
  std::vector<Real> data_;
  std::map<std::string, ParamView> index_;
  std::map<std::string, std::string> group_;
  std::vector<std::string> order_;
};

}  // namespace svc

#ifndef TTLAB_TAPE_HPP
#define TTLAB_TAPE_HPP

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ttlab/tensor.hpp"

namespace ttlab {

/// One named parameter with its gradient slot and heavy-ball buffer.
template <typename T>
struct ParamEntry {
  std::string name;
  TensorT<T> value;
  TensorT<T> grad;
  TensorT<T> momentum;
};

/// Ordered store for the stacked parameter vector. Insertion order is
/// stable so checkpoints and optimizer sweeps are reproducible. Names
/// are unique; gradient and momentum always mirror the value shape.
template <typename T>
class ParamTapeT {
 public:
  ParamTapeT() = default;

  // Registers a parameter with zeroed gradient and momentum.
  void add(const std::string& name, TensorT<T> value);

  bool has(std::string_view name) const;
  std::size_t size() const { return entries_.size(); }
  std::int64_t scalar_count() const;

  ParamEntry<T>& entry(std::size_t i) { return entries_[i]; }
  const ParamEntry<T>& entry(std::size_t i) const { return entries_[i]; }
  ParamEntry<T>& entry(std::string_view name);
  const ParamEntry<T>& entry(std::string_view name) const;

  TensorT<T>& value(std::string_view name) { return entry(name).value; }
  const TensorT<T>& value(std::string_view name) const {
    return entry(name).value;
  }
  TensorT<T>& grad(std::string_view name) { return entry(name).grad; }
  const TensorT<T>& grad(std::string_view name) const {
    return entry(name).grad;
  }

  void zero_grad();
  void reset_momentum();

  ParamTapeT clone() const { return *this; }

  std::vector<std::string> names() const;

 private:
  std::size_t index_of(std::string_view name) const;

  std::vector<ParamEntry<T>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

using ParamTape = ParamTapeT<float>;
using ParamTapeD = ParamTapeT<double>;

/// Heavy-ball SGD hyperparameters. Test-time configurations keep
/// momentum and weight decay at zero; the adaptation module enforces that.
template <typename T>
struct SgdConfigT {
  T learning_rate = T(0.1);
  T momentum = T(0);
  T weight_decay = T(0);

  // Throws ConfigError unless lr >= 0, momentum in [0,1), wd >= 0.
  void validate() const;
};

using SgdConfig = SgdConfigT<float>;
using SgdConfigD = SgdConfigT<double>;

/// Predicate selecting which parameters an optimizer step may touch.
using ParamMask = std::function<bool(std::string_view)>;

ParamMask mask_all();
ParamMask mask_none();
ParamMask mask_prefix(std::string prefix);
ParamMask mask_any(std::vector<std::string> prefixes);

/// One optimizer step over every parameter the mask admits:
///   buf <- momentum * buf + (grad + wd * theta);  theta <- theta - lr * buf
/// Parameters outside the mask stay bit-identical, buffers included.
template <typename T>
void sgd_step(ParamTapeT<T>& tape, const SgdConfigT<T>& cfg,
              const ParamMask& mask);

template <typename T>
void sgd_step(ParamTapeT<T>& tape, const SgdConfigT<T>& cfg);

}  // namespace ttlab

#endif  // TTLAB_TAPE_HPP

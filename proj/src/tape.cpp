#include "ttlab/tape.hpp"

#include <utility>

namespace ttlab {

template <typename T>
void ParamTapeT<T>::add(const std::string& name, TensorT<T> value) {
  if (name.empty()) throw ConfigError("parameter name must not be empty");
  if (index_.count(name)) {
    throw ConfigError("duplicate parameter name '" + name + "'");
  }
  ParamEntry<T> e;
  e.name = name;
  e.grad = TensorT<T>(value.shape(), T(0));
  e.momentum = TensorT<T>(value.shape(), T(0));
  e.value = std::move(value);
  index_.emplace(name, entries_.size());
  entries_.push_back(std::move(e));
}

template <typename T>
bool ParamTapeT<T>::has(std::string_view name) const {
  return index_.count(std::string(name)) != 0;
}

template <typename T>
std::int64_t ParamTapeT<T>::scalar_count() const {
  std::int64_t n = 0;
  for (const auto& e : entries_) n += e.value.numel();
  return n;
}

template <typename T>
std::size_t ParamTapeT<T>::index_of(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) {
    throw ConfigError("unknown parameter '" + std::string(name) + "'");
  }
  return it->second;
}

template <typename T>
ParamEntry<T>& ParamTapeT<T>::entry(std::string_view name) {
  return entries_[index_of(name)];
}

template <typename T>
const ParamEntry<T>& ParamTapeT<T>::entry(std::string_view name) const {
  return entries_[index_of(name)];
}

template <typename T>
void ParamTapeT<T>::zero_grad() {
  for (auto& e : entries_) e.grad.fill(T(0));
}

template <typename T>
void ParamTapeT<T>::reset_momentum() {
  for (auto& e : entries_) e.momentum.fill(T(0));
}

template <typename T>
std::vector<std::string> ParamTapeT<T>::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.name);
  return out;
}

template <typename T>
void SgdConfigT<T>::validate() const {
  if (!(learning_rate >= T(0))) {
    throw ConfigError("learning_rate must be nonnegative");
  }
  if (!(momentum >= T(0) && momentum < T(1))) {
    throw ConfigError("momentum must lie in [0,1)");
  }
  if (!(weight_decay >= T(0))) {
    throw ConfigError("weight_decay must be nonnegative");
  }
}

ParamMask mask_all() {
  return [](std::string_view) { return true; };
}

ParamMask mask_none() {
  return [](std::string_view) { return false; };
}

ParamMask mask_prefix(std::string prefix) {
  return [prefix = std::move(prefix)](std::string_view name) {
    return name.substr(0, prefix.size()) == prefix;
  };
}

ParamMask mask_any(std::vector<std::string> prefixes) {
  return [prefixes = std::move(prefixes)](std::string_view name) {
    for (const auto& p : prefixes) {
      if (name.substr(0, p.size()) == p) return true;
    }
    return false;
  };
}

template <typename T>
void sgd_step(ParamTapeT<T>& tape, const SgdConfigT<T>& cfg,
              const ParamMask& mask) {
  cfg.validate();
  if (cfg.learning_rate == T(0)) return;
  for (std::size_t i = 0; i < tape.size(); ++i) {
    ParamEntry<T>& e = tape.entry(i);
    if (!mask(e.name)) continue;
    T* v = e.value.data();
    const T* g = e.grad.data();
    T* buf = e.momentum.data();
    const std::int64_t n = e.value.numel();
    for (std::int64_t j = 0; j < n; ++j) {
      const T step = g[j] + cfg.weight_decay * v[j];
      buf[j] = cfg.momentum * buf[j] + step;
      v[j] -= cfg.learning_rate * buf[j];
    }
  }
}

template <typename T>
void sgd_step(ParamTapeT<T>& tape, const SgdConfigT<T>& cfg) {
  sgd_step(tape, cfg, mask_all());
}

template class ParamTapeT<float>;
template class ParamTapeT<double>;
template struct SgdConfigT<float>;
template struct SgdConfigT<double>;
template void sgd_step<float>(ParamTapeT<float>&, const SgdConfigT<float>&,
                              const ParamMask&);
template void sgd_step<double>(ParamTapeT<double>&, const SgdConfigT<double>&,
                               const ParamMask&);
template void sgd_step<float>(ParamTapeT<float>&, const SgdConfigT<float>&);
template void sgd_step<double>(ParamTapeT<double>&, const SgdConfigT<double>&);

}  // namespace ttlab

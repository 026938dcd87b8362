#ifndef TTLAB_GRADCHECK_HPP
#define TTLAB_GRADCHECK_HPP

#include <cmath>
#include <utility>

#include "ttlab/tensor.hpp"

namespace ttlab {

/// Central-difference gradient of loss_fn with respect to x, one scalar at
/// a time. loss_fn is a nullary callable that recomputes the loss from the
/// current contents of x; this routine never touches the autodiff engine,
/// which is the point: it is the independent oracle backward() is checked
/// against.
template <typename T, typename Fn>
TensorT<T> numeric_gradient(TensorT<T>& x, Fn&& loss_fn, T h) {
  TensorT<T> g(x.shape(), T(0));
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    const T orig = x[i];
    x[i] = orig + h;
    const T fp = loss_fn();
    x[i] = orig - h;
    const T fm = loss_fn();
    x[i] = orig;
    g[i] = (fp - fm) / (T(2) * h);
  }
  return g;
}

template <typename T>
T rel_error(T a, T b) {
  return std::abs(a - b) / (std::max(std::abs(a), std::abs(b)) + T(1e-6));
}

// Worst deviation measured against the largest gradient magnitude in the
// block. Entries near zero carry finite-difference truncation noise that
// would swamp a per-element ratio; normalizing by the block scale keeps
// them honest while any real indexing or formula error still surfaces at
// the block scale and trips the bound.
template <typename T>
T max_rel_error(const TensorT<T>& analytic, const TensorT<T>& numeric) {
  if (!analytic.same_shape(numeric)) {
    throw ShapeError("max_rel_error: shapes " + analytic.shape_string() +
                     " and " + numeric.shape_string() + " differ");
  }
  T scale = T(0), worst = T(0);
  const std::int64_t n = analytic.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]));
  }
  return worst / (scale + T(1e-9));
}

}  // namespace ttlab

#endif  // TTLAB_GRADCHECK_HPP

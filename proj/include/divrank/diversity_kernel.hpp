#pragma once

// User-conditioned composite similarity kernel over a candidate set:
// an item-level kernel plus macro- and micro-interest kernels evaluated on
// interest-modulated item vectors.

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include "divrank/data_model.hpp"
#include "divrank/interest.hpp"

namespace divrank {

enum class KernelForm { kDot, kDistance };
enum class InterestProduct { kElementwise, kScalar };

struct KernelHyperparams {
  double a_l = 1.0, b_l = 1.0;
  double a_s = 1.0, b_s = 1.0;
  double a_item = 1.0, b_item = 1.0;
  double beta1 = 0.5, beta2 = 0.5;
  double jitter = 1e-6;
  KernelForm form = KernelForm::kDistance;
  InterestProduct product = InterestProduct::kElementwise;
  bool normalize = true;

  static KernelHyperparams from_config(const ExperimentConfig& c) {
    KernelHyperparams h;
    h.a_l = c.a_l;
    h.b_l = c.b_l;
    h.a_s = c.a_s;
    h.b_s = c.b_s;
    h.a_item = c.a_item;
    h.b_item = c.b_item;
    h.beta1 = c.beta1;
    h.beta2 = c.beta2;
    h.jitter = c.jitter;
    h.form = c.kernel_form == "dot" ? KernelForm::kDot : KernelForm::kDistance;
    h.product = c.interest_product == "scalar" ? InterestProduct::kScalar : InterestProduct::kElementwise;
    h.normalize = c.normalize;
    return h;
  }
};

inline double dot(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ValidationError("dot: dimension mismatch");
  double s = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) s += x[k] * y[k];
  return s;
}

/// a^2 * exp(-(x . y) / b^2).
inline double elementary_kernel(std::span<const double> x, std::span<const double> y, double a, double b) {
  return a * a * std::exp(-dot(x, y) / (b * b));
}

/// a^2 * exp(-|x - y|^2 / b^2).
inline double distance_kernel(std::span<const double> x, std::span<const double> y, double a, double b) {
  if (x.size() != y.size()) throw ValidationError("distance_kernel: dimension mismatch");
  double s = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) s += (x[k] - y[k]) * (x[k] - y[k]);
  return a * a * std::exp(-s / (b * b));
}

inline double kernel_value(KernelForm form, std::span<const double> x, std::span<const double> y, double a,
                           double b) {
  return form == KernelForm::kDot ? elementary_kernel(x, y, a, b) : distance_kernel(x, y, a, b);
}

inline Vector l2_normalized(const Vector& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  if (s == 0.0) return v;
  const double inv = 1.0 / std::sqrt(s);
  Vector out(v.size());
  for (std::size_t k = 0; k < v.size(); ++k) out[k] = v[k] * inv;
  return out;
}

/// Item representation under one interest vector.
inline Vector modulate(const Vector& item, const Vector& interest, InterestProduct product) {
  if (item.size() != interest.size()) throw ValidationError("modulate: dimension mismatch");
  if (product == InterestProduct::kScalar) return Vector{dot(item, interest)};
  Vector out(item.size());
  for (std::size_t k = 0; k < item.size(); ++k) out[k] = item[k] * interest[k];
  return out;
}

namespace detail {

/// Interest vectors rescaled to norm sqrt(d) so the modulated vectors keep
/// the scale of unit-norm items.
inline Vector prepare_interest(const Vector& h, bool normalize) {
  if (!normalize) return h;
  Vector out = l2_normalized(h);
  const double s = std::sqrt(static_cast<double>(h.size()));
  for (double& v : out) v *= s;
  return out;
}

inline Vector prepare_item(const Vector& e, bool normalize) { return normalize ? l2_normalized(e) : e; }

}  // namespace detail

inline double macro_kernel(const Vector& e_i, const Vector& e_j, const InterestProfile& profile,
                           const KernelHyperparams& hp) {
  const Vector h = detail::prepare_interest(profile.h_macro, hp.normalize);
  return kernel_value(hp.form, modulate(detail::prepare_item(e_i, hp.normalize), h, hp.product),
                      modulate(detail::prepare_item(e_j, hp.normalize), h, hp.product), hp.a_l, hp.b_l);
}

inline double micro_kernel(const Vector& e_i, const Vector& e_j, const InterestProfile& profile,
                           const KernelHyperparams& hp) {
  const Vector h = detail::prepare_interest(profile.h_micro, hp.normalize);
  return kernel_value(hp.form, modulate(detail::prepare_item(e_i, hp.normalize), h, hp.product),
                      modulate(detail::prepare_item(e_j, hp.normalize), h, hp.product), hp.a_s, hp.b_s);
}

/// Symmetric N x N matrix in candidate order.
class KernelMatrix {
 public:
  KernelMatrix() = default;
  explicit KernelMatrix(std::size_t n) : n_(n), data_(n * n, 0.0) {}

  static KernelMatrix from_rows(const std::vector<std::vector<double>>& rows) {
    KernelMatrix m(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != rows.size()) throw ValidationError("kernel matrix must be square");
      for (std::size_t j = 0; j < rows.size(); ++j) m(i, j) = rows[i][j];
    }
    return m;
  }

  std::size_t size() const { return n_; }
  double& operator()(std::size_t i, std::size_t j) { return data_[i * n_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * n_ + j]; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * n_, n_}; }

  std::vector<std::string> ids;

 private:
  std::size_t n_ = 0;
  std::vector<double> data_;
};

/// D = D_item + beta1 * D_macro + beta2 * D_micro + jitter * I. Cost O(d N^2).
inline KernelMatrix composite_matrix(const CandidateSet& candidates, const InterestProfile& profile,
                                     const KernelHyperparams& hp) {
  const std::size_t n = candidates.size();
  const std::size_t d = candidates.dim();
  if (hp.beta1 != 0.0 || hp.beta2 != 0.0) {
    if (profile.h_macro.size() != d || profile.h_micro.size() != d)
      throw ValidationError("composite_matrix: profile dimension does not match candidates");
  }
  std::vector<Vector> items, macro, micro;
  items.reserve(n);
  for (const auto& it : candidates.items) items.push_back(detail::prepare_item(it.embedding, hp.normalize));
  if (hp.beta1 != 0.0) {
    const Vector h = detail::prepare_interest(profile.h_macro, hp.normalize);
    for (const auto& e : items) macro.push_back(modulate(e, h, hp.product));
  }
  if (hp.beta2 != 0.0) {
    const Vector h = detail::prepare_interest(profile.h_micro, hp.normalize);
    for (const auto& e : items) micro.push_back(modulate(e, h, hp.product));
  }
  KernelMatrix m(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      double v = kernel_value(hp.form, items[i], items[j], hp.a_item, hp.b_item);
      if (hp.beta1 != 0.0) v += hp.beta1 * kernel_value(hp.form, macro[i], macro[j], hp.a_l, hp.b_l);
      if (hp.beta2 != 0.0) v += hp.beta2 * kernel_value(hp.form, micro[i], micro[j], hp.a_s, hp.b_s);
      if (i == j) v += hp.jitter;
      m(i, j) = v;
      m(j, i) = v;
    }
  }
  for (const auto& it : candidates.items) m.ids.push_back(it.item_id);
  return m;
}

/// Interest-free item-level kernel used by the standard DPP baseline.
inline KernelMatrix item_kernel_matrix(const CandidateSet& candidates, KernelHyperparams hp) {
  hp.beta1 = 0.0;
  hp.beta2 = 0.0;
  return composite_matrix(candidates, InterestProfile{}, hp);
}

inline std::string kernel_to_csv(const KernelMatrix& m) {
  std::ostringstream out;
  out << std::setprecision(17);
  for (std::size_t i = 0; i < m.size(); ++i) {
    for (std::size_t j = 0; j < m.size(); ++j) out << (j ? "," : "") << m(i, j);
    out << "\n";
  }
  return out.str();
}

}  // namespace divrank

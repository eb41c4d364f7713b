#pragma once

#include "hymlab/grid.hpp"

#include <bit>
#include <map>

namespace hymlab {

/// Coefficient algebra for the three coefficient kinds used by Form.
inline void coeff_add(cd& a, const cd& b) { a += b; }
inline void coeff_add(Field& a, const Field& b) {
  if (a.empty()) {
    a = b;
    return;
  }
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}
inline void coeff_add(EndField& a, const EndField& b) {
  if (a.empty()) {
    a = b;
    return;
  }
  a += b;
}

inline cd coeff_scaled(const cd& a, cd s) { return a * s; }
inline Field coeff_scaled(const Field& a, cd s) {
  Field out(a);
  for (auto& x : out) x *= s;
  return out;
}
inline EndField coeff_scaled(const EndField& a, cd s) {
  EndField out(a);
  out *= s;
  return out;
}

inline cd coeff_mul(const cd& a, const cd& b) { return a * b; }
inline Field coeff_mul(const Field& a, const Field& b) {
  Field out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}
inline EndField coeff_mul(const EndField& a, const EndField& b) {
  EndField out(a.rank(), a.points());
  for (std::size_t p = 0; p < a.points(); ++p) out.at(p).noalias() = a.at(p) * b.at(p);
  return out;
}

/// Pointwise trace of an endomorphism field.
inline Field trace(const EndField& e) {
  Field out(e.points());
  for (std::size_t p = 0; p < e.points(); ++p) out[p] = e.at(p).trace();
  return out;
}

/// Sign of sorting the concatenation of two disjoint ascending index sets.
inline int merge_sign(unsigned a, unsigned b) {
  int inversions = 0;
  for (unsigned bb = b; bb; bb &= bb - 1) {
    const unsigned low = bb & (~bb + 1);
    inversions += std::popcount(a & ~(low | (low - 1)));
  }
  return (inversions & 1) ? -1 : 1;
}

/// Differential form sum_{I,J} f_{IJ} dz_I ^ dzbar_J with ascending index sets.
/// Components are keyed by the pair of bitmasks (I, J).
template <class C>
class Form {
 public:
  using key_type = std::pair<unsigned, unsigned>;

  Form() = default;
  explicit Form(int n) : n_(n) {}

  int dim() const noexcept { return n_; }
  bool empty() const noexcept { return comps_.empty(); }

  const C* find(unsigned I, unsigned J) const {
    auto it = comps_.find({I, J});
    return it == comps_.end() ? nullptr : &it->second;
  }
  void set(unsigned I, unsigned J, C c) { comps_[{I, J}] = std::move(c); }
  void add(unsigned I, unsigned J, const C& c) { coeff_add(comps_[{I, J}], c); }

  auto begin() const { return comps_.begin(); }
  auto end() const { return comps_.end(); }

  /// Part of bidegree (p,q).
  Form part(int p, int q) const {
    Form out(n_);
    for (const auto& [k, c] : comps_)
      if (std::popcount(k.first) == p && std::popcount(k.second) == q) out.comps_.emplace(k, c);
    return out;
  }

  Form& operator+=(const Form& o) {
    if (n_ == 0) n_ = o.n_;
    for (const auto& [k, c] : o.comps_) coeff_add(comps_[k], c);
    return *this;
  }
  Form& operator-=(const Form& o) {
    if (n_ == 0) n_ = o.n_;
    for (const auto& [k, c] : o.comps_) coeff_add(comps_[k], coeff_scaled(c, -1.0));
    return *this;
  }
  Form scaled(cd s) const {
    Form out(n_);
    for (const auto& [k, c] : comps_) out.comps_.emplace(k, coeff_scaled(c, s));
    return out;
  }

  unsigned full_mask() const { return (1u << n_) - 1u; }

 private:
  int n_ = 0;
  std::map<key_type, C> comps_;
};

template <class C>
Form<C> operator+(Form<C> a, const Form<C>& b) {
  a += b;
  return a;
}
template <class C>
Form<C> operator-(Form<C> a, const Form<C>& b) {
  a -= b;
  return a;
}

template <class C>
Form<C> wedge(const Form<C>& a, const Form<C>& b) {
  Form<C> out(std::max(a.dim(), b.dim()));
  for (const auto& [ka, ca] : a) {
    for (const auto& [kb, cb] : b) {
      const auto [I, J] = ka;
      const auto [K, L] = kb;
      if ((I & K) || (J & L)) continue;
      int s = ((std::popcount(J) * std::popcount(K)) & 1) ? -1 : 1;
      s *= merge_sign(I, K) * merge_sign(J, L);
      out.add(I | K, J | L, coeff_scaled(coeff_mul(ca, cb), double(s)));
    }
  }
  return out;
}

/// k-fold wedge power, k >= 1.
template <class C>
Form<C> wedge_power(const Form<C>& a, int k) {
  Form<C> out = a;
  for (int i = 1; i < k; ++i) out = wedge(out, a);
  return out;
}

/// Pointwise trace of an endomorphism-valued form.
inline Form<Field> trace(const Form<EndField>& a) {
  Form<Field> out(a.dim());
  for (const auto& [k, c] : a) out.set(k.first, k.second, trace(c));
  return out;
}

/// Complex number s_n with dz_1..dz_n ^ dzbar_1..dzbar_n = s_n omega_0^n / n!.
inline cd top_sign(int n) {
  const double s = ((n * (n - 1) / 2) % 2) ? -1.0 : 1.0;
  return s * std::pow(kI, -n);
}

/// Coefficient of a top-degree form relative to the flat volume form.
inline Field top_density(const Form<Field>& a, std::size_t points) {
  const unsigned m = a.full_mask();
  const Field* c = a.find(m, m);
  if (!c) return Field(points, 0.0);
  return coeff_scaled(*c, top_sign(a.dim()));
}

inline cd top_density(const Form<cd>& a) {
  const unsigned m = a.full_mask();
  const cd* c = a.find(m, m);
  return c ? *c * top_sign(a.dim()) : cd{};
}

/// del-bar of a scalar-valued form, spectrally.
inline Form<Field> d_bar(const Form<Field>& a, const Grid& g) {
  const int n = g.complex_dim();
  Form<Field> out(n);
  for (const auto& [key, f] : a) {
    const auto [I, J] = key;
    const Field fh = g.fft(f);
    for (int k = 0; k < n; ++k) {
      if (J & (1u << k)) continue;
      int s = (std::popcount(I) & 1) ? -1 : 1;
      if (std::popcount(J & ((1u << k) - 1)) & 1) s = -s;
      out.add(I, J | (1u << k), coeff_scaled(g.apply_symbol(fh, g.dsymbol(k, true)), double(s)));
    }
  }
  return out;
}

/// del of a scalar-valued form, spectrally.
inline Form<Field> del(const Form<Field>& a, const Grid& g) {
  const int n = g.complex_dim();
  Form<Field> out(n);
  for (const auto& [key, f] : a) {
    const auto [I, J] = key;
    const Field fh = g.fft(f);
    for (int k = 0; k < n; ++k) {
      if (I & (1u << k)) continue;
      const int s = (std::popcount(I & ((1u << k) - 1)) & 1) ? -1 : 1;
      out.add(I | (1u << k), J, coeff_scaled(g.apply_symbol(fh, g.dsymbol(k, false)), double(s)));
    }
  }
  return out;
}

inline Form<Field> d(const Form<Field>& a, const Grid& g) { return del(a, g) + d_bar(a, g); }

/// A function viewed as a 0-form.
inline Form<Field> zero_form(int n, Field f) {
  Form<Field> out(n);
  out.set(0, 0, std::move(f));
  return out;
}

/// Multiply every coefficient of a form by a scalar field.
inline Form<Field> multiply(const Form<Field>& a, const Field& f) {
  Form<Field> out(a.dim());
  for (const auto& [k, c] : a) out.set(k.first, k.second, coeff_mul(c, f));
  return out;
}

/// Largest coefficient magnitude over all components and points.
inline double sup_abs(const Form<Field>& a) {
  double m = 0.0;
  for (const auto& [k, c] : a) m = std::max(m, sup_abs(c));
  return m;
}

}  // namespace hymlab

#pragma once
// Shared fixtures for the unit and acceptance tests.

#include <cmath>
#include <functional>
#include <memory>

#include "xtransfer/encoders.hpp"
#include "xtransfer/rng.hpp"
#include "xtransfer/tensor.hpp"

namespace xtransfer::testing {

inline ToyArchitecture tiny_architecture(std::size_t res = 16, std::size_t dim = 8) {
  ToyArchitecture a;
  a.conv_widths = {4, 8};
  a.kernel = 3;
  a.resolution = res;
  a.embed_dim = dim;
  a.token_dim = 8;
  a.text_hidden = 16;
  a.oov_buckets = 4;
  return a;
}

// Untrained toy encoder with random weights.
inline std::shared_ptr<ToyDualEncoder> tiny_encoder(std::uint64_t seed, std::size_t res = 16, std::size_t dim = 8) {
  const ToyArchitecture arch = tiny_architecture(res, dim);
  EncoderHandle h;
  h.id = "tiny-" + std::to_string(seed);
  h.architecture_tag = arch.tag();
  h.pretraining_tag = "random";
  h.backend_locator = "memory:" + h.id;
  h.input_resolution = {res, res};
  h.embed_dim = dim;
  return std::make_shared<ToyDualEncoder>(
      ToyDualEncoder::initialize(h, arch, Tokenizer(toy_vocabulary(), arch.oov_buckets), 0.07, seed));
}

// `n` tiny encoders registered in `registry`.
inline SearchSpace tiny_space(std::size_t n, EncoderRegistry& registry, std::size_t res = 16,
                              std::uint64_t first_seed = 100) {
  SearchSpace s;
  s.name = "tiny";
  for (std::size_t i = 0; i < n; ++i) {
    auto e = tiny_encoder(first_seed + i, res);
    registry.add(e);
    s.handles.push_back(e->handle());
  }
  return s;
}

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

inline ImageBatch random_images(std::size_t b, std::size_t res, std::uint64_t seed) {
  return ImageBatch(random_tensor({b, 3, res, res}, seed, 0.0, 1.0));
}

// Central difference of f at coordinate i of x.
inline double central_difference(const std::function<double(const Tensor&)>& f, Tensor x, std::size_t i,
                                 double h = 1e-5) {
  const double x0 = x[i];
  x[i] = x0 + h;
  const double up = f(x);
  x[i] = x0 - h;
  const double down = f(x);
  return (up - down) / (2.0 * h);
}

inline double relative_error(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace xtransfer::testing

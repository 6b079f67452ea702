#pragma once

#include <cmath>
#include <functional>
#include <numeric>
#include <span>
#include <type_traits>
#include <vector>

#include "desdis/rng.hpp"
#include "desdis/tape.hpp"
#include "desdis/tensor.hpp"

namespace desdis {

/// Builds a scalar loss on the given tape from leaves already placed there.
/// Must be a pure function of the leaf values.
template <typename Scalar>
using TapeProgram = std::function<Val(Tape<Scalar>&, std::span<const Val>)>;

/// Compares the reverse-mode gradient of `f` against central differences and
/// returns the maximum over checked coordinates of
///   |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
///
/// When a tensor has more than `max_coords_per_input` elements (and the cap
/// is positive), a deterministic random subset of coordinates is checked.
/// 64-bit only: with float, truncation and roundoff error are inseparable.
template <typename Scalar>
Scalar grad_check(const TapeProgram<Scalar>& f, std::span<const Tensor<Scalar>> inputs,
                  Scalar step = Scalar(1e-5), Index max_coords_per_input = -1,
                  std::uint64_t coord_seed = 0) {
  static_assert(std::is_same_v<Scalar, double>,
                "grad_check requires 64-bit floating point");
  auto eval = [&](std::span<const Tensor<Scalar>> xs) {
    Tape<Scalar> tape;
    std::vector<Val> leaves;
    leaves.reserve(xs.size());
    for (const auto& x : xs) leaves.push_back(tape.leaf(x, /*trainable=*/false));
    return tape.value(f(tape, leaves)).value();
  };

  // Analytic gradients in one reverse pass.
  std::vector<Tensor<Scalar>> analytic;
  {
    Tape<Scalar> tape;
    std::vector<Val> leaves;
    leaves.reserve(inputs.size());
    for (const auto& x : inputs) leaves.push_back(tape.leaf(x, /*trainable=*/true));
    Val loss = f(tape, leaves);
    tape.backward(loss);
    for (Val v : leaves) analytic.push_back(tape.grad(v));
  }

  std::vector<Tensor<Scalar>> work(inputs.begin(), inputs.end());
  Scalar worst = 0;
  for (std::size_t t = 0; t < work.size(); ++t) {
    const Index n = work[t].numel();
    std::vector<Index> coords(static_cast<std::size_t>(n));
    std::iota(coords.begin(), coords.end(), Index{0});
    if (max_coords_per_input > 0 && n > max_coords_per_input) {
      Rng rng(derive_seed(coord_seed, t));
      rng.shuffle(coords);
      coords.resize(static_cast<std::size_t>(max_coords_per_input));
    }
    for (Index c : coords) {
      const Scalar saved = work[t][c];
      work[t][c] = saved + step;
      const Scalar up = eval(work);
      work[t][c] = saved - step;
      const Scalar down = eval(work);
      work[t][c] = saved;
      const Scalar numeric = (up - down) / (2 * step);
      const Scalar a = analytic[t][c];
      const Scalar rel =
          std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), Scalar(1e-8)});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

/// Single-input convenience form.
template <typename Scalar>
Scalar grad_check(const std::function<Val(Tape<Scalar>&, Val)>& f, const Tensor<Scalar>& x,
                  Scalar step = Scalar(1e-5), Index max_coords = -1,
                  std::uint64_t coord_seed = 0) {
  TapeProgram<Scalar> prog = [&f](Tape<Scalar>& tape, std::span<const Val> leaves) {
    return f(tape, leaves[0]);
  };
  return grad_check<Scalar>(prog, std::span<const Tensor<Scalar>>(&x, 1), step, max_coords,
                            coord_seed);
}

}  // namespace desdis

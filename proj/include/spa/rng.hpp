/*
 * Copyright 2026 The spa-kernels Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef SPA_RNG_HPP_
#define SPA_RNG_HPP_

#include <cstddef>
#include <cstdint>

#include <boost/random/mersenne_twister.hpp>

namespace spa {

// Seeded random stream. The engine is the 64-bit Mersenne Twister and all
// distributions come from Boost.Random, whose algorithms are fixed by the
// library rather than the standard library vendor, so a seed reproduces the
// same draws on every platform built against the same Boost.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed);

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64();
  double uniform();  // [0, 1)
  double normal();   // standard normal
  std::size_t uniform_index(std::size_t n);  // uniform on {0, ..., n-1}

  // Independent child stream keyed by `key`; does not advance this stream.
  RngStream split(std::uint64_t key) const;

 private:
  std::uint64_t seed_;
  boost::random::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;

}  // namespace spa

#endif  // SPA_RNG_HPP_

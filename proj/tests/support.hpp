#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "timecaps/model.hpp"

namespace support {

inline std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Random small but valid architecture. The decoder chain is drawn first and
// L follows from it; n is then a divisor of L.
inline timecaps::ModelConfig random_config(std::mt19937_64& rng) {
  timecaps::ModelConfig c;
  while (true) {
    const std::size_t seed_len = pick(rng, 1, 4);
    std::size_t len = seed_len;
    for (auto& d : c.decoder_deconv) {
      d = {pick(rng, 1, 4), pick(rng, 1, 3), pick(rng, 1, 2)};
      len = d.stride * (len - 1) + d.width;
    }
    c.decoder_deconv[4].channels = 1;
    if (len < 4 || len > 48) continue;
    c.L = len;
    c.decoder_fc = {pick(rng, 2, 8), seed_len * pick(rng, 1, 3)};
    break;
  }
  std::vector<std::size_t> divisors;
  for (std::size_t d = 1; d <= std::min<std::size_t>(c.L, 8); ++d) {
    if (c.L % d == 0) divisors.push_back(d);
  }
  c.n = divisors[pick(rng, 0, divisors.size() - 1)];
  c.k = pick(rng, 1, 4);
  c.g1 = pick(rng, 1, 5);
  c.g2 = pick(rng, 1, 5);
  c.g3 = pick(rng, 1, 4);
  c.g_b = pick(rng, 1, 4);
  c.c_p = pick(rng, 1, 3);
  c.a_p = pick(rng, 1, 4);
  c.c_sa = pick(rng, 1, 3);
  c.a_sa = pick(rng, 1, 4);
  c.a_sb = c.a_sa;
  c.c_b = pick(rng, 1, 2);
  c.a_b = pick(rng, 1, 3);
  c.c_sb = pick(rng, 1, 3);
  c.a_sig = pick(rng, 1, 4);
  c.num_classes = pick(rng, 2, 4);
  c.routing_iters = static_cast<int>(pick(rng, 1, 3));
  c.routing_norm = pick(rng, 0, 1) ? timecaps::RoutingNorm::parents : timecaps::RoutingNorm::blocks;
  return c;
}

// Fresh empty directory under the system temp path.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("timecaps_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace support

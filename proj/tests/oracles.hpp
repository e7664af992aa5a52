#pragma once

// Independent reference implementations used only by tests. They share no
// code with the library beyond the Tensor container.

#include <cmath>
#include <cstddef>
#include <vector>

#include "timecaps/capsule.hpp"
#include "timecaps/model.hpp"
#include "timecaps/tensor.hpp"

namespace oracle {

using timecaps::RoutingNorm;
using timecaps::Shape;
using timecaps::Tensor;

// Closed form of squash for one vector.
inline std::vector<double> squash(const std::vector<double>& v) {
  double n2 = 0.0;
  for (double x : v) n2 += x * x;
  std::vector<double> out(v.size(), 0.0);
  if (n2 == 0.0) return out;
  const double f = n2 / (1.0 + n2) / std::sqrt(n2);
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = f * v[i];
  return out;
}

struct RoutingTrace {
  Tensor output;                   // [P x R x D]
  std::vector<Tensor> couplings;   // per iteration, [P x R x S]
};

// Scalar transcription of routing by agreement with explicit index loops:
//   k_prs = exp(b_prs) / sum over the normalized axis
//   S_pr  = sum_s k_prs V_prs,  S_hat = squash(S_pr)
//   b_prs += <S_hat_pr, V_prs>  (except after the last iteration)
inline RoutingTrace routing(const Tensor& votes, int iterations, RoutingNorm norm) {
  const std::size_t P = votes.dim(0), R = votes.dim(1), S = votes.dim(2), D = votes.dim(3);
  auto V = [&](std::size_t p, std::size_t r, std::size_t s, std::size_t d) {
    return votes[((p * R + r) * S + s) * D + d];
  };
  std::vector<double> b(P * R * S, 0.0);
  auto B = [&](std::size_t p, std::size_t r, std::size_t s) -> double& { return b[(p * R + r) * S + s]; };
  RoutingTrace trace{Tensor({P, R, D}), {}};
  for (int it = 0; it < iterations; ++it) {
    Tensor k({P, R, S});
    for (std::size_t p = 0; p < P; ++p) {
      for (std::size_t r = 0; r < R; ++r) {
        for (std::size_t s = 0; s < S; ++s) {
          double denom = 0.0;
          if (norm == RoutingNorm::parents) {
            for (std::size_t r2 = 0; r2 < R; ++r2) denom += std::exp(B(p, r2, s));
          } else {
            for (std::size_t s2 = 0; s2 < S; ++s2) denom += std::exp(B(p, r, s2));
          }
          k[(p * R + r) * S + s] = std::exp(B(p, r, s)) / denom;
        }
      }
    }
    trace.couplings.push_back(k);
    for (std::size_t p = 0; p < P; ++p) {
      for (std::size_t r = 0; r < R; ++r) {
        std::vector<double> s_pr(D, 0.0);
        for (std::size_t s = 0; s < S; ++s) {
          for (std::size_t d = 0; d < D; ++d) s_pr[d] += k[(p * R + r) * S + s] * V(p, r, s, d);
        }
        const std::vector<double> hat = squash(s_pr);
        for (std::size_t d = 0; d < D; ++d) trace.output[(p * R + r) * D + d] = hat[d];
        if (it + 1 < iterations) {
          for (std::size_t s = 0; s < S; ++s) {
            double agree = 0.0;
            for (std::size_t d = 0; d < D; ++d) agree += hat[d] * V(p, r, s, d);
            B(p, r, s) += agree;
          }
        }
      }
    }
  }
  return trace;
}

// Parameter count from the layer formulas: conv kernels Cout*g*Cin (+Cout
// bias), vote kernels without bias, class weights N*J*a_sig*a_s, FC and
// deconvolution layers with biases, plus alpha and beta.
inline std::size_t parameter_count(const timecaps::ModelConfig& c) {
  const std::size_t fa = c.c_p * c.a_p;
  const std::size_t fb = c.c_b * c.a_b;
  const std::size_t N = c.L * c.c_sa + (c.L / c.n) * c.c_sb;
  std::size_t total = 0;
  total += c.k * c.g1 + c.k;                    // front
  total += fa * c.g2 * c.k + fa;                // cell A conv
  total += c.c_sa * c.a_sa * c.g3 * c.a_p;      // cell A votes
  total += fb * c.k + fb;                       // cell B 1x1 reduction
  total += fb * c.g_b * fb + fb;                // cell B conv
  total += c.c_sb * c.a_sb * c.g_b * fb;        // cell B votes
  total += 2;                                   // alpha, beta
  total += N * c.num_classes * c.a_sig * c.a_sa;  // class transforms
  const std::size_t in = c.num_classes * c.a_sig;
  total += c.decoder_fc[0] * in + c.decoder_fc[0];
  total += c.decoder_fc[1] * c.decoder_fc[0] + c.decoder_fc[1];
  std::size_t len = c.L;
  for (std::size_t i = 5; i-- > 0;) len = (len - c.decoder_deconv[i].width) / c.decoder_deconv[i].stride + 1;
  std::size_t cin = c.decoder_fc[1] / len;
  for (const auto& d : c.decoder_deconv) {
    total += cin * d.width * d.channels + d.channels;
    cin = d.channels;
  }
  return total;
}

// Expected intermediate shapes of the forward pass.
struct Shapes {
  Shape phi, a_features, a_primary, a_votes, a_routed, a_output;
  Shape b_features, b_primary, b_votes, b_routed, b_output;
  Shape omega_cc, class_votes, class_capsules, class_lengths, reconstruction;
  std::size_t N = 0;
};

inline Shapes shapes(const timecaps::ModelConfig& c) {
  const std::size_t segs = c.L / c.n;
  const std::size_t fb = c.c_b * c.a_b;
  Shapes s;
  s.N = c.L * c.c_sa + segs * c.c_sb;
  s.phi = {c.L, c.k};
  s.a_features = {c.L, c.c_p * c.a_p};
  s.a_primary = {c.L, c.c_p, c.a_p};
  s.a_votes = {c.L, (c.c_p * c.a_p - c.a_p) / c.a_p + 1, c.c_sa * c.a_sa};
  s.a_routed = {c.L, c.c_sa, c.a_sa};
  s.a_output = {c.L * c.c_sa, c.a_sa};
  s.b_features = {c.L, fb};
  s.b_primary = {segs, c.n, fb};
  s.b_votes = {segs, (c.n * fb - fb) / fb + 1, c.c_sb * c.a_sb};
  s.b_routed = {segs, c.c_sb, c.a_sb};
  s.b_output = {segs * c.c_sb, c.a_sb};
  s.omega_cc = {s.N, c.a_sa};
  s.class_votes = {1, c.num_classes, s.N, c.a_sig};
  s.class_capsules = {c.num_classes, c.a_sig};
  s.class_lengths = {c.num_classes};
  s.reconstruction = {c.L};
  return s;
}

}  // namespace oracle

#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "mtf/random.hpp"
#include "mtf/tensor.hpp"

namespace test {

inline mtf::Tensor random_tensor(mtf::Rng& rng, mtf::Shape shape, double lo = -1.0, double hi = 1.0) {
  mtf::Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

inline double max_abs_diff(const mtf::Tensor& a, const mtf::Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Fresh empty directory under the system temp dir, named after the test.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("mtf_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

// Direct-loop "same" convolution over [C, D, H, W] with kernel [Co, C, kD, kH, kW].
inline mtf::Tensor naive_conv3d(const mtf::Tensor& x, const mtf::Tensor& k, const mtf::Tensor* bias) {
  const std::size_t C = x.dim(0), D = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Co = k.dim(0), kD = k.dim(2), kH = k.dim(3), kW = k.dim(4);
  mtf::Tensor out(mtf::Shape{Co, D, H, W});
  for (std::size_t o = 0; o < Co; ++o)
    for (std::size_t d = 0; d < D; ++d)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w) {
          double acc = bias ? (*bias)[o] : 0.0;
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t a = 0; a < kD; ++a)
              for (std::size_t b = 0; b < kH; ++b)
                for (std::size_t e = 0; e < kW; ++e) {
                  const long dd = long(d) + long(a) - long(kD / 2);
                  const long hh = long(h) + long(b) - long(kH / 2);
                  const long ww = long(w) + long(e) - long(kW / 2);
                  if (dd < 0 || hh < 0 || ww < 0 || dd >= long(D) || hh >= long(H) || ww >= long(W)) continue;
                  acc += k.at({o, c, a, b, e}) * x.at({c, std::size_t(dd), std::size_t(hh), std::size_t(ww)});
                }
          out.at({o, d, h, w}) = acc;
        }
  return out;
}

inline mtf::Tensor naive_conv2d(const mtf::Tensor& x, const mtf::Tensor& k, const mtf::Tensor* bias) {
  const mtf::Tensor x3 = x.reshaped(mtf::Shape{x.dim(0), 1, x.dim(1), x.dim(2)});
  const mtf::Tensor k3 = k.reshaped(mtf::Shape{k.dim(0), k.dim(1), 1, k.dim(2), k.dim(3)});
  const mtf::Tensor out = naive_conv3d(x3, k3, bias);
  return out.reshaped(mtf::Shape{k.dim(0), x.dim(1), x.dim(2)});
}

}  // namespace test

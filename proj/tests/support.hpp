// Copyright (c) 2026 The mogu-toy Authors
// SPDX-License-Identifier: Apache-2.0

// Shared fixtures for the unit tests: a tiny model configuration, parameter
// randomization and a dense reference forward pass written with plain loops.

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "mogu/model.hpp"

namespace mogu::testing {

inline ModelConfig tiny_config(std::uint64_t seed = 0) {
  ModelConfig c;
  c.d_model = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_ff = 16;
  c.max_seq_len = 48;
  c.d_router = 4;
  c.d_lora_r = 2;
  c.seed = seed;
  return c;
}

inline void randomize(const std::vector<NamedTensor>& params, std::mt19937_64& rng, double sd) {
  std::normal_distribution<double> nd(0.0, sd);
  for (const auto& p : params) {
    Tensor t = p.tensor;
    for (auto& v : t.mutable_data()) v = nd(rng);
  }
}

/// Model with nonzero adapters and routers so every path is exercised.
inline MoguModel random_model(std::uint64_t seed, ModelConfig config = tiny_config()) {
  config.seed = seed;
  auto model = init_model(config);
  std::mt19937_64 rng(seed ^ 0x5eedULL);
  randomize(model.adapter_parameters(AdapterKind::Glad), rng, 0.3);
  randomize(model.adapter_parameters(AdapterKind::Unwill), rng, 0.3);
  randomize(model.adapter_parameters(AdapterKind::Sft), rng, 0.3);
  randomize(model.router_parameters(), rng, 0.3);
  return model;
}

inline void set_all(const Tensor& t, double value) {
  Tensor h = t;
  for (auto& v : h.mutable_data()) v = value;
}

/// Temporary directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("mogu-test-" + tag + "-" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// ---- dense reference implementation ------------------------------------------

using Mat = std::vector<std::vector<double>>;

inline Mat to_mat(const Tensor& t) {
  const std::size_t r = t.rank() == 1 ? 1 : t.shape()[0];
  const std::size_t c = t.rank() == 1 ? t.shape()[0] : t.shape()[1];
  Mat m(r, std::vector<double>(c));
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) m[i][j] = t.data()[i * c + j];
  return m;
}

inline std::vector<double> to_vec(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

inline Mat mm(const Mat& a, const Mat& b) {
  Mat out(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b[0].size(); ++j)
      for (std::size_t k = 0; k < b.size(); ++k) out[i][j] += a[i][k] * b[k][j];
  return out;
}

inline Mat plus(Mat a, const Mat& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) a[i][j] += b[i][j];
  return a;
}

inline Mat times(Mat a, double s) {
  for (auto& row : a)
    for (auto& v : row) v *= s;
  return a;
}

inline Mat ln(const Mat& x, const std::vector<double>& g, const std::vector<double>& b) {
  Mat out = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double n = static_cast<double>(x[i].size());
    double mu = 0.0;
    for (double v : x[i]) mu += v;
    mu /= n;
    double var = 0.0;
    for (double v : x[i]) var += (v - mu) * (v - mu);
    var /= n;
    for (std::size_t j = 0; j < x[i].size(); ++j) out[i][j] = (x[i][j] - mu) / std::sqrt(var + 1e-5) * g[j] + b[j];
  }
  return out;
}

inline Mat attention(const Mat& q, const Mat& k, const Mat& v, std::size_t heads) {
  const std::size_t t = q.size(), d = q[0].size(), dh = d / heads;
  Mat out(t, std::vector<double>(d, 0.0));
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < t; ++i) {
      std::vector<double> s(i + 1);
      for (std::size_t j = 0; j <= i; ++j) {
        double dot = 0.0;
        for (std::size_t c = 0; c < dh; ++c) dot += q[i][h * dh + c] * k[j][h * dh + c];
        s[j] = dot / std::sqrt(static_cast<double>(dh));
      }
      const double mx = *std::max_element(s.begin(), s.end());
      double z = 0.0;
      for (auto& e : s) z += (e = std::exp(e - mx));
      for (std::size_t j = 0; j <= i; ++j)
        for (std::size_t c = 0; c < dh; ++c) out[i][h * dh + c] += s[j] / z * v[j][h * dh + c];
    }
  }
  return out;
}

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

/// Router weight per row of h, evaluated scalar by scalar.
inline std::vector<double> router_ref(const Mat& h, const RouterLayer& r) {
  const Mat u = to_mat(r.u), v = to_mat(r.v), w = to_mat(r.w);
  const auto b1 = to_vec(r.b1);
  const double b2 = r.b2.data()[0];
  std::vector<double> out;
  for (const auto& row : h) {
    std::vector<double> hu(u[0].size(), 0.0);
    for (std::size_t k = 0; k < u[0].size(); ++k)
      for (std::size_t j = 0; j < row.size(); ++j) hu[k] += row[j] * u[j][k];
    double z = b2;
    for (std::size_t j = 0; j < v[0].size(); ++j) {
      double huv = b1[j];
      for (std::size_t k = 0; k < hu.size(); ++k) huv += hu[k] * v[k][j];
      z += huv * w[j][0];
    }
    out.push_back(sigmoid(z));
  }
  return out;
}

inline Mat oproj_ref(const Mat& h, const Tensor& wo, const LoraLayer& a, double scale) {
  return plus(mm(h, to_mat(wo)), times(mm(mm(h, to_mat(a.a)), to_mat(a.b)), scale));
}

/// Reference forward. In MoGU mode the output projection is
/// w_glad·o_glad + w_unwill·o_unwill, evaluated literally.
inline Mat forward_ref(const MoguModel& m, const std::vector<int>& tokens, Mode mode) {
  const auto& b = m.base;
  const Mat emb = to_mat(b.tok_emb), pos = to_mat(b.pos_emb);
  Mat x;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    std::vector<double> row(emb[0].size());
    for (std::size_t j = 0; j < row.size(); ++j) row[j] = emb[tokens[i]][j] + pos[i][j];
    x.push_back(row);
  }
  for (std::size_t l = 0; l < b.layers.size(); ++l) {
    const auto& L = b.layers[l];
    const Mat a = ln(x, to_vec(L.ln1_gamma), to_vec(L.ln1_beta));
    const Mat h = attention(mm(a, to_mat(L.wq)), mm(a, to_mat(L.wk)), mm(a, to_mat(L.wv)),
                            static_cast<std::size_t>(m.config.n_heads));
    Mat o;
    switch (mode) {
      case Mode::Base: o = mm(h, to_mat(L.wo)); break;
      case Mode::Glad: o = oproj_ref(h, L.wo, m.glad.layers[l], m.glad.scale); break;
      case Mode::Unwill: o = oproj_ref(h, L.wo, m.unwill.layers[l], m.unwill.scale); break;
      case Mode::Sft: o = oproj_ref(h, L.wo, m.sft.layers[l], m.sft.scale); break;
      case Mode::MoGU: {
        const Mat og = oproj_ref(h, L.wo, m.glad.layers[l], m.glad.scale);
        const Mat ou = oproj_ref(h, L.wo, m.unwill.layers[l], m.unwill.scale);
        const auto wg = router_ref(h, m.r_glad.layers[l]);
        const auto wu = router_ref(h, m.r_unwill.layers[l]);
        o = og;
        for (std::size_t i = 0; i < o.size(); ++i)
          for (std::size_t j = 0; j < o[i].size(); ++j) o[i][j] = wg[i] * og[i][j] + wu[i] * ou[i][j];
        break;
      }
    }
    x = plus(x, o);
    const Mat f = ln(x, to_vec(L.ln2_gamma), to_vec(L.ln2_beta));
    Mat up = mm(f, to_mat(L.w_up));
    const auto bu = to_vec(L.b_up);
    for (auto& row : up)
      for (std::size_t j = 0; j < row.size(); ++j) row[j] = std::max(0.0, row[j] + bu[j]);
    Mat down = mm(up, to_mat(L.w_down));
    const auto bd = to_vec(L.b_down);
    for (auto& row : down)
      for (std::size_t j = 0; j < row.size(); ++j) row[j] += bd[j];
    x = plus(x, down);
  }
  return mm(ln(x, to_vec(b.lnf_gamma), to_vec(b.lnf_beta)), to_mat(b.w_out));
}

inline double max_abs_diff(const Tensor& t, const Mat& ref) {
  double worst = 0.0;
  const auto m = to_mat(t);
  for (std::size_t i = 0; i < ref.size(); ++i)
    for (std::size_t j = 0; j < ref[i].size(); ++j) worst = std::max(worst, std::abs(m[i][j] - ref[i][j]));
  return worst;
}

}  // namespace mogu::testing

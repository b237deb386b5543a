// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "customdiff/denoiser.hpp"
#include "customdiff/error.hpp"
#include "customdiff/linalg.hpp"
#include "customdiff/random.hpp"

using namespace cdiff;

namespace {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

Mat to_rows(const Matrix& m) {
  Mat out(m.rows(), Vec(m.cols()));
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out[i][j] = m(i, j);
  return out;
}

// x·Wᵀ (+ bias column when `biased`).
Mat apply(const Mat& x, const Matrix& w, bool biased) {
  const std::size_t in = w.cols() - (biased ? 1 : 0);
  Mat y(x.size(), Vec(w.rows(), 0.0));
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t o = 0; o < w.rows(); ++o) {
      double s = biased ? w(o, in) : 0.0;
      for (std::size_t k = 0; k < in; ++k) s += x[i][k] * w(o, k);
      y[i][o] = s;
    }
  return y;
}

Mat attention(const Mat& xq, const Mat& xkv, const Matrix& wq, const Matrix& wk, const Matrix& wv) {
  const Mat q = apply(xq, wq, false), k = apply(xkv, wk, false), v = apply(xkv, wv, false);
  const double scale = 1.0 / std::sqrt(static_cast<double>(wq.rows()));
  Mat out(xq.size(), Vec(wv.rows(), 0.0));
  for (std::size_t i = 0; i < q.size(); ++i) {
    Vec logit(k.size());
    double mx = -1e300;
    for (std::size_t j = 0; j < k.size(); ++j) {
      double s = 0.0;
      for (std::size_t a = 0; a < q[i].size(); ++a) s += q[i][a] * k[j][a];
      logit[j] = s * scale;
      mx = std::max(mx, logit[j]);
    }
    double z = 0.0;
    for (double& l : logit) z += (l = std::exp(l - mx));
    for (std::size_t j = 0; j < k.size(); ++j)
      for (std::size_t a = 0; a < v[j].size(); ++a) out[i][a] += logit[j] / z * v[j][a];
  }
  return out;
}

void add_into(Mat& h, const Mat& d) {
  for (std::size_t i = 0; i < h.size(); ++i)
    for (std::size_t j = 0; j < h[i].size(); ++j) h[i][j] += d[i][j];
}

// Independent scalar forward pass of the patch transformer.
Matrix scalar_forward(const DenoiserNet& net, const Matrix& x, std::size_t t, const Matrix& c) {
  const ModelDims& d = net.dims();
  const auto& p = net.params();
  const std::size_t G = d.grid(), P = d.patch, F = d.hidden;
  Mat tokens(G * G, Vec(P * P));
  for (std::size_t i = 0; i < d.image_size; ++i)
    for (std::size_t j = 0; j < d.image_size; ++j) tokens[(i / P) * G + j / P][(i % P) * P + j % P] = x(i, j);
  Vec emb(F, 0.0);
  for (std::size_t k = 0; k < F / 2; ++k) {
    const double freq = std::pow(10000.0, -static_cast<double>(k) / static_cast<double>(F / 2));
    emb[k] = std::sin(static_cast<double>(t) * freq);
    emb[F / 2 + k] = std::cos(static_cast<double>(t) * freq);
  }
  const Vec temb = apply(Mat{emb}, p.at("time"), true)[0];
  Mat h = apply(tokens, p.at("input"), true);
  for (std::size_t i = 0; i < h.size(); ++i)
    for (std::size_t j = 0; j < F; ++j) h[i][j] += p.at("pos")(i, j) + temb[j] / (1.0 + std::exp(-temb[j]));
  const Mat text = to_rows(c);
  for (std::size_t l = 1; l <= d.blocks; ++l) {
    const std::string b = "block" + std::to_string(l) + ".";
    add_into(h, apply(attention(h, h, p.at(b + "self.q"), p.at(b + "self.k"), p.at(b + "self.v")), p.at(b + "self.o"), false));
    add_into(h, apply(attention(h, text, p.at(b + "cross.q"), p.at(b + "cross.k"), p.at(b + "cross.v")), p.at(b + "cross.o"), false));
    Mat z = apply(h, p.at(b + "mlp.fc1"), true);
    for (auto& row : z)
      for (double& v : row) v = v / (1.0 + std::exp(-v));
    add_into(h, apply(z, p.at(b + "mlp.fc2"), true));
  }
  const Mat out = apply(h, p.at("output"), true);
  Matrix img(d.image_size, d.image_size);
  for (std::size_t i = 0; i < d.image_size; ++i)
    for (std::size_t j = 0; j < d.image_size; ++j) img(i, j) = out[(i / P) * G + j / P][(i % P) * P + j % P];
  return img;
}

// The zero-initialised output head makes the untrained net output zeros;
// give it weights so the comparison is not vacuous.
DenoiserNet live_net(std::uint64_t seed) {
  DenoiserNet net = DenoiserNet::create(ModelDims{}, seed);
  Rng rng(seed + 100);
  net.params().at("output") = gaussian(net.params().at("output").rows(), net.params().at("output").cols(), rng, 0.2);
  return net;
}

}  // namespace

TEST_CASE("registry layout and roles") {
  const DenoiserNet net = DenoiserNet::create(ModelDims{}, 1);
  const auto& p = net.params();
  CHECK(p.at(DenoiserNet::cross_key_name(1)).rows() == 16);
  CHECK(p.at(DenoiserNet::cross_key_name(1)).cols() == 16);
  CHECK(p.find("block2.cross.v")->role == Role::CrossValue);
  CHECK(p.find("block1.cross.q")->role == Role::CrossQuery);
  CHECK(p.find("block1.self.k")->role == Role::SelfAttn);
  CHECK(p.find("output")->role == Role::Other);
  std::size_t kv = 0;
  for (const auto& e : p.entries()) kv += is_kv(e.role);
  CHECK(kv == 4);
  CHECK(group_of(Role::CrossOut) == RoleGroup::CrossAttention);
  CHECK(role_from_name("cross_kv_key") == Role::CrossKey);
  CHECK_FALSE(role_from_name("nope").has_value());
  CHECK(p.same_structure(p.zeros_like()));
  CHECK_THROWS_AS(p.at("missing"), Error);
  ModelDims bad;
  bad.patch = 3;
  CHECK_THROWS_AS(DenoiserNet::create(bad, 1), Error);
}

TEST_CASE("softmax_rows matches a scalar loop") {
  const Matrix l = Matrix::from_rows({{0.3, -1.2, 2.0}, {5.0, 5.0, -3.0}});
  const Matrix s = softmax_rows(l);
  for (std::size_t i = 0; i < 2; ++i) {
    double z = 0.0;
    for (std::size_t j = 0; j < 3; ++j) z += std::exp(l(i, j));
    for (std::size_t j = 0; j < 3; ++j) CHECK(s(i, j) == doctest::Approx(std::exp(l(i, j)) / z).epsilon(1e-14));
  }
  const Matrix big = softmax_rows(Matrix::from_rows({{1000.0, 1000.0}}));
  CHECK(big(0, 0) == doctest::Approx(0.5));
}

TEST_CASE("zero network predicts zero") {
  const DenoiserNet net = DenoiserNet::zeros(ModelDims{});
  Rng rng(1);
  const Matrix out = predict_eps(net, gaussian(8, 8, rng), 10, gaussian(3, 16, rng));
  CHECK(out.rows() == 8);
  CHECK(out.cols() == 8);
  for (double v : out.data()) CHECK(v == 0.0);
}

TEST_CASE("forward pass matches the scalar re-implementation") {
  const DenoiserNet net = live_net(7);
  Rng rng(8);
  for (std::size_t t : {1u, 37u, 100u}) {
    const Matrix x = gaussian(8, 8, rng), c = gaussian(5, 16, rng);
    const Matrix fast = predict_eps(net, x, t, c);
    const Matrix slow = scalar_forward(net, x, t, c);
    CHECK(max_abs_diff(fast, slow) < 1e-12);
    CHECK(linalg::frobenius_norm(fast) > 1e-3);
  }
  CHECK_THROWS_AS(predict_eps(net, Matrix(4, 4), 1, Matrix(2, 16)), Error);
  CHECK_THROWS_AS(predict_eps(net, Matrix(8, 8), 1, Matrix(2, 15)), Error);
}

TEST_CASE("cross_attention weights are row-stochastic") {
  Rng rng(2);
  const Matrix f = gaussian(4, 6, rng), c = gaussian(3, 5, rng);
  const auto r = cross_attention(f, c, gaussian(2, 6, rng), gaussian(2, 5, rng), gaussian(4, 5, rng));
  CHECK(r.out.rows() == 4);
  CHECK(r.out.cols() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 3; ++j) s += r.trace.weights(i, j);
    CHECK(s == doctest::Approx(1.0));
  }
}

TEST_CASE("mean_attention_map averages traces") {
  AttentionTrace a{Matrix(4, 2, 0.25), 1, 5};
  AttentionTrace b{Matrix(4, 2, 0.75), 2, 5};
  b.weights(3, 1) = 0.0;
  const Matrix m = mean_attention_map({a, b}, 1);
  CHECK(m.rows() == 2);
  CHECK(m(0, 0) == doctest::Approx(0.5));
  CHECK(m(1, 1) == doctest::Approx(0.125));
  CHECK_THROWS_AS(mean_attention_map({}, 0), Error);
  CHECK_THROWS_AS(mean_attention_map({a}, 2), Error);
}

TEST_CASE("patchify round trip and timestep embedding") {
  Rng rng(3);
  const Matrix img = gaussian(8, 8, rng);
  CHECK(bit_equal(unpatchify(patchify(img, 2), 8, 2), img));
  const Matrix e = timestep_embedding(3, 8);
  CHECK(e(0, 0) == doctest::Approx(std::sin(3.0)));
  CHECK(e(0, 4) == doctest::Approx(std::cos(3.0)));
}

TEST_CASE("analytic gradients match central differences for every entry") {
  DenoiserNet net = live_net(11);
  Rng rng(12);
  const Matrix x = gaussian(8, 8, rng), eps = gaussian(8, 8, rng);
  Matrix c = gaussian(4, 16, rng);
  Matrix mask(8, 8, 1.0);
  for (std::size_t j = 0; j < 8; ++j) mask(0, j) = 0.0;
  const std::size_t t = 23;
  Gradients g{net.params().zeros_like(), {}};
  accumulate_gradients(net, x, t, c, eps, mask, 1.0, 1.0, g);

  auto loss = [&]() {
    Gradients tmp{net.params().zeros_like(), {}};
    return accumulate_gradients(net, x, t, c, eps, mask, 1.0, 1.0, tmp);
  };
  const double h = 1e-5;
  for (auto& e : net.params().entries()) {
    Matrix fd(e.value.rows(), e.value.cols());
    // A strided subset keeps the runtime small; K/V get every element.
    const std::size_t stride = is_kv(e.role) ? 1 : 7;
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < e.value.size(); i += stride) {
      const double keep = e.value[i];
      e.value[i] = keep + h;
      const double up = loss();
      e.value[i] = keep - h;
      const double down = loss();
      e.value[i] = keep;
      const double d = (up - down) / (2.0 * h);
      const double a = g.params.at(e.name)[i];
      num += (a - d) * (a - d);
      den += std::max(a * a, d * d);
    }
    INFO(e.name);
    CHECK(std::sqrt(num / std::max(den, 1e-30)) <= 1e-4);
  }
  // Caption features.
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double keep = c[i];
    c[i] = keep + h;
    const double up = loss();
    c[i] = keep - h;
    const double down = loss();
    c[i] = keep;
    const double d = (up - down) / (2.0 * h);
    num += (g.text[i] - d) * (g.text[i] - d);
    den += std::max(g.text[i] * g.text[i], d * d);
  }
  CHECK(std::sqrt(num / den) <= 1e-4);
}

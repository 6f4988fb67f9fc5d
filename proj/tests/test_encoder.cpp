#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "cda/encoder.hpp"
#include "cda/error.hpp"
#include "test_util.hpp"

using namespace cda;

namespace {

using Mat = std::vector<std::vector<double>>;

Mat to_mat(const Tensor& t) {
  Mat m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t.at(i, j);
  return m;
}

// x [L x in] times W^T for W [out x in].
Mat lin(const Mat& x, const Tensor& w, const Tensor* b = nullptr) {
  Mat y(x.size(), std::vector<double>(w.rows(), 0.0));
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t o = 0; o < w.rows(); ++o) {
      double s = b ? (*b)[o] : 0.0;
      for (std::size_t k = 0; k < w.cols(); ++k) s += x[i][k] * w.at(o, k);
      y[i][o] = s;
    }
  return y;
}

Mat add(const Mat& a, const Mat& b) {
  Mat c = a;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) c[i][j] += b[i][j];
  return c;
}

Mat ln(const Mat& x, const Tensor& g, const Tensor& b) {
  Mat y = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double n = static_cast<double>(x[i].size());
    double mu = 0, var = 0;
    for (double v : x[i]) mu += v / n;
    for (double v : x[i]) var += (v - mu) * (v - mu) / n;
    for (std::size_t j = 0; j < x[i].size(); ++j) y[i][j] = g[j] * (x[i][j] - mu) / std::sqrt(var + 1e-12) + b[j];
  }
  return y;
}

Mat head(const Mat& h, const Tensor& wq, const Tensor& wk, const Tensor& wv) {
  const Mat q = lin(h, wq), k = lin(h, wk), v = lin(h, wv);
  const std::size_t L = h.size(), dh = wq.rows();
  Mat out(L, std::vector<double>(dh, 0.0));
  for (std::size_t i = 0; i < L; ++i) {
    std::vector<double> s(L);
    double mx = -1e300, z = 0;
    for (std::size_t j = 0; j < L; ++j) {
      double dotp = 0;
      for (std::size_t c = 0; c < dh; ++c) dotp += q[i][c] * k[j][c];
      s[j] = dotp / std::sqrt(static_cast<double>(dh));
      mx = std::max(mx, s[j]);
    }
    for (double& x : s) z += (x = std::exp(x - mx));
    for (std::size_t j = 0; j < L; ++j)
      for (std::size_t c = 0; c < dh; ++c) out[i][c] += s[j] / z * v[j][c];
  }
  return out;
}

Mat layer_oracle(const LayerParams& p, const Mat& h) {
  Mat cat(h.size());
  for (std::size_t i = 0; i < p.wq.size(); ++i) {
    const Mat o = head(h, p.wq[i], p.wk[i], p.wv[i]);
    for (std::size_t r = 0; r < h.size(); ++r) cat[r].insert(cat[r].end(), o[r].begin(), o[r].end());
  }
  const Mat sa = ln(add(h, lin(cat, p.wo)), p.ln1_gain, p.ln1_bias);
  Mat inner = lin(sa, p.w1, &p.b1);
  for (auto& row : inner)
    for (double& x : row) x = 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
  return ln(add(lin(inner, p.w2, &p.b2), sa), p.ln2_gain, p.ln2_bias);
}

EncoderConfig small_config() {
  EncoderConfig c;
  c.d = 8;
  c.n_heads = 2;
  c.d_ff = 12;
  c.n_layers = 2;
  c.vocab_size = 10;
  c.max_len = 12;
  return c;
}

}  // namespace

TEST(Encoder, LayerMatchesLoopOracle) {
  Rng rng(3);
  ParamStore store;
  const Encoder enc(small_config(), store, rng);
  // Perturb layer-norm parameters so they take part in the comparison.
  for (const auto& n : store.names_with_prefix("encoder/layer/0/ln"))
    for (double& v : store.at(n).mutable_data()) v += rng.normal(0.0, 0.3);
  const Tensor h = cda::testing::random_tensor({5, 8}, rng, 1.0, false);
  const Tensor y = bert_layer(enc.layer(0), h, 1e-12, {});
  const Mat oracle = layer_oracle(enc.layer(0), to_mat(h));
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(y.at(i, j), oracle[i][j], 1e-12);
}

TEST(Encoder, EncodeMatchesStackedOracle) {
  Rng rng(4);
  ParamStore store;
  const EncoderConfig cfg = small_config();
  const Encoder enc(cfg, store, rng);
  const std::vector<std::size_t> ids{2, 5, 3, 7, 7, 3}, seg{0, 0, 0, 1, 1, 1};
  const Tensor y = enc.encode(ids, seg);
  Mat h(ids.size(), std::vector<double>(cfg.d));
  const auto& e = enc.embeddings();
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (std::size_t j = 0; j < cfg.d; ++j) h[i][j] = e.token.at(ids[i], j) + e.position.at(i, j) + e.segment.at(seg[i], j);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) h = layer_oracle(enc.layer(l), h);
  EXPECT_EQ(y.shape(), (Shape{6, 8}));
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (std::size_t j = 0; j < cfg.d; ++j) EXPECT_NEAR(y.at(i, j), h[i][j], 1e-12);
}

TEST(Encoder, BaseModelCounts) {
  EncoderConfig bert;
  bert.d = 768;
  bert.n_heads = 12;
  bert.d_ff = 3072;
  bert.n_layers = 1;
  EXPECT_EQ(param_count(bert, CountConvention::kWeightsOnly), 7'077'888u);
  bert.n_layers = 12;
  EXPECT_EQ(param_count(bert, CountConvention::kWeightsOnly), 84'934'656u);
}

TEST(Encoder, CountsMatchEnumeratedTensors) {
  Rng rng(5);
  for (std::size_t trial = 0; trial < 10; ++trial) {
    EncoderConfig c;
    c.n_heads = 1 + rng.below(4);
    c.d = c.n_heads * (1 + rng.below(6));
    c.d_ff = 1 + rng.below(40);
    c.n_layers = 1 + rng.below(3);
    c.vocab_size = 4 + rng.below(30);
    c.max_len = 1 + rng.below(50);
    ParamStore store;
    const Encoder enc(c, store, rng);
    std::size_t weights = 0;
    for (std::size_t l = 0; l < c.n_layers; ++l) weights += enc.layer(l).weight_count();
    EXPECT_EQ(weights, param_count(c, CountConvention::kWeightsOnly));
    EXPECT_EQ(store.scalar_count(), param_count(c, CountConvention::kFull));
  }
}

TEST(Encoder, ParameterNamesAndShapes) {
  Rng rng(1);
  ParamStore store;
  const Encoder enc(small_config(), store, rng);
  EXPECT_EQ(store.at("encoder/embed/token").shape(), (Shape{10, 8}));
  EXPECT_EQ(store.at("encoder/embed/segment").shape(), (Shape{2, 8}));
  EXPECT_EQ(store.at("encoder/layer/1/attn/head/1/wq").shape(), (Shape{4, 8}));
  EXPECT_EQ(store.at("encoder/layer/0/attn/wo").shape(), (Shape{8, 8}));
  EXPECT_EQ(store.at("encoder/layer/0/ffn/w1").shape(), (Shape{12, 8}));
  EXPECT_EQ(store.at("encoder/layer/0/ffn/w2").shape(), (Shape{8, 12}));
  EXPECT_EQ(store.at("encoder/layer/0/ln2/gain")[0], 1.0);
  // A bound encoder sees the same tensors.
  const Encoder bound(small_config(), store);
  EXPECT_TRUE(bound.layer(1).wo.same_storage(enc.layer(1).wo));
}

TEST(Encoder, InitWeightsAreTruncatedNormal) {
  Rng rng(2);
  const Tensor w = init_weight({200, 50}, rng);
  double m = 0, s = 0;
  for (double v : w.data()) {
    ASSERT_LE(std::abs(v), 0.04);
    m += v;
    s += v * v;
  }
  m /= w.numel();
  EXPECT_LT(std::abs(m), 1e-3);
  EXPECT_NEAR(std::sqrt(s / w.numel()), 0.0176, 0.001);  // sigma of a 2-sigma truncated normal
}

TEST(Encoder, InputContract) {
  Rng rng(1);
  ParamStore store;
  const Encoder enc(small_config(), store, rng);
  const std::vector<std::size_t> long_ids(13, 4), long_seg(13, 0);
  EXPECT_THROW(enc.encode(long_ids, long_seg), ContractError);
  EXPECT_THROW(enc.encode(std::vector<std::size_t>{10}, std::vector<std::size_t>{0}), ContractError);
  EXPECT_THROW(enc.encode(std::vector<std::size_t>{1}, std::vector<std::size_t>{2}), ContractError);
  EXPECT_THROW(enc.encode(std::vector<std::size_t>{}, std::vector<std::size_t>{}), ContractError);
}

TEST(Encoder, ConfigValidation) {
  EncoderConfig c = small_config();
  c.n_heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.dropout = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Encoder, DropoutOnlyWhenTraining) {
  Rng rng(6);
  ParamStore store;
  EncoderConfig cfg = small_config();
  const Encoder enc(cfg, store, rng);
  const std::vector<std::size_t> ids{2, 5, 3}, seg{0, 1, 1};
  const Tensor a = enc.encode(ids, seg);
  const Tensor b = enc.encode(ids, seg, ForwardContext{false, nullptr, 0.5});
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a[i], b[i]);
  Rng drop(1);
  const Tensor c = enc.encode(ids, seg, ForwardContext{true, &drop, 0.5});
  bool differs = false;
  for (std::size_t i = 0; i < a.numel(); ++i) differs |= a[i] != c[i];
  EXPECT_TRUE(differs);
  EXPECT_THROW(enc.encode(ids, seg, ForwardContext{true, nullptr, 0.5}), ContractError);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  Rng rng(8);
  ParamStore store;
  const Encoder enc(small_config(), store, rng);
  const auto path = std::filesystem::temp_directory_path() / "cda_ckpt_roundtrip.bin";
  save_checkpoint(store, path);
  const ParamStore back = load_checkpoint(path);
  ASSERT_EQ(back.names(), store.names());
  for (const auto& [name, t] : store) {
    const Tensor& u = back.at(name);
    EXPECT_EQ(u.shape(), t.shape());
    EXPECT_FALSE(u.requires_grad());
    for (std::size_t i = 0; i < t.numel(); ++i) EXPECT_EQ(u[i], t[i]);
  }
  EXPECT_EQ(back.digest(), store.digest());
  const auto manifest = checkpoint_manifest(path);
  std::size_t total = 0;
  for (const auto& [name, shape] : manifest) total += shape_numel(shape);
  EXPECT_EQ(total, param_count(small_config(), CountConvention::kFull));
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsForeignFiles) {
  const auto path = std::filesystem::temp_directory_path() / "cda_ckpt_bad.bin";
  {
    std::ofstream out(path);
    out << "NOTACKPT and some more bytes";
  }
  EXPECT_THROW(load_checkpoint(path), DataError);
  std::filesystem::remove(path);
}

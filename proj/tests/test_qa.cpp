#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "cda/error.hpp"
#include "cda/metrics.hpp"
#include "cda/qa.hpp"
#include "test_util.hpp"

using namespace cda;

namespace {

Vocabulary small_vocab() {
  DomainData d;
  d.name = "d";
  QAExample ex;
  ex.question_tokens = {"what", "color", "?"};
  ex.context_tokens = {"the", "sky", "is", "blue", "."};
  d.train.push_back(ex);
  return Vocabulary::build({d});
}

QAExample example(const std::string& id, std::vector<std::string> q, std::vector<std::string> c, std::size_t s,
                  std::size_t e) {
  QAExample ex;
  ex.id = id;
  ex.question_tokens = std::move(q);
  ex.context_tokens = std::move(c);
  ex.start = s;
  ex.end = e;
  ex.answer_text = detokenize(ex.context_tokens, s, e);
  ex.gold_answers = {ex.answer_text};
  return ex;
}

EncoderConfig tiny_config(std::size_t vocab) {
  EncoderConfig c;
  c.d = 8;
  c.n_heads = 2;
  c.d_ff = 16;
  c.n_layers = 1;
  c.vocab_size = vocab;
  c.max_len = 16;
  return c;
}

}  // namespace

TEST(EncodePair, LayoutSegmentsAndMask) {
  const Vocabulary v = small_vocab();
  const EncodedPair p = encode_pair({"what", "color", "?"}, {"the", "sky", "is", "blue", "."}, v, 64);
  ASSERT_EQ(p.ids.size(), 1 + 3 + 1 + 5 + 1u);
  EXPECT_EQ(p.ids.front(), Vocabulary::kCls);
  EXPECT_EQ(p.ids[4], Vocabulary::kSep);
  EXPECT_EQ(p.ids.back(), Vocabulary::kSep);
  EXPECT_EQ(p.ids[1], v.id("what"));
  EXPECT_EQ(p.context_offset, 5u);
  EXPECT_EQ(p.context_len, 5u);
  for (std::size_t i = 0; i < p.ids.size(); ++i) {
    EXPECT_EQ(p.segments[i], i < 5 ? 0u : 1u);
    EXPECT_EQ(p.context_mask[i], i >= 5 && i < 10);
  }
}

TEST(EncodePair, TruncatesContextNeverQuestion) {
  const Vocabulary v = small_vocab();
  const EncodedPair p = encode_pair({"what", "color", "?"}, {"the", "sky", "is", "blue", "."}, v, 9);
  EXPECT_EQ(p.ids.size(), 9u);
  EXPECT_EQ(p.context_len, 3u);
  EXPECT_THROW(encode_pair({"a", "b", "c", "d", "e", "f", "g"}, {"x"}, v, 9), InputTooLong);
  EXPECT_NO_THROW(encode_pair({"a", "b", "c", "d", "e", "f"}, {"x"}, v, 9));
}

TEST(EncodeDomain, DropsLongQuestionsAndTruncatedGold) {
  DomainData d;
  d.name = "d";
  d.train.push_back(example("keep", {"q"}, {"a", "b", "c"}, 1, 2));
  d.train.push_back(example("cut", {"q"}, {"a", "b", "c", "d", "e", "f", "g"}, 5, 6));
  d.train.push_back(example("long", std::vector<std::string>(10, "q"), {"a"}, 0, 0));
  const EncodedDomain e = encode_domain(d, small_vocab(), 8);
  EXPECT_EQ(e.dropped, 1u);
  ASSERT_EQ(e.train.size(), 2u);
  EXPECT_EQ(e.train[0].gold, std::make_pair(std::size_t{4}, std::size_t{5}));
  EXPECT_FALSE(e.train[1].gold.has_value());
}

TEST(PredictSpan, MatchesBruteForce) {
  Rng rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 3 + rng.below(12);
    const Tensor s = cda::testing::random_tensor({n}, rng, 2.0, false);
    const Tensor e = cda::testing::random_tensor({n}, rng, 2.0, false);
    std::vector<bool> mask(n, false);
    const std::size_t lo = rng.below(n), hi = lo + rng.below(n - lo);
    for (std::size_t i = lo; i <= hi; ++i) mask[i] = true;
    const std::size_t max_len = 1 + rng.below(5);
    double best = -std::numeric_limits<double>::infinity();
    std::size_t bs = 0, be = 0;
    for (std::size_t i = lo; i <= hi; ++i)
      for (std::size_t j = i; j <= hi && j - i < max_len; ++j)
        if (s[i] + e[j] > best) {
          best = s[i] + e[j];
          bs = i;
          be = j;
        }
    const SpanPrediction p = predict_span(s, e, mask, max_len);
    EXPECT_EQ(p.start, bs);
    EXPECT_EQ(p.end, be);
    EXPECT_LE(p.score, 0.0);
  }
}

TEST(PredictSpan, TiesGoToEarliestContextPosition) {
  const Tensor z = Tensor::zeros({6});
  const SpanPrediction p = predict_span(z, z, {false, false, true, true, true, false}, 30);
  EXPECT_EQ(p.start, 2u);
  EXPECT_EQ(p.end, 2u);
  EXPECT_NEAR(p.score, -2.0 * std::log(3.0), 1e-12);
}

TEST(PredictSpan, Contracts) {
  const Tensor z = Tensor::zeros({3});
  EXPECT_THROW(predict_span(z, z, {false, false, false}, 30), NoContextError);
  EXPECT_THROW(predict_span(z, z, {true, true, true}, 0), ContractError);
  EXPECT_THROW(predict_span(z, Tensor::zeros({4}), {true, true, true}, 3), DimensionError);
}

TEST(QaLoss, UniformIsTwoLogContextLength) {
  const SpanLogits l{Tensor::full({7}, 0.4), Tensor::full({7}, -1.0)};
  const std::vector<bool> mask{false, false, true, true, true, true, false};
  EXPECT_NEAR(qa_loss(l, mask, {3, 5}).item(), 2.0 * std::log(4.0), 1e-12);
  EXPECT_THROW(qa_loss(l, mask, {1, 3}), ContractError);
  EXPECT_THROW(qa_loss(l, mask, {3, 9}), ContractError);
}

TEST(QaLoss, NearZeroWhenPeakedOnGold) {
  Tensor s = Tensor::zeros({5}), e = Tensor::zeros({5});
  s.mutable_data()[1] = 60.0;
  e.mutable_data()[3] = 60.0;
  const std::vector<bool> mask{false, true, true, true, true};
  EXPECT_LT(qa_loss({s, e}, mask, {1, 3}).item(), 1e-20);
  EXPECT_GT(qa_loss({s, e}, mask, {2, 3}).item(), 50.0);
}

TEST(QAModel, GradientsMatchFiniteDifferences) {
  const Vocabulary v = small_vocab();
  Rng rng(5);
  QAModel model(tiny_config(v.size()), rng);
  model.add_head(0, rng);
  const EncodedPair p = encode_pair({"what", "color", "?"}, {"the", "sky", "is", "blue", "."}, v, 16);
  std::vector<Tensor> params;
  for (const auto& n : model.params().names()) {
    model.params().set_trainable(n, true);
    params.push_back(model.params().at(n));
  }
  const auto r = cda::testing::check_gradients(
      [&] { return qa_loss(model.forward(p, Route{0, std::nullopt}), p.context_mask, {8, 8}); }, params);
  EXPECT_EQ(r.checked, model.params().scalar_count());
  EXPECT_LT(r.max_rel, 1e-4);
}

TEST(QAModel, HeadsAndAdaptersAreNamedPerDomain) {
  Rng rng(1);
  QAModel model(tiny_config(10), rng);
  model.add_head(2, rng);
  EXPECT_TRUE(model.has_head(2));
  EXPECT_FALSE(model.has_head(0));
  EXPECT_EQ(model.params().at("head/2/w").shape(), (Shape{2, 8}));
  AdapterConfig ac;
  ac.d = 8;
  ac.d_s = 4;
  model.add_adapters(1, ac, rng);
  model.add_adapters(2, ac, rng);
  for (double& x : model.params().at("adapter/1/0/ffn/up_w").mutable_data()) x = 0.5;
  model.copy_adapters(1, 2);
  EXPECT_EQ(model.params().at("adapter/2/0/ffn/up_w")[0], 0.5);
  ac.d_s = 2;
  EXPECT_THROW(model.add_adapters(3, ac, rng), ConfigError);
}

TEST(Evaluate, IndependentOfExampleOrder) {
  const Vocabulary v = small_vocab();
  Rng rng(8);
  QAModel model(tiny_config(v.size()), rng);
  model.add_head(0, rng);
  DomainData d;
  d.name = "d";
  for (int i = 0; i < 12; ++i) {
    std::vector<std::string> ctx{"the", "sky", "is", "blue", "."};
    std::rotate(ctx.begin(), ctx.begin() + i % 5, ctx.end());
    d.test.push_back(example(std::to_string(i), {"what", "color", "?"}, ctx, i % 3, i % 3 + i % 2));
  }
  EncodedDomain e = encode_domain(d, v, 16);
  const DomainScore a = evaluate_domain(model, e.test, Route{}, 30);
  std::reverse(e.test.begin(), e.test.end());
  const DomainScore b = evaluate_domain(model, e.test, Route{}, 30);
  EXPECT_EQ(a.em, b.em);
  EXPECT_EQ(a.f1, b.f1);
  EXPECT_GE(a.f1, a.em);
  EXPECT_LE(a.f1, 100.0);

  // Prediction files reproduce the in-memory score.
  std::vector<PredictionRecord> recs;
  for (const auto& ex : e.test) {
    const SpanPrediction p = predict(model, ex, Route{}, 30);
    recs.push_back({ex.example.id, p.text, p.start, p.end, p.score});
  }
  std::stringstream io;
  write_predictions(io, recs);
  const auto back = read_predictions(io);
  ASSERT_EQ(back.size(), recs.size());
  EXPECT_EQ(back[3].score, recs[3].score);
  std::vector<QAExample> gold;
  for (const auto& ex : e.test) gold.push_back(ex.example);
  const DomainScore c = score_predictions(back, gold);
  EXPECT_DOUBLE_EQ(c.f1, a.f1);
  EXPECT_DOUBLE_EQ(c.em, a.em);
  // Missing predictions score as empty strings; golds like "the" normalize to empty too.
  double empty_golds = 0;
  for (const auto& g : gold) empty_golds += normalize_answer(g.answer_text).empty() ? 1 : 0;
  EXPECT_DOUBLE_EQ(score_predictions({}, gold).f1, 100.0 * empty_golds / gold.size());
}

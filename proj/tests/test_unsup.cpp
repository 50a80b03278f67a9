#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <set>

#include <doctest.h>

#include "support.hpp"
#include "unadapt/encoder_registry.hpp"
#include "unadapt/error.hpp"
#include "unadapt/synth.hpp"
#include "unadapt/unsup.hpp"

using namespace unadapt;
using testing::random_vector;

namespace {

Image random_image(std::mt19937_64& rng, std::size_t c, std::size_t h, std::size_t w) {
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  Image img(c, h, w);
  for (auto& p : img.pixels) p = u(rng);
  return img;
}

Adapter random_adapter(std::mt19937_64& rng, std::size_t c, std::size_t dim) {
  Adapter a(c, dim, false, "d");
  for (auto& w : a.weights().values()) w = random_vector(rng, 1, 0.5)[0];
  return a;
}

std::vector<DataItem> random_items(std::mt19937_64& rng, std::size_t n, const ImageShape& s) {
  std::vector<DataItem> items;
  for (std::size_t i = 0; i < n; ++i)
    items.push_back({"item" + std::to_string(i), random_image(rng, s.channels, s.height, s.width), std::nullopt});
  return items;
}

std::vector<const DataItem*> pointers(const std::vector<DataItem>& items) {
  std::vector<const DataItem*> out;
  for (const auto& d : items) out.push_back(&d);
  return out;
}

// A small planted world with its Stage-1 adapter.
struct World {
  SynthWorld synth;
  ToyVlm vlm;
  Adapter pretrained;
  std::vector<DataItem> train, val, test;
};

World make_world(std::size_t per_class) {
  SynthConfig sc;
  sc.images_per_class = per_class;
  SynthWorld sw = make_synth_world(sc);
  ToyVlm vlm(sc.toy);
  Stage1Config s1;
  s1.seed = 3;
  Adapter pre = pretrain_adapter(sw.corpus, *vlm.text_encoder(), s1).first;
  std::map<std::string, const DataItem*> by_id;
  for (const auto& d : sw.items) by_id[d.item_id] = &d;
  const SplitResult split = split_dataset(sw.manifest, {}, 1);
  std::vector<DataItem> train, val, test;
  for (const auto& it : split.train.items) train.push_back(*by_id.at(it.item_id));
  for (const auto& it : split.val.items) val.push_back(*by_id.at(it.item_id));
  for (const auto& it : split.test.items) test.push_back(*by_id.at(it.item_id));
  return {std::move(sw), std::move(vlm), std::move(pre), std::move(train), std::move(val), std::move(test)};
}

const World& shared_world() {
  static const World w = make_world(60);
  return w;
}

double accuracy(const std::vector<DataItem>& items, const Adapter& a, const PromptVector& p, const VisualEncoder& e) {
  const auto pred = infer_batch(items, a, p, e);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < items.size(); ++i) hits += pred[i] == *items[i].label;
  return static_cast<double>(hits) / static_cast<double>(items.size());
}

}  // namespace

TEST_CASE("branch composition") {
  std::mt19937_64 rng(31);
  ToyVlmConfig tc;
  tc.activation = Activation::kTanh;
  ToyVlm vlm(tc);
  const auto enc = vlm.visual_encoder();
  const auto shape = enc->input_shape();
  const Image x = random_image(rng, shape.channels, 20, 24);
  const Adapter a = random_adapter(rng, 3, kJointDim);
  const auto weak = AugmentationPolicy::weak(9), strong = AugmentationPolicy::strong(9);

  SUBCASE("weak branch is adapter after encoder after weak view") {
    const Vector got = weak_branch(x, "id", 2, a, weak, *enc);
    const Image view = weak.apply(x, "id", 2, shape.height, shape.width);
    CHECK(got == a.forward(enc->encode(view).values));
    CHECK(got == weak_branch(x, "id", 2, a, weak, *enc));
  }
  SUBCASE("strong branch injects the prompt") {
    std::mt19937_64 prng(4);
    PromptVector p = PromptVector::zeros(enc->spec());
    for (auto& v : p.values().values()) v = random_vector(prng, 1, 0.1)[0];
    const Vector got = strong_branch(x, "id", 2, a, p, strong, *enc);
    const Image view = strong.apply(x, "id", 2, shape.height, shape.width);
    CHECK(got == a.forward(enc->encode(view, &p).values));
    CHECK(got != a.forward(enc->encode(view).values));
  }
  SUBCASE("zero prompt and resize-only policies make the branches agree") {
    const PromptVector zero = PromptVector::zeros(enc->spec());
    const Vector w = weak_branch(x, "id", 1, a, AugmentationPolicy::identity(AugmentationKind::kWeak), *enc);
    const Vector s =
        strong_branch(x, "id", 1, a, zero, AugmentationPolicy::identity(AugmentationKind::kStrong), *enc);
    REQUIRE(w.size() == s.size());
    for (std::size_t c = 0; c < w.size(); ++c) CHECK(w[c] == doctest::Approx(s[c]).epsilon(1e-12));
    CHECK(infer(x, a, zero, *enc) == argmax(w));
  }
  SUBCASE("policy kinds are checked") {
    CHECK_THROWS_AS(weak_branch(x, "id", 1, a, strong, *enc), ValidationError);
    CHECK_THROWS_AS(strong_branch(x, "id", 1, a, PromptVector::zeros(enc->spec()), weak, *enc), ValidationError);
  }
}

TEST_CASE("prompt gradient through the strong branch matches central differences") {
  std::mt19937_64 rng(32);
  for (const auto activation : {Activation::kIdentity, Activation::kTanh}) {
    ToyVlmConfig tc;
    tc.activation = activation;
    ToyVlm vlm(tc);
    const auto enc = vlm.visual_encoder();
    const auto shape = enc->input_shape();
    const Image x = random_image(rng, shape.channels, shape.height, shape.width);
    const Adapter a = random_adapter(rng, 3, kJointDim);
    const auto policy = AugmentationPolicy::strong(5);
    PromptVector p = PromptVector::zeros(enc->spec());
    for (auto& v : p.values().values()) v = random_vector(rng, 1, 0.2)[0];
    const auto target = TargetDistribution::one_hot(1, 3);
    auto loss = [&](const PromptVector& q) {
      return cross_entropy(strong_branch(x, "id", 3, a, q, policy, *enc), target).value;
    };
    const Image view = policy.apply(x, "id", 3, shape.height, shape.width);
    const auto fwd = enc->forward(enc->tokenize(view), &p);
    const auto dz = cross_entropy(a.forward(fwd.embedding.values), target).grad;
    const Matrix g = enc->backward(fwd, a.input_gradient(dz), false).prompt;
    std::uniform_int_distribution<std::size_t> rd(0, p.hidden_size() - 1), cd(0, p.columns() - 1);
    for (int k = 0; k < 60; ++k) {
      const std::size_t r = rd(rng), c = cd(rng);
      PromptVector up = p, down = p;
      up.values()(r, c) += 1e-5;
      down.values()(r, c) -= 1e-5;
      CHECK(testing::close_rel(g(r, c), (loss(up) - loss(down)) / 2e-5, 1e-4, 1e-8));
    }
  }
}

TEST_CASE("trainable parameter counts") {
  for (std::size_t c : {2u, 3u, 14u}) {
    const Adapter a(c, kJointDim, false, "d");
    CHECK(stage2_parameter_count(clip_vit_b32_spec(), a) == 38400 + 512 * c);
    CHECK(stage2_parameter_count(medclip_swin_spec(), a) == 10848 + 512 * c);
    const auto toy = ToyVlm(toy_config_for_backbone("clip-vit-b32", {})).visual_encoder();
    CHECK(stage2_parameter_count(toy->spec(), a) == 38400 + 512 * c);
  }
}

TEST_CASE("stop-gradient contract") {
  const World& w = shared_world();
  const auto enc = w.vlm.visual_encoder();
  Stage2Config cfg;
  cfg.seed = 8;
  cfg.prompt_init = PromptInit::kSmallGaussian;
  const std::vector<DataItem> batch_items(w.train.begin(), w.train.begin() + 16);
  const auto batch = pointers(batch_items);

  SUBCASE("weak step leaves the strong branch and prompt untouched") {
    Stage2Trainer t(w.pretrained, enc, cfg);
    const Adapter strong_before = t.strong_adapter();
    const Adapter weak_before = t.weak_adapter();
    const PromptVector prompt_before = t.prompt();
    t.weak_update(batch, 1);
    CHECK(testing::bit_equal(t.strong_adapter().weights().values(), strong_before.weights().values()));
    CHECK(testing::bit_equal(t.prompt().values().values(), prompt_before.values().values()));
    CHECK_FALSE(t.weak_adapter() == weak_before);
  }
  SUBCASE("strong step leaves the weak branch untouched and moves the prompt") {
    Stage2Trainer t(w.pretrained, enc, cfg);
    const Adapter weak_before = t.weak_adapter();
    const Adapter strong_before = t.strong_adapter();
    const PromptVector prompt_before = t.prompt();
    t.strong_update(batch, 1);
    CHECK(testing::bit_equal(t.weak_adapter().weights().values(), weak_before.weights().values()));
    CHECK_FALSE(t.strong_adapter() == strong_before);
    CHECK_FALSE(t.prompt() == prompt_before);
  }
  SUBCASE("zero prompt also moves after one strong step") {
    Stage2Config z = cfg;
    z.prompt_init = PromptInit::kZeros;
    Stage2Trainer t(w.pretrained, enc, z);
    t.strong_update(batch, 1);
    CHECK_FALSE(t.prompt() == PromptVector::zeros(enc->spec()));
  }
  SUBCASE("both branches start as clones of the pretrained adapter") {
    Stage2Trainer t(w.pretrained, enc, cfg);
    CHECK(t.weak_adapter() == w.pretrained);
    CHECK(t.strong_adapter() == w.pretrained);
  }
  SUBCASE("encoder without prompt support is rejected") {
    struct Frozen : VisualEncoder {
      std::shared_ptr<VisualEncoder> inner;
      EncoderSpec s;
      explicit Frozen(std::shared_ptr<VisualEncoder> e) : inner(std::move(e)), s(inner->spec()) {
        s.supports_gradient_to_input = false;
      }
      const EncoderSpec& spec() const override { return s; }
      ImageShape input_shape() const override { return inner->input_shape(); }
      TokenizedImage tokenize(const Image& i) const override { return inner->tokenize(i); }
      VisualForward forward(const TokenizedImage& t, const PromptVector* p) const override {
        return inner->forward(t, p);
      }
      VisualGradients backward(const VisualForward& f, std::span<const double> g, bool t) const override {
        return inner->backward(f, g, t);
      }
    };
    CHECK_THROWS_AS(Stage2Trainer(w.pretrained, std::make_shared<Frozen>(enc), cfg), ValidationError);
  }
  SUBCASE("adapter dimension must match the encoder") {
    CHECK_THROWS_AS(Stage2Trainer(Adapter(2, 16, false, "d"), enc, cfg), ShapeError);
  }
}

TEST_CASE("stage-2 training") {
  const World& w = shared_world();
  const auto enc = w.vlm.visual_encoder();
  Stage2Config cfg;
  cfg.seed = 12;
  cfg.epochs = 6;

  SUBCASE("zero epochs return the pretrained adapter and the initial prompt") {
    Stage2Config z = cfg;
    z.epochs = 0;
    const auto r = train_stage2(w.train, w.pretrained, enc, z);
    CHECK(r.adapter == w.pretrained);
    CHECK(r.prompt == PromptVector::zeros(enc->spec()));
    CHECK(r.log.epochs.empty());
  }
  SUBCASE("deterministic and independent of the parallel flag") {
    Stage2Config serial = cfg;
    serial.parallel = false;
    const auto a = train_stage2(w.train, w.pretrained, enc, cfg);
    const auto b = train_stage2(w.train, w.pretrained, enc, cfg);
    const auto c = train_stage2(w.train, w.pretrained, enc, serial);
    CHECK(a.adapter == b.adapter);
    CHECK(a.prompt == b.prompt);
    CHECK(testing::bit_equal(a.adapter.weights().values(), c.adapter.weights().values()));
    CHECK(testing::bit_equal(a.prompt.values().values(), c.prompt.values().values()));
    CHECK(a.log.selection == "final-epoch");
    CHECK(a.log.selected_epoch == cfg.epochs);
  }
  SUBCASE("training labels are never read") {
    std::vector<DataItem> stripped = w.train;
    for (auto& d : stripped) d.label.reset();
    std::vector<DataItem> scrambled = w.train;
    for (std::size_t i = 0; i < scrambled.size(); ++i) scrambled[i].label = i % 2;
    const auto a = train_stage2(stripped, w.pretrained, enc, cfg);
    const auto b = train_stage2(scrambled, w.pretrained, enc, cfg);
    CHECK(a.adapter == b.adapter);
    CHECK(a.prompt == b.prompt);
  }
  SUBCASE("entropy term lowers the strong-branch entropy") {
    const auto with = train_stage2(w.train, w.pretrained, enc, cfg);
    Stage2Config off = cfg;
    off.loss.entropy_enabled = false;
    const auto without = train_stage2(w.train, w.pretrained, enc, off);
    CHECK(with.log.epochs.back().mean_entropy < with.log.epochs.front().mean_entropy);
    CHECK(with.log.epochs.back().mean_entropy < without.log.epochs.back().mean_entropy);
  }
  SUBCASE("validation labels drive model selection") {
    const auto r = train_stage2(w.train, w.pretrained, enc, cfg, w.val);
    CHECK(r.log.selection == "val-accuracy");
    double best = -1.0;
    std::size_t best_epoch = 0;
    for (const auto& e : r.log.epochs) {
      CHECK(e.val_accuracy >= 0.0);
      if (e.val_accuracy > best) best = e.val_accuracy, best_epoch = e.epoch;
    }
    CHECK(r.log.selected_val_accuracy >= best);
    if (r.log.selected_epoch != 0) CHECK(r.log.selected_epoch == best_epoch);
    CHECK(accuracy(w.val, r.adapter, r.prompt, *enc) == doctest::Approx(r.log.selected_val_accuracy));
  }
  SUBCASE("empty training split") {
    CHECK_THROWS_AS(train_stage2({}, w.pretrained, enc, cfg), DataError);
  }
  SUBCASE("non-finite pixels surface as a numerical error") {
    std::vector<DataItem> bad(w.train.begin(), w.train.begin() + 4);
    for (auto& p : bad[1].image.pixels) p = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(train_stage2(bad, w.pretrained, enc, cfg), NumericalError);
  }
}

TEST_CASE("planted test split is recovered after adaptation") {
  const World w = make_world(150);
  const auto enc = w.vlm.visual_encoder();
  Stage2Config cfg;
  cfg.seed = 2;
  const PromptVector zero = PromptVector::zeros(enc->spec());
  const double before = accuracy(w.test, w.pretrained, zero, *enc);
  const auto r = train_stage2(w.train, w.pretrained, enc, cfg, w.val);
  const double after = accuracy(w.test, r.adapter, r.prompt, *enc);
  MESSAGE("stage-1 visual accuracy ", before, ", after adaptation ", after);
  CHECK(after >= 0.9);
  CHECK(after >= before + 0.05);
}

TEST_CASE("inference") {
  std::mt19937_64 rng(33);
  ToyVlm vlm({});
  const auto enc = vlm.visual_encoder();
  const auto shape = enc->input_shape();
  const PromptVector zero = PromptVector::zeros(enc->spec());
  SUBCASE("ties go to the lowest index") {
    const Image x = random_image(rng, shape.channels, shape.height, shape.width);
    CHECK(infer(x, Adapter(4, kJointDim, false, "d"), zero, *enc) == 0);
    Adapter a(3, kJointDim, false, "d");
    const Vector e = enc->encode(x).values;
    for (std::size_t j = 0; j < kJointDim; ++j) a.weights()(1, j) = a.weights()(2, j) = e[j];
    CHECK(infer(x, a, zero, *enc) == 1);
  }
  SUBCASE("positive scaling and a common shift leave predictions unchanged") {
    Adapter a = random_adapter(rng, 4, kJointDim);
    Adapter scaled = a, shifted(4, kJointDim, true, "d");
    for (auto& v : scaled.weights().values()) v *= 3.5;
    shifted.weights() = a.weights();
    for (auto& b : shifted.bias()) b = 0.75;
    const auto items = random_items(rng, 25, shape);
    CHECK(infer_batch(items, a, zero, *enc) == infer_batch(items, scaled, zero, *enc));
    CHECK(infer_batch(items, a, zero, *enc) == infer_batch(items, shifted, zero, *enc, false));
  }
}

TEST_CASE("distances and supervised alignment loss") {
  SUBCASE("distance examples") {
    const Vector a{1.0, 0.0}, b{0.0, 2.0}, c{3.0, 0.0};
    CHECK(distance(a, b, Distance::kCosine) == doctest::Approx(1.0));
    CHECK(distance(a, c, Distance::kCosine) == doctest::Approx(0.0));
    CHECK(distance(a, Vector{-1.0, 0.0}, Distance::kCosine) == doctest::Approx(2.0));
    CHECK(distance(a, b, Distance::kEuclidean) == doctest::Approx(std::sqrt(5.0)));
    CHECK_THROWS_AS(distance(a, Vector{1.0}, Distance::kCosine), ShapeError);
    CHECK_THROWS_AS(distance(a, Vector{0.0, 0.0}, Distance::kCosine), DegenerateInputError);
    CHECK(distance_from_string("euclidean") == Distance::kEuclidean);
    CHECK_THROWS_AS(distance_from_string("manhattan"), ValidationError);
  }
  SUBCASE("loss matches a direct computation") {
    const World& w = shared_world();
    const auto enc = w.vlm.visual_encoder();
    const auto text = w.vlm.text_encoder();
    const auto& item = w.test.front();
    const std::string label = w.synth.catalog.labels()[*item.label];
    const PromptVector zero = PromptVector::zeros(enc->spec());
    Vector mean(w.pretrained.num_classes(), 0.0);
    const auto& descs = w.synth.corpus.descriptions(label);
    for (const auto& d : descs) {
      const Vector o = w.pretrained.forward(text->encode(d.text).values);
      for (std::size_t c = 0; c < mean.size(); ++c) mean[c] += o[c];
    }
    for (double& m : mean) m /= static_cast<double>(descs.size());
    const auto shape = enc->input_shape();
    const Vector vis =
        w.pretrained.forward(enc->encode(inference_view(item.image, shape.height, shape.width), &zero).values);
    double sq = 0.0;
    for (std::size_t c = 0; c < mean.size(); ++c) sq += (vis[c] - mean[c]) * (vis[c] - mean[c]);
    const double got = supervised_alignment_loss(item.image, label, w.pretrained, zero, w.synth.corpus, *text, *enc,
                                                 Distance::kEuclidean);
    CHECK(got == doctest::Approx(std::sqrt(sq)).epsilon(1e-10));
    const double cos = supervised_alignment_loss(item.image, label, w.pretrained, zero, w.synth.corpus, *text, *enc,
                                                 Distance::kCosine);
    CHECK(cos >= 0.0);
    CHECK(cos <= 2.0);
    CHECK_THROWS_AS(supervised_alignment_loss(item.image, "nope", w.pretrained, zero, w.synth.corpus, *text, *enc,
                                              Distance::kCosine),
                    DataError);
  }
}

TEST_CASE("augmentation policies") {
  std::mt19937_64 rng(34);
  const Image x = random_image(rng, 3, 20, 20);
  const auto weak = AugmentationPolicy::weak(5), strong = AugmentationPolicy::strong(5);
  SUBCASE("deterministic in seed, item and epoch") {
    CHECK(strong.apply(x, "a", 1, 16, 16) == strong.apply(x, "a", 1, 16, 16));
    CHECK(strong.apply(x, "a", 1, 16, 16) == AugmentationPolicy::strong(5).apply(x, "a", 1, 16, 16));
    CHECK_FALSE(strong.apply(x, "a", 1, 16, 16) == strong.apply(x, "a", 2, 16, 16));
    CHECK_FALSE(strong.apply(x, "a", 1, 16, 16) == strong.apply(x, "b", 1, 16, 16));
    CHECK_FALSE(strong.apply(x, "a", 1, 16, 16) == AugmentationPolicy::strong(6).apply(x, "a", 1, 16, 16));
    const Image v = weak.apply(x, "a", 1, 16, 16);
    CHECK(v.height == 16);
    CHECK(v.width == 16);
    CHECK(v.channels == 3);
  }
  SUBCASE("weak transforms are a subset of the strong transforms") {
    const auto w = weak.ops(), s = strong.ops();
    CHECK(w.size() < s.size());
    const std::set<std::string> strong_set(s.begin(), s.end());
    for (const auto& op : w) CHECK(strong_set.count(op) == 1);
  }
  SUBCASE("weak views are either the resized image or its mirror") {
    const Image plain = inference_view(x, 16, 16), mirror = hflip(plain);
    std::size_t flips = 0;
    for (std::size_t e = 0; e < 40; ++e) {
      const Image v = weak.apply(x, "a", e, 16, 16);
      const bool is_plain = v == plain, is_mirror = v == mirror;
      CHECK((is_plain || is_mirror));
      flips += is_mirror;
    }
    CHECK(flips > 5);
    CHECK(flips < 35);
  }
  SUBCASE("identity policies only resize") {
    const Image plain = inference_view(x, 16, 16);
    CHECK(AugmentationPolicy::identity(AugmentationKind::kStrong).apply(x, "a", 3, 16, 16) == plain);
    CHECK(AugmentationPolicy::identity(AugmentationKind::kWeak).apply(x, "a", 3, 16, 16) == plain);
  }
  SUBCASE("settings validation") {
    AugmentationSettings bad;
    bad.hflip_probability = 1.5;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = {};
    bad.crop_min_scale = 0.0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
  }
  SUBCASE("geometric helpers") {
    const Image f = hflip(x);
    CHECK(f.at(1, 4, 0) == x.at(1, 4, 19));
    CHECK(hflip(f) == x);
    const Image c = crop(x, 2, 3, 5, 6);
    CHECK(c.height == 5);
    CHECK(c.width == 6);
    CHECK(c.at(2, 0, 0) == x.at(2, 2, 3));
    const Image r = rotate(x, 0.0);
    for (std::size_t i = 0; i < x.pixels.size(); ++i) CHECK(r.pixels[i] == doctest::Approx(x.pixels[i]));
  }
}

TEST_CASE("prompt checkpoints") {
  testing::TempDir dir("prompt");
  const auto spec = ToyVlm({}).visual_encoder()->spec();
  PromptVector p = PromptVector::gaussian(spec, 0.3, 4);
  round_to_float(p);
  save_prompt(p, {"h", 7}, dir / "p.bin");
  const auto [back, stamp] = load_prompt(dir / "p.bin");
  CHECK(back == p);
  CHECK(stamp.seed == 7);
  CHECK(stamp.config_hash == "h");
  back.check_compatible(spec);
  CHECK_THROWS_AS(back.check_compatible(clip_vit_b32_spec()), ShapeError);

  PromptVector nan = p;
  nan.values()(0, 0) = std::numeric_limits<double>::quiet_NaN();
  save_prompt(nan, {"h", 7}, dir / "nan.bin");
  CHECK_THROWS_AS(load_prompt(dir / "nan.bin"), DataError);
  write_file_atomic(dir / "short.bin", read_file(dir / "p.bin").substr(0, 30));
  CHECK_THROWS_AS(load_prompt(dir / "short.bin"), ParseError);
}

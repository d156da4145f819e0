#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "hidac/adapters.hpp"
#include "hidac/autodiff.hpp"
#include "hidac/common.hpp"
#include "hidac/encoder.hpp"
#include "hidac/errors.hpp"

#include "oracles.hpp"

#include <algorithm>
#include <set>
#include <string>
#include <vector>

using namespace hidac;

TEST_CASE("tokenizer emits a leading summary token and hashed buckets") {
  Encoder enc = Encoder::load(EncoderSpec::toy(2, 8, 1));
  auto ids = enc.tokenize("the quick brown fox", -1);
  REQUIRE(ids.size() == 5);
  CHECK(ids[0] == 0);
  for (std::size_t i = 1; i < ids.size(); ++i) {
    CHECK(ids[i] >= 1);
    CHECK(ids[i] <= 63);
  }
  // Same word, same bucket; case-insensitive.
  auto a = enc.tokenize("Fox fox FOX", -1);
  CHECK(a[1] == a[2]);
  CHECK(a[2] == a[3]);
  CHECK(a[1] == ids[4]);
  // Empty text still yields the summary token.
  CHECK(enc.tokenize("", -1).size() == 1);
}

TEST_CASE("tokenizer truncates from the head, keeping the tail") {
  Encoder enc = Encoder::load(EncoderSpec::toy(2, 8, 1));
  bool truncated = false;
  auto full = enc.tokenize("one two three four five six", -1, &truncated);
  CHECK_FALSE(truncated);
  REQUIRE(full.size() == 7);

  auto cut = enc.tokenize("one two three four five six", 4, &truncated);
  CHECK(truncated);
  REQUIRE(cut.size() == 4);
  CHECK(cut[0] == 0);
  // The kept buckets are the last three words of the full sequence.
  CHECK(cut[1] == full[4]);
  CHECK(cut[2] == full[5]);
  CHECK(cut[3] == full[6]);
}

TEST_CASE("tokenizer falls back to the configured token budget") {
  Encoder enc = Encoder::load(EncoderSpec::toy(2, 8, 1, /*max_seq_len=*/4));
  bool truncated = false;
  auto ids = enc.tokenize("a b c d e f", -1, &truncated);
  CHECK(ids.size() == 4);
  CHECK(truncated);
}

TEST_CASE("encoder spec validation") {
  CHECK_THROWS_AS(Encoder::load(EncoderSpec::toy(0, 8, 1)), ConfigError);
  CHECK_THROWS_AS(Encoder::load(EncoderSpec::toy(2, 0, 1)), ConfigError);
  CHECK_THROWS_AS(Encoder::load(EncoderSpec::toy(2, 8, 1, 1)), ConfigError);
}

TEST_CASE("pretrained catalog is audit-only") {
  const auto& catalog = pretrained_catalog();
  REQUIRE(catalog.size() == 3);
  const PretrainedInfo* large = find_pretrained("xlm-roberta-large");
  REQUIRE(large != nullptr);
  CHECK(large->n_layers == 24);
  CHECK(large->hidden_dim == 1024);
  CHECK(large->total_params == 550000000);
  const PretrainedInfo* base = find_pretrained("xlm-roberta-base");
  REQUIRE(base != nullptr);
  CHECK(base->n_layers == 12);
  CHECK(base->hidden_dim == 768);
  CHECK(find_pretrained("bert-base-multilingual-cased") != nullptr);
  CHECK(find_pretrained("gpt2") == nullptr);

  EncoderSpec spec = EncoderSpec::pretrained("xlm-roberta-large");
  CHECK(spec.n_layers == 24);
  CHECK(spec.hidden_dim == 1024);
  CHECK_THROWS_AS(EncoderSpec::pretrained("gpt2"), ConfigError);
  // Weights are not shipped; loading must refuse loudly rather than fake it.
  CHECK_THROWS_AS(Encoder::load(spec), LoadError);
}

TEST_CASE("encoding is deterministic per spec seed") {
  Encoder a = Encoder::load(EncoderSpec::toy(3, 12, 7));
  Encoder b = Encoder::load(EncoderSpec::toy(3, 12, 7));
  Encoder c = Encoder::load(EncoderSpec::toy(3, 12, 8));
  const std::string text = "the committee approved the measure";
  Vec va = a.encode(text).final_cls;
  Vec vb = b.encode(text).final_cls;
  Vec vc = c.encode(text).final_cls;
  CHECK((va - vb).norm() == 0.0);
  CHECK((va - vc).norm() > 1e-8);
  CHECK(a.base_checksum() == b.base_checksum());
  CHECK(a.base_checksum() != c.base_checksum());
  CHECK(all_finite(va));
  CHECK(va.size() == 12);
}

TEST_CASE("different texts produce different representations") {
  Encoder enc = Encoder::load(EncoderSpec::toy(3, 12, 7));
  Vec u = enc.encode("the markets rallied sharply").final_cls;
  Vec v = enc.encode("she closed the old ledger").final_cls;
  CHECK((u - v).norm() > 1e-8);
}

TEST_CASE("taps expose intermediate summary vectors") {
  Encoder enc = Encoder::load(EncoderSpec::toy(4, 10, 3));
  EncodeResult r = enc.encode("a b c", {1, 3});
  REQUIRE(r.cls_by_layer.size() == 2);
  CHECK(r.cls_by_layer.count(1) == 1);
  CHECK(r.cls_by_layer.count(3) == 1);
  CHECK((r.cls_by_layer.at(1) - r.cls_by_layer.at(3)).norm() > 1e-10);

  // Tap at the last layer equals the final summary.
  EncodeResult r2 = enc.encode("a b c", {4});
  CHECK((r2.cls_by_layer.at(4) - r2.final_cls).norm() == 0.0);

  CHECK_THROWS_AS(enc.encode("a b c", {5}), ConfigError);
  CHECK_THROWS_AS(enc.encode("a b c", {0}), ConfigError);
}

TEST_CASE("tape encoding matches plain encoding") {
  Encoder enc = Encoder::load(EncoderSpec::toy(3, 10, 5));
  const std::string text = "gradient flow must match";
  EncodeResult plain = enc.encode(text, {2});

  ad::Tape tape;
  EncodeOptions options;
  options.tap_layers = {2};
  EncodeNodes nodes = enc.encode_on_tape(tape, text, options);
  CHECK((tape.value(nodes.final_cls) - plain.final_cls).norm() == 0.0);
  CHECK((tape.value(nodes.cls_by_layer.at(2)) - plain.cls_by_layer.at(2)).norm() ==
        0.0);
}

TEST_CASE("gradient barrier severs flow below it but not through taps") {
  Encoder enc = Encoder::load(EncoderSpec::toy(4, 8, 11));
  auto params = enc.base_parameters();
  for (auto* p : params) p->trainable = true;

  auto grads_norm_below = [&](int barrier, bool from_tap) {
    for (auto* p : params) p->zero_grad();
    ad::Tape tape;
    EncodeOptions options;
    options.tap_layers = {2};
    options.barrier_after_layer = barrier;
    EncodeNodes nodes = enc.encode_on_tape(tape, "words to process here", options);
    ad::Var root = from_tap ? nodes.cls_by_layer.at(2) : nodes.final_cls;
    tape.backward(tape.cross_entropy(root, 0, 0.0));
    double below = 0.0;
    for (auto* p : params) {
      // Layer parameters are named base.L<k>.*; embeddings sit below layer 1.
      bool is_below;
      if (p->name == "base.embed") {
        is_below = true;
      } else {
        int layer = std::stoi(p->name.substr(6));
        is_below = layer <= 2;
      }
      if (is_below) below += p->grad.norm();
    }
    return below;
  };

  // No barrier: the final summary reaches everything.
  CHECK(grads_norm_below(-1, false) > 1e-10);
  // Barrier after layer 2: the final summary no longer reaches layers 1-2.
  CHECK(grads_norm_below(2, false) == 0.0);
  // The tap at layer 2 is recorded before the barrier and still reaches down.
  CHECK(grads_norm_below(2, true) > 1e-10);
}

TEST_CASE("fresh adapters leave the encoding untouched") {
  EncoderSpec spec = EncoderSpec::toy(4, 8, 21);
  Encoder plain = Encoder::load(spec);
  Encoder adapted = Encoder::load(spec);
  AdapterPlacement placement;
  placement.lower = {1, 2};
  placement.upper = {3, 4};
  placement.rank = 2;
  placement.alpha = 4.0;
  placement.n_experts = 3;
  std::mt19937_64 rng = seeded_rng(99, "adapters");
  adapted.attach_adapters(placement, rng);

  const std::string text = "adapters begin as identities";
  Vec u = plain.encode(text).final_cls;
  Vec v = adapted.encode(text).final_cls;
  CHECK((u - v).norm() == 0.0);
  CHECK(plain.base_checksum() == adapted.base_checksum());
}

TEST_CASE("trained adapters change the encoding and can be bypassed") {
  EncoderSpec spec = EncoderSpec::toy(3, 8, 22);
  Encoder enc = Encoder::load(spec);
  AdapterPlacement placement;
  placement.lower = {1, 1};
  placement.upper = {2, 3};
  placement.rank = 2;
  placement.alpha = 4.0;
  placement.n_experts = 2;
  std::mt19937_64 rng = seeded_rng(23, "adapters");
  AdapterStack& stack = enc.attach_adapters(placement, rng);

  Vec before = enc.encode("perturb the deltas now").final_cls;
  for (auto& site : stack.sites()) {
    if (auto* lora = std::get_if<LoRALayer>(&site.adapter))
      lora->B.value.setConstant(0.05);
    else
      for (auto& e : std::get<MoELoRALayer>(site.adapter).experts)
        e.B.value.setConstant(0.05);
  }
  Vec after = enc.encode("perturb the deltas now").final_cls;
  CHECK((before - after).norm() > 1e-8);

  ad::Tape tape(false);
  EncodeOptions options;
  options.use_adapters = false;
  Vec bypassed = tape.value(
      enc.encode_on_tape(tape, "perturb the deltas now", options).final_cls);
  CHECK((bypassed - before).norm() == 0.0);

  // The base weights themselves never moved.
  CHECK(enc.base_checksum() == Encoder::load(spec).base_checksum());
}

TEST_CASE("adapter placement outside the layer span is rejected") {
  Encoder enc = Encoder::load(EncoderSpec::toy(24, 8, 1));
  AdapterPlacement placement;
  placement.lower = {1, 8};
  placement.upper = {20, 30};
  placement.rank = 2;
  placement.alpha = 4.0;
  std::mt19937_64 rng = seeded_rng(1, "bad");
  CHECK_THROWS_AS(enc.attach_adapters(placement, rng), ConfigError);
}

TEST_CASE("moe gate statistics are exposed during encoding") {
  Encoder enc = Encoder::load(EncoderSpec::toy(3, 8, 31));
  AdapterPlacement placement;
  placement.lower = {1, 1};
  placement.upper = {2, 3};
  placement.rank = 2;
  placement.alpha = 4.0;
  placement.n_experts = 4;
  std::mt19937_64 rng = seeded_rng(31, "gates");
  enc.attach_adapters(placement, rng);

  ad::Tape tape(false);
  std::vector<std::pair<std::string, Mat>> sink;
  EncodeOptions options;
  options.gate_sink = &sink;
  enc.encode_on_tape(tape, "watch the routing weights", options);

  // Two MoE layers x two sublayer sites.
  REQUIRE(sink.size() == 4);
  for (const auto& [name, gates] : sink) {
    CHECK(name.find("L") == 0);
    REQUIRE(gates.rows() == 4);
    for (int t = 0; t < gates.cols(); ++t)
      CHECK(gates.col(t).sum() == doctest::Approx(1.0));
  }
}

TEST_CASE("progressive unfreezing selects the top fraction of layers") {
  SUBCASE("three quarters of a 24-layer encoder") {
    Encoder enc = Encoder::load(EncoderSpec::toy(24, 4, 2));
    FreezeReport r = enc.set_trainable(0.75);
    REQUIRE(r.trainable_layer_indices.size() == 18);
    CHECK(r.trainable_layer_indices.front() == 7);
    CHECK(r.trainable_layer_indices.back() == 24);
    REQUIRE(r.frozen_layer_indices.size() == 6);
    CHECK(r.frozen_layer_indices.back() == 6);
  }
  SUBCASE("one quarter of a 12-layer encoder") {
    Encoder enc = Encoder::load(EncoderSpec::toy(12, 4, 2));
    FreezeReport r = enc.set_trainable(0.25);
    REQUIRE(r.trainable_layer_indices.size() == 3);
    CHECK(r.trainable_layer_indices.front() == 10);
  }
  SUBCASE("zero ratio freezes everything") {
    Encoder enc = Encoder::load(EncoderSpec::toy(4, 4, 2));
    FreezeReport r = enc.set_trainable(0.0);
    CHECK(r.trainable_layer_indices.empty());
    CHECK(r.trainable_param_count == 0);
    for (auto* p : enc.base_parameters()) CHECK_FALSE(p->trainable);
  }
  SUBCASE("full ratio unfreezes embeddings too") {
    Encoder enc = Encoder::load(EncoderSpec::toy(4, 4, 2));
    FreezeReport r = enc.set_trainable(1.0);
    CHECK(r.trainable_layer_indices.size() == 4);
    CHECK(r.trainable_param_count == r.total_param_count);
    for (auto* p : enc.base_parameters()) CHECK(p->trainable);
  }
  SUBCASE("embeddings stay frozen below full unfreezing") {
    Encoder enc = Encoder::load(EncoderSpec::toy(4, 4, 2));
    enc.set_trainable(0.75);
    for (auto* p : enc.base_parameters())
      if (p->name == "base.embed") CHECK_FALSE(p->trainable);
  }
  SUBCASE("repeated calls: the last one wins") {
    Encoder a = Encoder::load(EncoderSpec::toy(8, 4, 2));
    Encoder b = Encoder::load(EncoderSpec::toy(8, 4, 2));
    a.set_trainable(1.0);
    FreezeReport ra = a.set_trainable(0.5);
    FreezeReport rb = b.set_trainable(0.5);
    CHECK(ra.trainable_layer_indices == rb.trainable_layer_indices);
    CHECK(ra.trainable_param_count == rb.trainable_param_count);
    for (std::size_t i = 0; i < a.base_parameters().size(); ++i)
      CHECK(a.base_parameters()[i]->trainable ==
            b.base_parameters()[i]->trainable);
  }
  SUBCASE("out-of-range ratios are rejected") {
    Encoder enc = Encoder::load(EncoderSpec::toy(4, 4, 2));
    CHECK_THROWS_AS(enc.set_trainable(-0.1), ConfigError);
    CHECK_THROWS_AS(enc.set_trainable(1.1), ConfigError);
  }
}

TEST_CASE("clone is a deep copy") {
  Encoder enc = Encoder::load(EncoderSpec::toy(3, 8, 77));
  Encoder copy = enc.clone();
  const std::string text = "copies must not alias";
  CHECK((enc.encode(text).final_cls - copy.encode(text).final_cls).norm() == 0.0);
  CHECK(enc.base_checksum() == copy.base_checksum());

  // Mutating the original must not leak into the clone.
  enc.base_parameters()[1]->value.setConstant(0.0);
  CHECK(enc.base_checksum() != copy.base_checksum());
  CHECK((enc.encode(text).final_cls - copy.encode(text).final_cls).norm() > 0.0);
}

TEST_CASE("per-layer dropout produces stochastic views") {
  Encoder enc = Encoder::load(EncoderSpec::toy(3, 16, 13));
  const std::string text = "two views of one sentence";
  std::mt19937_64 rng = seeded_rng(5, "views");

  auto draw = [&]() {
    ad::Tape tape(false);
    EncodeOptions options;
    options.dropout = 0.2;
    options.dropout_rng = &rng;
    return Vec(tape.value(enc.encode_on_tape(tape, text, options).final_cls));
  };
  Vec v1 = draw();
  Vec v2 = draw();
  CHECK((v1 - v2).norm() > 1e-10);

  // Without an rng the option is inert.
  ad::Tape tape(false);
  EncodeOptions options;
  options.dropout = 0.2;
  Vec v3 = tape.value(enc.encode_on_tape(tape, text, options).final_cls);
  CHECK((v3 - enc.encode(text).final_cls).norm() == 0.0);
}

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "nerd/error.hpp"
#include "nerd/train.hpp"
#include "support.hpp"

using namespace nerd;

namespace {

Dataset tiny_dataset() {
  SynthConfig c;
  c.height = c.width = 32;
  c.band = 6;
  c.blobs_min = 2;
  c.blobs_max = 3;
  c.radius_min = 2;
  c.radius_max = 3;
  c.train = 8;
  c.val = 4;
  c.test = 2;
  c.rule = BandRule::Border;
  c.seed = 3;
  return generate_border_bias(c);
}

ModelConfig tiny_model() {
  ModelConfig m;
  m.backbone.filters = {2, 4, 4, 4, 4};
  m.backbone.feature_channels = 4;
  m.head.kind = HeadKind::NerdC;
  m.head.calibrator_hidden = {8};
  return m;
}

TrainConfig tiny_train(int epochs) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = 3;
  t.base_lr = 1e-2;
  t.seed = 5;
  return t;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_SUITE("train") {
  TEST_CASE("learning rate schedule") {
    TrainConfig c;
    CHECK(lr_at(0, c) == 1e-3);
    CHECK(lr_at(44, c) == 1e-3);
    CHECK(lr_at(45, c) == 5e-4);
    CHECK(lr_at(63, c) == 2.5e-4);
    CHECK(lr_at(81, c) == 1.25e-4);
    CHECK(lr_at(89, c) == 1.25e-4);
    std::set<double> distinct;
    for (int e = 0; e < 90; ++e) distinct.insert(lr_at(e, c));
    CHECK(distinct.size() == 4);
    CHECK_THROWS_AS(lr_at(90, c), InvalidArgument);
    CHECK_THROWS_AS(lr_at(-1, c), InvalidArgument);
    c.epochs = 10;
    CHECK(lr_at(5, c) == 5e-4);
    CHECK(lr_at(7, c) == 2.5e-4);
    CHECK(lr_at(9, c) == 1.25e-4);
  }

  TEST_CASE("config validation and json") {
    TrainConfig c;
    c.device = "cuda";
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = TrainConfig{};
    c.batch_size = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = TrainConfig{};
    c.lr_milestones = {0.7, 0.5};
    CHECK_THROWS_AS(c.validate(), ConfigError);
    const auto j = to_json(tiny_train(4));
    CHECK(to_json(train_config_from_json(j)) == j);
    CHECK_THROWS_AS(train_config_from_json({{"momentum", 0.9}}), ConfigError);
    CHECK_THROWS_AS(parse_loss_kind("focal"), ConfigError);
  }

  TEST_CASE("loss examples") {
    LogitMap<double> sat(1, 2, 3, 3, 20.0);
    const std::vector<std::uint8_t> ones(18, 1);
    CHECK(compute_loss(sat, ones, LossKind::BceDice).total <= 1e-6);
    const LogitMap<double> zero(1, 2, 3, 3);
    CHECK(compute_loss(zero, ones, LossKind::Bce).bce == doctest::Approx(std::log(2.0)).epsilon(1e-14));
    CHECK(compute_loss(zero, ones, LossKind::Bce).total == compute_loss(zero, ones, LossKind::Bce).bce);
    LogitMap<double> perfect(1, 1, 1, 2);
    perfect.data()[0] = 60;
    perfect.data()[1] = -60;
    const std::vector<std::uint8_t> t{1, 0};
    CHECK(compute_loss(perfect, t, LossKind::Dice).dice_loss == doctest::Approx(0.0));
    const std::vector<std::uint8_t> bad{1, 2};
    CHECK_THROWS_AS(compute_loss(perfect, bad, LossKind::Bce), InvalidArgument);
    CHECK_THROWS_AS(compute_loss(perfect, ones, LossKind::Bce), ShapeError);
  }

  TEST_CASE("loss gradients match finite differences") {
    Rng rng(1);
    auto logits = test::random_tensor<double>(1, 2, 4, 4, rng, -3, 3);
    std::vector<std::uint8_t> target(32);
    for (auto& v : target) v = rng.uniform() < 0.4;
    for (auto kind : {LossKind::BceDice, LossKind::Bce, LossKind::Dice}) {
      LogitMap<double> grad;
      compute_loss(logits, target, kind, &grad);
      std::vector<double> xs(logits.values().begin(), logits.values().end());
      auto loss = [&] {
        std::copy(xs.begin(), xs.end(), logits.data());
        return compute_loss(logits, target, kind).total;
      };
      const auto numeric = test::numeric_gradient(xs, loss);
      std::copy(xs.begin(), xs.end(), logits.data());
      CHECK(test::relative_error({grad.values().begin(), grad.values().end()}, numeric) < 1e-6);
    }
  }

  TEST_CASE("history json and csv") {
    TrainHistory h;
    h.epochs = {{0, 1e-3, 0.5, 0.25}, {1, 5e-4, 0.4, 0.5}};
    h.best_epoch = 1;
    h.best_val_dice = 0.5;
    const auto back = train_history_from_json(to_json(h));
    CHECK(back.best_epoch == 1);
    CHECK(back.epochs[1].lr == 5e-4);
    CHECK(history_csv(h) == "epoch,lr,train_loss,val_dice\n0,0.001,0.5,0.25\n1,0.0005,0.4,0.5\n");
  }

  TEST_CASE("training is deterministic, learns and follows the schedule") {
    const Dataset d = tiny_dataset();
    SegmentationModel<float> a(tiny_model(), 1), b(tiny_model(), 1);
    const auto ha = train_model(a, d, tiny_train(6));
    const auto hb = train_model(b, d, tiny_train(6));
    REQUIRE(ha.epochs.size() == 6);
    CHECK(history_csv(ha) == history_csv(hb));
    CHECK(ha.epochs[5].train_loss < ha.epochs[0].train_loss);
    for (const auto& e : ha.epochs) CHECK(e.lr == lr_at(e.epoch, tiny_train(6)));
    double best = -1;
    int best_epoch = -1;
    for (const auto& e : ha.epochs)
      if (e.val_dice > best) best = e.val_dice, best_epoch = e.epoch;
    CHECK(ha.best_epoch == best_epoch);
    CHECK(ha.best_val_dice == best);
    CHECK(split_dice(a, d, Split::Val, 0.5, 3) == doctest::Approx(best).epsilon(1e-12));
  }

  TEST_CASE("an interrupted run resumes to the same result") {
    const Dataset d = tiny_dataset();
    const auto full_dir = test::scratch_dir("train_full");
    const auto resumed_dir = test::scratch_dir("train_resumed");
    SegmentationModel<float> full(tiny_model(), 2);
    TrainOptions opt;
    opt.run_dir = full_dir;
    const auto hf = train_model(full, d, tiny_train(4), opt);

    SegmentationModel<float> first(tiny_model(), 2);
    TrainOptions stop;
    stop.run_dir = resumed_dir;
    stop.stop_after_epoch = 2;
    CHECK(train_model(first, d, tiny_train(4), stop).epochs.size() == 2);
    CHECK(std::filesystem::exists(resumed_dir / "checkpoints" / "last.ckpt"));
    SegmentationModel<float> second(tiny_model(), 2);
    TrainOptions cont;
    cont.run_dir = resumed_dir;
    const auto hr = train_model(second, d, tiny_train(4), cont);
    CHECK(history_csv(hr) == history_csv(hf));
    CHECK(slurp(full_dir / "history.csv") == slurp(resumed_dir / "history.csv"));
    const auto pf = full.params(), pr = second.params();
    bool same = true;
    for (std::size_t i = 0; i < pf.size(); ++i) same = same && pf[i]->value == pr[i]->value;
    CHECK(same);
    CHECK(std::filesystem::exists(full_dir / "checkpoints" / "best.ckpt"));
    CHECK(std::filesystem::exists(full_dir / "train_result.json"));

    TrainConfig changed = tiny_train(4);
    changed.base_lr = 5e-3;
    SegmentationModel<float> third(tiny_model(), 2);
    CHECK_THROWS_AS(train_model(third, d, changed, cont), ConfigError);
  }

  TEST_CASE("empty training split is rejected") {
    Dataset d = tiny_dataset();
    std::erase_if(d.volumes, [](const SampleVolume& v) { return v.split == Split::Train; });
    SegmentationModel<float> m(tiny_model(), 0);
    CHECK_THROWS_AS(train_model(m, d, tiny_train(1)), InvalidArgument);
  }

  TEST_CASE("non-finite loss aborts with its location") {
    Dataset d = tiny_dataset();
    SegmentationModel<float> m(tiny_model(), 0);
    for (auto* p : m.params())
      if (p->name.find("head") != std::string::npos) std::fill(p->value.begin(), p->value.end(), NAN);
    try {
      train_model(m, d, tiny_train(1));
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("epoch 0, batch 0") != std::string::npos);
    }
  }
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "loopformer/checkpoint.hpp"
#include "loopformer/train.hpp"
#include "testutil.hpp"

using namespace loopformer;
namespace fs = std::filesystem;

namespace {

std::string temp_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("loopformer_test_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("lr schedule values") {
  LrSchedule sched{512, 16000, 1.0};
  const double peak = std::pow(512.0, -0.5) * std::pow(16000.0, -0.5);
  CHECK(sched.at(16000) == doctest::Approx(3.494e-4).epsilon(3e-4));
  CHECK(std::fabs(sched.at(16000) - peak) < 1e-18);

  // linear warmup phase is proportional to the step
  CHECK(sched.at(4000) == doctest::Approx(peak / 4).epsilon(1e-12));
  CHECK(sched.at(8000) == doctest::Approx(peak / 2).epsilon(1e-12));

  // inverse-sqrt phase
  CHECK(sched.at(32000) / sched.at(16000) == doctest::Approx(std::pow(2.0, -0.5)).epsilon(1e-12));

  // continuity at the boundary: both branches agree
  const double left = std::pow(512.0, -0.5) * 16000.0 * std::pow(16000.0, -1.5);
  const double right = std::pow(512.0, -0.5) * std::pow(16000.0, -0.5);
  CHECK(std::fabs(left - right) < 1e-15);
  CHECK(sched.at(15999) < sched.at(16000));
  CHECK(sched.at(16001) < sched.at(16000));

  CHECK_THROWS_AS(sched.at(0), std::invalid_argument);
}

TEST_CASE("adam single-step hand value") {
  Tensor p = Tensor::scalar(1.0, true);
  ensure_grad(*p.node())[0] = 1.0;
  Adam opt({{"p", p}});
  opt.step(0.1);
  // bias-corrected m/v ratio is 1; update is -lr up to eps
  CHECK(p.data()[0] == doctest::Approx(0.9).epsilon(1e-8));
}

TEST_CASE("adam leaves parameters alone with zero gradient and zero state") {
  Tensor p = Tensor::scalar(3.25, true);
  ensure_grad(*p.node())[0] = 0.0;
  Adam opt({{"p", p}});
  opt.step(0.5);
  opt.step(0.5);
  CHECK(p.data()[0] == 3.25);
}

TEST_CASE("adam moves opposite the gradient sign") {
  Tensor p = Tensor::scalar(0.0, true);
  Adam opt({{"p", p}});
  double prev = 0.0;
  for (int i = 0; i < 5; ++i) {
    ensure_grad(*p.node())[0] = -2.0;
    opt.step(0.01);
    CHECK(p.data()[0] > prev);
    prev = p.data()[0];
  }
}

TEST_CASE("adam update is invariant to gradient scale") {
  Tensor a = Tensor::scalar(1.0, true);
  Tensor b = Tensor::scalar(1.0, true);
  Adam oa({{"a", a}});
  Adam ob({{"b", b}});
  for (int i = 0; i < 10; ++i) {
    ensure_grad(*a.node())[0] = 0.05;
    ensure_grad(*b.node())[0] = 0.05 * 1000.0;
    oa.step(0.01);
    ob.step(0.01);
    a.zero_grad();
    b.zero_grad();
  }
  CHECK(a.data()[0] == doctest::Approx(b.data()[0]).epsilon(1e-6));
}

namespace {

struct TrainFixture {
  Vocab vocab;
  ParallelCorpus corpus;
  ModelConfig cfg;

  TrainFixture() {
    corpus = gen_synthetic(SyntheticTask::Copy, 8, 3, 5, 12, 5);
    vocab = Vocab::build(corpus, 12);
    cfg = testutil::tiny_config(ShareMode::SharedLoop, 2, 2, ShareMode::SharedLoop, 2, 2,
                                vocab.size());
    cfg.d_model = 16;
    cfg.d_ff = 32;
  }
};

}  // namespace

TEST_CASE("a memorizable batch trains to a much lower loss") {
  TrainFixture fx;
  Rng rng(1);
  RecurrentModel model = init_model(fx.cfg, rng);
  BatchingResult batches = make_batches(fx.corpus, fx.vocab, 256, 3);
  REQUIRE(batches.batches.size() == 1);
  const Batch& batch = batches.batches.front();

  Adam opt(model.parameters());
  LrSchedule sched{fx.cfg.d_model, 20, 1.0};
  Rng drop(2);
  double first = 0.0, last = 0.0;
  for (int step = 1; step <= 50; ++step) {
    StepMetrics m = train_step(model, batch, opt, sched, 0.1, 0.0, drop, step);
    if (step == 1) first = m.loss;
    last = m.loss;
    CHECK(std::isfinite(m.loss));
    CHECK(m.tokens == batch.non_pad_targets);
  }
  CHECK(last < 0.5 * first);
}

TEST_CASE("zero learning rate leaves parameters bit-identical") {
  TrainFixture fx;
  Rng rng(4);
  RecurrentModel model = init_model(fx.cfg, rng);
  BatchingResult batches = make_batches(fx.corpus, fx.vocab, 256, 3);
  const Batch& batch = batches.batches.front();

  std::vector<std::vector<double>> before;
  for (const auto& [name, t] : model.parameters()) {
    (void)name;
    before.push_back(t.data());
  }
  Adam opt(model.parameters());
  LrSchedule sched{fx.cfg.d_model, 20, 1.0};
  sched.scale = 0.0;
  Rng drop(2);
  train_step(model, batch, opt, sched, 0.1, 0.0, drop, 1);
  size_t i = 0;
  for (const auto& [name, t] : model.parameters()) {
    (void)name;
    CHECK(t.data() == before[i++]);
  }
}

TEST_CASE("identical seeds give identical metric streams") {
  TrainFixture fx;
  auto run = [&]() {
    Rng rng(7);
    RecurrentModel model = init_model(fx.cfg, rng);
    BatchingResult batches = make_batches(fx.corpus, fx.vocab, 128, 3);
    Adam opt(model.parameters());
    LrSchedule sched{fx.cfg.d_model, 20, 1.0};
    Rng drop(9);
    std::vector<double> losses;
    int step = 0;
    for (int epoch = 0; epoch < 3; ++epoch) {
      for (const Batch& b : batches.batches) {
        losses.push_back(train_step(model, b, opt, sched, 0.1, 0.0, drop, ++step).loss);
      }
    }
    return losses;
  };
  CHECK(run() == run());
}

TEST_CASE("a non-finite loss aborts with the step named") {
  TrainFixture fx;
  Rng rng(30);
  RecurrentModel model = init_model(fx.cfg, rng);
  BatchingResult batches = make_batches(fx.corpus, fx.vocab, 256, 3);
  const Batch& batch = batches.batches.front();
  Adam opt(model.parameters());
  LrSchedule sched{fx.cfg.d_model, 1, 1e30};  // absurd rate blows the weights up
  Rng drop(2);
  int step = 0;
  try {
    for (step = 1; step <= 10; ++step) {
      train_step(model, batch, opt, sched, 0.1, 0.0, drop, step);
    }
    FAIL("expected a non-finite loss abort");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("step " + std::to_string(step)) != std::string::npos);
    CHECK(std::string(e.what()).find("non-finite") != std::string::npos);
  }
}

TEST_CASE("gradient clipping caps the global norm") {
  TrainFixture fx;
  Rng rng(8);
  RecurrentModel model = init_model(fx.cfg, rng);
  BatchingResult batches = make_batches(fx.corpus, fx.vocab, 256, 3);
  const Batch& batch = batches.batches.front();
  Adam opt(model.parameters());
  LrSchedule sched{fx.cfg.d_model, 20, 1.0};
  Rng drop(2);
  StepMetrics m = train_step(model, batch, opt, sched, 0.1, 1e-3, drop, 1);
  CHECK(m.grad_norm > 1e-3);  // metric reports the pre-clip norm
  CHECK(grad_global_norm(opt.params()) == doctest::Approx(1e-3).epsilon(1e-9));
}

TEST_CASE("checkpoint round-trips bit-exactly") {
  TrainFixture fx;
  Rng rng(10);
  RecurrentModel model = init_model(fx.cfg, rng);
  Adam opt(model.parameters());
  const std::string dir = temp_dir("ckpt_roundtrip");

  Checkpoint ckpt = snapshot_model(model, "k = v\n", 42, &opt);
  save_checkpoint(dir + "/ckpt-42", ckpt);
  Checkpoint loaded = load_checkpoint(dir + "/ckpt-42");

  CHECK(loaded.step == 42);
  CHECK(loaded.config_text == "k = v\n");
  CHECK(loaded.has_optimizer);
  REQUIRE(loaded.params.size() == ckpt.params.size());
  for (size_t i = 0; i < ckpt.params.size(); ++i) {
    CHECK(loaded.params[i].first == ckpt.params[i].first);
    CHECK(testutil::bit_equal(loaded.params[i].second, ckpt.params[i].second));
  }
  CHECK(loaded.adam_m == ckpt.adam_m);
  CHECK(loaded.adam_v == ckpt.adam_v);

  // loading back into a model restores the exact values
  Rng rng2(11);
  RecurrentModel other = init_model(fx.cfg, rng2);
  load_parameters(other.parameters(), loaded);
  auto a = model.parameters();
  auto b = other.parameters();
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i].second.data() == b[i].second.data());
}

TEST_CASE("incompatible checkpoints are rejected with offenders listed") {
  TrainFixture fx;
  Rng rng(12);
  RecurrentModel model = init_model(fx.cfg, rng);
  Checkpoint ckpt = snapshot_model(model, "", 1, nullptr);

  ModelConfig other_cfg = fx.cfg;
  other_cfg.d_model = 8;
  other_cfg.d_ff = 16;
  Rng rng2(13);
  RecurrentModel other = init_model(other_cfg, rng2);
  CHECK_THROWS_WITH_AS(load_parameters(other.parameters(), ckpt), doctest::Contains("embedding"),
                       std::runtime_error);
}

TEST_CASE("checkpoint averaging") {
  TrainFixture fx;
  const std::string dir = temp_dir("ckpt_avg");

  Rng rng(14);
  RecurrentModel model = init_model(fx.cfg, rng);
  Checkpoint base = snapshot_model(model, "", 1, nullptr);

  // k identical checkpoints average to themselves, bit-exactly
  save_checkpoint(dir + "/a", base);
  save_checkpoint(dir + "/b", base);
  save_checkpoint(dir + "/c", base);
  Checkpoint same = average_checkpoints({dir + "/a", dir + "/b", dir + "/c"});
  for (size_t i = 0; i < base.params.size(); ++i) {
    CHECK(same.params[i].second.data() == base.params[i].second.data());
  }

  // {2} and {4} average to {3}
  Checkpoint two, four;
  two.params.emplace_back("w", Tensor({1}, {2.0}));
  four.params.emplace_back("w", Tensor({1}, {4.0}));
  save_checkpoint(dir + "/two", two);
  save_checkpoint(dir + "/four", four);
  Checkpoint three = average_checkpoints({dir + "/two", dir + "/four"});
  CHECK(three.params[0].second.item() == 3.0);
  CHECK_FALSE(three.has_optimizer);

  // mean of 5 perturbed checkpoints matches a reversed-order recomputation
  Rng noise(15);
  std::vector<std::string> paths;
  std::vector<Checkpoint> ckpts;
  for (int k = 0; k < 5; ++k) {
    Checkpoint c = base;
    c.params.clear();
    for (const auto& [name, t] : base.params) {
      Tensor perturbed(t.shape(), t.data());
      for (double& v : perturbed.data()) v += noise.gauss() * 0.01;
      c.params.emplace_back(name, perturbed);
    }
    paths.push_back(dir + "/n" + std::to_string(k));
    save_checkpoint(paths.back(), c);
    ckpts.push_back(std::move(c));
  }
  Checkpoint mean = average_checkpoints(paths);
  for (size_t p = 0; p < base.params.size(); ++p) {
    const size_t n = base.params[p].second.data().size();
    for (size_t i = 0; i < n; ++i) {
      double rev = 0.0;
      for (int k = 4; k >= 0; --k) rev += ckpts[static_cast<size_t>(k)].params[p].second.data()[i];
      rev /= 5.0;
      CHECK(std::fabs(mean.params[p].second.data()[i] - rev) < 1e-12);
    }
  }

  // shape mismatch is reported with the offending parameter
  Checkpoint bad;
  bad.params.emplace_back("w", Tensor({2}, {1.0, 2.0}));
  save_checkpoint(dir + "/bad", bad);
  CHECK_THROWS_WITH_AS(average_checkpoints({dir + "/two", dir + "/bad"}), doctest::Contains("w"),
                       std::runtime_error);
}

TEST_CASE("two identical runs produce byte-identical artifacts") {
  TrainFixture fx;
  RunConfig cfg;
  cfg.model = fx.cfg;
  cfg.model.vocab_size = fx.vocab.size();
  cfg.train.max_steps = 6;
  cfg.train.warmup_steps = 10;
  cfg.train.max_tokens = 128;
  cfg.train.ckpt_interval = 3;
  cfg.train.seed = 21;
  cfg.model.dropout = 0.1;

  auto run = [&](const std::string& tag) {
    const std::string dir = temp_dir(tag);
    Rng rng(cfg.train.seed);
    ModelConfig mc = cfg.model;
    RecurrentModel model = init_model(mc, rng);
    run_training(cfg, model, fx.corpus, fx.vocab, dir);
    return dir;
  };
  const std::string d1 = run("repro_a");
  const std::string d2 = run("repro_b");
  CHECK(read_file(d1 + "/metrics.csv") == read_file(d2 + "/metrics.csv"));
  CHECK(read_file(d1 + "/ckpt-3") == read_file(d2 + "/ckpt-3"));
  CHECK(read_file(d1 + "/ckpt-6") == read_file(d2 + "/ckpt-6"));
  CHECK(read_file(d1 + "/config.resolved") == read_file(d2 + "/config.resolved"));
}

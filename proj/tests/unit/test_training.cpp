#include <doctest.h>

#include <fstream>
#include <sstream>

#include "hquic/checkpoint.hpp"
#include "hquic/image.hpp"
#include "hquic/training.hpp"
#include "testutil.hpp"

using namespace hquic;

namespace {

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.n = 8;
  cfg.m = 12;
  cfg.crop = 32;
  cfg.batch_size = 2;
  cfg.steps = 4;
  cfg.seed = 11;
  return cfg;
}

void write_dataset(const std::string& dir, int count, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  for (int i = 0; i < count; ++i)
    save_image(dir + "/img" + std::to_string(i) + ".png",
               testutil::smooth_image(48, 48, seed + static_cast<std::uint64_t>(i)));
}

}  // namespace

TEST_CASE("config validation rejects bad crops") {
  TrainConfig cfg = tiny_config();
  cfg.crop = 40;  // not a multiple of 16
  CHECK_THROWS(cfg.validate());
  cfg.crop = 16;  // below minimum
  CHECK_THROWS(cfg.validate());
  cfg.crop = 32;
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("train_step with zero learning rate leaves parameters untouched") {
  TrainConfig cfg = tiny_config();
  cfg.learning_rate = 0.0;
  Model model(cfg.model_config());
  std::vector<double> before;
  for (const ad::Param* p : model.params().all())
    for (std::size_t i = 0; i < p->value.numel(); ++i) before.push_back(p->value[i]);

  Tensor batch({2, 3, 32, 32});
  Tensor img = testutil::smooth_image(32, 32, 3);
  for (int n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < img.numel(); ++i)
      batch[static_cast<std::size_t>(n) * img.numel() + i] = img[i];

  LossComponents l = train_step(model, batch, cfg, 99, 1);
  CHECK(l.total == doctest::Approx(l.rate + cfg.lambda * l.mse255 +
                                   cfg.beta * l.lta).epsilon(1e-9));
  std::size_t k = 0;
  for (const ad::Param* p : model.params().all())
    for (std::size_t i = 0; i < p->value.numel(); ++i)
      CHECK(p->value[i] == before[k++]);
}

TEST_CASE("beta zero reduces the loss to the RD lagrangian") {
  TrainConfig cfg = tiny_config();
  cfg.beta = 0.0;
  cfg.learning_rate = 0.0;
  Model model(cfg.model_config());
  Tensor batch({1, 3, 32, 32});
  Tensor img = testutil::smooth_image(32, 32, 4);
  for (std::size_t i = 0; i < img.numel(); ++i) batch[i] = img[i];
  LossComponents l = train_step(model, batch, cfg, 5, 1);
  CHECK(l.total == doctest::Approx(l.rate + cfg.lambda * l.mse255).epsilon(1e-12));
}

TEST_CASE("metrics log writes the expected CSV layout") {
  testutil::TempDir tmp("mlog");
  std::string p = tmp.file("m.csv");
  {
    MetricsLog log(p);
    log.append(0, {1.0, 2.0, 3.0, 4.0});
    log.append(1, {1.5, 2.5, 3.5, 4.5});
  }
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  CHECK(line == "step,rate,mse255,lta,total");
  int rows = 0;
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 2);
}

TEST_CASE("make_batch is deterministic per absolute step") {
  testutil::TempDir tmp("batch");
  write_dataset(tmp.path(), 3, 500);
  auto ds = load_dataset(tmp.path());
  REQUIRE(ds.size() == 3);
  TrainConfig cfg = tiny_config();
  Tensor a = make_batch(ds, cfg, 7);
  Tensor b = make_batch(ds, cfg, 7);
  Tensor c = make_batch(ds, cfg, 8);
  REQUIRE(a.same_shape(b));
  bool same78 = true;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    CHECK(a[i] == b[i]);
    same78 = same78 && a[i] == c[i];
  }
  CHECK_FALSE(same78);
}

TEST_CASE("training runs, logs every step, and checkpoints") {
  testutil::TempDir tmp("train");
  write_dataset(tmp.file("ds"), 3, 600);
  TrainConfig cfg = tiny_config();
  std::string ckpt = tmp.file("m.hqck");
  std::string log = tmp.file("m.csv");
  train_model(tmp.file("ds"), cfg, ckpt, log);

  std::ifstream in(log);
  std::string line;
  std::getline(in, line);
  int rows = 0;
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  CHECK(rows == cfg.steps);

  auto loaded = load_checkpoint(ckpt);
  CHECK(loaded.step == cfg.steps);
}

TEST_CASE("resume reproduces the uninterrupted loss sequence") {
  testutil::TempDir tmp("resume");
  write_dataset(tmp.file("ds"), 3, 700);

  auto read_rows = [](const std::string& p) {
    std::ifstream in(p);
    std::string line;
    std::getline(in, line);
    std::vector<std::string> rows;
    while (std::getline(in, line))
      if (!line.empty()) rows.push_back(line);
    return rows;
  };

  TrainConfig full = tiny_config();
  full.steps = 10;
  train_model(tmp.file("ds"), full, tmp.file("full.hqck"), tmp.file("full.csv"));

  TrainConfig half = full;
  half.steps = 5;
  train_model(tmp.file("ds"), half, tmp.file("half.hqck"), tmp.file("half.csv"));
  std::filesystem::copy_file(tmp.file("half.hqck"), tmp.file("res.hqck"));
  std::filesystem::copy_file(tmp.file("half.csv"), tmp.file("res.csv"));
  TrainConfig rest = full;
  train_model(tmp.file("ds"), rest, tmp.file("res.hqck"), tmp.file("res.csv"),
              /*resume=*/true);

  auto a = read_rows(tmp.file("full.csv"));
  auto b = read_rows(tmp.file("res.csv"));
  REQUIRE(a.size() == 10);
  REQUIRE(b.size() == 10);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);

  auto ma = load_checkpoint(tmp.file("full.hqck"));
  auto mb = load_checkpoint(tmp.file("res.hqck"));
  CHECK(ma.model->param_hash() == mb.model->param_hash());
}

TEST_CASE("no_fbwt checkpoints contain no fbwt parameters") {
  testutil::TempDir tmp("nofbwt");
  write_dataset(tmp.file("ds"), 2, 800);
  TrainConfig cfg = tiny_config();
  cfg.steps = 2;
  cfg.no_fbwt = true;
  train_model(tmp.file("ds"), cfg, tmp.file("m.hqck"), tmp.file("m.csv"));
  auto loaded = load_checkpoint(tmp.file("m.hqck"));
  for (const ad::Param* p : loaded.model->params().all())
    CHECK(p->name.find("fbwt") == std::string::npos);
}

TEST_CASE("toy training reduces the loss substantially") {
  testutil::TempDir tmp("reduce");
  write_dataset(tmp.file("ds"), 4, 900);
  auto ds = load_dataset(tmp.file("ds"));
  TrainConfig cfg = tiny_config();
  cfg.steps = 300;
  cfg.learning_rate = 1e-3;
  Model model(cfg.model_config());
  double first = 0.0, last = 0.0;
  for (int step = 0; step < cfg.steps; ++step) {
    Tensor batch = make_batch(ds, cfg, step);
    LossComponents l = train_step(model, batch, cfg,
                                  cfg.seed * 7919 + static_cast<std::uint64_t>(step),
                                  step + 1);
    if (step == 0) first = l.total;
    last = l.total;
  }
  CHECK(last < 0.5 * first);
}

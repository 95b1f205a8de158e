#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "slingshot/checkpoint.hpp"
#include "slingshot/config.hpp"
#include "slingshot/errors.hpp"
#include "slingshot/models.hpp"

using namespace slingshot;

namespace {

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

Checkpoint sample_checkpoint() {
  ModelSpec spec;
  spec.kind = ModelKind::mlp;
  spec.depth = 2;
  spec.width = 8;
  spec.input_dim = 5;
  spec.num_classes = 3;
  const auto params = build<double>(spec, 7);
  Checkpoint c;
  c.step = 42;
  c.config = config_to_json(RunConfig{});
  c.precision = "float64";
  c.view = make_flat_view(params);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  for (std::size_t i = 0; i < c.view.total_len; ++i) {
    c.params.push_back(n(rng));
    c.initial_params.push_back(n(rng));
    c.m.push_back(n(rng));
    c.v.push_back(std::abs(n(rng)));
  }
  c.optimizer_t = 42;
  c.order.rng = "12345 678";
  c.order.permutation = {3, 1, 2, 0};
  c.order.cursor = 2;
  c.order.epoch = 5;
  return c;
}

std::uint32_t read_u32(const std::vector<std::uint8_t>& b, std::size_t at) {
  std::uint32_t v;
  std::memcpy(&v, b.data() + at, 4);
  return v;
}

}  // namespace

TEST(Config, EveryKeyRoundTripsThroughText) {
  RunConfig c;
  c.optimizer.eps = 1e-8;
  c.optimizer.beta2 = 0.98;
  c.model.tau = 0.25;
  c.probe.fd_step = 1.0 / 3.0;
  c.max_steps = 123456;
  c.full_batch = true;
  c.precision = Precision::float32;
  const RunConfig back = parse_config(format_config(c));
  EXPECT_EQ(format_config(back), format_config(c));
  for (const auto& key : config_keys()) EXPECT_EQ(get_config_value(back, key), get_config_value(c, key)) << key;
  EXPECT_EQ(back.probe.fd_step, 1.0 / 3.0);
  EXPECT_TRUE(back.full_batch);
}

TEST(Config, FormatListsEveryKeyOnce) {
  const std::string text = format_config(RunConfig{});
  for (const auto& key : config_keys()) {
    const auto first = text.find(key + " = ");
    ASSERT_NE(first, std::string::npos) << key;
    EXPECT_EQ(text.find("\n" + key + " = ", first + 1), std::string::npos) << key;
  }
}

TEST(Config, CommentsBlankLinesAndOverrides) {
  const RunConfig c = parse_config(
      "# header comment\n\n"
      "optimizer.eps = 1e-5   # trailing\n"
      "optimizer.eps = 1e-4\n"
      "train.batch_size = full\n");
  EXPECT_EQ(c.optimizer.eps, 1e-4);
  EXPECT_TRUE(c.full_batch);
}

TEST(Config, UnknownKeyIsAnErrorWithLineNumber) {
  const std::string msg = error_of([] { parse_config("optimizer.eps = 1e-8\noptimizer.epsilon = 1e-8\n", "run.cfg"); });
  EXPECT_NE(msg.find("run.cfg:2"), std::string::npos) << msg;
  EXPECT_NE(msg.find("optimizer.epsilon"), std::string::npos) << msg;
}

TEST(Config, UnparsableValuesRejected) {
  RunConfig c;
  EXPECT_THROW(set_config_value(c, "optimizer.eps", "tiny"), ConfigError);
  EXPECT_THROW(set_config_value(c, "optimizer.eps", "1e-8x"), ConfigError);
  EXPECT_THROW(set_config_value(c, "train.max_steps", "-1"), ConfigError);
  EXPECT_THROW(set_config_value(c, "model.kind", "resnet"), ConfigError);
  EXPECT_THROW(set_config_value(c, "train.precision", "float16"), ConfigError);
  EXPECT_THROW(parse_config("just words\n"), ConfigError);
}

TEST(Config, DefaultIsValid) { EXPECT_NO_THROW(RunConfig{}.validate()); }

TEST(Config, CrossFieldChecks) {
  auto rejects = [](const std::string& text) {
    RunConfig c = parse_config(text);
    EXPECT_THROW(c.validate(), ConfigError) << text;
  };
  rejects("model.kind = transformer\nmodel.width = 130\nmodel.heads = 4\ndata.kind = equations\n");
  rejects("model.kind = transformer\ndata.kind = synthetic\n");
  rejects("model.kind = mlp\ndata.kind = equations\n");
  rejects("model.kind = transformer\ndata.kind = equations\ndata.p = 91\n");
  rejects("model.head_mode = normalized\nmodel.tau = 0\n");
  rejects("optimizer.eps = 0\n");
  rejects("optimizer.lr = 0\n");
  rejects("data.informative_dim = 2\ndata.classes = 8\n");
  rejects("probe.log_every = 0\n");
  rejects("analysis.smooth_window = 4\n");
  rejects("analysis.growth_threshold = 1e-5\nanalysis.plateau_threshold = 1e-4\n");
}

TEST(Config, GroupOperationsSkipThePrimalityCheck) {
  RunConfig c = parse_config("model.kind = transformer\ndata.kind = equations\ndata.operation = s5_compose\n");
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, JsonOmitsOutDirOnly) {
  RunConfig c;
  c.out_dir = "somewhere/else";
  const auto j = config_to_json(c);
  EXPECT_FALSE(j.contains("out_dir"));
  EXPECT_EQ(j.size(), config_keys().size() - 1);
  RunConfig d;
  d.out_dir = "another";
  EXPECT_EQ(config_to_json(d), j);
}

TEST(Config, FormatDoubleIsShortestRoundTrip) {
  EXPECT_EQ(format_double(1e-8), "1e-08");
  EXPECT_EQ(format_double(0.5), "0.5");
  std::mt19937_64 rng(9);
  for (int i = 0; i < 1000; ++i) {
    double v;
    const std::uint64_t bits = rng();
    std::memcpy(&v, &bits, 8);
    if (!std::isfinite(v)) continue;
    EXPECT_EQ(std::stod(format_double(v)), v);
  }
}

TEST(Config, OutRootAppliesToRelativePathsOnly) {
  ::setenv("SLINGSHOT_OUT_ROOT", "/tmp/root_for_test", 1);
  EXPECT_EQ(resolve_out_dir("runs/a"), std::filesystem::path("/tmp/root_for_test/runs/a"));
  EXPECT_EQ(resolve_out_dir("/abs/b"), std::filesystem::path("/abs/b"));
  ::unsetenv("SLINGSHOT_OUT_ROOT");
  EXPECT_EQ(resolve_out_dir("runs/a"), std::filesystem::path("runs/a"));
}

TEST(Config, LoadMissingFileIsIoError) {
  EXPECT_THROW(load_config("/nonexistent/dir/run.cfg"), IoError);
}

TEST(Checkpoint, EncodeDecodeEncodeIsByteIdentical) {
  const Checkpoint c = sample_checkpoint();
  const auto bytes = encode_checkpoint(c);
  const Checkpoint d = decode_checkpoint(bytes);
  EXPECT_EQ(encode_checkpoint(d), bytes);
  EXPECT_EQ(d.step, c.step);
  EXPECT_EQ(d.view, c.view);
  EXPECT_EQ(d.params, c.params);
  EXPECT_EQ(d.initial_params, c.initial_params);
  EXPECT_EQ(d.m, c.m);
  EXPECT_EQ(d.v, c.v);
  EXPECT_EQ(d.optimizer_t, c.optimizer_t);
  EXPECT_EQ(d.order, c.order);
  EXPECT_EQ(d.precision, c.precision);
  EXPECT_EQ(d.config, c.config);
}

TEST(Checkpoint, HeaderLayout) {
  const auto bytes = encode_checkpoint(sample_checkpoint());
  ASSERT_GE(bytes.size(), 12u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "SLNG");
  EXPECT_EQ(read_u32(bytes, 4), kCheckpointVersion);
  EXPECT_EQ(read_u32(bytes, 8), 5u);
  EXPECT_EQ(std::string(bytes.begin() + 12, bytes.begin() + 16), "MANI");
}

TEST(Checkpoint, SaveLoadSaveFilesIdentical) {
  const auto dir = std::filesystem::temp_directory_path() / "slingshot_ckpt_test";
  std::filesystem::create_directories(dir);
  save_checkpoint(dir / "a.slng", sample_checkpoint());
  save_checkpoint(dir / "b.slng", load_checkpoint(dir / "a.slng"));
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::vector<char>(std::istreambuf_iterator<char>(in), {});
  };
  EXPECT_EQ(slurp(dir / "a.slng"), slurp(dir / "b.slng"));
  EXPECT_FALSE(std::filesystem::exists(dir / "a.slng.tmp"));
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, BadMagicAndVersion) {
  auto bytes = encode_checkpoint(sample_checkpoint());
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_NE(error_of([&] { decode_checkpoint(bad); }).find("magic"), std::string::npos);
  bad = bytes;
  bad[4] = 99;
  EXPECT_NE(error_of([&] { decode_checkpoint(bad); }).find("version"), std::string::npos);
}

TEST(Checkpoint, CorruptLengthPrefixReportsOffset) {
  auto bytes = encode_checkpoint(sample_checkpoint());
  // First section length sits after magic, version, count and the tag.
  const std::size_t at = 16;
  for (int i = 0; i < 8; ++i) bytes[at + i] = 0xff;
  const std::string msg = error_of([&] { decode_checkpoint(bytes); });
  ASSERT_FALSE(msg.empty());
  EXPECT_NE(msg.find("offset 16"), std::string::npos) << msg;
}

TEST(Checkpoint, EveryTruncationIsRejected) {
  const auto bytes = encode_checkpoint(sample_checkpoint());
  for (std::size_t n = 0; n < bytes.size(); n += 1 + n / 16) {
    EXPECT_THROW(decode_checkpoint(std::span(bytes.data(), n)), FormatError) << n;
  }
}

TEST(Checkpoint, MismatchedVectorsRejected) {
  Checkpoint c = sample_checkpoint();
  c.m.pop_back();
  const auto bytes = encode_checkpoint(c);
  EXPECT_THROW(decode_checkpoint(bytes), FormatError);
}

TEST(Checkpoint, MissingFileIsIoError) {
  EXPECT_THROW(load_checkpoint("/nonexistent/ckpt.slng"), IoError);
}

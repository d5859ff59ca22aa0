#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>

#include "dass/checkpoint.hpp"
#include "dass/error.hpp"
#include "dass/search.hpp"

using namespace dass;

namespace {

CheckpointFile sample() {
  CheckpointFile f;
  f.header_json = R"({"phase":"prune"})";
  f.tensors.push_back({"a", Tensor(Shape{2, 3}, std::vector<float>{1, -0.0f, 3.5f, 1e-30f, -7, 0})});
  f.tensors.push_back({"scalar", Tensor::scalar(2.0f)});
  return f;
}

std::string error_of(const std::vector<uint8_t>& bytes) {
  try {
    decode_checkpoint(bytes);
  } catch (const FormatError& e) {
    return e.what();
  }
  return "";
}

SearchConfig tiny_config() {
  SearchConfig c = desk_preset();
  c.synthetic_samples = 40;
  c.synthetic_image_size = 8;
  c.init_channels = 4;
  c.batch_size = 20;
  c.epochs_pretrain = 1;
  c.epochs_prune = 1;
  c.epochs_finetune = 1;
  return c;
}

}  // namespace

TEST(Checkpoint, EncodeDecodeIsBitwise) {
  const CheckpointFile f = sample();
  const auto bytes = encode_checkpoint(f);
  EXPECT_EQ(std::memcmp(bytes.data(), "DASSCKPT", 8), 0);
  const CheckpointFile back = decode_checkpoint(bytes);
  EXPECT_EQ(back.header_json, f.header_json);
  ASSERT_EQ(back.tensors.size(), 2u);
  EXPECT_TRUE(back.tensor("a").bitwise_equal(f.tensors[0].second));
  EXPECT_TRUE(back.tensor("scalar").bitwise_equal(f.tensors[1].second));
  EXPECT_TRUE(back.has("a"));
  EXPECT_FALSE(back.has("b"));
  EXPECT_THROW(back.tensor("b"), FormatError);
  EXPECT_EQ(encode_checkpoint(back), bytes);
}

TEST(Checkpoint, EveryTruncationIsReported) {
  const auto bytes = encode_checkpoint(sample());
  for (size_t n = 0; n < bytes.size(); ++n) {
    const std::string msg = error_of(std::vector<uint8_t>(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(n)));
    ASSERT_FALSE(msg.empty()) << "prefix " << n;
    if (n >= 9) ASSERT_NE(msg.find("truncated"), std::string::npos) << msg;
  }
}

TEST(Checkpoint, BadMagicVersionAndTrailingBytes) {
  auto bytes = encode_checkpoint(sample());
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_NE(error_of(bad).find("magic"), std::string::npos);
  bad = bytes;
  bad[8] = 9;
  EXPECT_NE(error_of(bad).find("version"), std::string::npos);
  bad = bytes;
  bad.push_back(0);
  EXPECT_NE(error_of(bad).find("trailing"), std::string::npos);
}

TEST(Checkpoint, FileRoundTripAndMissingFile) {
  const auto path = std::filesystem::temp_directory_path() / "dass_ckpt_unit.bin";
  write_checkpoint_file(sample(), path);
  EXPECT_TRUE(read_checkpoint_file(path).tensor("a").bitwise_equal(sample().tensors[0].second));
  std::filesystem::resize_file(path, 30);
  EXPECT_THROW(read_checkpoint_file(path), FormatError);
  std::filesystem::remove(path);
  EXPECT_THROW(read_checkpoint_file(path), ConfigError);
}

TEST(Checkpoint, SearchStateRoundTripsExactly) {
  const SearchConfig cfg = tiny_config();
  const DataSplit data = load_data(cfg);
  SearchState s = make_state(cfg, Method::kDass, 3, 10);
  step1_pretrain(s, data, cfg.epochs_pretrain);
  s.phase = Phase::kPrune;
  const CheckpointFile f = state_to_checkpoint(s);
  SearchState back = state_from_checkpoint(decode_checkpoint(encode_checkpoint(f)), &cfg);
  EXPECT_EQ(back.phase, Phase::kPrune);
  EXPECT_EQ(back.rng.counter(), s.rng.counter());
  EXPECT_EQ(back.dense_genotype, s.dense_genotype);
  EXPECT_EQ(back.dense_params, s.dense_params);
  EXPECT_EQ(back.audit.checks, s.audit.checks);
  // re-encoding the restored state reproduces the same bytes
  EXPECT_EQ(encode_checkpoint(state_to_checkpoint(back)), encode_checkpoint(f));
}

TEST(Checkpoint, ConfigHashMismatchNamesBothHashes) {
  const SearchConfig cfg = tiny_config();
  SearchState s = make_state(cfg, Method::kDass, 3, 10);
  const CheckpointFile f = state_to_checkpoint(s);
  SearchConfig other = cfg;
  other.lr_theta = 0.5;
  try {
    state_from_checkpoint(f, &other);
    FAIL();
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find(hash_hex(config_hash(cfg))), std::string::npos) << msg;
    EXPECT_NE(msg.find(hash_hex(config_hash(other))), std::string::npos) << msg;
  }
  EXPECT_NO_THROW(state_from_checkpoint(f, nullptr));
}

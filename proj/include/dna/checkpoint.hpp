#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dna/net.hpp"
#include "dna/noise_scale.hpp"
#include "dna/normalizer.hpp"
#include "dna/optim.hpp"

// Binary checkpoint, little-endian f64 payload behind a versioned header.
// Layout (all integers little-endian u64/i64 unless noted):
//   magic   8 bytes  "DNACKPT\0"
//   version u32
//   then sections in fixed order, each vector as u64 length + raw doubles.
// The format is documented in docs/checkpoint_format.md.

namespace dna {

namespace detail {

inline void write_bytes(std::ofstream& out, const void* data, std::size_t n) {
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

inline void write_u64(std::ofstream& out, std::uint64_t v) { write_bytes(out, &v, 8); }
inline void write_i64(std::ofstream& out, std::int64_t v) { write_bytes(out, &v, 8); }
inline void write_f64(std::ofstream& out, double v) { write_bytes(out, &v, 8); }

inline void write_vec(std::ofstream& out, const std::vector<double>& v) {
  write_u64(out, v.size());
  if (!v.empty()) write_bytes(out, v.data(), v.size() * sizeof(double));
}

inline void read_bytes(std::ifstream& in, void* data, std::size_t n) {
  in.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
  if (!in) throw std::runtime_error("checkpoint: truncated file");
}

inline std::uint64_t read_u64(std::ifstream& in) {
  std::uint64_t v;
  read_bytes(in, &v, 8);
  return v;
}

inline std::int64_t read_i64(std::ifstream& in) {
  std::int64_t v;
  read_bytes(in, &v, 8);
  return v;
}

inline double read_f64(std::ifstream& in) {
  double v;
  read_bytes(in, &v, 8);
  return v;
}

inline std::vector<double> read_vec(std::ifstream& in) {
  const std::uint64_t n = read_u64(in);
  std::vector<double> v(n);
  if (n > 0) read_bytes(in, v.data(), n * sizeof(double));
  return v;
}

inline void write_rng(std::ofstream& out, const Rng& rng) {
  for (std::uint64_t word : rng.state()) write_u64(out, word);
}

inline Rng read_rng(std::ifstream& in) {
  std::array<std::uint64_t, 4> words;
  for (auto& w : words) w = read_u64(in);
  Rng rng(0);
  rng.set_state(words);
  return rng;
}

inline void write_block(std::ofstream& out, const ParameterBlock& block) {
  write_vec(out, block.params);
  write_vec(out, block.grads);
  write_vec(out, block.adam_m);
  write_vec(out, block.adam_v);
  write_i64(out, block.step_count);
}

inline ParameterBlock read_block(std::ifstream& in) {
  ParameterBlock block;
  block.params = read_vec(in);
  block.grads = read_vec(in);
  block.adam_m = read_vec(in);
  block.adam_v = read_vec(in);
  block.step_count = read_i64(in);
  return block;
}

inline void write_welford(std::ofstream& out, const Welford& w) {
  write_i64(out, w.count());
  write_vec(out, w.raw_mean());
  write_vec(out, w.raw_m2());
}

inline void read_welford(std::ifstream& in, Welford& w) {
  const std::int64_t count = read_i64(in);
  auto mean = read_vec(in);
  auto m2 = read_vec(in);
  w.restore(count, std::move(mean), std::move(m2));
}

inline void write_probe(std::ofstream& out, const NoiseScaleProbe& p) {
  write_u64(out, p.b_small);
  write_u64(out, p.b_big);
  write_f64(out, p.ema_decay);
  write_f64(out, p.ema_g2);
  write_f64(out, p.ema_s);
  write_u64(out, p.initialized ? 1 : 0);
}

inline NoiseScaleProbe read_probe(std::ifstream& in) {
  NoiseScaleProbe p;
  p.b_small = read_u64(in);
  p.b_big = read_u64(in);
  p.ema_decay = read_f64(in);
  p.ema_g2 = read_f64(in);
  p.ema_s = read_f64(in);
  p.initialized = read_u64(in) != 0;
  return p;
}

}  // namespace detail

constexpr std::uint32_t kCheckpointVersion = 1;
constexpr char kCheckpointMagic[8] = {'D', 'N', 'A', 'C', 'K', 'P', 'T', '\0'};

// Everything the trainer needs to continue producing valid training after a
// restart. Environment episode state is not captured; episodes restart on
// resume.
struct TrainerCheckpoint {
  std::int64_t iteration = 0;
  std::int64_t interactions = 0;
  ParameterBlock policy;
  ParameterBlock value;
  AdamState distil_adam;
  std::vector<double> pi_old;
  Welford obs_stats{1};
  Welford reward_stats{1};
  std::vector<double> reward_accumulators;
  NoiseScaleProbe probe_policy, probe_value, probe_distil;
  Rng rng_collect{0}, rng_shuffle{0}, rng_probe{0}, rng_env_root{0};
};

inline void save_checkpoint(const std::filesystem::path& path, const TrainerCheckpoint& ckpt) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path.string());
  detail::write_bytes(out, kCheckpointMagic, 8);
  std::uint32_t version = kCheckpointVersion;
  detail::write_bytes(out, &version, 4);
  detail::write_i64(out, ckpt.iteration);
  detail::write_i64(out, ckpt.interactions);
  detail::write_block(out, ckpt.policy);
  detail::write_block(out, ckpt.value);
  detail::write_vec(out, ckpt.distil_adam.m);
  detail::write_vec(out, ckpt.distil_adam.v);
  detail::write_i64(out, ckpt.distil_adam.step_count);
  detail::write_vec(out, ckpt.pi_old);
  detail::write_welford(out, ckpt.obs_stats);
  detail::write_welford(out, ckpt.reward_stats);
  detail::write_vec(out, ckpt.reward_accumulators);
  detail::write_probe(out, ckpt.probe_policy);
  detail::write_probe(out, ckpt.probe_value);
  detail::write_probe(out, ckpt.probe_distil);
  detail::write_rng(out, ckpt.rng_collect);
  detail::write_rng(out, ckpt.rng_shuffle);
  detail::write_rng(out, ckpt.rng_probe);
  detail::write_rng(out, ckpt.rng_env_root);
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

inline TrainerCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path.string());
  char magic[8];
  detail::read_bytes(in, magic, 8);
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path.string());
  std::uint32_t version;
  detail::read_bytes(in, &version, 4);
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  TrainerCheckpoint ckpt;
  ckpt.iteration = detail::read_i64(in);
  ckpt.interactions = detail::read_i64(in);
  ckpt.policy = detail::read_block(in);
  ckpt.value = detail::read_block(in);
  ckpt.distil_adam.m = detail::read_vec(in);
  ckpt.distil_adam.v = detail::read_vec(in);
  ckpt.distil_adam.step_count = detail::read_i64(in);
  ckpt.pi_old = detail::read_vec(in);
  detail::read_welford(in, ckpt.obs_stats);
  detail::read_welford(in, ckpt.reward_stats);
  ckpt.reward_accumulators = detail::read_vec(in);
  ckpt.probe_policy = detail::read_probe(in);
  ckpt.probe_value = detail::read_probe(in);
  ckpt.probe_distil = detail::read_probe(in);
  ckpt.rng_collect = detail::read_rng(in);
  ckpt.rng_shuffle = detail::read_rng(in);
  ckpt.rng_probe = detail::read_rng(in);
  ckpt.rng_env_root = detail::read_rng(in);
  return ckpt;
}

}  // namespace dna

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "anchorlab/sim/render.hpp"
#include "anchorlab/sim/world.hpp"

namespace anchorlab::data {

using StateVec = std::array<float, sim::kStateDim>;
using ActionVec = std::array<float, sim::kActionDim>;

// One demonstration or rollout. Values are raw (un-normalized).
struct Episode {
  sim::TaskFamily family = sim::TaskFamily::kSpoonOnTowel;
  std::uint32_t seed = 0;
  std::string instruction;
  bool success = false;
  std::vector<sim::Frame> frames;
  std::vector<StateVec> states;
  std::vector<ActionVec> actions;

  std::size_t size() const { return frames.size(); }
  bool operator==(const Episode&) const = default;
};

// Throws DataError when per-step arrays disagree or the horizon is exceeded.
void validate(const Episode& ep);

// AVE1: magic "AVE1", u32 version=1, u32 n_steps, u16 h, u16 w, u8 channels=3,
// u8 state_dim=4, u8 action_dim=4, u8 flags (bit0 = success), u32 seed,
// u8 task-family id, u16 instruction length + UTF-8 bytes; then per step:
// u8 pixels[h*w*3], f32 state[4] LE, f32 action[4] LE.
inline constexpr std::uint32_t kEpisodeVersion = 1;
inline constexpr std::size_t kEpisodeHeaderBytes = 27;

std::vector<std::uint8_t> encode_episode(const Episode& ep);
Episode decode_episode(std::span<const std::uint8_t> bytes);
void write_episode(const Episode& ep, const std::filesystem::path& path);
Episode read_episode(const std::filesystem::path& path);

// Expert demonstration for (family, seed), stopped at success or the horizon.
Episode record_expert_episode(sim::TaskFamily family, std::uint32_t seed, const sim::RenderConfig& render_cfg = {});

// Re-simulates an episode from its (family, seed) and actions. Throws
// UsageError when the replayed frames do not reproduce the stored ones, i.e.
// the episode carries no recoverable simulator ground truth.
std::vector<sim::WorldState> replay_states(const Episode& ep, const sim::RenderConfig& render_cfg = {});

}  // namespace anchorlab::data

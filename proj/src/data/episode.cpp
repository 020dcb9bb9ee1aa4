#include "anchorlab/data/episode.hpp"

#include <limits>

#include "anchorlab/common/binary_io.hpp"
#include "anchorlab/common/errors.hpp"
#include "anchorlab/sim/expert.hpp"

namespace anchorlab::data {

void validate(const Episode& ep) {
  if (ep.frames.size() != ep.states.size() || ep.frames.size() != ep.actions.size())
    throw DataError("episode arrays disagree: " + std::to_string(ep.frames.size()) + " frames, " +
                    std::to_string(ep.states.size()) + " states, " + std::to_string(ep.actions.size()) + " actions");
  if (ep.frames.size() > static_cast<std::size_t>(sim::kEpisodeHorizon))
    throw DataError("episode longer than the " + std::to_string(sim::kEpisodeHorizon) + "-step horizon");
  for (const auto& f : ep.frames) {
    if (f.height != ep.frames.front().height || f.width != ep.frames.front().width ||
        f.pixels.size() != static_cast<std::size_t>(f.height) * f.width * 3)
      throw DataError("episode frames have inconsistent sizes");
  }
}

std::vector<std::uint8_t> encode_episode(const Episode& ep) {
  validate(ep);
  if (ep.instruction.size() > std::numeric_limits<std::uint16_t>::max()) throw DataError("instruction too long");
  const int h = ep.frames.empty() ? 0 : ep.frames.front().height;
  const int w = ep.frames.empty() ? 0 : ep.frames.front().width;
  io::ByteWriter out;
  out.str("AVE1");
  out.u32(kEpisodeVersion);
  out.u32(static_cast<std::uint32_t>(ep.size()));
  out.u16(static_cast<std::uint16_t>(h));
  out.u16(static_cast<std::uint16_t>(w));
  out.u8(3);
  out.u8(sim::kStateDim);
  out.u8(sim::kActionDim);
  out.u8(ep.success ? 1 : 0);
  out.u32(ep.seed);
  out.u8(static_cast<std::uint8_t>(ep.family));
  out.u16(static_cast<std::uint16_t>(ep.instruction.size()));
  out.str(ep.instruction);
  for (std::size_t i = 0; i < ep.size(); ++i) {
    out.bytes(ep.frames[i].pixels);
    for (float v : ep.states[i]) out.f32(v);
    for (float v : ep.actions[i]) out.f32(v);
  }
  return out.buffer();
}

Episode decode_episode(std::span<const std::uint8_t> bytes) {
  io::ByteReader in(bytes);
  if (in.remaining() < 4 || in.str(4) != "AVE1") throw FormatError("bad episode magic", 0);
  std::size_t at = in.offset();
  if (in.u32() != kEpisodeVersion) throw FormatError("unsupported episode version", at);
  const std::uint32_t n = in.u32();
  if (n > static_cast<std::uint32_t>(sim::kEpisodeHorizon)) throw FormatError("step count exceeds horizon", 8);
  const std::uint16_t h = in.u16();
  const std::uint16_t w = in.u16();
  at = in.offset();
  if (in.u8() != 3) throw FormatError("unsupported channel count", at);
  at = in.offset();
  if (in.u8() != sim::kStateDim) throw FormatError("unsupported state dimension", at);
  at = in.offset();
  if (in.u8() != sim::kActionDim) throw FormatError("unsupported action dimension", at);
  at = in.offset();
  const std::uint8_t flags = in.u8();
  if ((flags & ~1u) != 0) throw FormatError("unknown flag bits", at);
  Episode ep;
  ep.success = (flags & 1u) != 0;
  ep.seed = in.u32();
  at = in.offset();
  const std::uint8_t fam = in.u8();
  if (fam >= sim::kAllFamilies.size()) throw FormatError("unknown task family id", at);
  ep.family = sim::kAllFamilies[fam];
  ep.instruction = in.str(in.u16());
  const std::size_t pix = static_cast<std::size_t>(h) * w * 3;
  for (std::uint32_t i = 0; i < n; ++i) {
    sim::Frame f;
    f.height = h;
    f.width = w;
    auto px = in.bytes(pix);
    f.pixels.assign(px.begin(), px.end());
    StateVec s{};
    ActionVec a{};
    for (auto& v : s) v = in.f32();
    for (auto& v : a) v = in.f32();
    ep.frames.push_back(std::move(f));
    ep.states.push_back(s);
    ep.actions.push_back(a);
  }
  if (in.remaining() != 0) throw FormatError("trailing bytes after last step", in.offset());
  return ep;
}

void write_episode(const Episode& ep, const std::filesystem::path& path) { io::write_file(path, encode_episode(ep)); }

Episode read_episode(const std::filesystem::path& path) { return decode_episode(io::read_file(path)); }

namespace {

ActionVec to_stored(const sim::Action& a) {
  return {static_cast<float>(a.dx), static_cast<float>(a.dy), static_cast<float>(a.dtheta), static_cast<float>(a.g)};
}

sim::Action from_stored(const ActionVec& a) { return sim::Action{a[0], a[1], a[2], a[3]}; }

}  // namespace

Episode record_expert_episode(sim::TaskFamily family, std::uint32_t seed, const sim::RenderConfig& render_cfg) {
  const sim::TaskSpec task = sim::make_task(family);
  sim::WorldState state = sim::reset(task, seed);
  Episode ep;
  ep.family = family;
  ep.seed = seed;
  ep.instruction = sim::instruction_text(task);
  for (int t = 0; t < sim::kEpisodeHorizon; ++t) {
    // Execute the f32 action as stored so a replay from the file is exact.
    const ActionVec a = to_stored(sim::expert_action(state, task));
    ep.frames.push_back(sim::render(state, render_cfg));
    ep.states.push_back(sim::proprio(state));
    ep.actions.push_back(a);
    state = sim::step(state, from_stored(a));
    if (sim::success(state, task)) {
      ep.success = true;
      break;
    }
  }
  return ep;
}

std::vector<sim::WorldState> replay_states(const Episode& ep, const sim::RenderConfig& render_cfg) {
  const sim::TaskSpec task = sim::make_task(ep.family);
  sim::WorldState state = sim::reset(task, ep.seed);
  std::vector<sim::WorldState> out;
  for (std::size_t i = 0; i < ep.size(); ++i) {
    if (sim::render(state, render_cfg) != ep.frames[i])
      throw UsageError("episode (" + sim::family_name(ep.family) + ", seed " + std::to_string(ep.seed) +
                       ") has no simulator ground truth: replay diverges at step " + std::to_string(i));
    out.push_back(state);
    state = sim::step(state, from_stored(ep.actions[i]));
  }
  return out;
}

}  // namespace anchorlab::data

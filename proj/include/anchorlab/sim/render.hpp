#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "anchorlab/sim/world.hpp"

namespace anchorlab::sim {

struct RenderConfig {
  int size = 48;
  int arm_width_px = 6;
  Rgb background = {214, 196, 160};
  Rgb arm = {60, 60, 66};
  Rgb jaw = {20, 20, 20};
  // Overrides for object/receptacle colors by kind name.
  std::map<std::string, Rgb> palette;

  bool operator==(const RenderConfig&) const = default;
};

// H x W x 3 RGB, row-major.
struct Frame {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t* at(int row, int col) { return pixels.data() + (static_cast<std::size_t>(row) * width + col) * 3; }
  const std::uint8_t* at(int row, int col) const {
    return pixels.data() + (static_cast<std::size_t>(row) * width + col) * 3;
  }
  bool operator==(const Frame&) const = default;
};

Rgb object_color(const RenderConfig& cfg, int kind);
Rgb receptacle_color(const RenderConfig& cfg, int kind);

// Draw order: background, receptacles, free objects, held object, then the
// arm stripe from the top edge down to the gripper and the jaws on top.
Frame render(const WorldState& state, const RenderConfig& cfg = {});

// Pixel footprint of one object, independent of anything drawn over it.
std::vector<std::pair<int, int>> object_footprint(const Object& obj, const RenderConfig& cfg = {});
// True when every footprint pixel of `obj` is covered by the arm stripe.
bool under_arm(const WorldState& state, const Object& obj, const RenderConfig& cfg = {});

std::int64_t count_color(const Frame& frame, const Rgb& color);

// Binary PPM (P6) dump for inspection.
void write_ppm(const Frame& frame, const std::filesystem::path& path);

}  // namespace anchorlab::sim

#include "anchorlab/sim/render.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "anchorlab/common/errors.hpp"

namespace anchorlab::sim {
namespace {

struct Stripe {
  int col_lo = 0;  // inclusive
  int col_hi = 0;  // exclusive
  int row_hi = 0;  // exclusive
};

Stripe arm_stripe(const WorldState& s, const RenderConfig& cfg) {
  const double cx = s.gripper.pose.x * cfg.size;
  const int lo = static_cast<int>(std::lround(cx - cfg.arm_width_px / 2.0));
  Stripe st;
  st.col_lo = std::clamp(lo, 0, cfg.size);
  st.col_hi = std::clamp(lo + cfg.arm_width_px, 0, cfg.size);
  st.row_hi = std::clamp(static_cast<int>(std::floor(s.gripper.pose.y * cfg.size)) + 1, 0, cfg.size);
  return st;
}

bool inside_shape(Shape2D shape, double u, double v, double hl, double hw) {
  switch (shape) {
    case Shape2D::kRect:
      return std::abs(u) <= hl && std::abs(v) <= hw;
    case Shape2D::kEllipse:
      return (u * u) / (hl * hl) + (v * v) / (hw * hw) <= 1.0;
    case Shape2D::kDisc:
      return u * u + v * v <= hl * hl;
    case Shape2D::kRing: {
      const double inner = hl * 0.6;
      const bool outer_in = std::abs(u) <= hl && std::abs(v) <= hw;
      const bool inner_in = std::abs(u) <= inner && std::abs(v) <= hw * 0.6;
      return outer_in && !inner_in;
    }
  }
  return false;
}

template <class F>
void raster(int size, double cx, double cy, double theta, double reach, F&& visit) {
  const int c0 = std::max(0, static_cast<int>(std::floor((cx - reach) * size)) - 1);
  const int c1 = std::min(size - 1, static_cast<int>(std::ceil((cx + reach) * size)) + 1);
  const int r0 = std::max(0, static_cast<int>(std::floor((cy - reach) * size)) - 1);
  const int r1 = std::min(size - 1, static_cast<int>(std::ceil((cy + reach) * size)) + 1);
  const double c = std::cos(theta), s = std::sin(theta);
  for (int row = r0; row <= r1; ++row) {
    for (int col = c0; col <= c1; ++col) {
      const double px = (col + 0.5) / size - cx;
      const double py = (row + 0.5) / size - cy;
      const double u = px * c + py * s;
      const double v = -px * s + py * c;
      visit(row, col, u, v);
    }
  }
}

void put(Frame& f, int row, int col, const Rgb& c) {
  if (row < 0 || col < 0 || row >= f.height || col >= f.width) return;
  std::copy(c.begin(), c.end(), f.at(row, col));
}

void draw_object(Frame& f, const Object& o, const RenderConfig& cfg) {
  const auto& info = object_catalog().at(static_cast<std::size_t>(o.kind));
  const Rgb color = object_color(cfg, o.kind);
  raster(cfg.size, o.pose.x, o.pose.y, o.pose.theta, std::hypot(o.half_length, o.half_width),
         [&](int row, int col, double u, double v) {
           if (inside_shape(info.shape, u, v, o.half_length, o.half_width)) put(f, row, col, color);
         });
}

}  // namespace

Rgb object_color(const RenderConfig& cfg, int kind) {
  const auto& info = object_catalog().at(static_cast<std::size_t>(kind));
  if (auto it = cfg.palette.find(info.name); it != cfg.palette.end()) return it->second;
  return info.color;
}

Rgb receptacle_color(const RenderConfig& cfg, int kind) {
  const auto& info = receptacle_catalog().at(static_cast<std::size_t>(kind));
  if (auto it = cfg.palette.find(info.name); it != cfg.palette.end()) return it->second;
  return info.color;
}

Frame render(const WorldState& state, const RenderConfig& cfg) {
  if (cfg.size <= 0 || cfg.arm_width_px < 0) throw ConfigError("invalid render config");
  Frame f;
  f.height = cfg.size;
  f.width = cfg.size;
  f.pixels.resize(static_cast<std::size_t>(cfg.size) * cfg.size * 3);
  for (int r = 0; r < f.height; ++r)
    for (int c = 0; c < f.width; ++c) put(f, r, c, cfg.background);

  for (const auto& rc : state.receptacles) {
    const auto& info = receptacle_catalog().at(static_cast<std::size_t>(rc.kind));
    const Rgb color = receptacle_color(cfg, rc.kind);
    raster(cfg.size, rc.x, rc.y, 0.0, std::hypot(info.half_length, info.half_width), [&](int row, int col, double u, double v) {
      if (inside_shape(info.shape, u, v, info.half_length, info.half_width)) put(f, row, col, color);
    });
  }
  const std::optional<int> held = state.gripper.held;
  for (const auto& o : state.objects)
    if (!held || o.id != *held) draw_object(f, o, cfg);
  if (held) draw_object(f, *state.object_by_id(*held), cfg);

  const Stripe st = arm_stripe(state, cfg);
  for (int r = 0; r < st.row_hi; ++r)
    for (int c = st.col_lo; c < st.col_hi; ++c) put(f, r, c, cfg.arm);

  const double gx = state.gripper.pose.x * cfg.size;
  const double gy = state.gripper.pose.y * cfg.size;
  const double spread = state.gripper.open ? 4.0 : 2.0;
  const double ct = std::cos(state.gripper.pose.theta), sn = std::sin(state.gripper.pose.theta);
  for (int side : {-1, 1}) {
    const int jc = static_cast<int>(std::floor(gx + side * spread * ct));
    const int jr = static_cast<int>(std::floor(gy + side * spread * sn));
    for (int dr = -1; dr <= 0; ++dr)
      for (int dc = -1; dc <= 0; ++dc) put(f, jr + dr, jc + dc, cfg.jaw);
  }
  return f;
}

std::vector<std::pair<int, int>> object_footprint(const Object& obj, const RenderConfig& cfg) {
  const auto& info = object_catalog().at(static_cast<std::size_t>(obj.kind));
  std::vector<std::pair<int, int>> px;
  raster(cfg.size, obj.pose.x, obj.pose.y, obj.pose.theta, std::hypot(obj.half_length, obj.half_width),
         [&](int row, int col, double u, double v) {
           if (inside_shape(info.shape, u, v, obj.half_length, obj.half_width)) px.emplace_back(row, col);
         });
  return px;
}

bool under_arm(const WorldState& state, const Object& obj, const RenderConfig& cfg) {
  const Stripe st = arm_stripe(state, cfg);
  for (auto [r, c] : object_footprint(obj, cfg))
    if (r >= st.row_hi || c < st.col_lo || c >= st.col_hi) return false;
  return true;
}

std::int64_t count_color(const Frame& frame, const Rgb& color) {
  std::int64_t n = 0;
  for (std::size_t i = 0; i + 2 < frame.pixels.size(); i += 3)
    if (frame.pixels[i] == color[0] && frame.pixels[i + 1] == color[1] && frame.pixels[i + 2] == color[2]) ++n;
  return n;
}

void write_ppm(const Frame& frame, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot open " + path.string());
  out << "P6\n" << frame.width << ' ' << frame.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(frame.pixels.data()), static_cast<std::streamsize>(frame.pixels.size()));
}

}  // namespace anchorlab::sim

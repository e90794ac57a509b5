// keto - keypoint-driven tool manipulation lab
//
// Deterministic SVG scatter rendering for clouds, keypoints and scenes.
// Byte-stable output: fixed-precision formatting, no timestamps.

#ifndef KETO_SVG_HPP
#define KETO_SVG_HPP

#include <cstdio>
#include <string>
#include <vector>

#include "keto/keypoints.hpp"
#include "keto/simulator_types.hpp"

namespace keto {

namespace detail {

inline std::string svg_num(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

}  // namespace detail

/// Top-down scatter of a cloud with optional keypoint glyphs (square =
/// grasp, circle = function, arrow from function toward effect) and the
/// desired-force arrow when environment keypoints are given. The viewbox
/// expands to contain every drawn element.
inline std::string render_svg(const PointCloud& cloud,
                              const ToolKeypoints* keypoints,
                              const EnvKeypoints* env,
                              const std::vector<TargetDisk>* targets = nullptr,
                              const std::vector<ObstacleBox>* obstacles = nullptr) {
  double lo_x = 1e9, hi_x = -1e9, lo_y = 1e9, hi_y = -1e9;
  auto grow = [&](Vec2 p) {
    lo_x = std::min(lo_x, p.x);
    hi_x = std::max(hi_x, p.x);
    lo_y = std::min(lo_y, p.y);
    hi_y = std::max(hi_y, p.y);
  };
  for (const auto& p : cloud.points) grow(p.xy());
  if (keypoints) {
    grow(keypoints->x_g);
    grow(keypoints->x_f);
    grow(keypoints->x_e);
  }
  if (env) {
    grow(env->target);
    grow(env->receiver);
  }
  if (targets) {
    for (const auto& t : *targets) {
      grow(t.center + Vec2{t.radius, t.radius});
      grow(t.center - Vec2{t.radius, t.radius});
    }
  }
  if (obstacles) {
    for (const auto& o : *obstacles) {
      double r = std::sqrt(o.half_x * o.half_x + o.half_y * o.half_y);
      grow(o.center + Vec2{r, r});
      grow(o.center - Vec2{r, r});
    }
  }
  if (lo_x > hi_x) {
    lo_x = lo_y = -0.1;
    hi_x = hi_y = 0.1;
  }
  double margin = 0.02 + 0.05 * std::max(hi_x - lo_x, hi_y - lo_y);
  lo_x -= margin;
  lo_y -= margin;
  hi_x += margin;
  hi_y += margin;

  // SVG y grows downward; flip so +y is up.
  const double scale = 1000.0;
  auto X = [&](double x) { return detail::svg_num((x - lo_x) * scale); };
  auto Y = [&](double y) { return detail::svg_num((hi_y - y) * scale); };

  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " +
       detail::svg_num((hi_x - lo_x) * scale) + " " +
       detail::svg_num((hi_y - lo_y) * scale) + "\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  if (obstacles) {
    for (const auto& o : *obstacles) {
      s += "<g transform=\"translate(" + X(o.center.x) + "," + Y(o.center.y) +
           ") rotate(" + detail::svg_num(-o.angle * 180.0 / kPi) + ")\">";
      s += "<rect x=\"" + detail::svg_num(-o.half_x * scale) + "\" y=\"" +
           detail::svg_num(-o.half_y * scale) + "\" width=\"" +
           detail::svg_num(2 * o.half_x * scale) + "\" height=\"" +
           detail::svg_num(2 * o.half_y * scale) +
           "\" fill=\"#888888\"/></g>\n";
    }
  }
  if (targets) {
    for (const auto& t : *targets) {
      s += "<circle cx=\"" + X(t.center.x) + "\" cy=\"" + Y(t.center.y) +
           "\" r=\"" + detail::svg_num(t.radius * scale) +
           "\" fill=\"#d4a017\" stroke=\"#7a5c00\"/>\n";
    }
  }
  for (const auto& p : cloud.points) {
    s += "<circle cx=\"" + X(p.x) + "\" cy=\"" + Y(p.y) +
         "\" r=\"1.2\" fill=\"#3366cc\" fill-opacity=\"0.6\"/>\n";
  }
  auto arrow = [&](Vec2 from, Vec2 to, const char* color) {
    s += "<line x1=\"" + X(from.x) + "\" y1=\"" + Y(from.y) + "\" x2=\"" +
         X(to.x) + "\" y2=\"" + Y(to.y) + "\" stroke=\"" + color +
         "\" stroke-width=\"2\"/>\n";
    Vec2 d = (to - from).normalized() * 0.008;
    Vec2 l = to - d + d.perp() * 0.5;
    Vec2 r = to - d - d.perp() * 0.5;
    s += "<polygon points=\"" + X(to.x) + "," + Y(to.y) + " " + X(l.x) + "," +
         Y(l.y) + " " + X(r.x) + "," + Y(r.y) + "\" fill=\"" + color +
         "\"/>\n";
  };
  if (env) {
    arrow(env->target, env->target + env->ehat_unit() * 0.05, "#222222");
  }
  if (keypoints) {
    s += "<rect x=\"" + detail::svg_num((keypoints->x_g.x - lo_x) * scale - 5) +
         "\" y=\"" + detail::svg_num((hi_y - keypoints->x_g.y) * scale - 5) +
         "\" width=\"10\" height=\"10\" fill=\"#2e8b57\"/>\n";
    s += "<circle cx=\"" + X(keypoints->x_f.x) + "\" cy=\"" +
         Y(keypoints->x_f.y) + "\" r=\"6\" fill=\"none\" stroke=\"#cc2222\" "
         "stroke-width=\"2.5\"/>\n";
    arrow(keypoints->x_f, keypoints->x_f + (keypoints->x_e - keypoints->x_f) * 0.05,
          "#cc2222");
  }
  s += "</svg>\n";
  return s;
}

}  // namespace keto

#endif  // KETO_SVG_HPP

#include <map>
#include <queue>

#include "lfg/shapemodel.hpp"

namespace lfg::shape {

namespace {

struct Vertex {
  int x, y;
  auto operator<=>(const Vertex&) const = default;
};

LesionMask largest_component(const LesionMask& mask) {
  LesionMask best(mask.dims(), 0);
  Grid<int> label(mask.dims(), 0);
  std::size_t best_size = 0;
  int next = 0;
  for (int r = 0; r < mask.height(); ++r) {
    for (int c = 0; c < mask.width(); ++c) {
      if (!mask(r, c) || label(r, c)) continue;
      ++next;
      std::vector<std::pair<int, int>> members;
      std::queue<std::pair<int, int>> q;
      q.emplace(r, c);
      label(r, c) = next;
      while (!q.empty()) {
        auto [y, x] = q.front();
        q.pop();
        members.emplace_back(y, x);
        const int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
        for (int k = 0; k < 4; ++k) {
          const int ny = y + dy[k], nx = x + dx[k];
          if (mask.contains(ny, nx) && mask(ny, nx) && !label(ny, nx)) {
            label(ny, nx) = next;
            q.emplace(ny, nx);
          }
        }
      }
      if (members.size() > best_size) {
        best_size = members.size();
        best = LesionMask(mask.dims(), 0);
        for (auto [y, x] : members) best(y, x) = 1;
      }
    }
  }
  return best;
}

}  // namespace

Polygon trace_outer_contour(const LesionMask& input) {
  const LesionMask mask = largest_component(input);
  auto fg = [&](int r, int c) { return mask.contains(r, c) && mask(r, c) != 0; };

  // Directed pixel-edge segments with the region on the left (positive
  // shoelace orientation in x = column, y = row coordinates).
  std::multimap<Vertex, Vertex> edges;
  for (int r = 0; r < mask.height(); ++r) {
    for (int c = 0; c < mask.width(); ++c) {
      if (!fg(r, c)) continue;
      if (!fg(r - 1, c)) edges.emplace(Vertex{c, r}, Vertex{c + 1, r});
      if (!fg(r, c + 1)) edges.emplace(Vertex{c + 1, r}, Vertex{c + 1, r + 1});
      if (!fg(r + 1, c)) edges.emplace(Vertex{c + 1, r + 1}, Vertex{c, r + 1});
      if (!fg(r, c - 1)) edges.emplace(Vertex{c, r + 1}, Vertex{c, r});
    }
  }

  Polygon best;
  double best_area = 0;
  while (!edges.empty()) {
    auto it = edges.begin();
    const Vertex start = it->first;
    Vertex prev = it->first;
    Vertex cur = it->second;
    edges.erase(it);
    std::vector<Vertex> loop{start};
    while (!(cur == start)) {
      loop.push_back(cur);
      auto [lo, hi] = edges.equal_range(cur);
      if (lo == hi) break;
      auto chosen = lo;
      if (std::next(lo) != hi) {
        // pinch vertex: take the left turn so loops stay simple
        const int ix = cur.x - prev.x, iy = cur.y - prev.y;
        for (auto e = lo; e != hi; ++e) {
          const int ox = e->second.x - cur.x, oy = e->second.y - cur.y;
          if (ix * oy - iy * ox > 0) chosen = e;
        }
      }
      prev = cur;
      cur = chosen->second;
      edges.erase(chosen);
    }

    // drop collinear vertices
    Polygon poly;
    const std::size_t n = loop.size();
    for (std::size_t i = 0; i < n; ++i) {
      const Vertex& a = loop[(i + n - 1) % n];
      const Vertex& b = loop[i];
      const Vertex& c = loop[(i + 1) % n];
      const int cross = (b.x - a.x) * (c.y - b.y) - (b.y - a.y) * (c.x - b.x);
      if (cross != 0) poly.push_back({static_cast<double>(b.x), static_cast<double>(b.y)});
    }
    const double area = signed_area(poly);
    if (area > best_area) {
      best_area = area;
      best = std::move(poly);
    }
  }
  return best;
}

}  // namespace lfg::shape

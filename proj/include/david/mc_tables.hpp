#pragma once

#include <array>
#include <cstdint>

namespace david {
namespace mc {

// Cube corners: bit i of a case index is set when corner i lies inside
// (density >= iso). Corners 0-3 run counterclockwise on the z=0 face,
// 4-7 above them on z=1.
inline constexpr int kCorner[8][3] = {
    {0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
    {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1},
};

inline constexpr int kEdge[12][2] = {
    {0, 1}, {1, 2}, {2, 3}, {3, 0},
    {4, 5}, {5, 6}, {6, 7}, {7, 4},
    {0, 4}, {1, 5}, {2, 6}, {3, 7},
};

// Faces as cyclic corner loops; edge i of a face joins corner i to i+1.
inline constexpr int kFaceCorner[6][4] = {
    {0, 1, 2, 3}, {4, 5, 6, 7}, {0, 1, 5, 4},
    {1, 2, 6, 5}, {2, 3, 7, 6}, {3, 0, 4, 7},
};
inline constexpr int kFaceEdge[6][4] = {
    {0, 1, 2, 3}, {4, 5, 6, 7}, {0, 9, 4, 8},
    {1, 10, 5, 9}, {2, 11, 6, 10}, {3, 8, 7, 11},
};

struct TriTable {
  // Per case: flat triples of edge indices, -1 terminated.
  std::array<std::array<int8_t, 31>, 256> tri{};
  std::array<uint16_t, 256> cut_edges{};  // bitmask of intersected edges
};

// The classic 256-case table, built once at startup by walking the isosurface
// polygon loops across cube faces. On an ambiguous face (4 cut edges) the two
// crossings adjacent to the same inside corner are paired, which depends only
// on the absolute corner classification and is therefore identical for the
// neighbouring cell sharing that face: meshes stay watertight across cells.
inline const TriTable& tri_table() {
  static const TriTable table = [] {
    TriTable t;
    for (int c = 0; c < 256; ++c) {
      auto inside = [&](int corner) { return (c >> corner) & 1; };

      uint16_t cut = 0;
      for (int e = 0; e < 12; ++e)
        if (inside(kEdge[e][0]) != inside(kEdge[e][1])) cut |= uint16_t(1) << e;
      t.cut_edges[c] = cut;

      // link[e] collects the (at most 2) edges paired with e across faces
      int link[12][2];
      int link_count[12] = {};
      auto add_link = [&](int a, int b) {
        link[a][link_count[a]++] = b;
        link[b][link_count[b]++] = a;
      };
      for (int f = 0; f < 6; ++f) {
        int ce[4], n = 0;
        for (int i = 0; i < 4; ++i)
          if (cut & (1 << kFaceEdge[f][i])) ce[n++] = i;
        if (n == 2) {
          add_link(kFaceEdge[f][ce[0]], kFaceEdge[f][ce[1]]);
        } else if (n == 4) {
          // alternating corners; pair around each inside corner
          for (int i = 0; i < 4; ++i) {
            if (inside(kFaceCorner[f][i])) {
              int before = kFaceEdge[f][(i + 3) % 4];
              int after = kFaceEdge[f][i];
              add_link(before, after);
            }
          }
        }
      }

      // walk closed loops and fan-triangulate
      int out_n = 0;
      bool used[12] = {};
      for (int start = 0; start < 12; ++start) {
        if (!(cut & (1 << start)) || used[start]) continue;
        int loop[12], len = 0;
        int cur = start, prev = -1;
        do {
          loop[len++] = cur;
          used[cur] = true;
          int nxt = (link[cur][0] == prev) ? link[cur][1] : link[cur][0];
          prev = cur;
          cur = nxt;
        } while (cur != start);
        for (int i = 1; i + 1 < len; ++i) {
          t.tri[c][out_n++] = int8_t(loop[0]);
          t.tri[c][out_n++] = int8_t(loop[i]);
          t.tri[c][out_n++] = int8_t(loop[i + 1]);
        }
      }
      t.tri[c][out_n] = -1;
    }
    return t;
  }();
  return table;
}

}  // namespace mc
}  // namespace david

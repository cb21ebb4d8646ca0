#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "cam3d/geometry.hpp"
#include "cam3d/queries.hpp"
#include "cam3d/types.hpp"

namespace cam3d {

// ---------------------------------------------------------------------------
// Temporal memory: a ring of up to `length` frame groups, each keeping the
// top `per_frame` queries of one frame by score. Stored embeddings are never
// recomputed; propagation touches only the state.
// ---------------------------------------------------------------------------

struct MemoryEntry {
  RefState state;
  VecX embedding;
  double timestamp = 0.0;
  int frame_index = 0;
};

struct FrameGroup {
  int frame_index = 0;
  double timestamp = 0.0;
  std::vector<MemoryEntry> entries;
};

struct MemoryQueue {
  int length = 4;      // max stored frames
  int per_frame = 64;  // max entries per frame
  std::vector<FrameGroup> groups;  // oldest first
  int pushes = 0;

  int total_entries() const {
    int n = 0;
    for (const auto& g : groups) n += static_cast<int>(g.entries.size());
    return n;
  }
};

inline MemoryQueue make_queue(int length, int per_frame) {
  if (length < 0 || per_frame < 0)
    throw std::invalid_argument("make_queue: capacities must be non-negative");
  MemoryQueue q;
  q.length = length;
  q.per_frame = per_frame;
  return q;
}

// Push one frame's queries: keep the top `per_frame` by score (stable under
// ties, so equal scores preserve input order), append as the newest group and
// evict the oldest group past capacity. `frame_index` defaults to the number
// of pushes so far.
inline MemoryQueue queue_push(const MemoryQueue& queue, const QuerySet& frame, double timestamp,
                              int frame_index = -1) {
  if (!std::isfinite(timestamp))
    throw std::invalid_argument("queue_push: timestamp must be finite");
  MemoryQueue out = queue;
  FrameGroup group;
  group.frame_index = frame_index >= 0 ? frame_index : queue.pushes;
  group.timestamp = timestamp;

  std::vector<int> order(frame.items.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return frame.items[a].score > frame.items[b].score;
  });
  const int keep = std::min<int>(queue.per_frame, static_cast<int>(order.size()));
  group.entries.reserve(keep);
  for (int i = 0; i < keep; ++i) {
    const Query& q = frame.items[order[i]];
    MemoryEntry e;
    e.state = q.state;
    e.embedding = q.embedding;
    e.timestamp = timestamp;
    e.frame_index = group.frame_index;
    group.entries.push_back(std::move(e));
  }

  out.groups.push_back(std::move(group));
  while (static_cast<int>(out.groups.size()) > out.length)
    out.groups.erase(out.groups.begin());
  out.pushes = queue.pushes + 1;
  return out;
}

// Carry a stored state forward by dt seconds and into the current ego frame:
// the center moves with its own planar velocity, then through the ego motion;
// yaw picks up the motion's heading change; extents and velocity components
// are copied untouched.
inline RefState propagate_state(const RefState& s, const EgoMotion& motion, double dt) {
  if (!(dt >= 0.0))
    throw std::invalid_argument("propagate_state: dt must be non-negative");
  const Vec3 moved = s.center() + dt * Vec3(s.vx, s.vy, 0.0);
  const Vec3 c = apply_ego(motion, moved);
  RefState out;
  out.x = c.x();
  out.y = c.y();
  out.z = c.z();
  out.w = s.w;
  out.l = s.l;
  out.h = s.h;
  out.theta = wrap_angle(s.theta + yaw_of(motion.rotation));
  out.vx = s.vx;
  out.vy = s.vy;
  return out;
}

// Build temporal queries for the current frame at time `now`. `ego_chain`
// holds one motion per stored group: chain[i] maps group i's frame into the
// frame of group i+1 (the last one maps into the current frame). Each entry
// is propagated through the composed remainder of the chain in one step, and
// its embedding is refreshed positionally on top of the stored embedding.
inline QuerySet make_temporal_queries(const MemoryQueue& queue,
                                      const std::vector<EgoMotion>& ego_chain, double now) {
  const int m = static_cast<int>(queue.groups.size());
  if (static_cast<int>(ego_chain.size()) != m)
    throw std::out_of_range("make_temporal_queries: ego chain covers " +
                            std::to_string(ego_chain.size()) + " segments, queue holds " +
                            std::to_string(m));
  std::vector<EgoMotion> to_now(m);
  for (int i = m - 1; i >= 0; --i)
    to_now[i] = (i == m - 1) ? ego_chain[i] : compose_ego(to_now[i + 1], ego_chain[i]);

  int width = 0;
  for (const auto& g : queue.groups)
    if (!g.entries.empty()) { width = static_cast<int>(g.entries.front().embedding.size()); break; }

  QuerySet out(width);
  for (int i = 0; i < m; ++i) {
    for (const auto& e : queue.groups[i].entries) {
      Query q;
      q.state = propagate_state(e.state, to_now[i], now - e.timestamp);
      q.embedding = sin_pos_embed(q.state, width) + e.embedding;
      q.kind = QueryKind::temporal;
      q.score = 1.0;
      out.push(std::move(q));
    }
  }
  return out;
}

}  // namespace cam3d

"""Shared scene-building helpers for the test suite."""

from trajgraph.scene import AgentState, AgentTrack, Lane, Scene, build_segments


def straight_track(agent_id, x0=0.0, y0=0.0, vx=1.0, vy=0.0, t_obs=3, t_f=2,
                   dt=0.1, is_ego=False, heading=0.0):
    past = [(t, AgentState(x0 + vx * dt * t, y0 + vy * dt * t, vx, vy, heading))
            for t in range(t_obs)]
    lx, ly = past[-1][1].x, past[-1][1].y
    future = [(lx + vx * dt * k, ly + vy * dt * k) for k in range(1, t_f + 1)]
    return AgentTrack(agent_id, past, future, is_ego)


def make_scene(tracks, lanes=(), scene_id="s0", t_obs=3, t_f=2, dt=0.1,
               origin_rule="geometric-center", segment_len=3.0):
    scene = Scene(scene_id, t_obs, t_f, dt, origin_rule,
                  tracks=list(tracks), lanes=list(lanes))
    scene.segments = build_segments(scene, segment_len)
    return scene


def straight_lane(lane_id, length, y=0.0, x0=0.0, left=None, right=None, step=5.0):
    n = max(2, int(round(length / step)) + 1)
    pts = [(x0 + length * i / (n - 1), y) for i in range(n)]
    return Lane(lane_id, pts, left, right)

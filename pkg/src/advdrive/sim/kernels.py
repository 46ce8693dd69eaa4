"""Hot inner loops of the traffic simulator.

Every function here takes plain floats/ints and numpy arrays so it can be
compiled by numba (see :mod:`advdrive._jit`). The world is stored as a
struct of arrays indexed by vehicle slot; ``lanes`` always holds the lane
index derived from the lateral position, never the target lane.
"""
import math

import numpy as np

from advdrive._jit import njit

ROLE_EGO = 0
ROLE_ADVERSARY = 1
ROLE_RULE = 2

# layout of the driver-parameter vector ``idm``
I_T = 0
I_D0 = 1
I_A = 2
I_B = 3
I_DELTA = 4
I_POLITE = 5
I_ATH = 6
I_BSAFE = 7
N_IDM = 8

# layout of the control vector ``ctrl``
C_KV = 0
C_KY = 1
C_KH = 2
C_STEER_MAX = 3
C_HEADING_MAX = 4
C_A_MAX = 5
C_B_MAX = 6
N_CTRL = 7

NO_VEHICLE = -1


@njit
def clip(x, lo, hi):
    if x < lo:
        return lo
    if x > hi:
        return hi
    return x


@njit
def lane_index(y, lane_width, lane_count):
    k = int(math.floor(y / lane_width + 0.5))
    if k < 0:
        return 0
    if k >= lane_count:
        return lane_count - 1
    return k


@njit
def bicycle_step(s, y, heading, speed, accel, steer, wheelbase, dt):
    beta = math.atan(0.5 * math.tan(steer))
    turn = (speed / wheelbase) * math.sin(beta) * dt
    # positions use the mid-step heading; plain Euler drifts ~v*w*dt^2/2 off the arc
    course = heading + beta + 0.5 * turn
    s_new = s + speed * math.cos(course) * dt
    y_new = y + speed * math.sin(course) * dt
    heading_new = heading + turn
    speed_new = speed + accel * dt
    if speed_new < 0.0:
        speed_new = 0.0
    return s_new, y_new, heading_new, speed_new


@njit
def speed_control(speed, target_speed, ctrl):
    return clip(ctrl[C_KV] * (target_speed - speed), -ctrl[C_B_MAX], ctrl[C_A_MAX])


@njit
def lateral_control(y, heading, target_lane, lane_width, ctrl):
    heading_cmd = clip(ctrl[C_KY] * (target_lane * lane_width - y), -ctrl[C_HEADING_MAX], ctrl[C_HEADING_MAX])
    return clip(ctrl[C_KH] * (heading_cmd - heading), -ctrl[C_STEER_MAX], ctrl[C_STEER_MAX])


@njit
def desired_gap(v, dv, T, d0, a, b):
    gap = d0 + T * v + v * dv / (2.0 * math.sqrt(a * b))
    if gap < d0:
        return d0
    return gap


@njit
def idm_accel(v, v0, has_leader, gap, dv, idm, a_max, b_max):
    """IDM acceleration, clamped to the actuator range.

    A leader at ``gap <= 0`` is a collision already in progress; the kernel
    returns full braking instead of evaluating the singular gap term.
    """
    a = idm[I_A]
    acc = a * (1.0 - (v / v0) ** idm[I_DELTA])
    if has_leader:
        if gap <= 0.0:
            return -b_max
        ds = desired_gap(v, dv, idm[I_T], idm[I_D0], a, idm[I_B])
        acc -= a * (ds / gap) ** 2
    return clip(acc, -b_max, a_max)


@njit
def leader_of(s, lanes, exclude, s_ref, lane):
    best = NO_VEHICLE
    best_s = np.inf
    for j in range(s.shape[0]):
        if j == exclude or lanes[j] != lane:
            continue
        if s[j] > s_ref and s[j] < best_s:
            best = j
            best_s = s[j]
    return best


@njit
def follower_of(s, lanes, exclude, s_ref, lane):
    best = NO_VEHICLE
    best_s = -np.inf
    for j in range(s.shape[0]):
        if j == exclude or lanes[j] != lane:
            continue
        if s[j] < s_ref and s[j] > best_s:
            best = j
            best_s = s[j]
    return best


@njit
def raw_gap(s_front, len_front, s_back, len_back):
    return s_front - s_back - 0.5 * (len_front + len_back)


@njit
def accel_behind(back, front, s, speed, length, v0, idm, a_max, b_max):
    """IDM acceleration of vehicle ``back`` if ``front`` were its leader (``-1``: free road)."""
    if front == NO_VEHICLE:
        return idm_accel(speed[back], v0[back], False, 0.0, 0.0, idm, a_max, b_max)
    gap = raw_gap(s[front], length[front], s[back], length[back])
    return idm_accel(speed[back], v0[back], True, gap, speed[back] - speed[front], idm, a_max, b_max)


@njit
def mobil_criterion(a_c, a_c_new, a_n, a_n_new, a_o, a_o_new, politeness, threshold, b_safe):
    incentive = (a_c_new - a_c) + politeness * ((a_n_new - a_n) + (a_o_new - a_o))
    safe = a_n_new >= -b_safe
    return safe, incentive, safe and incentive >= threshold


@njit
def mobil_evaluate(c, lane, s, speed, length, v0, lanes, idm, a_max, b_max):
    """MOBIL safety and incentive for moving vehicle ``c`` into ``lane``.

    Returns ``(safe, incentive, accepted)``.
    """
    own_lane = lanes[c]
    old_leader = leader_of(s, lanes, c, s[c], own_lane)
    old_follower = follower_of(s, lanes, c, s[c], own_lane)
    new_leader = leader_of(s, lanes, c, s[c], lane)
    new_follower = follower_of(s, lanes, c, s[c], lane)

    a_c = accel_behind(c, old_leader, s, speed, length, v0, idm, a_max, b_max)
    a_c_new = accel_behind(c, new_leader, s, speed, length, v0, idm, a_max, b_max)
    a_n = 0.0
    a_n_new = 0.0
    if new_follower != NO_VEHICLE:
        a_n = accel_behind(new_follower, new_leader, s, speed, length, v0, idm, a_max, b_max)
        a_n_new = accel_behind(new_follower, c, s, speed, length, v0, idm, a_max, b_max)
    a_o = 0.0
    a_o_new = 0.0
    if old_follower != NO_VEHICLE:
        a_o = accel_behind(old_follower, c, s, speed, length, v0, idm, a_max, b_max)
        a_o_new = accel_behind(old_follower, old_leader, s, speed, length, v0, idm, a_max, b_max)

    safe, incentive, accepted = mobil_criterion(
        a_c, a_c_new, a_n, a_n_new, a_o, a_o_new, idm[I_POLITE], idm[I_ATH], idm[I_BSAFE]
    )
    # overlapping with the target-lane neighbours is a cut-in into a collision
    if new_leader != NO_VEHICLE and raw_gap(s[new_leader], length[new_leader], s[c], length[c]) <= 0.0:
        safe = False
    if new_follower != NO_VEHICLE and raw_gap(s[c], length[c], s[new_follower], length[new_follower]) <= 0.0:
        safe = False
    return safe, incentive, safe and accepted


@njit
def lane_change_choice(c, s, speed, length, v0, lanes, lane_count, idm, a_max, b_max):
    """Best accepted adjacent lane for ``c``: ``(direction, incentive, safe)``.

    direction is -1 (left), +1 (right) or 0 (keep); the higher incentive wins,
    ties go left. For ``keep`` the reported incentive/safety is that of the
    best evaluated side (``-inf``/False when no side exists).
    """
    best_dir = 0
    best_inc = -np.inf
    best_safe = False
    seen_inc = -np.inf
    seen_safe = False
    for d in (-1, 1):
        lane = lanes[c] + d
        if lane < 0 or lane >= lane_count:
            continue
        safe, inc, ok = mobil_evaluate(c, lane, s, speed, length, v0, lanes, idm, a_max, b_max)
        if inc > seen_inc:
            seen_inc = inc
            seen_safe = safe
        if ok and inc > best_inc:
            best_dir = d
            best_inc = inc
            best_safe = safe
    if best_dir == 0:
        return 0, seen_inc, seen_safe
    return best_dir, best_inc, best_safe


@njit
def update_lanes(y, lanes, lane_width, lane_count):
    for i in range(y.shape[0]):
        lanes[i] = lane_index(y[i], lane_width, lane_count)


@njit
def effective_v0(v0, target_speed, rule_driven, out):
    for i in range(v0.shape[0]):
        out[i] = v0[i] if rule_driven[i] else target_speed[i]


@njit
def mobil_pass(s, y, speed, length, target_lane, target_speed, v0, rule_driven, crashed, cooldown,
               lane_width, lane_count, cooldown_steps, idm, ctrl):
    """One decision tick of lane-change decisions for every rule-driven vehicle.

    Decisions are computed against the pre-tick world and committed together.
    """
    n = s.shape[0]
    lanes = np.empty(n, dtype=np.int64)
    update_lanes(y, lanes, lane_width, lane_count)
    v0_eff = np.empty(n)
    effective_v0(v0, target_speed, rule_driven, v0_eff)
    decision = np.zeros(n, dtype=np.int64)
    for c in range(n):
        if not rule_driven[c] or crashed[c]:
            continue
        if cooldown[c] > 0:
            cooldown[c] -= 1
            continue
        if target_lane[c] != lanes[c]:
            continue
        d, _, _ = lane_change_choice(c, s, speed, length, v0_eff, lanes, lane_count, idm, ctrl[C_A_MAX], ctrl[C_B_MAX])
        decision[c] = d
    for c in range(n):
        if decision[c] != 0:
            target_lane[c] += decision[c]
            cooldown[c] = cooldown_steps
    return decision


@njit
def rects_overlap(x1, y1, h1, l1, w1, x2, y2, h2, l2, w2):
    """Separating-axis test for two oriented rectangles; touching edges do not count."""
    dx = x2 - x1
    dy = y2 - y1
    reach = 0.5 * (math.hypot(l1, w1) + math.hypot(l2, w2))
    if dx * dx + dy * dy >= reach * reach:
        return False
    c1 = math.cos(h1)
    s1 = math.sin(h1)
    c2 = math.cos(h2)
    s2 = math.sin(h2)
    axes = ((c1, s1), (-s1, c1), (c2, s2), (-s2, c2))
    for k in range(4):
        ax, ay = axes[k]
        r1 = 0.5 * l1 * abs(ax * c1 + ay * s1) + 0.5 * w1 * abs(-ax * s1 + ay * c1)
        r2 = 0.5 * l2 * abs(ax * c2 + ay * s2) + 0.5 * w2 * abs(-ax * s2 + ay * c2)
        if abs(dx * ax + dy * ay) >= r1 + r2:
            return False
    return True


@njit
def collision_pairs(s, y, heading, length, width):
    n = s.shape[0]
    out = np.empty((max(n * (n - 1) // 2, 1), 2), dtype=np.int64)
    m = 0
    for i in range(n):
        for j in range(i + 1, n):
            if rects_overlap(s[i], y[i], heading[i], length[i], width[i],
                             s[j], y[j], heading[j], length[j], width[j]):
                out[m, 0] = i
                out[m, 1] = j
                m += 1
    return out[:m]


@njit
def physics_substep(s, y, heading, speed, length, width, target_lane, target_speed, v0, rule_driven,
                    crashed, hit, lane_width, lane_count, dt, idm, ctrl):
    """Advance all vehicles by ``dt``: control, integrate, then mark collisions.

    Controls for every vehicle are computed from the same pre-step state.
    ``hit`` accumulates every vehicle involved in a collision this call.
    """
    n = s.shape[0]
    a_max = ctrl[C_A_MAX]
    b_max = ctrl[C_B_MAX]
    lanes = np.empty(n, dtype=np.int64)
    update_lanes(y, lanes, lane_width, lane_count)
    accel = np.zeros(n)
    steer = np.zeros(n)
    for i in range(n):
        if crashed[i]:
            continue
        steer[i] = lateral_control(y[i], heading[i], target_lane[i], lane_width, ctrl)
        if rule_driven[i]:
            lead = leader_of(s, lanes, i, s[i], lanes[i])
            acc = accel_behind(i, lead, s, speed, length, v0, idm, a_max, b_max)
            if target_lane[i] != lanes[i]:
                lead = leader_of(s, lanes, i, s[i], target_lane[i])
                acc = min(acc, accel_behind(i, lead, s, speed, length, v0, idm, a_max, b_max))
            accel[i] = acc
        else:
            accel[i] = speed_control(speed[i], target_speed[i], ctrl)
    for i in range(n):
        if crashed[i]:
            speed[i] = 0.0
            continue
        s[i], y[i], heading[i], speed[i] = bicycle_step(
            s[i], y[i], heading[i], speed[i], accel[i], steer[i], length[i], dt
        )
    for i in range(n):
        for j in range(i + 1, n):
            if rects_overlap(s[i], y[i], heading[i], length[i], width[i],
                             s[j], y[j], heading[j], length[j], width[j]):
                crashed[i] = True
                crashed[j] = True
                hit[i] = True
                hit[j] = True
                speed[i] = 0.0
                speed[j] = 0.0


@njit
def advance(s, y, heading, speed, length, width, target_lane, target_speed, v0, rule_driven, crashed,
            cooldown, hit, lane_width, lane_count, dt, n_substeps, cooldown_steps, idm, ctrl):
    """One decision step: a lane-change tick followed by ``n_substeps`` physics substeps."""
    mobil_pass(s, y, speed, length, target_lane, target_speed, v0, rule_driven, crashed, cooldown,
               lane_width, lane_count, cooldown_steps, idm, ctrl)
    for _ in range(n_substeps):
        physics_substep(s, y, heading, speed, length, width, target_lane, target_speed, v0, rule_driven,
                        crashed, hit, lane_width, lane_count, dt, idm, ctrl)


@njit
def observe_into(i, s, y, heading, speed, x_range, y_range, v_range, out):
    """Fill ``out`` (rows x 5) with the kinematic observation of vehicle ``i``.

    Row 0 is the vehicle itself; the rest are the nearest others by absolute
    longitudinal distance (ties by slot order). Columns: presence, x, y, vx, vy.
    """
    rows = out.shape[0]
    n = s.shape[0]
    for r in range(rows):
        for f in range(5):
            out[r, f] = 0.0
    vx_i = speed[i] * math.cos(heading[i])
    vy_i = speed[i] * math.sin(heading[i])
    out[0, 0] = 1.0
    out[0, 3] = clip(vx_i / v_range, -1.0, 1.0)
    out[0, 4] = clip(vy_i / v_range, -1.0, 1.0)
    taken = np.zeros(n, dtype=np.bool_)
    taken[i] = True
    for r in range(1, rows):
        best = NO_VEHICLE
        best_d = np.inf
        for j in range(n):
            if taken[j]:
                continue
            d = abs(s[j] - s[i])
            if d < best_d:
                best = j
                best_d = d
        if best == NO_VEHICLE:
            break
        taken[best] = True
        out[r, 0] = 1.0
        out[r, 1] = clip((s[best] - s[i]) / x_range, -1.0, 1.0)
        out[r, 2] = clip((y[best] - y[i]) / y_range, -1.0, 1.0)
        out[r, 3] = clip((speed[best] * math.cos(heading[best]) - vx_i) / v_range, -1.0, 1.0)
        out[r, 4] = clip((speed[best] * math.sin(heading[best]) - vy_i) / v_range, -1.0, 1.0)

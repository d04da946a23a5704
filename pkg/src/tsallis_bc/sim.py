"""Vehicle dynamics, scripted expert, demonstration noise, and rollouts.

The vehicle is a discrete unicycle: x += v cos(h) dt, y += v sin(h) dt,
h += w dt, with the two joystick axes mapping linearly to (v, w) under
actuator caps. The expert is a pursuit controller on the centerline path
that brakes to a standstill just before the stop line and holds for a fixed
simulated duration; trajectories end after the hold (or, for non-stop noise,
shortly after crossing the line).

Everything derives from explicit seeds: trajectory i of a dataset uses child
streams of (master seed, i), so generation is reproducible and trajectories
are independent of each other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .world import Course, render

DIRECTIONS = ("counterclockwise", "clockwise")
NOISE_MODES = ("zigzag", "non_stop", "both")
TAG_FOR_MODE = {None: "clean", "zigzag": "zigzag", "non_stop": "non_stop", "both": "zigzag_non_stop"}


def clamp(v: float, lo: float = -1.0, hi: float = 1.0) -> float:
    return min(max(float(v), lo), hi)


def wrap_angle(a: float) -> float:
    return math.atan2(math.sin(a), math.cos(a))


@dataclass(frozen=True)
class Action:
    """Joystick command; both axes live in [-1, 1]."""

    forward: float
    turn: float

    def clamped(self) -> "Action":
        return Action(clamp(self.forward), clamp(self.turn))


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    heading: float
    speed: float = 0.0
    turn_rate: float = 0.0


@dataclass(frozen=True)
class VehicleLimits:
    v_max: float = 1.2      # course units / s
    omega_max: float = 1.6  # rad / s


def step_vehicle(state: VehicleState, action: Action, limits: VehicleLimits,
                 dt: float) -> VehicleState:
    """Exact discrete unicycle step under the linear joystick map."""
    a = action.clamped()
    v = a.forward * limits.v_max
    omega = a.turn * limits.omega_max
    return VehicleState(
        x=state.x + v * math.cos(state.heading) * dt,
        y=state.y + v * math.sin(state.heading) * dt,
        heading=wrap_angle(state.heading + omega * dt),
        speed=v,
        turn_rate=omega,
    )


@dataclass(frozen=True)
class ExpertParams:
    cruise: float = 1.0
    lookahead: float = 0.7
    k_heading: float = 2.2
    turn_slowdown: float = 0.6
    brake_distance: float = 2.0
    approach_floor: float = 0.06  # command floor while braking, so the line is reached
    stop_margin: float = 0.12     # standstill point short of the line
    stop_tolerance: float = 0.05
    stop_hold_s: float = 3.0


@dataclass
class StopProtocolState:
    holding: bool = False
    held_steps: int = 0


def expert_action(course: Course, direction: str, vehicle: VehicleState,
                  stop_state: StopProtocolState,
                  params: ExpertParams = ExpertParams()) -> Action:
    """Pursuit controller on the centerline with the stop protocol.

    Positive turn steers counterclockwise. Once the stop point is reached
    the command locks to (0, 0); the caller advances stop_state.held_steps
    while holding and ends the trajectory after the configured duration.
    """
    path = course.path(direction)
    s = path.project((vehicle.x, vehicle.y))
    s_stop = course.stop_line_s(direction) - params.stop_margin
    remaining = s_stop - s
    if stop_state.holding or remaining <= params.stop_tolerance:
        stop_state.holding = True
        return Action(0.0, 0.0)
    target = path.point_at(min(s + params.lookahead, path.length))
    bearing = math.atan2(target[1] - vehicle.y, target[0] - vehicle.x)
    err = wrap_angle(bearing - vehicle.heading)
    turn = clamp(params.k_heading * err)
    forward = params.cruise
    if remaining < params.brake_distance:
        forward *= max(remaining / params.brake_distance, params.approach_floor)
    forward *= max(1.0 - params.turn_slowdown * abs(turn), 0.25)
    return Action(clamp(forward, 0.0, 1.0), turn)


@dataclass(frozen=True)
class NoiseParams:
    zigzag_amplitude: float = 0.7
    zigzag_period_s: float = 1.5
    zigzag_jitter: float = 0.10
    nonstop_forward: float = 0.9


class NoiseInjector:
    """Per-step corruption of an expert action stream.

    zigzag adds a fixed-frequency sinusoid (seeded phase) plus seeded
    Gaussian jitter to the turn axis; non_stop floors the forward axis so
    the stop protocol never brings the vehicle to rest.
    """

    def __init__(self, mode: str, params: NoiseParams, seed, fps: float):
        if mode not in NOISE_MODES:
            raise ValueError(f"unknown noise mode {mode!r}")
        self.mode = mode
        self.params = params
        self.fps = float(fps)
        rng = np.random.default_rng(seed)
        self._phase = float(rng.uniform(0.0, 2.0 * math.pi))
        self._rng = rng

    def apply(self, t: int, action: Action) -> Action:
        forward, turn = action.forward, action.turn
        if self.mode in ("zigzag", "both"):
            p = self.params
            osc = p.zigzag_amplitude * math.sin(
                2.0 * math.pi * t / (p.zigzag_period_s * self.fps) + self._phase)
            turn = clamp(turn + osc + p.zigzag_jitter * float(self._rng.standard_normal()))
        if self.mode in ("non_stop", "both"):
            forward = max(forward, self.params.nonstop_forward)
        return Action(clamp(forward), clamp(turn))


def inject_noise(actions: np.ndarray, mode: str, params: NoiseParams, seed,
                 fps: float) -> np.ndarray:
    """Stream form of NoiseInjector over an (L, 2) action array."""
    injector = NoiseInjector(mode, params, seed, fps)
    out = [injector.apply(t, Action(a[0], a[1])) for t, a in enumerate(np.asarray(actions, dtype=np.float64))]
    return np.array([[a.forward, a.turn] for a in out], dtype=np.float64)


@dataclass(frozen=True)
class StartJitter:
    lateral: float = 0.25
    heading: float = 0.15
    along: float = 0.4


def jittered_start(course: Course, direction: str, rng: np.random.Generator,
                   jitter: StartJitter = StartJitter()) -> VehicleState:
    path = course.path(direction)
    s0 = float(rng.uniform(0.0, jitter.along))
    base = path.point_at(s0)
    tangent = path.tangent_at(s0)
    normal = np.array([-tangent[1], tangent[0]])
    lateral = float(rng.uniform(-jitter.lateral, jitter.lateral))
    pos = base + lateral * normal
    heading = math.atan2(tangent[1], tangent[0]) + float(
        rng.uniform(-jitter.heading, jitter.heading))
    return VehicleState(x=float(pos[0]), y=float(pos[1]), heading=wrap_angle(heading))


NONSTOP_EXIT_MARGIN = 0.25  # end a non-stop trajectory this far before the sign corner


def simulate_trajectory(course: Course, direction: str, start: VehicleState,
                        noise_mode: str | None, noise_seed, resolution: int,
                        fps: float, max_steps: int = 600,
                        expert: ExpertParams = ExpertParams(),
                        noise: NoiseParams = NoiseParams(),
                        limits: VehicleLimits = VehicleLimits()):
    """Drive the expert (optionally corrupted) and record (image, action) frames.

    The stored action at frame t is exactly the action applied between
    frames t and t+1. Returns (images (L,3,R,R) float32, actions (L,2) float32).
    """
    injector = NoiseInjector(noise_mode, noise, noise_seed, fps) if noise_mode else None
    non_stop = noise_mode in ("non_stop", "both")
    path = course.path(direction)
    hold_steps = int(round(expert.stop_hold_s * fps))
    dt = 1.0 / fps
    state = start
    stop_state = StopProtocolState()
    images = []
    actions = []
    for t in range(max_steps):
        action = expert_action(course, direction, state, stop_state, expert)
        if injector is not None:
            action = injector.apply(t, action)
        images.append(render(course, state, resolution))
        actions.append([action.forward, action.turn])
        state = step_vehicle(state, action, limits, dt)
        if non_stop:
            if path.project((state.x, state.y)) >= path.length - NONSTOP_EXIT_MARGIN:
                break
        elif stop_state.holding:
            stop_state.held_steps += 1
            if stop_state.held_steps >= hold_steps:
                break
    return (np.stack(images).astype(np.float32),
            np.asarray(actions, dtype=np.float32))


@dataclass(frozen=True)
class CollectConfig:
    """Dataset generation parameters (desk-scale defaults)."""

    n_trajectories: int = 30
    n_noisy: int = 2
    n_test: int = 4
    resolution: int = 32
    fps: float = 10.0
    seed: int = 7
    max_steps: int = 600
    jitter: StartJitter = StartJitter()
    expert: ExpertParams = ExpertParams()
    noise: NoiseParams = NoiseParams()
    limits: VehicleLimits = VehicleLimits()
    # cycled over the noisy trajectories, in order
    noise_modes: tuple[str, ...] = ("zigzag", "non_stop", "both")


def collect_dataset(cfg: CollectConfig, course: Course = Course()):
    """Simulate all trajectories and package them into a split Dataset.

    Trajectories alternate direction and jitter their start pose (child
    seeds of (cfg.seed, index)). The last n_noisy indices receive noise and
    land in the training split; the first n_test (clean) indices form the
    test split.
    """
    from .dataset_io import Dataset, Trajectory

    n = cfg.n_trajectories
    if not 0 <= cfg.n_noisy < n:
        raise ValueError("need 0 <= n_noisy < n_trajectories")
    if cfg.n_test < 1 or cfg.n_test + cfg.n_noisy > n:
        raise ValueError("invalid test split size")
    noisy_start = n - cfg.n_noisy
    test_ids = tuple(range(cfg.n_test))
    trajectories = []
    for i in range(n):
        direction = DIRECTIONS[i % 2]
        start = jittered_start(course, direction, np.random.default_rng([cfg.seed, i, 0]), cfg.jitter)
        mode = cfg.noise_modes[(i - noisy_start) % len(cfg.noise_modes)] if i >= noisy_start else None
        images, actions = simulate_trajectory(
            course, direction, start, mode, [cfg.seed, i, 1], cfg.resolution,
            cfg.fps, cfg.max_steps, cfg.expert, cfg.noise, cfg.limits)
        trajectories.append(Trajectory(images, actions, TAG_FOR_MODE[mode], direction))
    train_ids = tuple(i for i in range(n) if i not in test_ids)
    return Dataset(trajectories=trajectories, fps=cfg.fps,
                   train_ids=train_ids, test_ids=test_ids)


@dataclass
class RolloutMetrics:
    stop_overshoot: float
    steering_roughness: float
    completed: bool
    steps: int


@dataclass
class RolloutResult:
    states: list[VehicleState]
    actions: np.ndarray
    metrics: RolloutMetrics
    frames: np.ndarray | None = None


STOP_ZONE = 2.0          # stops only count within this distance of the line
STOP_SPEED_EPS = 0.05    # |forward| command below this is a standstill
STALL_PATIENCE_S = 1.0   # standstill outside the zone for this long ends the run


def net_policy(net):
    """Adapt a PolicyNetwork to the rollout policy interface (uses the mean)."""

    def policy(state: VehicleState, image: np.ndarray) -> Action:
        g = net.predict(image[None])
        return Action(float(g.mean[0, 0]), float(g.mean[0, 1])).clamped()

    return policy


def expert_policy(course: Course, direction: str,
                  params: ExpertParams = ExpertParams()):
    """Wrap the scripted expert as a rollout policy (ignores the image)."""
    stop_state = StopProtocolState()

    def policy(state: VehicleState, image: np.ndarray) -> Action:
        return expert_action(course, direction, state, stop_state, params)

    return policy


def rollout(policy, course: Course, direction: str, start: VehicleState,
            max_steps: int, resolution: int, fps: float,
            limits: VehicleLimits = VehicleLimits(),
            record_frames: bool = False) -> RolloutResult:
    """Closed-loop run of a policy; measures stop overshoot and roughness.

    stop_overshoot is the signed distance past the stop line when the
    forward command first falls to a standstill inside the stop zone, or
    +inf if the run ends (course exit, stall, or max_steps) without that.
    """
    path = course.path(direction)
    s_line = course.stop_line_s(direction)
    dt = 1.0 / fps
    state = start
    states = [state]
    actions = []
    frames = [] if record_frames else None
    overshoot = math.inf
    completed = False
    stall_steps = 0
    stall_limit = max(int(round(STALL_PATIENCE_S * fps)), 1)
    steps = 0
    for _ in range(max_steps):
        if not course.contains(state.x, state.y, margin=0.05):
            break
        image = render(course, state, resolution)
        if record_frames:
            frames.append(image)
        action = policy(state, image).clamped()
        actions.append([action.forward, action.turn])
        steps += 1
        s = path.project((state.x, state.y))
        standstill = abs(action.forward) < STOP_SPEED_EPS
        if standstill and s >= s_line - STOP_ZONE:
            overshoot = s - s_line
            completed = True
            break
        if standstill:
            stall_steps += 1
            if stall_steps >= stall_limit:
                break
        else:
            stall_steps = 0
        state = step_vehicle(state, action, limits, dt)
        states.append(state)
    acts = np.asarray(actions, dtype=np.float64).reshape(-1, 2)
    roughness = float(np.mean(np.abs(np.diff(acts[:, 1])))) if len(acts) > 1 else 0.0
    metrics = RolloutMetrics(stop_overshoot=overshoot, steering_roughness=roughness,
                             completed=completed, steps=steps)
    return RolloutResult(states=states, actions=acts, metrics=metrics,
                         frames=np.stack(frames) if frames else None)

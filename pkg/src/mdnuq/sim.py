"""Multi-lane straight-track driving simulator.

Geometry: x runs along the track, y is lateral and positive toward the left
of the driving direction, headings are degrees counterclockwise from +x (so
positive angular velocity steers left). Lane 0 is the rightmost lane; lane
centers sit at (i + 0.5) * lane_width. Cars are oriented rectangles; ticks
run at 10 Hz. Traffic cars keep their lane at a scripted cruise speed with
a simple car-following slowdown when blocked.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .nn import ConfigError

KMH_TO_MPS = 1.0 / 3.6
D_MAX = 50.0  # feature clip distance, meters
CAR_LENGTH = 4.5
CAR_WIDTH = 1.8
W_MAX_DEGPS = 45.0
CRUISE_SPEED_KMH = 90.0


class OffTrackError(RuntimeError):
    """Ego left the track laterally; the episode counts as a collision."""


class SpawnError(RuntimeError):
    """Requested traffic density cannot be placed without overlaps."""


@dataclass
class Track:
    num_lanes: int = 6
    lane_width: float = 3.7
    segment_length: float = 350.0
    start: float = 0.0

    def __post_init__(self):
        if self.num_lanes < 1 or self.lane_width <= 0 or self.segment_length <= 0:
            raise ConfigError("track dimensions must be positive")

    @property
    def goal(self) -> float:
        return self.start + self.segment_length

    @property
    def width(self) -> float:
        return self.num_lanes * self.lane_width

    def lane_center(self, index: int) -> float:
        return (index + 0.5) * self.lane_width

    def lane_index(self, y: float) -> int:
        """Nearest lane for a lateral position inside the track."""
        if y < 0.0 or y > self.width:
            raise OffTrackError(f"lateral position {y:.2f} outside [0, {self.width:.2f}]")
        return min(int(y / self.lane_width), self.num_lanes - 1)


@dataclass
class CarState:
    x: float
    y: float
    heading_deg: float = 0.0
    speed_kmh: float = 0.0
    length: float = CAR_LENGTH
    width: float = CAR_WIDTH


@dataclass
class TrafficCar:
    car: CarState
    cruise_kmh: float


@dataclass
class SimState:
    ego: CarState
    traffic: list[CarState]
    time: float = 0.0
    dt: float = 0.1  # 10 Hz control frequency


@dataclass
class FeatureVector:
    """Frontal/rearward bumper gaps per neighboring lane plus lane offset.

    Gaps are clipped to [0, D_MAX]; a missing lane or an empty lane reads as
    D_MAX. `lane_offset` is the ego's signed offset from its lane center,
    positive toward the left.
    """

    front_left: float
    front_center: float
    front_right: float
    back_left: float
    back_center: float
    back_right: float
    lane_offset: float

    def as_array(self) -> np.ndarray:
        return np.array(
            [
                self.front_left,
                self.front_center,
                self.front_right,
                self.back_left,
                self.back_center,
                self.back_right,
                self.lane_offset,
            ]
        )

    def normalized(self, track: Track, d_max: float = D_MAX) -> np.ndarray:
        """Network input scaling: gaps by d_max, offset by the half lane width."""
        arr = self.as_array()
        arr[:6] /= d_max
        arr[6] /= 0.5 * track.lane_width
        return arr


def wrap_angle_deg(angle: float) -> float:
    """Wrap to (-180, 180]."""
    a = math.fmod(angle + 180.0, 360.0)
    if a <= 0.0:
        a += 360.0
    return a - 180.0


def extract_features(state: SimState, track: Track, d_max: float = D_MAX) -> FeatureVector:
    ego = state.ego
    lane = track.lane_index(ego.y)
    gaps = {}
    for label, rel in (("left", 1), ("center", 0), ("right", -1)):
        target = lane + rel
        front = rear = d_max
        if 0 <= target < track.num_lanes:
            for car in state.traffic:
                if track.lane_index(car.y) != target:
                    continue
                half = 0.5 * (car.length + ego.length)
                if car.x > ego.x:
                    front = min(front, max(car.x - ego.x - half, 0.0))
                else:
                    rear = min(rear, max(ego.x - car.x - half, 0.0))
        gaps[label] = (min(front, d_max), min(rear, d_max))
    return FeatureVector(
        front_left=gaps["left"][0],
        front_center=gaps["center"][0],
        front_right=gaps["right"][0],
        back_left=gaps["left"][1],
        back_center=gaps["center"][1],
        back_right=gaps["right"][1],
        lane_offset=ego.y - track.lane_center(lane),
    )


class NeighborSpeeds(NamedTuple):
    """Speeds (m/s) of the closest center-lane cars; None when absent."""

    front: float | None
    rear: float | None


def center_lane_speeds(state: SimState, track: Track) -> NeighborSpeeds:
    ego = state.ego
    lane = track.lane_index(ego.y)
    front = rear = None
    front_dx = rear_dx = math.inf
    for car in state.traffic:
        if track.lane_index(car.y) != lane:
            continue
        dx = car.x - ego.x
        if dx > 0 and dx < front_dx:
            front_dx, front = dx, car.speed_kmh * KMH_TO_MPS
        elif dx <= 0 and -dx < rear_dx:
            rear_dx, rear = -dx, car.speed_kmh * KMH_TO_MPS
    return NeighborSpeeds(front, rear)


def step_unicycle(car: CarState, v_kmh: float, w_degps: float, dt: float) -> CarState:
    """Advance one tick: integrate heading first, then move along it."""
    if dt <= 0:
        raise ConfigError("dt must be positive")
    heading = wrap_angle_deg(car.heading_deg + w_degps * dt)
    rad = math.radians(heading)
    dist = v_kmh * KMH_TO_MPS * dt
    return replace(
        car,
        x=car.x + dist * math.cos(rad),
        y=car.y + dist * math.sin(rad),
        heading_deg=heading,
        speed_kmh=v_kmh,
    )


def feedback_heading_controller(
    current_deg: float, desired_deg: float, w_max: float = W_MAX_DEGPS
) -> float:
    """Quadratic heading feedback, w = 2 * sign(diff) * diff^2, clamped to +-w_max."""
    diff = wrap_angle_deg(desired_deg - current_deg)
    w = 2.0 * math.copysign(diff * diff, diff)
    return max(-w_max, min(w_max, w))


def safe_controller(
    features: FeatureVector,
    speeds: NeighborSpeeds,
    theta_dev_deg: float,
    d_dev_m: float,
    *,
    cruise_speed_mps: float = CRUISE_SPEED_KMH * KMH_TO_MPS,
    w_max: float = W_MAX_DEGPS,
) -> tuple[float, float]:
    """Rule-based lane keeper; returns (speed m/s, angular velocity deg/s).

    Speed backs off below the frontal car when the frontal gap closes under
    3 m, speeds past a tailgater, and otherwise averages the two neighbors
    (missing neighbors default to the cruise speed). Steering is heading
    damping plus lane-center correction in the left-positive convention,
    gains (5, 50) with the heading deviation in degrees.
    """
    v_front = speeds.front if speeds.front is not None else cruise_speed_mps
    v_rear = speeds.rear if speeds.rear is not None else cruise_speed_mps
    if features.front_center < 3.0:
        v = v_front - 5.0
    elif features.back_center < 3.0:
        v = v_rear + 3.0
    else:
        v = 0.5 * (v_front + v_rear)
    w = -5.0 * theta_dev_deg - 50.0 * d_dev_m
    return max(v, 0.0), max(-w_max, min(w_max, w))


def box_corners(car: CarState) -> np.ndarray:
    rad = math.radians(car.heading_deg)
    c, s = math.cos(rad), math.sin(rad)
    hl, hw = 0.5 * car.length, 0.5 * car.width
    local = np.array([[hl, hw], [hl, -hw], [-hl, -hw], [-hl, hw]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([car.x, car.y])


def boxes_overlap(a: CarState, b: CarState) -> bool:
    """Oriented-rectangle overlap via the separating-axis test."""
    ca, cb = box_corners(a), box_corners(b)
    for rad in (math.radians(a.heading_deg), math.radians(b.heading_deg)):
        for axis in ((math.cos(rad), math.sin(rad)), (-math.sin(rad), math.cos(rad))):
            ax = np.array(axis)
            pa, pb = ca @ ax, cb @ ax
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True


def detect_collision(state: SimState, track: Track) -> bool:
    """True when the ego body leaves the track laterally or overlaps a car."""
    ego = state.ego
    rad = math.radians(ego.heading_deg)
    lateral_extent = 0.5 * (
        ego.width * abs(math.cos(rad)) + ego.length * abs(math.sin(rad))
    )
    if ego.y - lateral_extent < 0.0 or ego.y + lateral_extent > track.width:
        return True
    return any(boxes_overlap(ego, car) for car in state.traffic)


def min_gap_to_cars(state: SimState) -> float:
    """Smallest bumper-to-bumper gap to any traffic car (axis-aligned approximation)."""
    ego = state.ego
    best = math.inf
    for car in state.traffic:
        dx = max(abs(car.x - ego.x) - 0.5 * (car.length + ego.length), 0.0)
        dy = max(abs(car.y - ego.y) - 0.5 * (car.width + ego.width), 0.0)
        best = min(best, math.hypot(dx, dy))
    return best


class KeepClear(NamedTuple):
    x: float
    lane: int
    half_length: float


@dataclass
class TrafficSpec:
    density: float = 1.0
    speed_range_kmh: tuple[float, float] = (55.0, 105.0)
    seed: int = 0
    spacing_m: float = 50.0  # one car per this many meters of lane at density 1
    min_gap_m: float = 12.0
    rear_margin_m: float = 60.0

    def validate(self) -> None:
        if self.density < 0:
            raise ConfigError("density must be nonnegative")
        if self.speed_range_kmh[0] > self.speed_range_kmh[1]:
            raise ConfigError("speed range must be ordered")


def spawn_traffic(
    spec: TrafficSpec, track: Track, keep_clear: list[KeepClear] | None = None
) -> list[TrafficCar]:
    """Place lane-keeping traffic with non-overlapping gaps, seeded."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    lo = track.start - spec.rear_margin_m
    hi = track.goal
    count = round(spec.density * track.num_lanes * (hi - lo) / spec.spacing_m)
    keep_clear = keep_clear or []
    placed: list[TrafficCar] = []
    for _ in range(count):
        for attempt in range(200):
            lane = int(rng.integers(track.num_lanes))
            x = float(rng.uniform(lo, hi))
            ok = all(
                abs(x - other.car.x) - CAR_LENGTH >= spec.min_gap_m
                for other in placed
                if track.lane_index(other.car.y) == lane
            ) and all(
                zone.lane != lane or abs(x - zone.x) >= zone.half_length
                for zone in keep_clear
            )
            if ok:
                speed = float(rng.uniform(*spec.speed_range_kmh))
                placed.append(
                    TrafficCar(
                        CarState(x=x, y=track.lane_center(lane), speed_kmh=speed),
                        cruise_kmh=speed,
                    )
                )
                break
        else:
            raise SpawnError(
                f"could not place car {len(placed) + 1}/{count} at density {spec.density}"
            )
    return placed


class Simulation:
    """Owns one episode's state; deterministic given the initial scene."""

    def __init__(self, track: Track, ego: CarState, traffic: list[TrafficCar], dt: float = 0.1):
        self.track = track
        self.traffic = traffic
        self.state = SimState(ego=ego, traffic=[tc.car for tc in traffic], dt=dt)
        self.follow_gap_m = 10.0

    def _advance_traffic(self) -> None:
        track = self.track
        cars = [tc.car for tc in self.traffic] + [self.state.ego]
        lanes = [track.lane_index(c.y) for c in cars]
        speeds = []
        for i, tc in enumerate(self.traffic):
            car = tc.car
            lead_gap, lead_speed = math.inf, None
            for j, other in enumerate(cars):
                if j == i or lanes[j] != lanes[i] or other.x <= car.x:
                    continue
                gap = other.x - car.x - 0.5 * (other.length + car.length)
                if gap < lead_gap:
                    lead_gap, lead_speed = gap, other.speed_kmh
            v = tc.cruise_kmh
            if lead_speed is not None and lead_gap < self.follow_gap_m:
                v = min(v, lead_speed)
            speeds.append(v)
        for tc, v in zip(self.traffic, speeds):
            tc.car.x += v * KMH_TO_MPS * self.state.dt
            tc.car.speed_kmh = v

    def step(self, ego_v_kmh: float, ego_w_degps: float) -> None:
        """Advance everything one tick (traffic from the pre-step snapshot)."""
        self._advance_traffic()
        self.state.ego = step_unicycle(
            self.state.ego, ego_v_kmh, ego_w_degps, self.state.dt
        )
        self.state.time += self.state.dt

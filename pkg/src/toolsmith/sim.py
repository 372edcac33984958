"""Scene model and the built-in quasi-static rollout engine.

The engine is kinematic on the robot side: the end-effector frame tracks the
dense trajectory exactly (clamped to a reachability ball), and contact is
resolved geometrically per step, in rule order:

1. push: a movable object overlapping the swept tool volume is translated by
   the smallest displacement that clears it, rejected if that displacement
   would bury the object in immovable geometry;
2. support: objects resting on a moving surface ride along with it;
3. containment: objects inside the tool's overall bound inherit its motion
   (gravity below re-drops anything an open-bottomed tool cannot hold);
4. gravity: unsupported movable objects drop to the nearest surface;
5. gripper: a close transition attaches anything between the finger pads
   within grasp width, rigidly, until the gripper opens.

There is no momentum and no friction cone; an external full-physics backend
can be plugged in through :class:`SimulatorBackend`.
"""
from __future__ import annotations

import abc
import io
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import BackendError
from .geometry import Aabb, Transform
from .trajectory import DenseTrajectory, GRIPPER_CLOSED, GRIPPER_OPEN, TrajectorySample
from .urdf_model import (
    FINGER_FRAMES,
    GRIPPER_CLOSED_SEPARATION_M,
    GRIPPER_OPEN_SEPARATION_M,
    LEFT_FINGER_FRAME,
    RIGHT_FINGER_FRAME,
    RobotDescription,
    frame_world_poses,
    tool_world_boxes,
)

WORKSPACE_RADIUS_M = 0.855
SUPPORT_TOLERANCE_M = 2e-3
STEP_DURATION_S = 0.02
CONTAIN_MARGIN_M = 1e-3
MAX_PUSH_PER_STEP_M = 0.05
GROUND_Z = 0.0
_TINY = 1e-9

# Bare finger bodies (the robot's own fingertips), posed in each finger frame.
FINGER_BODY_HALF = np.array([0.01, 0.005, 0.025])
FINGER_BODY_OFFSET = Transform.make((0.0, 0.0, -0.025))


@dataclass(frozen=True)
class BoxShape:
    half_extents: np.ndarray


@dataclass(frozen=True)
class SphereShape:
    radius: float


@dataclass(frozen=True)
class CompositeShape:
    """Several boxes rigidly bundled; parts are (half_extents, offset) pairs."""

    parts: tuple[tuple[np.ndarray, Transform], ...]


Shape = BoxShape | SphereShape | CompositeShape


@dataclass(frozen=True)
class SceneObject:
    id: str
    shape: Shape
    pose: Transform
    movable: bool
    held_speed: float = 0.0  # last-step displacement / step duration
    peak_speed: float = 0.0  # running max of held_speed over the rollout


@dataclass(frozen=True)
class SceneState:
    objects: dict[str, SceneObject]
    ee_pose: Transform
    gripper_open: bool = True
    step_index: int = 0


@dataclass(frozen=True)
class RolloutResult:
    final_state: SceneState
    trajectory_length: float
    diagnostics: tuple[str, ...]
    state_log: tuple[SceneState, ...] | None = None


def solid_aabbs(obj: SceneObject) -> list[Aabb]:
    """World AABBs of an object's solid parts (one per box, spheres boxed)."""
    shape = obj.shape
    if isinstance(shape, BoxShape):
        return [Aabb.from_box(shape.half_extents, obj.pose)]
    if isinstance(shape, SphereShape):
        r = shape.radius
        return [Aabb(obj.pose.position - r, obj.pose.position + r)]
    return [
        Aabb.from_box(half, obj.pose.compose(offset)) for half, offset in shape.parts
    ]


def object_aabb(obj: SceneObject) -> Aabb:
    boxes = solid_aabbs(obj)
    total = boxes[0]
    for box in boxes[1:]:
        total = total.union(box)
    return total


@dataclass(frozen=True)
class _RobotSolid:
    """One collision box of the robot assembly at a specific instant."""

    name: str
    box: Aabb
    frame_pose: Transform  # pose of the frame the solid rides on
    on_finger: bool
    is_tool: bool


def _robot_solids(
    robot: RobotDescription, ee_pose: Transform, separation: float
) -> list[_RobotSolid]:
    poses = frame_world_poses(robot, ee_pose, finger_separation=separation)
    solids: list[_RobotSolid] = []
    if robot.gripper_present:
        for frame in FINGER_FRAMES:
            solids.append(
                _RobotSolid(
                    name=f"finger:{frame}",
                    box=Aabb.from_box(
                        FINGER_BODY_HALF, poses[frame].compose(FINGER_BODY_OFFSET)
                    ),
                    frame_pose=poses[frame],
                    on_finger=True,
                    is_tool=False,
                )
            )
    if robot.tool is not None and not robot.tool.is_empty:
        parent_of = {j.child: j.parent for j in robot.tool.joints}

        def root_frame(name: str) -> str:
            while name not in poses:
                name = parent_of[name]
            return name

        for link, box_pose in tool_world_boxes(robot.tool, poses):
            frame = root_frame(link.name)
            solids.append(
                _RobotSolid(
                    name=f"tool:{link.name}",
                    box=Aabb.from_box(link.half_extents, box_pose),
                    frame_pose=poses[frame],
                    on_finger=frame in FINGER_FRAMES,
                    is_tool=True,
                )
            )
    return solids


def _mtv_candidates(obj_box: Aabb, solid: Aabb) -> list[np.ndarray]:
    """Axis-aligned displacements that separate obj from solid, smallest first."""
    moves = []
    for axis in range(3):
        up = np.zeros(3)
        up[axis] = solid.hi[axis] - obj_box.lo[axis] + _TINY
        moves.append(up)
        down = np.zeros(3)
        down[axis] = solid.lo[axis] - obj_box.hi[axis] - _TINY
        moves.append(down)
    moves.sort(key=lambda m: float(np.abs(m).max()))
    return moves


def _strictly_overlaps(a: Aabb, b: Aabb) -> bool:
    return bool(np.all(a.lo < b.hi - _TINY) and np.all(b.lo < a.hi - _TINY))


def _footprints_overlap(a: Aabb, b: Aabb) -> bool:
    return (
        a.lo[0] < b.hi[0] - _TINY
        and b.lo[0] < a.hi[0] - _TINY
        and a.lo[1] < b.hi[1] - _TINY
        and b.lo[1] < a.hi[1] - _TINY
    )


class _Rollout:
    """Mutable working state for one rollout of the built-in engine."""

    def __init__(self, scene: SceneState, robot: RobotDescription):
        self.robot = robot
        self.objects = dict(scene.objects)
        self.attached: dict[str, Transform] = {}
        self.diagnostics: list[str] = []
        self.max_diag = 200
        self.immovable_solids = [
            box
            for obj in self.objects.values()
            if not obj.movable
            for box in solid_aabbs(obj)
        ]

    def diag(self, message: str) -> None:
        if len(self.diagnostics) < self.max_diag:
            self.diagnostics.append(message)

    def _clear_of_immovables(self, box: Aabb) -> bool:
        if box.lo[2] < GROUND_Z - _TINY:
            return False
        for solid in self.immovable_solids:
            if _strictly_overlaps(box, solid):
                return False
        return True

    def _push(self, obj: SceneObject, swept: list[Aabb], step: int) -> np.ndarray:
        total = np.zeros(3)
        box = object_aabb(obj)
        for solid in swept:
            if not _strictly_overlaps(box, solid):
                continue
            moved = None
            for move in _mtv_candidates(box, solid):
                if float(np.abs(move).max()) > MAX_PUSH_PER_STEP_M:
                    break
                candidate = Aabb(box.lo + move, box.hi + move)
                if self._clear_of_immovables(candidate):
                    moved = move
                    box = candidate
                    break
            if moved is None:
                self.diag(f"step {step}: tool penetrates {obj.id}, contact dropped")
            else:
                total = total + moved
        return total

    @staticmethod
    def _resting_on(obj_box: Aabb, surface: Aabb) -> bool:
        return (
            _footprints_overlap(obj_box, surface)
            and abs(float(obj_box.lo[2] - surface.hi[2])) <= SUPPORT_TOLERANCE_M
        )

    def step(
        self,
        prev: TrajectorySample,
        curr: TrajectorySample,
        step_index: int,
    ) -> None:
        sep_prev = (
            GRIPPER_OPEN_SEPARATION_M
            if prev.gripper == GRIPPER_OPEN
            else GRIPPER_CLOSED_SEPARATION_M
        )
        sep_curr = (
            GRIPPER_OPEN_SEPARATION_M
            if curr.gripper == GRIPPER_OPEN
            else GRIPPER_CLOSED_SEPARATION_M
        )
        gripper_transition = prev.gripper != curr.gripper

        solids_prev = _robot_solids(self.robot, prev.pose, sep_prev)
        solids_curr = _robot_solids(self.robot, curr.pose, sep_curr)
        ee_delta = curr.pose.compose(prev.pose.inverse())
        ee_moved = not ee_delta.almost_equal(Transform.identity(), tol=1e-12)

        swept: list[Aabb] = []
        frame_deltas: list[Transform] = []
        tool_hull_prev: Aabb | None = None
        for sp, sc in zip(solids_prev, solids_curr):
            swept.append(sp.box.union(sc.box))
            frame_deltas.append(sc.frame_pose.compose(sp.frame_pose.inverse()))
            if sp.is_tool:
                tool_hull_prev = (
                    sp.box if tool_hull_prev is None else tool_hull_prev.union(sp.box)
                )
        # During a gripper transition the pads close onto (or release) the
        # target; they must not shove it away first.
        push_solids = [
            hull
            for hull, sp in zip(swept, solids_prev)
            if not (gripper_transition and sp.on_finger)
        ]

        moved_deltas: dict[str, np.ndarray] = {}

        # Attached objects ride the end-effector frame rigidly.
        for obj_id, offset in self.attached.items():
            obj = self.objects[obj_id]
            new_pose = curr.pose.compose(offset)
            moved_deltas[obj_id] = new_pose.position - obj.pose.position
            self.objects[obj_id] = replace(obj, pose=new_pose)

        # Movables from the bottom up so carriers move before their cargo.
        free_ids = [
            obj_id
            for obj_id, obj in self.objects.items()
            if obj.movable and obj_id not in self.attached
        ]
        prev_boxes = {oid: object_aabb(self.objects[oid]) for oid in free_ids}
        order = sorted(free_ids, key=lambda oid: (float(prev_boxes[oid].lo[2]), oid))

        for obj_id in order:
            obj = self.objects[obj_id]
            prev_box = prev_boxes[obj_id]
            delta_pos = self._push(obj, push_solids, step_index)
            new_pose = Transform(obj.pose.position + delta_pos, obj.pose.rotation)

            # Support: resting on a robot solid or on an already-moved object.
            carried = False
            if ee_moved or gripper_transition:
                for sp, delta in zip(solids_prev, frame_deltas):
                    if self._resting_on(prev_box, sp.box):
                        if not delta.almost_equal(Transform.identity(), tol=1e-12):
                            new_pose = delta.compose(new_pose)
                            carried = True
                        break
            if not carried:
                for other_id in order:
                    if other_id == obj_id or other_id not in moved_deltas:
                        continue
                    shift = moved_deltas[other_id]
                    if float(np.abs(shift).max()) <= _TINY:
                        continue
                    if self._resting_on(prev_box, prev_boxes[other_id]):
                        new_pose = Transform(
                            new_pose.position + shift, new_pose.rotation
                        )
                        carried = True
                        break

            # Containment: inside the tool's overall bound, inherit ee motion.
            if (
                not carried
                and ee_moved
                and tool_hull_prev is not None
                and tool_hull_prev.expanded(CONTAIN_MARGIN_M).contains(prev_box)
            ):
                new_pose = ee_delta.compose(new_pose)

            shift = new_pose.position - obj.pose.position
            if float(np.abs(shift).max()) > 0.0 or not np.array_equal(
                new_pose.rotation, obj.pose.rotation
            ):
                moved_deltas[obj_id] = shift
                self.objects[obj_id] = replace(obj, pose=new_pose)

        # Gravity settle, bottom-up, against post-move geometry.
        settle_order = sorted(
            order,
            key=lambda oid: (float(object_aabb(self.objects[oid]).lo[2]), oid),
        )
        solid_boxes_now = [s.box for s in solids_curr]
        for obj_id in settle_order:
            obj = self.objects[obj_id]
            box = object_aabb(obj)
            top = GROUND_Z
            for candidate in solid_boxes_now:
                if (
                    _footprints_overlap(box, candidate)
                    and candidate.hi[2] <= box.lo[2] + _TINY
                ):
                    top = max(top, float(candidate.hi[2]))
            for other_id, other in self.objects.items():
                if other_id == obj_id:
                    continue
                for candidate in solid_aabbs(other):
                    if (
                        _footprints_overlap(box, candidate)
                        and candidate.hi[2] <= box.lo[2] + _TINY
                    ):
                        top = max(top, float(candidate.hi[2]))
            drop = float(box.lo[2]) - top
            if drop > _TINY:
                fall = np.array([0.0, 0.0, drop])
                self.objects[obj_id] = replace(
                    obj, pose=Transform(obj.pose.position - fall, obj.pose.rotation)
                )
                moved_deltas[obj_id] = moved_deltas.get(obj_id, np.zeros(3)) - fall

        # Gripper attach/release on transitions.
        if gripper_transition and self.robot.gripper_present:
            if curr.gripper == GRIPPER_CLOSED:
                self._try_attach(curr.pose, step_index)
            else:
                if self.attached:
                    self.diag(
                        f"step {step_index}: released "
                        + ", ".join(sorted(self.attached))
                    )
                self.attached.clear()

        # Speed bookkeeping.
        for obj_id, obj in self.objects.items():
            if not obj.movable:
                continue
            shift = moved_deltas.get(obj_id)
            speed = (
                float(np.linalg.norm(shift)) / STEP_DURATION_S
                if shift is not None
                else 0.0
            )
            self.objects[obj_id] = replace(
                obj, held_speed=speed, peak_speed=max(obj.peak_speed, speed)
            )

    def _try_attach(self, ee_pose: Transform, step_index: int) -> None:
        """Grasp check at the close transition, done in the end-effector frame."""
        local_solids = _robot_solids(
            self.robot, Transform.identity(), GRIPPER_OPEN_SEPARATION_M
        )
        left = [
            s.box
            for s in local_solids
            if s.on_finger and float(s.frame_pose.position[1]) > 0
        ]
        right = [
            s.box
            for s in local_solids
            if s.on_finger and float(s.frame_pose.position[1]) < 0
        ]
        if not left or not right:
            return
        left_inner = min(float(b.lo[1]) for b in left)
        right_inner = max(float(b.hi[1]) for b in right)
        closing_travel = (GRIPPER_OPEN_SEPARATION_M - GRIPPER_CLOSED_SEPARATION_M) / 2
        gap_closed = (left_inner - closing_travel) - (right_inner + closing_travel)

        x_lo = max(min(float(b.lo[0]) for b in left), min(float(b.lo[0]) for b in right))
        x_hi = min(max(float(b.hi[0]) for b in left), max(float(b.hi[0]) for b in right))
        z_lo = max(min(float(b.lo[2]) for b in left), min(float(b.lo[2]) for b in right))
        z_hi = min(max(float(b.hi[2]) for b in left), max(float(b.hi[2]) for b in right))

        ee_inv = ee_pose.inverse()
        for obj_id in sorted(self.objects):
            obj = self.objects[obj_id]
            if not obj.movable or obj_id in self.attached:
                continue
            box = object_aabb(obj)
            corners = np.array(
                [
                    [x, y, z]
                    for x in (float(box.lo[0]), float(box.hi[0]))
                    for y in (float(box.lo[1]), float(box.hi[1]))
                    for z in (float(box.lo[2]), float(box.hi[2]))
                ]
            )
            local = ee_inv.apply(corners)
            lo, hi = local.min(axis=0), local.max(axis=0)
            width = float(hi[1] - lo[1])
            between = lo[1] > right_inner - _TINY and hi[1] < left_inner + _TINY
            x_touch = lo[0] < x_hi and hi[0] > x_lo
            z_touch = lo[2] < z_hi and hi[2] > z_lo
            reachable = width >= gap_closed - _TINY
            if between and x_touch and z_touch and reachable:
                self.attached[obj_id] = ee_inv.compose(obj.pose)
                self.diag(f"step {step_index}: grasped {obj_id}")


class SimulatorBackend(abc.ABC):
    """Rollout engine interface; implementations must be deterministic."""

    name: str = "abstract"
    supports_gripper: bool = False
    full_dynamics: bool = False
    concurrent_rollouts: bool = False

    def spawn(self) -> "SimulatorBackend":
        """Fresh instance for engines that are not safe to share; default: self."""
        return self

    @abc.abstractmethod
    def rollout(
        self,
        scene: SceneState,
        robot: RobotDescription,
        traj: DenseTrajectory,
        *,
        record_states: bool = False,
        log_stride: int = 25,
    ) -> RolloutResult:
        ...


class QuasiStaticBackend(SimulatorBackend):
    """The built-in geometric engine described in the module docstring."""

    name = "builtin"
    supports_gripper = True
    full_dynamics = False
    concurrent_rollouts = True

    def rollout(
        self,
        scene: SceneState,
        robot: RobotDescription,
        traj: DenseTrajectory,
        *,
        record_states: bool = False,
        log_stride: int = 25,
    ) -> RolloutResult:
        work = _Rollout(scene, robot)
        samples = []
        clamped = 0
        for sample in traj.samples:
            pos = sample.pose.position
            norm = float(np.linalg.norm(pos))
            if norm > WORKSPACE_RADIUS_M:
                pos = pos * (WORKSPACE_RADIUS_M / norm)
                clamped += 1
                sample = TrajectorySample(
                    sample.index,
                    Transform(pos, sample.pose.rotation),
                    sample.gripper,
                    sample.segment,
                )
            samples.append(sample)
        if clamped:
            work.diag(
                f"{clamped} trajectory samples clamped to the "
                f"{WORKSPACE_RADIUS_M} m workspace ball"
            )

        log: list[SceneState] = []
        length = 0.0
        prev = samples[0]
        # Placement step: resolve any overlap at the starting pose.
        work.step(prev, prev, 0)
        if record_states:
            log.append(
                SceneState(dict(work.objects), prev.pose,
                           prev.gripper == GRIPPER_OPEN, 0)
            )
        for i, sample in enumerate(samples[1:], start=1):
            work.step(prev, sample, i)
            length += float(np.linalg.norm(sample.pose.position - prev.pose.position))
            prev = sample
            if record_states and (i % log_stride == 0 or i == len(samples) - 1):
                log.append(
                    SceneState(dict(work.objects), sample.pose,
                               sample.gripper == GRIPPER_OPEN, i)
                )
        final = SceneState(
            dict(work.objects), prev.pose, prev.gripper == GRIPPER_OPEN,
            len(samples) - 1,
        )
        return RolloutResult(
            final_state=final,
            trajectory_length=length,
            diagnostics=tuple(work.diagnostics),
            state_log=tuple(log) if record_states else None,
        )


def rollout(
    backend: SimulatorBackend,
    scene: SceneState,
    robot: RobotDescription,
    traj: DenseTrajectory,
    **kwargs,
) -> RolloutResult:
    """Execute a trajectory on a backend, normalizing foreign failures."""
    try:
        return backend.rollout(scene, robot, traj, **kwargs)
    except BackendError:
        raise
    except Exception as exc:  # noqa: BLE001 - adapter faults become BackendError
        raise BackendError(f"backend {backend.name!r} failed: {exc}") from exc


# ---------------------------------------------------------------------------
# Scene files, logs, rendering
# ---------------------------------------------------------------------------


def _pose_from_dict(d: dict) -> Transform:
    return Transform.make(d.get("xyz", (0, 0, 0)), rpy=d.get("rpy"))


def _pose_to_dict(t: Transform) -> dict:
    return {
        "xyz": [float(v) for v in t.position],
        "rpy": [float(v) for v in t.rpy()],
    }


def shape_from_dict(d: dict) -> Shape:
    kind = d["type"]
    if kind == "box":
        return BoxShape(np.asarray(d["half_extents"], dtype=float))
    if kind == "sphere":
        return SphereShape(float(d["radius"]))
    if kind == "composite":
        parts = tuple(
            (np.asarray(p["half_extents"], dtype=float), _pose_from_dict(p))
            for p in d["parts"]
        )
        return CompositeShape(parts)
    raise ValueError(f"unknown shape type {kind!r}")


def shape_to_dict(shape: Shape) -> dict:
    if isinstance(shape, BoxShape):
        return {"type": "box", "half_extents": [float(v) for v in shape.half_extents]}
    if isinstance(shape, SphereShape):
        return {"type": "sphere", "radius": shape.radius}
    return {
        "type": "composite",
        "parts": [
            {"half_extents": [float(v) for v in half], **_pose_to_dict(offset)}
            for half, offset in shape.parts
        ],
    }


def scene_from_dict(data: dict) -> SceneState:
    objects = {}
    for entry in data["objects"]:
        obj = SceneObject(
            id=entry["id"],
            shape=shape_from_dict(entry["shape"]),
            pose=_pose_from_dict(entry.get("pose", {})),
            movable=bool(entry.get("movable", False)),
        )
        objects[obj.id] = obj
    ee = _pose_from_dict(data.get("ee_start", {"xyz": [0.0, 0.0, 0.4]}))
    return SceneState(objects=objects, ee_pose=ee, gripper_open=True, step_index=0)


def scene_to_dict(state: SceneState) -> dict:
    return {
        "ee_start": _pose_to_dict(state.ee_pose),
        "objects": [
            {
                "id": obj.id,
                "shape": shape_to_dict(obj.shape),
                "pose": _pose_to_dict(obj.pose),
                "movable": obj.movable,
            }
            for obj in state.objects.values()
        ],
    }


def load_scene_file(path: str | Path) -> SceneState:
    return scene_from_dict(json.loads(Path(path).read_text()))


def state_to_dict(state: SceneState) -> dict:
    return {
        "step": state.step_index,
        "ee": _pose_to_dict(state.ee_pose),
        "gripper_open": state.gripper_open,
        "objects": {
            obj.id: {
                **_pose_to_dict(obj.pose),
                "held_speed": obj.held_speed,
                "peak_speed": obj.peak_speed,
            }
            for obj in state.objects.values()
        },
    }


def write_state_log(states, path: str | Path) -> None:
    """Dump a state sequence as JSON Lines for replay or plotting."""
    with open(path, "w") as fh:
        for state in states:
            fh.write(json.dumps(state_to_dict(state)) + "\n")


def render_top_view(
    state: SceneState, size: int = 512, extent_m: float = 1.4
) -> bytes:
    """Schematic flat-shaded top view of the scene as PNG bytes."""
    from PIL import Image, ImageDraw

    img = Image.new("RGB", (size, size), (245, 245, 245))
    draw = ImageDraw.Draw(img)

    def to_px(x: float, y: float) -> tuple[float, float]:
        # +x (front of the table) points up, +y (robot's left) points left.
        col = (0.5 - y / (2 * extent_m)) * size
        row = (1.0 - (x + extent_m * 0.4) / (1.4 * extent_m)) * size
        return col, row

    def color_for(obj_id: str) -> tuple[int, int, int]:
        h = sum(ord(c) * (i + 7) for i, c in enumerate(obj_id))
        return (60 + h * 37 % 180, 60 + h * 53 % 180, 60 + h * 71 % 180)

    for obj in state.objects.values():
        fill = color_for(obj.id)
        outline = (30, 30, 30) if obj.movable else (120, 120, 120)
        if isinstance(obj.shape, SphereShape):
            cx, cy = to_px(float(obj.pose.position[0]), float(obj.pose.position[1]))
            r = obj.shape.radius / (2 * extent_m) * size
            draw.ellipse([cx - r, cy - r, cx + r, cy + r], fill=fill, outline=outline)
        else:
            for box in solid_aabbs(obj):
                x0, y0 = to_px(float(box.lo[0]), float(box.hi[1]))
                x1, y1 = to_px(float(box.hi[0]), float(box.lo[1]))
                draw.rectangle(
                    [min(x0, x1), min(y0, y1), max(x0, x1), max(y0, y1)],
                    fill=fill,
                    outline=outline,
                )
    ex, ey = to_px(float(state.ee_pose.position[0]), float(state.ee_pose.position[1]))
    draw.line([ex - 6, ey, ex + 6, ey], fill=(200, 30, 30), width=2)
    draw.line([ex, ey - 6, ex, ey + 6], fill=(200, 30, 30), width=2)

    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()

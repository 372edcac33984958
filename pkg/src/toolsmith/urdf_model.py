"""Robot-description data model: tool fragments, validation, and merging.

A *tool fragment* is a flat sequence of URDF ``<link>``/``<joint>`` elements
(no enclosing ``<robot>``) describing a rigid assembly of boxes. Fragments
attach to the robot either at the end-effector flange frame or as a pair of
subtrees on the two gripper finger frames. The robot itself is a stand-in:
named kinematic frames, no arm links.
"""
from __future__ import annotations

import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .errors import ParseError, ValidationError
from .geometry import Aabb, Transform

EE_FRAME = "panda_virtual"
LEFT_FINGER_FRAME = "panda_leftfinger"
RIGHT_FINGER_FRAME = "panda_rightfinger"
FINGER_FRAMES = (LEFT_FINGER_FRAME, RIGHT_FINGER_FRAME)
ATTACHMENT_FRAMES = (EE_FRAME,) + FINGER_FRAMES

# Per-link mass ceiling: "a few grams", fixed at 10 g.
MASS_LIMIT_KG = 0.010
DEFAULT_LINK_MASS_KG = 0.001
# Child geometry must overlap its parent's within this margin (no-gaps rule).
GAP_TOLERANCE_M = 1e-3

# Finger frames sit below the flange; separation is the open-gripper default.
GRIPPER_OPEN_SEPARATION_M = 0.08
GRIPPER_CLOSED_SEPARATION_M = 0.008
FINGER_MOUNT_DROP_M = 0.05


class AttachmentMode(Enum):
    VIRTUAL_FLANGE = "virtual_flange"
    GRIPPER_FINGERS = "gripper_fingers"


@dataclass(frozen=True)
class BoxLink:
    """One rigid box component: geometry pose is relative to the link frame."""

    name: str
    half_extents: np.ndarray
    mass: float
    origin: Transform
    color: tuple[float, float, float, float] | None = None

    def almost_equal(self, other: "BoxLink", tol: float = 1e-9) -> bool:
        return (
            self.name == other.name
            and np.max(np.abs(self.half_extents - other.half_extents)) <= tol
            and abs(self.mass - other.mass) <= tol
            and self.origin.almost_equal(other.origin, tol)
            and (
                (self.color is None and other.color is None)
                or (
                    self.color is not None
                    and other.color is not None
                    and max(abs(a - b) for a, b in zip(self.color, other.color)) <= tol
                )
            )
        )


@dataclass(frozen=True)
class FixedJoint:
    """Rigid connection placing ``child``'s frame at ``origin`` in ``parent``'s frame."""

    name: str
    parent: str
    child: str
    origin: Transform

    def almost_equal(self, other: "FixedJoint", tol: float = 1e-9) -> bool:
        return (
            self.name == other.name
            and self.parent == other.parent
            and self.child == other.child
            and self.origin.almost_equal(other.origin, tol)
        )


@dataclass(frozen=True)
class ToolDesign:
    """A validated tool fragment plus how it attaches to the robot."""

    links: tuple[BoxLink, ...]
    joints: tuple[FixedJoint, ...]
    attachment: AttachmentMode
    source_text: str = ""
    warnings: tuple[str, ...] = ()

    @property
    def is_empty(self) -> bool:
        return not self.links

    def link_map(self) -> dict[str, BoxLink]:
        return {link.name: link for link in self.links}

    def almost_equal(self, other: "ToolDesign", tol: float = 1e-9) -> bool:
        """Field-for-field equality, ignoring source text and warnings."""
        return (
            self.attachment == other.attachment
            and len(self.links) == len(other.links)
            and len(self.joints) == len(other.joints)
            and all(a.almost_equal(b, tol) for a, b in zip(self.links, other.links))
            and all(a.almost_equal(b, tol) for a, b in zip(self.joints, other.joints))
        )


EMPTY_TOOL = ToolDesign(links=(), joints=(), attachment=AttachmentMode.VIRTUAL_FLANGE)


@dataclass(frozen=True)
class FrameLink:
    """A named kinematic frame of the robot stand-in, posed in the flange frame."""

    name: str
    origin: Transform


@dataclass(frozen=True)
class RobotDescription:
    base_links: tuple[FrameLink, ...]
    end_effector_frame: str = EE_FRAME
    gripper_present: bool = False
    tool: ToolDesign | None = None

    def frame_names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.base_links)

    def almost_equal(self, other: "RobotDescription", tol: float = 1e-9) -> bool:
        if (
            self.end_effector_frame != other.end_effector_frame
            or self.gripper_present != other.gripper_present
            or self.frame_names() != other.frame_names()
        ):
            return False
        if not all(
            a.origin.almost_equal(b.origin, tol)
            for a, b in zip(self.base_links, other.base_links)
        ):
            return False
        if (self.tool is None) != (other.tool is None):
            return False
        return self.tool is None or self.tool.almost_equal(other.tool, tol)


def blank_robot(gripper_present: bool = False) -> RobotDescription:
    """The tool-less robot stand-in: the flange frame, plus finger frames."""
    frames = [FrameLink(EE_FRAME, Transform.identity())]
    if gripper_present:
        half = GRIPPER_OPEN_SEPARATION_M / 2.0
        frames.append(
            FrameLink(
                LEFT_FINGER_FRAME, Transform.make((0.0, half, -FINGER_MOUNT_DROP_M))
            )
        )
        frames.append(
            FrameLink(
                RIGHT_FINGER_FRAME, Transform.make((0.0, -half, -FINGER_MOUNT_DROP_M))
            )
        )
    return RobotDescription(
        base_links=tuple(frames), gripper_present=gripper_present
    )


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


def _parse_floats(text: str, count: int, what: str) -> np.ndarray:
    parts = text.split()
    if len(parts) != count:
        raise ParseError(f"{what}: expected {count} numbers, got {len(parts)!r}")
    try:
        values = np.array([float(p) for p in parts])
    except ValueError as exc:
        raise ParseError(f"{what}: {exc}") from None
    if not np.all(np.isfinite(values)):
        raise ParseError(f"{what}: non-finite value")
    return values


def _parse_origin(elem: ET.Element | None, what: str) -> Transform:
    if elem is None:
        return Transform.identity()
    xyz = np.zeros(3)
    rpy = np.zeros(3)
    if elem.get("xyz"):
        xyz = _parse_floats(elem.get("xyz"), 3, f"{what} origin xyz")
    if elem.get("rpy"):
        rpy = _parse_floats(elem.get("rpy"), 3, f"{what} origin rpy")
    return Transform.make(xyz, rpy=rpy)


def _parse_link(elem: ET.Element, warnings: list[str]) -> BoxLink:
    name = elem.get("name")
    if not name:
        raise ParseError("link element without a name attribute")

    boxes: list[tuple[np.ndarray, Transform, str]] = []
    color = None
    mass = None
    for child in elem:
        if child.tag in ("visual", "collision"):
            geom = child.find("geometry")
            if geom is None:
                warnings.append(f"link {name}: {child.tag} without geometry ignored")
                continue
            shapes = list(geom)
            if not shapes:
                raise ParseError(f"link {name}: empty geometry element")
            for shape in shapes:
                if shape.tag != "box":
                    raise ValidationError(
                        f"link {name}: geometry '{shape.tag}' is not a box"
                    )
                size_attr = shape.get("size")
                if size_attr is None:
                    raise ParseError(f"link {name}: box without size attribute")
                size = _parse_floats(size_attr, 3, f"link {name} box size")
                origin = _parse_origin(child.find("origin"), f"link {name}")
                boxes.append((size / 2.0, origin, child.tag))
            if child.tag == "visual":
                material = child.find("material")
                if material is not None:
                    color_elem = material.find("color")
                    if color_elem is not None and color_elem.get("rgba"):
                        rgba = _parse_floats(
                            color_elem.get("rgba"), 4, f"link {name} color"
                        )
                        color = tuple(float(v) for v in rgba)
        elif child.tag == "inertial":
            mass_elem = child.find("mass")
            if mass_elem is not None and mass_elem.get("value") is not None:
                try:
                    mass = float(mass_elem.get("value"))
                except ValueError:
                    raise ParseError(f"link {name}: bad mass value") from None
        else:
            warnings.append(f"link {name}: element <{child.tag}> ignored")

    if not boxes:
        raise ValidationError(f"link {name}: no box geometry")
    # Prefer collision geometry when both are present and they disagree.
    collision_boxes = [b for b in boxes if b[2] == "collision"]
    chosen = collision_boxes[0] if collision_boxes else boxes[0]
    for other in boxes:
        if (
            np.max(np.abs(other[0] - chosen[0])) > 1e-9
            or not other[1].almost_equal(chosen[1])
        ):
            warnings.append(
                f"link {name}: multiple differing box geometries, "
                f"using the {chosen[2]} one"
            )
            break

    if mass is None:
        warnings.append(f"link {name}: no inertial mass, defaulting to 1 g")
        mass = DEFAULT_LINK_MASS_KG
    return BoxLink(
        name=name, half_extents=chosen[0], mass=mass, origin=chosen[1], color=color
    )


def _parse_joint(elem: ET.Element) -> FixedJoint:
    name = elem.get("name")
    if not name:
        raise ParseError("joint element without a name attribute")
    jtype = elem.get("type")
    if jtype != "fixed":
        raise ValidationError(f"joint {name}: type '{jtype}' not supported, use fixed")
    parent = elem.find("parent")
    child = elem.find("child")
    if parent is None or not parent.get("link"):
        raise ParseError(f"joint {name}: missing parent link")
    if child is None or not child.get("link"):
        raise ParseError(f"joint {name}: missing child link")
    origin = _parse_origin(elem.find("origin"), f"joint {name}")
    return FixedJoint(
        name=name, parent=parent.get("link"), child=child.get("link"), origin=origin
    )


def parse_tool_fragment(text: str) -> ToolDesign:
    """Parse a URDF fragment into a validated :class:`ToolDesign`.

    The fragment is a sequence of link/joint elements; an enclosing
    ``<robot>`` element is tolerated but not required. Unknown elements are
    skipped with a recorded warning. Raises :class:`ParseError` for malformed
    markup and :class:`ValidationError` for invariant violations (non-box
    geometry, mass bound, gaps, bad attachment parents).
    """
    stripped = text.strip()
    if not stripped:
        return replace(EMPTY_TOOL, source_text=text)

    root = None
    try:
        root = ET.fromstring(stripped)
    except ET.ParseError:
        root = None
    if root is None or root.tag != "robot":
        try:
            root = ET.fromstring(f"<robot>{stripped}</robot>")
        except ET.ParseError as exc:
            raise ParseError(f"malformed fragment: {exc}") from None

    warnings: list[str] = []
    links: list[BoxLink] = []
    joints: list[FixedJoint] = []
    for elem in root:
        if elem.tag == "link":
            links.append(_parse_link(elem, warnings))
        elif elem.tag == "joint":
            joints.append(_parse_joint(elem))
        else:
            warnings.append(f"element <{elem.tag}> ignored")

    attachment = validate_tool_structure(links, joints)
    return ToolDesign(
        links=tuple(links),
        joints=tuple(joints),
        attachment=attachment,
        source_text=text,
        warnings=tuple(warnings),
    )


def build_tool(links, joints) -> ToolDesign:
    """Construct a ToolDesign from in-memory parts, validating and serializing."""
    links = tuple(links)
    joints = tuple(joints)
    attachment = validate_tool_structure(links, joints)
    tool = ToolDesign(links=links, joints=joints, attachment=attachment)
    return replace(tool, source_text=serialize_tool(tool))


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def validate_tool_structure(links, joints) -> AttachmentMode:
    """Check all tool invariants; returns the inferred attachment mode.

    Invariants: unique names, positive box extents, per-link mass in
    (0, MASS_LIMIT_KG], every link the child of exactly one joint, parents
    resolving to declared links or attachment frames (never a mix of flange
    and fingers), an acyclic connected forest, and parent/child geometry
    overlap within GAP_TOLERANCE_M.
    """
    link_names = [l.name for l in links]
    if len(set(link_names)) != len(link_names):
        raise ValidationError("duplicate link names")
    joint_names = [j.name for j in joints]
    if len(set(joint_names)) != len(joint_names):
        raise ValidationError("duplicate joint names")
    if any(set(link_names) & set(ATTACHMENT_FRAMES)):
        raise ValidationError("tool links may not shadow robot frame names")

    by_name = {l.name: l for l in links}
    for link in links:
        if np.any(link.half_extents <= 0):
            raise ValidationError(f"link {link.name}: non-positive box extents")
        if not (0.0 < link.mass <= MASS_LIMIT_KG + 1e-12):
            raise ValidationError(
                f"link {link.name}: mass {link.mass * 1000:.3g} g outside "
                f"(0, {MASS_LIMIT_KG * 1000:.0f}] g"
            )

    parent_joint: dict[str, FixedJoint] = {}
    frames_used: set[str] = set()
    for joint in joints:
        if joint.child in ATTACHMENT_FRAMES:
            raise ValidationError(f"joint {joint.name}: robot frame as child")
        if joint.child not in by_name:
            raise ValidationError(f"joint {joint.name}: unknown child {joint.child}")
        if joint.child in parent_joint:
            raise ValidationError(f"link {joint.child} has multiple parent joints")
        if joint.parent in ATTACHMENT_FRAMES:
            frames_used.add(joint.parent)
        elif joint.parent not in by_name:
            raise ValidationError(
                f"joint {joint.name}: attachment parent {joint.parent!r} is neither "
                f"a tool link nor one of {ATTACHMENT_FRAMES}"
            )
        parent_joint[joint.child] = joint

    for link in links:
        if link.name not in parent_joint:
            raise ValidationError(f"link {link.name} has no parent joint")

    if EE_FRAME in frames_used and frames_used & set(FINGER_FRAMES):
        raise ValidationError("tool mixes flange and finger attachment parents")
    attachment = (
        AttachmentMode.GRIPPER_FINGERS
        if frames_used & set(FINGER_FRAMES)
        else AttachmentMode.VIRTUAL_FLANGE
    )

    # Walk each attachment subtree, composing frame-relative poses, checking
    # connectivity (no cycles / orphans) and the no-gaps rule as we go.
    children: dict[str, list[FixedJoint]] = {}
    for joint in joints:
        children.setdefault(joint.parent, []).append(joint)

    poses: dict[str, Transform] = {}
    stack: list[tuple[str, Transform, Aabb]] = [
        (frame, Transform.identity(), Aabb.point(np.zeros(3)))
        for frame in sorted(frames_used)
    ]
    visited = 0
    while stack:
        parent_name, parent_pose, parent_box = stack.pop()
        for joint in children.get(parent_name, ()):
            link = by_name[joint.child]
            link_pose = parent_pose.compose(joint.origin)
            box = Aabb.from_box(link.half_extents, link_pose.compose(link.origin))
            if not box.overlaps(parent_box, tol=GAP_TOLERANCE_M):
                raise ValidationError(
                    f"link {link.name}: geometry does not touch its parent "
                    f"{joint.parent} (gap larger than {GAP_TOLERANCE_M * 1000:.0f} mm)"
                )
            poses[link.name] = link_pose
            visited += 1
            stack.append((link.name, link_pose, box))
    if visited != len(links):
        raise ValidationError("tool joint graph has a cycle or unreachable links")
    return attachment


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _fmt_vec(v: np.ndarray) -> str:
    return " ".join(_fmt(x) for x in v)


def _origin_elem(parent: ET.Element, t: Transform) -> None:
    ET.SubElement(
        parent, "origin", xyz=_fmt_vec(t.position), rpy=_fmt_vec(t.rpy())
    )


def _link_elem(link: BoxLink) -> ET.Element:
    elem = ET.Element("link", name=link.name)
    size = _fmt_vec(link.half_extents * 2.0)
    visual = ET.SubElement(elem, "visual")
    _origin_elem(visual, link.origin)
    ET.SubElement(ET.SubElement(visual, "geometry"), "box", size=size)
    if link.color is not None:
        material = ET.SubElement(visual, "material", name=f"{link.name}_color")
        ET.SubElement(material, "color", rgba=_fmt_vec(np.array(link.color)))
    collision = ET.SubElement(elem, "collision")
    _origin_elem(collision, link.origin)
    ET.SubElement(ET.SubElement(collision, "geometry"), "box", size=size)
    inertial = ET.SubElement(elem, "inertial")
    ET.SubElement(inertial, "mass", value=_fmt(link.mass))
    # Nominal tensor for gram-scale parts; consumers that care recompute it.
    ET.SubElement(
        inertial, "inertia",
        ixx="1e-06", ixy="0", ixz="0", iyy="1e-06", iyz="0", izz="1e-06",
    )
    return elem


def _joint_elem(joint: FixedJoint) -> ET.Element:
    elem = ET.Element("joint", name=joint.name, type="fixed")
    ET.SubElement(elem, "parent", link=joint.parent)
    ET.SubElement(elem, "child", link=joint.child)
    _origin_elem(elem, joint.origin)
    return elem


def _elements_to_text(elements: list[ET.Element]) -> str:
    container = ET.Element("container")
    container.extend(elements)
    ET.indent(container)
    text = ET.tostring(container, encoding="unicode")
    body = text[text.index(">") + 1 : text.rindex("<")]
    return "\n".join(line[2:] if line.startswith("  ") else line
                     for line in body.strip("\n").splitlines()) + "\n"


def serialize_tool(tool: ToolDesign) -> str:
    """Canonical URDF text of a tool fragment (links first, then joints)."""
    elements = [_link_elem(l) for l in tool.links]
    elements += [_joint_elem(j) for j in tool.joints]
    if not elements:
        return ""
    return _elements_to_text(elements)


def serialize_robot_description(desc: RobotDescription) -> str:
    """Full URDF document: frame links, frame joints, then the tool fragment."""
    robot = ET.Element("robot", name="panda_stand_in")
    for frame in desc.base_links:
        robot.append(ET.Element("link", name=frame.name))
    for frame in desc.base_links:
        if frame.name == desc.end_effector_frame:
            continue
        joint = ET.SubElement(robot, "joint", name=f"{frame.name}_mount", type="fixed")
        ET.SubElement(joint, "parent", link=desc.end_effector_frame)
        ET.SubElement(joint, "child", link=frame.name)
        _origin_elem(joint, frame.origin)
    if desc.tool is not None:
        for link in desc.tool.links:
            robot.append(_link_elem(link))
        for joint in desc.tool.joints:
            robot.append(_joint_elem(joint))
    ET.indent(robot)
    return ET.tostring(robot, encoding="unicode") + "\n"


def parse_robot_description(text: str) -> RobotDescription:
    """Parse a merged robot document back into a :class:`RobotDescription`."""
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise ParseError(f"malformed robot description: {exc}") from None
    if root.tag != "robot":
        raise ParseError("robot description must have a <robot> root")

    warnings: list[str] = []
    frames: dict[str, Transform] = {}
    tool_links: list[BoxLink] = []
    frame_joints: list[FixedJoint] = []
    tool_joints: list[FixedJoint] = []
    for elem in root:
        if elem.tag == "link":
            name = elem.get("name", "")
            if name in ATTACHMENT_FRAMES:
                frames[name] = Transform.identity()
            else:
                tool_links.append(_parse_link(elem, warnings))
        elif elem.tag == "joint":
            joint = _parse_joint(elem)
            if joint.child in ATTACHMENT_FRAMES:
                frame_joints.append(joint)
            else:
                tool_joints.append(joint)
        else:
            warnings.append(f"element <{elem.tag}> ignored")

    if EE_FRAME not in frames:
        raise ValidationError(f"robot description lacks the {EE_FRAME} frame")
    for joint in frame_joints:
        frames[joint.child] = joint.origin
    gripper = all(f in frames for f in FINGER_FRAMES)

    tool = None
    if tool_links or tool_joints:
        attachment = validate_tool_structure(tool_links, tool_joints)
        tool = ToolDesign(
            links=tuple(tool_links),
            joints=tuple(tool_joints),
            attachment=attachment,
            warnings=tuple(warnings),
        )
        tool = replace(tool, source_text=serialize_tool(tool))
        if tool.attachment is AttachmentMode.GRIPPER_FINGERS and not gripper:
            raise ValidationError("finger-attached tool but no finger frames")

    base = [FrameLink(EE_FRAME, frames[EE_FRAME])]
    base += [FrameLink(n, frames[n]) for n in FINGER_FRAMES if n in frames]
    return RobotDescription(
        base_links=tuple(base), gripper_present=gripper, tool=tool
    )


# ---------------------------------------------------------------------------
# Merge and geometry queries
# ---------------------------------------------------------------------------


def merge(robot: RobotDescription, tool: ToolDesign) -> RobotDescription:
    """Attach a validated tool to a robot description.

    Rejects double merges and finger tools on gripper-less robots; the
    result serializes and re-parses to an equal description.
    """
    if robot.tool is not None and not robot.tool.is_empty:
        raise ValidationError("robot already carries a tool; merge is not repeatable")
    if (
        tool.attachment is AttachmentMode.GRIPPER_FINGERS
        and not robot.gripper_present
    ):
        raise ValidationError("finger-attached tool requires a gripper")
    frame_names = set(robot.frame_names())
    needed = {j.parent for j in tool.joints if j.parent in ATTACHMENT_FRAMES}
    missing = needed - frame_names
    if missing:
        raise ValidationError(f"attachment frames missing from robot: {missing}")
    return replace(robot, tool=tool)


def frame_world_poses(
    robot: RobotDescription,
    ee_pose: Transform,
    finger_separation: float | None = None,
) -> dict[str, Transform]:
    """World pose of every robot frame for a given end-effector pose.

    ``finger_separation`` overrides the default mount separation so the sim
    can animate the gripper opening and closing.
    """
    poses = {}
    for frame in robot.base_links:
        origin = frame.origin
        if finger_separation is not None and frame.name in FINGER_FRAMES:
            sign = 1.0 if frame.name == LEFT_FINGER_FRAME else -1.0
            origin = Transform.make(
                (0.0, sign * finger_separation / 2.0, -FINGER_MOUNT_DROP_M)
            )
        poses[frame.name] = ee_pose.compose(origin)
    return poses


def tool_world_boxes(
    tool: ToolDesign, frame_poses: dict[str, Transform]
) -> list[tuple[BoxLink, Transform]]:
    """World pose of each tool box given the attachment frames' world poses."""
    children: dict[str, list[FixedJoint]] = {}
    for joint in tool.joints:
        children.setdefault(joint.parent, []).append(joint)
    by_name = tool.link_map()
    out: list[tuple[BoxLink, Transform]] = []
    stack = [
        (frame, pose)
        for frame, pose in frame_poses.items()
        if frame in children
    ]
    while stack:
        parent, parent_pose = stack.pop()
        for joint in children.get(parent, ()):
            link = by_name[joint.child]
            link_pose = parent_pose.compose(joint.origin)
            out.append((link, link_pose.compose(link.origin)))
            stack.append((link.name, link_pose))
    out.sort(key=lambda pair: pair[0].name)
    return out


def tool_bounding_box(
    tool: ToolDesign,
    ee_pose: Transform,
    finger_separation: float = GRIPPER_OPEN_SEPARATION_M,
) -> Aabb:
    """Axis-aligned bound of all tool geometry under an end-effector pose.

    An empty tool yields a degenerate box at the end-effector position.
    """
    robot = blank_robot(gripper_present=True)
    poses = frame_world_poses(robot, ee_pose, finger_separation)
    boxes = tool_world_boxes(tool, poses)
    if not boxes:
        return Aabb.point(ee_pose.position)
    total = Aabb.from_box(boxes[0][0].half_extents, boxes[0][1])
    for link, pose in boxes[1:]:
        total = total.union(Aabb.from_box(link.half_extents, pose))
    return total

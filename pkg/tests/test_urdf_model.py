from __future__ import annotations

import numpy as np
import pytest

from toolsmith.errors import ParseError, ValidationError
from toolsmith.geometry import Aabb, Transform
from toolsmith.urdf_model import (
    EE_FRAME,
    GAP_TOLERANCE_M,
    LEFT_FINGER_FRAME,
    RIGHT_FINGER_FRAME,
    AttachmentMode,
    BoxLink,
    FixedJoint,
    blank_robot,
    build_tool,
    merge,
    parse_robot_description,
    parse_tool_fragment,
    serialize_robot_description,
    serialize_tool,
    tool_bounding_box,
    tool_world_boxes,
    frame_world_poses,
)

FLANGE_TOOL = """
<link name="blade">
  <visual>
    <origin xyz="0 0 -0.05" rpy="0 0 0"/>
    <geometry><box size="0.02 0.02 0.12"/></geometry>
    <material name="m"><color rgba="0.8 0.1 0.1 1"/></material>
  </visual>
  <inertial><mass value="0.004"/></inertial>
</link>
<joint name="flange_to_blade" type="fixed">
  <parent link="panda_virtual"/>
  <child link="blade"/>
  <origin xyz="0 0 0" rpy="0 0 0"/>
</joint>
"""

FINGER_TOOL = """
<link name="left_pad">
  <visual><origin xyz="0 -0.005 0" rpy="0 0 0"/>
    <geometry><box size="0.02 0.01 0.04"/></geometry></visual>
  <inertial><mass value="0.002"/></inertial>
</link>
<link name="right_pad">
  <visual><origin xyz="0 0.005 0" rpy="0 0 0"/>
    <geometry><box size="0.02 0.01 0.04"/></geometry></visual>
  <inertial><mass value="0.002"/></inertial>
</link>
<joint name="l" type="fixed">
  <parent link="panda_leftfinger"/><child link="left_pad"/>
  <origin xyz="0 0 0" rpy="0 0 0"/>
</joint>
<joint name="r" type="fixed">
  <parent link="panda_rightfinger"/><child link="right_pad"/>
  <origin xyz="0 0 0" rpy="0 0 0"/>
</joint>
"""


def test_empty_fragment_is_the_identity_tool():
    tool = parse_tool_fragment("")
    assert tool.is_empty
    assert tool.attachment is AttachmentMode.VIRTUAL_FLANGE


def test_parse_flange_tool():
    tool = parse_tool_fragment(FLANGE_TOOL)
    assert [l.name for l in tool.links] == ["blade"]
    assert tool.attachment is AttachmentMode.VIRTUAL_FLANGE
    link = tool.links[0]
    assert np.allclose(link.half_extents, [0.01, 0.01, 0.06])
    assert link.mass == pytest.approx(0.004)
    assert link.color == pytest.approx((0.8, 0.1, 0.1, 1.0))


def test_parse_finger_tool_has_both_subtrees():
    tool = parse_tool_fragment(FINGER_TOOL)
    assert tool.attachment is AttachmentMode.GRIPPER_FINGERS
    parents = {j.parent for j in tool.joints}
    assert parents == {LEFT_FINGER_FRAME, RIGHT_FINGER_FRAME}


def test_mass_above_ten_grams_rejected():
    text = FLANGE_TOOL.replace('value="0.004"', 'value="0.02"')
    with pytest.raises(ValidationError, match="mass"):
        parse_tool_fragment(text)


def test_nonpositive_mass_rejected():
    text = FLANGE_TOOL.replace('value="0.004"', 'value="0"')
    with pytest.raises(ValidationError, match="mass"):
        parse_tool_fragment(text)


def test_non_box_geometry_rejected():
    text = FLANGE_TOOL.replace(
        '<box size="0.02 0.02 0.12"/>', '<cylinder radius="0.01" length="0.1"/>'
    )
    with pytest.raises(ValidationError, match="not a box"):
        parse_tool_fragment(text)


def test_bad_attachment_parent_rejected():
    text = FLANGE_TOOL.replace("panda_virtual", "panda_hand")
    with pytest.raises(ValidationError, match="attachment parent"):
        parse_tool_fragment(text)


def test_mixed_attachment_frames_rejected():
    text = FINGER_TOOL.replace("panda_rightfinger", "panda_virtual")
    with pytest.raises(ValidationError, match="mixes"):
        parse_tool_fragment(text)


def test_non_fixed_joint_rejected():
    text = FLANGE_TOOL.replace('type="fixed"', 'type="revolute"')
    with pytest.raises(ValidationError, match="fixed"):
        parse_tool_fragment(text)


def test_malformed_markup_is_a_parse_error():
    with pytest.raises(ParseError):
        parse_tool_fragment("<link name='a'><visual>")
    with pytest.raises(ParseError):
        parse_tool_fragment(FLANGE_TOOL.replace('size="0.02 0.02 0.12"', 'size="a b c"'))


def test_unknown_elements_are_ignored_with_warning():
    text = FLANGE_TOOL + "\n<gazebo reference='blade'/>"
    tool = parse_tool_fragment(text)
    assert any("gazebo" in w for w in tool.warnings)
    assert len(tool.links) == 1


def test_missing_mass_defaults_to_one_gram_with_warning():
    text = FLANGE_TOOL.replace('<inertial><mass value="0.004"/></inertial>', "")
    tool = parse_tool_fragment(text)
    assert tool.links[0].mass == pytest.approx(0.001)
    assert any("mass" in w for w in tool.warnings)


def test_two_link_gap_detection_analytic():
    # Parent box half z extent 0.06 centred at z=-0.05: spans z in [-0.11, 0.01].
    # Child box of half 0.01 at joint z offset d spans [d-0.01, d+0.01]; the
    # boxes separate when d - 0.01 > 0.01, i.e. gap opens for d > 0.02 + tol.
    def fragment(d: float) -> str:
        return FLANGE_TOOL + f"""
<link name="tip">
  <visual><origin xyz="0 0 0" rpy="0 0 0"/>
    <geometry><box size="0.02 0.02 0.02"/></geometry></visual>
  <inertial><mass value="0.001"/></inertial>
</link>
<joint name="blade_to_tip" type="fixed">
  <parent link="blade"/><child link="tip"/>
  <origin xyz="0 0 {d}" rpy="0 0 0"/>
</joint>
"""

    ok = parse_tool_fragment(fragment(0.02))  # touching exactly
    assert len(ok.links) == 2
    ok = parse_tool_fragment(fragment(0.0205))  # 0.5 mm gap, inside tolerance
    assert len(ok.links) == 2
    with pytest.raises(ValidationError, match="gap"):
        parse_tool_fragment(fragment(0.02 + GAP_TOLERANCE_M + 0.0005))


def test_root_link_must_touch_attachment_frame():
    # Blade spans z in [-0.11, 0.01] around the joint origin; pushing the
    # joint origin down by more than 0.01 + tol detaches it from the flange.
    text = FLANGE_TOOL.replace(
        '<origin xyz="0 0 0" rpy="0 0 0"/>\n</joint>',
        '<origin xyz="0 0 -0.015" rpy="0 0 0"/>\n</joint>',
    )
    with pytest.raises(ValidationError, match="gap"):
        parse_tool_fragment(text)


def test_duplicate_and_orphan_links_rejected():
    dup = FLANGE_TOOL + FLANGE_TOOL.replace("flange_to_blade", "again")
    with pytest.raises(ValidationError, match="duplicate"):
        parse_tool_fragment(dup)
    orphan = FLANGE_TOOL + """
<link name="floater">
  <visual><geometry><box size="0.01 0.01 0.01"/></geometry></visual>
  <inertial><mass value="0.001"/></inertial>
</link>
"""
    with pytest.raises(ValidationError, match="no parent"):
        parse_tool_fragment(orphan)


def test_cycle_rejected():
    links = [
        BoxLink("a", np.full(3, 0.01), 0.001, Transform.identity()),
        BoxLink("b", np.full(3, 0.01), 0.001, Transform.identity()),
    ]
    joints = [
        FixedJoint("ab", "a", "b", Transform.identity()),
        FixedJoint("ba", "b", "a", Transform.identity()),
    ]
    with pytest.raises(ValidationError, match="cycle|unreachable"):
        build_tool(links, joints)


def test_round_trip_parse_serialize_identity():
    for text in (FLANGE_TOOL, FINGER_TOOL):
        tool = parse_tool_fragment(text)
        again = parse_tool_fragment(serialize_tool(tool))
        assert tool.almost_equal(again)


def test_merge_empty_tool_preserves_blank():
    robot = blank_robot()
    merged = merge(robot, parse_tool_fragment(""))
    assert merged.almost_equal(robot) or merged.tool.is_empty
    assert merged.frame_names() == robot.frame_names()


def test_merge_serialize_parse_round_trip():
    robot = blank_robot(gripper_present=True)
    merged = merge(robot, parse_tool_fragment(FINGER_TOOL))
    text = serialize_robot_description(merged)
    again = parse_robot_description(text)
    assert merged.almost_equal(again)


def test_merge_finger_tool_without_gripper_rejected():
    with pytest.raises(ValidationError, match="gripper"):
        merge(blank_robot(gripper_present=False), parse_tool_fragment(FINGER_TOOL))


def test_merge_twice_rejected():
    robot = merge(blank_robot(), parse_tool_fragment(FLANGE_TOOL))
    with pytest.raises(ValidationError, match="already"):
        merge(robot, parse_tool_fragment(FLANGE_TOOL))


def test_merged_finger_subtrees_root_at_finger_links():
    merged = merge(blank_robot(gripper_present=True), parse_tool_fragment(FINGER_TOOL))
    by_child = {j.child: j.parent for j in merged.tool.joints}
    assert by_child["left_pad"] == LEFT_FINGER_FRAME
    assert by_child["right_pad"] == RIGHT_FINGER_FRAME


def test_bounding_box_single_link_identity_pose():
    text = """
<link name="cube">
  <visual><geometry><box size="0.04 0.04 0.04"/></geometry></visual>
  <inertial><mass value="0.001"/></inertial>
</link>
<joint name="j" type="fixed">
  <parent link="panda_virtual"/><child link="cube"/>
</joint>
"""
    tool = parse_tool_fragment(text)
    box = tool_bounding_box(tool, Transform.identity())
    assert np.allclose(box.lo, [-0.02, -0.02, -0.02])
    assert np.allclose(box.hi, [0.02, 0.02, 0.02])
    shifted = tool_bounding_box(tool, Transform.make((1.0, 0.0, 0.0)))
    assert np.allclose(shifted.lo, box.lo + [1.0, 0.0, 0.0])
    assert np.allclose(shifted.hi, box.hi + [1.0, 0.0, 0.0])


def test_empty_tool_bounding_box_degenerates_to_ee_origin():
    pose = Transform.make((0.3, -0.2, 0.5))
    box = tool_bounding_box(parse_tool_fragment(""), pose)
    assert np.allclose(box.lo, pose.position)
    assert np.allclose(box.hi, pose.position)


def test_bounding_box_rotated_links_matches_corner_oracle():
    rng = np.random.default_rng(11)
    for _ in range(25):
        rpy1 = rng.uniform(-1.0, 1.0, size=3)
        rpy2 = rng.uniform(-1.0, 1.0, size=3)
        links = [
            BoxLink("a", np.array([0.05, 0.02, 0.01]), 0.002,
                    Transform.make((0.0, 0.0, 0.0), rpy=rpy1)),
            BoxLink("b", np.array([0.01, 0.04, 0.02]), 0.002,
                    Transform.make((0.0, 0.0, 0.0), rpy=rpy2)),
        ]
        joints = [
            FixedJoint("ja", EE_FRAME, "a", Transform.identity()),
            FixedJoint("jb", "a", "b", Transform.make((0.02, 0.0, 0.0))),
        ]
        tool = build_tool(links, joints)
        ee = Transform.make(rng.uniform(-0.5, 0.5, size=3), rpy=rng.uniform(-1, 1, 3))
        got = tool_bounding_box(tool, ee)

        corners = []
        for link, pose in tool_world_boxes(
            tool, frame_world_poses(blank_robot(True), ee)
        ):
            for sx in (-1, 1):
                for sy in (-1, 1):
                    for sz in (-1, 1):
                        corners.append(pose.apply(link.half_extents * [sx, sy, sz]))
        corners = np.array(corners)
        assert np.allclose(got.lo, corners.min(axis=0), atol=1e-12)
        assert np.allclose(got.hi, corners.max(axis=0), atol=1e-12)


def _random_valid_parts(rng, mode: str):
    """Random touching box forest rooted at the requested attachment frames."""
    roots = (
        [EE_FRAME]
        if mode == "flange"
        else [LEFT_FINGER_FRAME, RIGHT_FINGER_FRAME]
    )
    links, joints = [], []
    nodes = [(name, None) for name in roots]  # (name, BoxLink | None)
    n_links = rng.integers(1, 6)
    for i in range(n_links):
        parent_name, parent_link = nodes[rng.integers(len(nodes))]
        half = rng.uniform(0.01, 0.05, size=3)
        axis = int(rng.integers(3))
        direction = np.zeros(3)
        direction[axis] = rng.choice([-1.0, 1.0])
        if parent_link is None:
            # Root: box must contain the frame origin.
            offset = direction * half[axis] * rng.uniform(0.0, 0.9)
        else:
            reach = parent_link.half_extents[axis] + half[axis]
            offset = direction * reach * rng.uniform(0.0, 0.8)
        link = BoxLink(f"part{i}", half, float(rng.uniform(0.0005, 0.009)),
                       Transform.identity())
        links.append(link)
        joints.append(
            FixedJoint(f"j{i}", parent_name, f"part{i}", Transform.make(offset))
        )
        nodes.append((f"part{i}", link))
    return links, joints


@pytest.mark.parametrize("mode", ["flange", "fingers"])
def test_random_forest_acceptance_iff_invariants(mode):
    rng = np.random.default_rng(42 if mode == "flange" else 43)
    for trial in range(300):
        links, joints = _random_valid_parts(rng, mode)
        violation = rng.integers(5)
        if violation == 0:  # keep valid
            tool = build_tool(links, joints)
            assert len(tool.links) == len(links)
            reparsed = parse_tool_fragment(tool.source_text)
            assert tool.almost_equal(reparsed)
        elif violation == 1:  # mass bound
            i = rng.integers(len(links))
            links[i] = BoxLink(links[i].name, links[i].half_extents, 0.02,
                               links[i].origin)
            with pytest.raises(ValidationError):
                build_tool(links, joints)
        elif violation == 2:  # gap: teleport one subtree far away
            i = rng.integers(len(joints))
            joints[i] = FixedJoint(joints[i].name, joints[i].parent, joints[i].child,
                                   Transform.make((1.0, 1.0, 1.0)))
            with pytest.raises(ValidationError):
                build_tool(links, joints)
        elif violation == 3:  # duplicate link name
            i = rng.integers(len(links))
            clone = BoxLink(links[i].name, links[i].half_extents, links[i].mass,
                            links[i].origin)
            links.append(clone)
            joints.append(FixedJoint("dup", joints[i].parent, clone.name,
                                     joints[i].origin))
            with pytest.raises(ValidationError):
                build_tool(links, joints)
        else:  # orphan link
            links.append(BoxLink("orphan", np.full(3, 0.01), 0.001,
                                 Transform.identity()))
            with pytest.raises(ValidationError):
                build_tool(links, joints)
